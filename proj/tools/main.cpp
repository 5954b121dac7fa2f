#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "drdm/dataset.hpp"
#include "drdm/evaluator.hpp"
#include "drdm/guidance.hpp"
#include "drdm/image_io.hpp"
#include "drdm/manifest.hpp"
#include "drdm/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using Scalar = float;

namespace {

// --seed flag wins; DRDM_SEED is the global fallback; otherwise 0.
std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_value) {
    if (opt->count() > 0) return flag_value;
    if (const char* env = std::getenv("DRDM_SEED")) return std::stoull(env);
    return flag_value;
}

double pose_sigma_for(int size) { return 1.5 * size / 64.0; }

drdm::Part parse_part(const std::string& name) {
    if (name == "head") return drdm::Part::head;
    if (name == "cloth") return drdm::Part::cloth;
    if (name == "pant") return drdm::Part::pant;
    if (name == "hand") return drdm::Part::hand;
    throw drdm::invalid_input("unknown part '" + name + "' (expected head|cloth|pant|hand)");
}

// merged config snapshot: defaults <- config file <- explicit flags
struct MergedConfig {
    drdm::TrainConfig train;
    drdm::NetworkConfig net;
    json snapshot() const {
        json j;
        j["train_config"] = train;
        j["network_config"] = net;
        return j;
    }
};

MergedConfig load_config_file(const std::string& path) {
    MergedConfig m;
    if (path.empty()) return m;
    std::ifstream is(path);
    if (!is) throw drdm::io_error("cannot open config file: " + path);
    json j = json::parse(is);
    if (j.contains("train_config")) m.train = j.at("train_config").get<drdm::TrainConfig>();
    if (j.contains("network_config")) m.net = j.at("network_config").get<drdm::NetworkConfig>();
    return m;
}

drdm::ConditionSet<Scalar> conditions_of(const drdm::PairedSample<Scalar>& p) {
    drdm::ConditionSet<Scalar> c;
    drdm::StyleCondition<Scalar> st;
    st.source_image = p.source_image;
    st.masks = drdm::extract_part_masks<Scalar>(p.source_parsing);
    c.style = std::move(st);
    c.pose = p.target_pose;
    return c;
}

// grayscale visualization of a pose map: per-pixel max over keypoint channels
drdm::Tensor<std::uint8_t> pose_to_rgb(const drdm::PoseMap<Scalar>& pm) {
    const int H = pm.data.dim(1), W = pm.data.dim(2);
    drdm::Tensor<std::uint8_t> img({3, H, W});
    for (int i = 0; i < H * W; ++i) {
        Scalar mx = 0;
        for (int c = 0; c < drdm::kNumKeypoints; ++c)
            mx = std::max(mx, pm.data[c * H * W + i]);
        auto v = static_cast<std::uint8_t>(std::lround(255.0 * std::min<Scalar>(1, mx)));
        for (int c = 0; c < 3; ++c) img[c * H * W + i] = v;
    }
    return img;
}

drdm::Tensor<std::uint8_t> to_rgb(const drdm::Tensor<std::uint8_t>& img) {
    if (img.rank() == 3) return img;
    drdm::Tensor<std::uint8_t> rgb({3, img.dim(0), img.dim(1)});
    for (int c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < img.size(); ++i) rgb[c * img.size() + i] = img[i];
    return rgb;
}

// tile equally sized RGB images row-major into one montage
drdm::Tensor<std::uint8_t> make_grid(const std::vector<drdm::Tensor<std::uint8_t>>& tiles,
                                     int cols) {
    if (tiles.empty()) throw drdm::invalid_input("grid: no images");
    if (cols < 1) throw drdm::invalid_input("grid: cols must be >= 1");
    const int H = tiles[0].dim(1), W = tiles[0].dim(2);
    for (const auto& t : tiles)
        if (t.dim(1) != H || t.dim(2) != W)
            throw drdm::invalid_input("grid: images must share one size");
    const int n = static_cast<int>(tiles.size());
    const int rows = (n + cols - 1) / cols;
    auto out = drdm::Tensor<std::uint8_t>::zeros({3, rows * H, cols * W});
    for (int i = 0; i < n; ++i) {
        const int oy = (i / cols) * H, ox = (i % cols) * W;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    out.at(c, oy + y, ox + x) = tiles[i].at(c, y, x);
    }
    return out;
}

struct SampleCommon {
    std::string checkpoint, data, out;
    int count = 4;
    std::uint64_t seed = 0;
    double w_style = 3.0;
    double w_pose = 2.5;
    bool conditional_only = false;
    bool no_ema = false;
    int timesteps = 0;  // 0 -> use the checkpoint's schedule
    CLI::Option* seed_opt = nullptr;

    void attach(CLI::App* cmd) {
        cmd->add_option("--checkpoint", checkpoint, "trained checkpoint file")->required();
        cmd->add_option("--data", data, "dataset root")->required();
        cmd->add_option("--out", out, "output directory")->required();
        cmd->add_option("--count", count, "number of pairs to process");
        seed_opt = cmd->add_option("--seed", seed, "sampling seed (falls back to DRDM_SEED)");
        cmd->add_option("--w-style", w_style, "style guidance weight");
        cmd->add_option("--w-pose", w_pose, "pose guidance weight");
        cmd->add_flag("--conditional-only", conditional_only,
                      "plain conditional sampler (no guidance composition)");
        cmd->add_flag("--no-ema", no_ema, "sample with raw weights instead of the EMA copy");
        cmd->add_option("--timesteps", timesteps, "override the reverse-process step count");
    }
};

struct LoadedModel {
    drdm::LoadedCheckpoint<Scalar> ckpt;
    drdm::NoiseSchedule<Scalar> sched;
    const drdm::ModelParams<Scalar>* params = nullptr;
};

LoadedModel load_model(const SampleCommon& sc) {
    LoadedModel m;
    m.ckpt = drdm::load_checkpoint<Scalar>(sc.checkpoint);
    auto tc = m.ckpt.train_cfg;
    if (sc.timesteps > 0) tc.timesteps = sc.timesteps;
    m.sched = drdm::schedule_from_config<Scalar>(tc);
    m.params = (sc.no_ema || !m.ckpt.train_cfg.use_ema) ? &m.ckpt.state.params
                                                        : &m.ckpt.state.ema;
    return m;
}

int cmd_gen_data(const std::string& out, int count, std::uint64_t seed, int size) {
    drdm::SynthConfig cfg;
    cfg.size = size;
    json cfg_json{{"out", out}, {"count", count}, {"size", size}};
    drdm::RunManifest manifest("gen-data", cfg_json, seed);
    manifest.record_output("dataset", out);
    try {
        drdm::generate_dataset<Scalar>(out, count, seed, cfg);
    } catch (const std::exception& e) {
        manifest.finish(fs::path(out) / "manifest.json", false, e.what());
        throw;
    }
    manifest.finish(fs::path(out) / "manifest.json", true);
    std::cout << "wrote " << count << " pairs to " << out << "\n";
    return 0;
}

int cmd_train(const MergedConfig& cfg, const std::string& data, const std::string& out,
              const std::string& resume) {
    cfg.train.validate();
    cfg.net.validate();
    drdm::RunManifest manifest("train", cfg.snapshot(), cfg.train.seed);
    manifest.record_input("data", data);
    manifest.record_output("checkpoint", (fs::path(out) / "checkpoint.bin").string());
    manifest.record_output("loss_log", (fs::path(out) / "loss.txt").string());
    fs::create_directories(out);
    try {
        auto dataset = drdm::load_dataset<Scalar>(data, pose_sigma_for(cfg.net.image_size));
        if (dataset.empty()) throw drdm::invalid_input("train: no pairs under " + data);
        for (const auto& p : dataset)
            if (p.source_image.dim(1) != cfg.net.image_size)
                throw drdm::invalid_input("train: dataset size does not match image_size");

        auto sched = drdm::schedule_from_config<Scalar>(cfg.train);
        drdm::TrainerState<Scalar> st;
        if (!resume.empty()) {
            auto loaded = drdm::load_checkpoint<Scalar>(resume);
            st = std::move(loaded.state);
            manifest.record_input("resume", resume);
        } else {
            st = drdm::init_trainer<Scalar>(cfg.net, cfg.train);
        }

        std::ofstream loss_log(fs::path(out) / "loss.txt",
                               resume.empty() ? std::ios::trunc : std::ios::app);
        const int N = static_cast<int>(dataset.size());
        const int B = cfg.train.batch_size;
        const std::string ckpt_path = (fs::path(out) / "checkpoint.bin").string();
        while (st.global_step < cfg.train.total_steps) {
            std::vector<const drdm::PairedSample<Scalar>*> batch;
            for (int j = 0; j < B; ++j)
                batch.push_back(&dataset[(st.global_step * B + j) % N]);
            double loss = drdm::training_step(st, batch, sched, cfg.net, cfg.train);
            loss_log << st.global_step << " " << loss << "\n";
            if (st.global_step % 50 == 0) {
                std::cout << "step " << st.global_step << " loss " << loss << std::endl;
                loss_log.flush();
            }
            if (st.global_step % cfg.train.checkpoint_interval == 0)
                drdm::save_checkpoint(ckpt_path, st, cfg.net, cfg.train);
        }
        drdm::save_checkpoint(ckpt_path, st, cfg.net, cfg.train);
    } catch (const std::exception& e) {
        manifest.finish(fs::path(out) / "manifest.json", false, e.what());
        throw;
    }
    manifest.finish(fs::path(out) / "manifest.json", true);
    std::cout << "training finished; checkpoint at " << out << "/checkpoint.bin\n";
    return 0;
}

int cmd_sample(const SampleCommon& sc) {
    json cfg{{"checkpoint", sc.checkpoint}, {"data", sc.data},       {"count", sc.count},
             {"w_style", sc.w_style},       {"w_pose", sc.w_pose},   {"no_ema", sc.no_ema},
             {"conditional_only", sc.conditional_only},              {"timesteps", sc.timesteps}};
    drdm::RunManifest manifest("sample", cfg, sc.seed);
    manifest.record_input("checkpoint", sc.checkpoint);
    manifest.record_input("data", sc.data);
    fs::create_directories(sc.out);
    try {
        auto model = load_model(sc);
        auto dataset =
            drdm::load_dataset<Scalar>(sc.data, pose_sigma_for(model.ckpt.net_cfg.image_size));
        const int n = std::min<int>(sc.count, static_cast<int>(dataset.size()));
        if (n == 0) throw drdm::invalid_input("sample: no pairs under " + sc.data);
        for (int i = 0; i < n; ++i) {
            drdm::Rng rng(sc.seed + static_cast<std::uint64_t>(i));
            auto cond = conditions_of(dataset[i]);
            drdm::SampleResult<Scalar> res;
            if (sc.conditional_only)
                res = drdm::sample_conditional_only(cond, model.sched, *model.params,
                                                    model.ckpt.net_cfg, rng);
            else
                res = drdm::sample(cond, drdm::GuidanceWeights{sc.w_style, sc.w_pose},
                                   model.sched, *model.params, model.ckpt.net_cfg, rng);
            std::string path =
                (fs::path(sc.out) / (dataset[i].identity_id + "_generated.png")).string();
            drdm::write_png_rgb(path, res.image);
            manifest.record_output(dataset[i].identity_id, path);
        }
    } catch (const std::exception& e) {
        manifest.finish(fs::path(sc.out) / "manifest.json", false, e.what());
        throw;
    }
    manifest.finish(fs::path(sc.out) / "manifest.json", true);
    return 0;
}

int cmd_edit(const SampleCommon& sc, const std::string& part_name, const std::string& donor_id) {
    drdm::Part part = parse_part(part_name);
    json cfg{{"checkpoint", sc.checkpoint}, {"data", sc.data},     {"count", sc.count},
             {"w_style", sc.w_style},       {"w_pose", sc.w_pose}, {"swap_part", part_name},
             {"donor", donor_id},           {"no_ema", sc.no_ema}, {"timesteps", sc.timesteps}};
    drdm::RunManifest manifest("edit", cfg, sc.seed);
    manifest.record_input("checkpoint", sc.checkpoint);
    manifest.record_input("data", sc.data);
    fs::create_directories(sc.out);
    try {
        auto model = load_model(sc);
        auto dataset =
            drdm::load_dataset<Scalar>(sc.data, pose_sigma_for(model.ckpt.net_cfg.image_size));
        const drdm::PairedSample<Scalar>* donor = nullptr;
        for (const auto& p : dataset)
            if (p.identity_id == donor_id) donor = &p;
        if (!donor) throw drdm::invalid_input("edit: donor pair '" + donor_id + "' not found");
        auto donor_tex = drdm::encode_textures<Scalar>(
            donor->source_image, drdm::extract_part_masks<Scalar>(donor->source_parsing),
            *model.params, model.ckpt.net_cfg);

        const int n = std::min<int>(sc.count, static_cast<int>(dataset.size()));
        const int k = static_cast<int>(part);
        for (int i = 0; i < n; ++i) {
            drdm::Rng rng(sc.seed + static_cast<std::uint64_t>(i));
            auto enc = drdm::encode_conditions(conditions_of(dataset[i]), *model.params,
                                               model.ckpt.net_cfg);
            // the edit: substitute the donor's slot for this part in F_s
            for (size_t lvl = 0; lvl < enc.tex_full.levels.size(); ++lvl)
                enc.tex_full.levels[lvl][k] = donor_tex.levels[lvl][k];
            auto res = drdm::sample_encoded(enc, drdm::GuidanceWeights{sc.w_style, sc.w_pose},
                                            model.sched, *model.params, model.ckpt.net_cfg, rng);
            std::string path =
                (fs::path(sc.out) / (dataset[i].identity_id + "_edit.png")).string();
            drdm::write_png_rgb(path, res.image);
            manifest.record_output(dataset[i].identity_id, path);
        }
    } catch (const std::exception& e) {
        manifest.finish(fs::path(sc.out) / "manifest.json", false, e.what());
        throw;
    }
    manifest.finish(fs::path(sc.out) / "manifest.json", true);
    return 0;
}

int cmd_eval(const SampleCommon& sc) {
    json cfg{{"checkpoint", sc.checkpoint}, {"data", sc.data},     {"count", sc.count},
             {"w_style", sc.w_style},       {"w_pose", sc.w_pose}, {"no_ema", sc.no_ema},
             {"timesteps", sc.timesteps}};
    drdm::RunManifest manifest("eval", cfg, sc.seed);
    manifest.record_input("checkpoint", sc.checkpoint);
    manifest.record_input("data", sc.data);
    fs::create_directories(sc.out);
    try {
        auto model = load_model(sc);
        auto dataset =
            drdm::load_dataset<Scalar>(sc.data, pose_sigma_for(model.ckpt.net_cfg.image_size));
        const int n = std::min<int>(sc.count, static_cast<int>(dataset.size()));
        if (n < 8) throw drdm::invalid_input("eval: need at least 8 pairs");

        drdm::MetricReport report;
        report.sample_count = n;
        std::array<double, drdm::kNumParts> part_sum{};
        std::array<int, drdm::kNumParts> part_n{};
        std::vector<drdm::Tensor<Scalar>> gen_set, real_set;
        std::vector<drdm::Tensor<std::uint8_t>> tiles;
        double ssim_sum = 0;
        for (int i = 0; i < n; ++i) {
            drdm::Rng rng(sc.seed + static_cast<std::uint64_t>(i));
            const auto& p = dataset[i];
            auto res = drdm::sample(conditions_of(p), drdm::GuidanceWeights{sc.w_style, sc.w_pose},
                                    model.sched, *model.params, model.ckpt.net_cfg, rng);
            auto gen = drdm::normalize_image<Scalar>(res.image);
            ssim_sum += drdm::ssim(gen, p.target_image);
            auto errs = drdm::part_color_consistency(
                gen, p.source_image, drdm::extract_part_masks<Scalar>(p.source_parsing),
                drdm::extract_part_masks<Scalar>(p.target_parsing));
            for (int k = 0; k < drdm::kNumParts; ++k)
                if (errs[k]) {
                    part_sum[k] += *errs[k];
                    ++part_n[k];
                }
            gen_set.push_back(std::move(gen));
            real_set.push_back(p.target_image);
            tiles.push_back(drdm::denormalize_image(p.source_image));
            tiles.push_back(pose_to_rgb(p.target_pose));
            tiles.push_back(drdm::denormalize_image(p.target_image));
            tiles.push_back(res.image);
        }
        report.ssim = ssim_sum / n;
        report.fid_proxy = drdm::fid_proxy(gen_set, real_set);
        for (int k = 0; k < drdm::kNumParts; ++k)
            if (part_n[k] > 0) report.part_color_error[k] = part_sum[k] / part_n[k];

        const char* part_names[] = {"head", "cloth", "pant", "hand"};
        std::string report_path = (fs::path(sc.out) / "report.txt").string();
        {
            std::ofstream os(report_path);
            os << "sample_count " << report.sample_count << "\n";
            os << "ssim " << report.ssim << "\n";
            os << "fid_proxy " << report.fid_proxy << "\n";
            for (int k = 0; k < drdm::kNumParts; ++k) {
                os << "part_color_error_" << part_names[k] << " ";
                if (report.part_color_error[k])
                    os << *report.part_color_error[k] << "\n";
                else
                    os << "absent\n";
            }
            os << "lpips unavailable\n";
        }
        std::string grid_path = (fs::path(sc.out) / "grid.png").string();
        drdm::write_png_rgb(grid_path, make_grid(tiles, 4));
        manifest.record_output("report", report_path);
        manifest.record_output("grid", grid_path);
        std::cout << "ssim " << report.ssim << " fid_proxy " << report.fid_proxy << "\n";
    } catch (const std::exception& e) {
        manifest.finish(fs::path(sc.out) / "manifest.json", false, e.what());
        throw;
    }
    manifest.finish(fs::path(sc.out) / "manifest.json", true);
    return 0;
}

int cmd_grid(const std::string& out, const std::vector<std::string>& images, int cols) {
    std::vector<drdm::Tensor<std::uint8_t>> tiles;
    for (const auto& path : images) tiles.push_back(to_rgb(drdm::read_png(path)));
    if (cols <= 0) cols = static_cast<int>(tiles.size());
    drdm::write_png_rgb(out, make_grid(tiles, cols));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"disentangled-representation diffusion for person image synthesis"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired dataset");
    std::string gen_out;
    int gen_count = 20, gen_size = 64;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "output dataset root")->required();
    gen->add_option("--count", gen_count, "number of pairs");
    auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--size", gen_size, "square image size (min 16)");

    // train
    auto* train = app.add_subcommand("train", "train the denoiser");
    std::string train_config, train_data, train_out, train_resume;
    drdm::TrainConfig tc_flags;
    drdm::NetworkConfig nc_flags;
    train->add_option("--config", train_config, "JSON config file (train_config/network_config)");
    train->add_option("--data", train_data, "dataset root")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--resume", train_resume, "checkpoint to resume from");
    auto* o_lr = train->add_option("--learning-rate", tc_flags.learning_rate);
    auto* o_bs = train->add_option("--batch-size", tc_flags.batch_size);
    auto* o_da = train->add_option("--dropout-all-prob", tc_flags.dropout_all_prob);
    auto* o_ds = train->add_option("--dropout-style-prob", tc_flags.dropout_style_prob);
    auto* o_ts = train->add_option("--total-steps", tc_flags.total_steps);
    auto* o_ema = train->add_option("--ema-decay", tc_flags.ema_decay);
    auto* o_seed = train->add_option("--seed", tc_flags.seed);
    auto* o_ci = train->add_option("--checkpoint-interval", tc_flags.checkpoint_interval);
    auto* o_tt = train->add_option("--timesteps", tc_flags.timesteps);
    auto* o_b0 = train->add_option("--beta-start", tc_flags.beta_start);
    auto* o_b1 = train->add_option("--beta-end", tc_flags.beta_end);
    auto* o_sch = train->add_option("--schedule", tc_flags.schedule,
                                    "forward-process schedule: linear or cosine");
    auto* o_is = train->add_option("--image-size", nc_flags.image_size);
    auto* o_bc = train->add_option("--base-channels", nc_flags.base_channels);

    // sample / edit / eval share the common options
    auto* sample = app.add_subcommand("sample", "guided pose-transfer sampling");
    SampleCommon sample_args;
    sample_args.attach(sample);
    auto* edit = app.add_subcommand("edit", "part-swap editing before sampling");
    SampleCommon edit_args;
    edit_args.attach(edit);
    std::string edit_part, edit_donor;
    edit->add_option("--swap-part", edit_part, "part slot to replace (head|cloth|pant|hand)")
        ->required();
    edit->add_option("--donor", edit_donor, "pair id supplying the replacement texture")
        ->required();
    auto* eval = app.add_subcommand("eval", "metric report over a dataset");
    SampleCommon eval_args;
    eval_args.count = 16;
    eval_args.attach(eval);

    // grid
    auto* grid = app.add_subcommand("grid", "tile images into one montage");
    std::string grid_out;
    std::vector<std::string> grid_images;
    int grid_cols = 0;
    grid->add_option("--out", grid_out, "output image")->required();
    grid->add_option("--images", grid_images, "input images")->required()->expected(-1);
    grid->add_option("--cols", grid_cols, "tiles per row (default: all in one row)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_data(gen_out, gen_count, resolve_seed(gen_seed_opt, gen_seed),
                                gen_size);
        if (train->parsed()) {
            MergedConfig cfg = load_config_file(train_config);
            if (*o_lr) cfg.train.learning_rate = tc_flags.learning_rate;
            if (*o_bs) cfg.train.batch_size = tc_flags.batch_size;
            if (*o_da) cfg.train.dropout_all_prob = tc_flags.dropout_all_prob;
            if (*o_ds) cfg.train.dropout_style_prob = tc_flags.dropout_style_prob;
            if (*o_ts) cfg.train.total_steps = tc_flags.total_steps;
            if (*o_ema) cfg.train.ema_decay = tc_flags.ema_decay;
            if (*o_seed)
                cfg.train.seed = tc_flags.seed;
            else if (const char* env = std::getenv("DRDM_SEED"))
                cfg.train.seed = std::stoull(env);
            if (*o_ci) cfg.train.checkpoint_interval = tc_flags.checkpoint_interval;
            if (*o_tt) cfg.train.timesteps = tc_flags.timesteps;
            if (*o_b0) cfg.train.beta_start = tc_flags.beta_start;
            if (*o_b1) cfg.train.beta_end = tc_flags.beta_end;
            if (*o_sch) cfg.train.schedule = tc_flags.schedule;
            if (*o_is) cfg.net.image_size = nc_flags.image_size;
            if (*o_bc) cfg.net.base_channels = nc_flags.base_channels;
            return cmd_train(cfg, train_data, train_out, train_resume);
        }
        if (sample->parsed()) {
            sample_args.seed = resolve_seed(sample_args.seed_opt, sample_args.seed);
            return cmd_sample(sample_args);
        }
        if (edit->parsed()) {
            edit_args.seed = resolve_seed(edit_args.seed_opt, edit_args.seed);
            return cmd_edit(edit_args, edit_part, edit_donor);
        }
        if (eval->parsed()) {
            eval_args.seed = resolve_seed(eval_args.seed_opt, eval_args.seed);
            return cmd_eval(eval_args);
        }
        if (grid->parsed()) return cmd_grid(grid_out, grid_images, grid_cols);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
