#ifndef DRDM_TRAINER_HPP
#define DRDM_TRAINER_HPP

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>
#include <zlib.h>

#include <nlohmann/json.hpp>

#include "drdm/data.hpp"
#include "drdm/guidance.hpp"
#include "drdm/network.hpp"
#include "drdm/schedule.hpp"

namespace drdm {

struct TrainConfig {
    double learning_rate = 2e-5;
    int batch_size = 7;
    double dropout_all_prob = 0.10;
    double dropout_style_prob = 0.10;
    long total_steps = 30000;
    bool use_ema = true;
    double ema_decay = 0.999;
    std::uint64_t seed = 0;
    long checkpoint_interval = 1000;
    // forward-process schedule: "linear" (beta_start..beta_end) or "cosine"
    std::string schedule = "linear";
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    // Adam moments
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (!(learning_rate > 0)) throw invalid_input("train config: learning_rate must be > 0");
        if (batch_size < 1) throw invalid_input("train config: batch_size must be >= 1");
        if (dropout_all_prob < 0 || dropout_all_prob > 1 || dropout_style_prob < 0 ||
            dropout_style_prob > 1 || dropout_all_prob + dropout_style_prob > 1)
            throw invalid_input("train config: dropout probabilities out of range");
        if (timesteps < 1) throw invalid_input("train config: timesteps must be >= 1");
        if (schedule != "linear" && schedule != "cosine")
            throw invalid_input("train config: schedule must be \"linear\" or \"cosine\"");
    }
};

// Build the forward-process tables named by the config.
template <typename S>
NoiseSchedule<S> schedule_from_config(const TrainConfig& c) {
    if (c.schedule == "cosine") return make_cosine_schedule<S>(c.timesteps);
    return make_schedule<S>(c.timesteps, c.beta_start, c.beta_end);
}

enum class DropoutBranch { all_dropped, style_dropped, fully_conditional };

inline DropoutBranch dropout_branch(Rng& rng, const TrainConfig& cfg) {
    double u = rng.uniform();
    if (u < cfg.dropout_all_prob) return DropoutBranch::all_dropped;
    if (u < cfg.dropout_all_prob + cfg.dropout_style_prob) return DropoutBranch::style_dropped;
    return DropoutBranch::fully_conditional;
}

// With prob dropout_all_prob null every condition; else with prob
// dropout_style_prob null (I_s, M_s) and keep P_t; else keep everything.
// Covers the three branches Eq. 2 evaluates at sampling time.
template <typename S>
ConditionSet<S> dropout_conditions(const PairedSample<S>& sample, Rng& rng,
                                   const TrainConfig& cfg) {
    const int H = sample.source_image.dim(1), W = sample.source_image.dim(2);
    DropoutBranch br = dropout_branch(rng, cfg);
    ConditionSet<S> nulls = null_condition<S>(H, W);
    ConditionSet<S> out;
    if (br == DropoutBranch::all_dropped) return nulls;
    if (br == DropoutBranch::style_dropped) {
        out.style = std::move(nulls.style);
        out.pose = sample.target_pose;
        return out;
    }
    StyleCondition<S> st;
    st.source_image = sample.source_image;
    st.masks = extract_part_masks<S>(sample.source_parsing);
    out.style = std::move(st);
    out.pose = sample.target_pose;
    return out;
}

// ---------------------------------------------------------------------------
// optimizer state

template <typename S>
struct AdamState {
    long step = 0;
    std::unordered_map<std::string, Tensor<S>> m;
    std::unordered_map<std::string, Tensor<S>> v;
};

template <typename S>
struct TrainerState {
    ModelParams<S> params;
    ModelParams<S> ema;  // shadow copy, same names
    AdamState<S> opt;
    Rng rng;
    long global_step = 0;
};

template <typename S>
TrainerState<S> init_trainer(const NetworkConfig& net_cfg, const TrainConfig& train_cfg) {
    train_cfg.validate();
    TrainerState<S> st;
    Rng init_rng(train_cfg.seed ^ 0xa5a5a5a5deadbeefull);
    st.params = init_model_params<S>(net_cfg, init_rng);
    st.ema = st.params;
    st.rng = Rng(train_cfg.seed);
    return st;
}

// One optimizer step on a batch. Per sample: draw t, draw eps, form y_t,
// apply condition dropout, predict, MSE against eps; Adam update on the mean.
template <typename S>
double training_step(TrainerState<S>& st, const std::vector<const PairedSample<S>*>& batch,
                     const NoiseSchedule<S>& sched, const NetworkConfig& net_cfg,
                     const TrainConfig& cfg) {
    if (batch.empty()) throw invalid_input("training_step: empty batch");
    std::unordered_map<std::string, ad::Var<S>> vars;
    ForwardCtx<S> ctx;
    ctx.params = &st.params;
    ctx.vars = &vars;
    ctx.trainable = true;

    ad::Var<S> total;
    std::vector<int> drawn_t;
    for (const PairedSample<S>* sp : batch) {
        int t = static_cast<int>(st.rng.uniform_int(1, sched.T));
        drawn_t.push_back(t);
        Tensor<S> eps = st.rng.template normal_tensor<S>(sp->target_image.shape);
        Tensor<S> y_t = q_sample(sp->target_image, t, eps, sched);
        ConditionSet<S> cond = dropout_conditions(*sp, st.rng, cfg);

        // encode whatever the dropout left (nulls are zero tensors through the
        // same encoders)
        auto nulls = null_condition<S>(net_cfg.image_size, net_cfg.image_size);
        const StyleCondition<S>& style = cond.style ? *cond.style : *nulls.style;
        const PoseMap<S>& pose = cond.pose ? *cond.pose : *nulls.pose;
        std::array<ad::Var<S>, kNumParts> mvars;
        for (int k = 0; k < kNumParts; ++k) mvars[k] = ad::leaf(style.masks.masks[k]);
        auto tex_g = encode_textures_g(ctx, ad::leaf(style.source_image), mvars, net_cfg);
        auto pose_g = encode_pose_g(ctx, ad::leaf(pose.data), net_cfg);
        auto eps_hat = predict_noise_g(ctx, ad::leaf(y_t), t, tex_g, pose_g, net_cfg);
        auto loss = ad::mse(eps_hat, ad::leaf(eps));
        total = total ? ad::add(total, loss) : loss;
    }
    total = ad::scale(total, S(1) / static_cast<S>(batch.size()));
    double loss_value = static_cast<double>(total->val[0]);
    if (!std::isfinite(loss_value)) {
        std::string ts;
        for (int t : drawn_t) ts += std::to_string(t) + " ";
        throw numeric_failure("training_step: non-finite loss at step " +
                              std::to_string(st.global_step) + " (t: " + ts +
                              "loss: " + std::to_string(loss_value) + ")");
    }
    ad::backward(total);

    // Adam
    ++st.opt.step;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.opt.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.opt.step));
    for (const auto& name : st.params.order) {
        auto it = vars.find(name);
        if (it == vars.end()) continue;  // parameter unused this step
        const Tensor<S>& g = it->second->grad;
        if (g.v.empty()) continue;
        Tensor<S>& p = st.params.at(name);
        auto& m = st.opt.m.try_emplace(name, Tensor<S>::zeros(p.shape)).first->second;
        auto& v = st.opt.v.try_emplace(name, Tensor<S>::zeros(p.shape)).first->second;
        for (std::int64_t i = 0; i < p.size(); ++i) {
            double gi = static_cast<double>(g[i]);
            double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
            double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
            m[i] = static_cast<S>(mi);
            v[i] = static_cast<S>(vi);
            double update =
                cfg.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
            p[i] = static_cast<S>(static_cast<double>(p[i]) - update);
        }
        if (!p.all_finite())
            throw numeric_failure("training_step: non-finite parameter " + name + " at step " +
                                  std::to_string(st.global_step));
    }
    if (cfg.use_ema) {
        const S d = static_cast<S>(cfg.ema_decay);
        for (const auto& name : st.params.order) {
            Tensor<S>& e = st.ema.at(name);
            const Tensor<S>& p = st.params.at(name);
            for (std::int64_t i = 0; i < e.size(); ++i)
                e[i] = d * e[i] + (S(1) - d) * p[i];
        }
    }
    ++st.global_step;
    return loss_value;
}

// ---------------------------------------------------------------------------
// checkpoint persistence
//
// Layout: magic, format version, payload length, crc32(payload), payload.
// Payload = u32 header length + JSON header + raw little-endian tensor bytes.

namespace ckpt_detail {

inline constexpr char kMagic[8] = {'D', 'R', 'D', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

template <typename S>
void append_tensors(std::string& blob, nlohmann::json& table, const std::string& section,
                    const std::vector<std::string>& order,
                    const std::unordered_map<std::string, Tensor<S>>& tensors) {
    for (const auto& name : order) {
        auto it = tensors.find(name);
        if (it == tensors.end()) continue;
        const Tensor<S>& t = it->second;
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = t.shape;
        entry["offset"] = blob.size();
        table[section].push_back(entry);
        blob.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(S));
    }
}

template <typename S>
void read_tensors(const std::string& blob, const nlohmann::json& table,
                  std::vector<std::string>* order,
                  std::unordered_map<std::string, Tensor<S>>& tensors) {
    for (const auto& entry : table) {
        Tensor<S> t(entry.at("shape").get<std::vector<int>>());
        size_t off = entry.at("offset").get<size_t>();
        size_t bytes = static_cast<size_t>(t.size()) * sizeof(S);
        if (off + bytes > blob.size()) throw checkpoint_error("checkpoint: tensor out of range");
        std::memcpy(t.data(), blob.data() + off, bytes);
        std::string name = entry.at("name").get<std::string>();
        if (order) order->push_back(name);
        tensors.emplace(std::move(name), std::move(t));
    }
}

}  // namespace ckpt_detail

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"learning_rate", c.learning_rate},
                       {"batch_size", c.batch_size},
                       {"dropout_all_prob", c.dropout_all_prob},
                       {"dropout_style_prob", c.dropout_style_prob},
                       {"total_steps", c.total_steps},
                       {"use_ema", c.use_ema},
                       {"ema_decay", c.ema_decay},
                       {"seed", c.seed},
                       {"checkpoint_interval", c.checkpoint_interval},
                       {"schedule", c.schedule},
                       {"timesteps", c.timesteps},
                       {"beta_start", c.beta_start},
                       {"beta_end", c.beta_end},
                       {"adam_beta1", c.adam_beta1},
                       {"adam_beta2", c.adam_beta2},
                       {"adam_eps", c.adam_eps}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.dropout_all_prob = j.value("dropout_all_prob", d.dropout_all_prob);
    c.dropout_style_prob = j.value("dropout_style_prob", d.dropout_style_prob);
    c.total_steps = j.value("total_steps", d.total_steps);
    c.use_ema = j.value("use_ema", d.use_ema);
    c.ema_decay = j.value("ema_decay", d.ema_decay);
    c.seed = j.value("seed", d.seed);
    c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
    c.schedule = j.value("schedule", d.schedule);
    c.timesteps = j.value("timesteps", d.timesteps);
    c.beta_start = j.value("beta_start", d.beta_start);
    c.beta_end = j.value("beta_end", d.beta_end);
    c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
}

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
    j = nlohmann::json{{"image_size", c.image_size},
                       {"base_channels", c.base_channels},
                       {"channel_mult", c.channel_mult},
                       {"injection_resolutions", c.injection_resolutions},
                       {"num_self_attn_levels", c.num_self_attn_levels},
                       {"time_embed_dim", c.time_embed_dim},
                       {"attn_dim", c.attn_dim},
                       {"heads", c.heads},
                       {"texture_channels", c.texture_channels},
                       {"pose_channels", c.pose_channels}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
    NetworkConfig d;
    c.image_size = j.value("image_size", d.image_size);
    c.base_channels = j.value("base_channels", d.base_channels);
    c.channel_mult = j.value("channel_mult", d.channel_mult);
    c.injection_resolutions = j.value("injection_resolutions", d.injection_resolutions);
    c.num_self_attn_levels = j.value("num_self_attn_levels", d.num_self_attn_levels);
    c.time_embed_dim = j.value("time_embed_dim", d.time_embed_dim);
    c.attn_dim = j.value("attn_dim", d.attn_dim);
    c.heads = j.value("heads", d.heads);
    c.texture_channels = j.value("texture_channels", d.texture_channels);
    c.pose_channels = j.value("pose_channels", d.pose_channels);
}

template <typename S>
void save_checkpoint(const std::string& path, const TrainerState<S>& st,
                     const NetworkConfig& net_cfg, const TrainConfig& train_cfg) {
    nlohmann::json header;
    header["scalar_bytes"] = sizeof(S);
    header["network_config"] = net_cfg;
    header["train_config"] = train_cfg;
    header["global_step"] = st.global_step;
    header["adam_step"] = st.opt.step;
    header["rng_state"] = st.rng.serialize();
    header["tensors"] = nlohmann::json::object();

    std::string blob;
    ckpt_detail::append_tensors(blob, header["tensors"], "params", st.params.order,
                                st.params.tensors);
    ckpt_detail::append_tensors(blob, header["tensors"], "ema", st.ema.order, st.ema.tensors);
    ckpt_detail::append_tensors(blob, header["tensors"], "adam_m", st.params.order, st.opt.m);
    ckpt_detail::append_tensors(blob, header["tensors"], "adam_v", st.params.order, st.opt.v);

    std::string header_str = header.dump();
    std::string payload;
    std::uint32_t hlen = static_cast<std::uint32_t>(header_str.size());
    payload.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    payload += header_str;
    payload += blob;

    std::uint64_t plen = payload.size();
    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(plen)));

    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw io_error("cannot write checkpoint: " + tmp);
        os.write(ckpt_detail::kMagic, sizeof(ckpt_detail::kMagic));
        std::uint32_t ver = ckpt_detail::kVersion;
        os.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
        os.write(reinterpret_cast<const char*>(&plen), sizeof(plen));
        os.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
        os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!os) throw io_error("short write on checkpoint: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

template <typename S>
struct LoadedCheckpoint {
    TrainerState<S> state;
    NetworkConfig net_cfg;
    TrainConfig train_cfg;
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open checkpoint: " + path);
    char magic[8];
    std::uint32_t ver = 0, crc = 0;
    std::uint64_t plen = 0;
    is.read(magic, sizeof(magic));
    is.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    is.read(reinterpret_cast<char*>(&plen), sizeof(plen));
    is.read(reinterpret_cast<char*>(&crc), sizeof(crc));
    if (!is || std::memcmp(magic, ckpt_detail::kMagic, 8) != 0)
        throw checkpoint_error("checkpoint: bad magic in " + path);
    if (ver != ckpt_detail::kVersion)
        throw checkpoint_error("checkpoint: incompatible format version " + std::to_string(ver));
    std::string payload(plen, '\0');
    is.read(payload.data(), static_cast<std::streamsize>(plen));
    if (static_cast<std::uint64_t>(is.gcount()) != plen)
        throw checkpoint_error("checkpoint: truncated file " + path);
    std::uint32_t actual = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(plen)));
    if (actual != crc) throw checkpoint_error("checkpoint: checksum mismatch in " + path);

    std::uint32_t hlen = 0;
    std::memcpy(&hlen, payload.data(), sizeof(hlen));
    if (sizeof(hlen) + hlen > payload.size())
        throw checkpoint_error("checkpoint: corrupt header length");
    nlohmann::json header = nlohmann::json::parse(payload.substr(sizeof(hlen), hlen));
    if (header.at("scalar_bytes").get<size_t>() != sizeof(S))
        throw checkpoint_error("checkpoint: scalar width mismatch");
    std::string blob = payload.substr(sizeof(hlen) + hlen);

    LoadedCheckpoint<S> out;
    out.net_cfg = header.at("network_config").get<NetworkConfig>();
    out.train_cfg = header.at("train_config").get<TrainConfig>();
    out.state.global_step = header.at("global_step").get<long>();
    out.state.opt.step = header.at("adam_step").get<long>();
    out.state.rng.deserialize(header.at("rng_state").get<std::string>());
    const auto& table = header.at("tensors");
    ckpt_detail::read_tensors(blob, table.at("params"), &out.state.params.order,
                              out.state.params.tensors);
    ckpt_detail::read_tensors(blob, table.at("ema"), &out.state.ema.order,
                              out.state.ema.tensors);
    if (table.contains("adam_m"))
        ckpt_detail::read_tensors<S>(blob, table.at("adam_m"), nullptr, out.state.opt.m);
    if (table.contains("adam_v"))
        ckpt_detail::read_tensors<S>(blob, table.at("adam_v"), nullptr, out.state.opt.v);
    return out;
}

}  // namespace drdm

#endif  // DRDM_TRAINER_HPP
