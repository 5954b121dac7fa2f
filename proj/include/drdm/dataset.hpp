#ifndef DRDM_DATASET_HPP
#define DRDM_DATASET_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "drdm/data.hpp"
#include "drdm/image_io.hpp"

namespace drdm {

// Dataset directory layout:
//   <root>/pairs/<id>/{source.png, target.png, source_parsing.png, target_pose.json}
// plus target_parsing.png (synthetic ground truth consumed by the evaluator).
// Parsing maps are 8-bit single-channel indexed images with the label ids of
// ParsingMap; keypoints are a JSON list of 18 [x, y, visible] triples.

namespace fs = std::filesystem;

inline nlohmann::json keypoints_to_json(const Keypoints& kp) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : kp.points) arr.push_back({p.x, p.y, p.visible ? 1 : 0});
    return arr;
}

inline Keypoints keypoints_from_json(const nlohmann::json& arr) {
    if (!arr.is_array() || arr.size() != kNumKeypoints)
        throw invalid_input("keypoints: expected a list of 18 [x, y, visible] triples");
    Keypoints kp;
    for (int i = 0; i < kNumKeypoints; ++i) {
        const auto& t = arr[static_cast<size_t>(i)];
        kp.points[i].x = t.at(0).get<double>();
        kp.points[i].y = t.at(1).get<double>();
        kp.points[i].visible = t.at(2).get<int>() != 0;
    }
    return kp;
}

template <typename S>
void save_pair(const fs::path& dir, const PairedSample<S>& sample) {
    fs::create_directories(dir);
    write_png_rgb((dir / "source.png").string(), denormalize_image(sample.source_image));
    write_png_rgb((dir / "target.png").string(), denormalize_image(sample.target_image));
    write_png_gray((dir / "source_parsing.png").string(), sample.source_parsing.labels);
    write_png_gray((dir / "target_parsing.png").string(), sample.target_parsing.labels);
    std::ofstream os(dir / "target_pose.json");
    if (!os) throw io_error("cannot write " + (dir / "target_pose.json").string());
    os << keypoints_to_json(sample.target_keypoints).dump(2) << "\n";
}

template <typename S>
PairedSample<S> load_pair(const fs::path& dir, double pose_sigma) {
    PairedSample<S> s;
    auto src = read_png((dir / "source.png").string());
    auto tgt = read_png((dir / "target.png").string());
    if (src.rank() != 3 || tgt.rank() != 3)
        throw invalid_input("pair " + dir.string() + ": images must be RGB");
    s.source_image = normalize_image<S>(src);
    s.target_image = normalize_image<S>(tgt);
    auto parsing = read_png((dir / "source_parsing.png").string());
    if (parsing.rank() != 2) throw invalid_input("pair " + dir.string() + ": parsing must be gray");
    s.source_parsing.labels = std::move(parsing);
    for (auto lab : s.source_parsing.labels.v)
        if (lab > kNumParts)
            throw invalid_input("pair " + dir.string() + ": parsing label out of range");
    if (fs::exists(dir / "target_parsing.png")) {
        auto tp = read_png((dir / "target_parsing.png").string());
        if (tp.rank() == 2) s.target_parsing.labels = std::move(tp);
    }
    std::ifstream is(dir / "target_pose.json");
    if (!is) throw io_error("cannot read " + (dir / "target_pose.json").string());
    nlohmann::json j;
    is >> j;
    s.target_keypoints = keypoints_from_json(j);
    int H = s.source_image.dim(1), W = s.source_image.dim(2);
    s.target_pose = rasterize_pose_map<S>(s.target_keypoints, H, W, pose_sigma);
    s.identity_id = dir.filename().string();
    return s;
}

template <typename S>
std::vector<PairedSample<S>> load_dataset(const fs::path& root, double pose_sigma) {
    fs::path pairs = root / "pairs";
    if (!fs::is_directory(pairs)) throw io_error("no pairs/ directory under " + root.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(pairs))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    std::vector<PairedSample<S>> out;
    out.reserve(dirs.size());
    for (const auto& d : dirs) out.push_back(load_pair<S>(d, pose_sigma));
    return out;
}

template <typename S>
void generate_dataset(const fs::path& root, int count, std::uint64_t seed,
                      const SynthConfig& cfg) {
    if (count < 1) throw invalid_input("generate_dataset: count must be >= 1");
    for (int i = 0; i < count; ++i) {
        auto sample = generate_synthetic_pair<S>(seed + static_cast<std::uint64_t>(i), cfg);
        char name[16];
        std::snprintf(name, sizeof(name), "%05d", i);
        save_pair(root / "pairs" / name, sample);
    }
}

}  // namespace drdm

#endif  // DRDM_DATASET_HPP
