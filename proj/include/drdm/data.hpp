#ifndef DRDM_DATA_HPP
#define DRDM_DATA_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "drdm/random.hpp"
#include "drdm/tensor.hpp"

namespace drdm {

inline constexpr int kNumKeypoints = 18;
inline constexpr int kNumParts = 4;

enum class Part : int { head = 0, cloth = 1, pant = 2, hand = 3 };

inline const char* part_name(Part p) {
    switch (p) {
        case Part::head: return "head";
        case Part::cloth: return "cloth";
        case Part::pant: return "pant";
        case Part::hand: return "hand";
    }
    return "?";
}

inline Part part_from_name(const std::string& s) {
    if (s == "head") return Part::head;
    if (s == "cloth") return Part::cloth;
    if (s == "pant") return Part::pant;
    if (s == "hand") return Part::hand;
    throw invalid_input("unknown part name: " + s);
}

// Parsing-map label ids. 0 is background; part k maps to label k+1.
inline int part_label(Part p) { return static_cast<int>(p) + 1; }

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    bool visible = false;
};

struct Keypoints {
    std::array<Keypoint, kNumKeypoints> points{};
};

template <typename S>
struct PoseMap {
    Tensor<S> data;  // [18, H, W], values in [0, 1]
};

struct ParsingMap {
    Tensor<std::uint8_t> labels;  // [H, W], values 0..4
};

template <typename S>
struct PartMaskSet {
    std::array<Tensor<S>, kNumParts> masks;  // each [H, W], binary
};

template <typename S>
struct PairedSample {
    Tensor<S> source_image;  // [3, H, W] in [-1, 1]
    ParsingMap source_parsing;
    Keypoints source_keypoints;
    Keypoints target_keypoints;
    PoseMap<S> target_pose;
    Tensor<S> target_image;  // [3, H, W] in [-1, 1]
    ParsingMap target_parsing;  // synthetic ground truth, used by the evaluator
    std::string identity_id;
};

// ---------------------------------------------------------------------------
// pose map rasterization

// One unnormalized Gaussian bump of std sigma per visible keypoint,
// clamped to [0,1]; invisible keypoints yield all-zero channels.
template <typename S>
PoseMap<S> rasterize_pose_map(const Keypoints& kp, int height, int width, double sigma) {
    if (height <= 0 || width <= 0) throw invalid_input("rasterize_pose_map: bad extent");
    if (sigma <= 0.0) throw invalid_input("rasterize_pose_map: sigma must be positive");
    PoseMap<S> pm;
    pm.data = Tensor<S>::zeros({kNumKeypoints, height, width});
    for (int c = 0; c < kNumKeypoints; ++c) {
        const Keypoint& p = kp.points[c];
        if (!p.visible) continue;
        if (p.x < 0 || p.x > width - 1 || p.y < 0 || p.y > height - 1)
            throw invalid_input("rasterize_pose_map: visible keypoint out of bounds");
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                double d2 = (x - p.x) * (x - p.x) + (y - p.y) * (y - p.y);
                double v = std::exp(-d2 / (2.0 * sigma * sigma));
                pm.data.at(c, y, x) = static_cast<S>(std::min(1.0, v));
            }
    }
    return pm;
}

// ---------------------------------------------------------------------------
// parsing map -> part masks

template <typename S>
PartMaskSet<S> extract_part_masks(const ParsingMap& parsing) {
    const int H = parsing.labels.dim(0), W = parsing.labels.dim(1);
    PartMaskSet<S> out;
    for (int k = 0; k < kNumParts; ++k) out.masks[k] = Tensor<S>::zeros({H, W});
    for (std::int64_t i = 0; i < parsing.labels.size(); ++i) {
        int lab = parsing.labels[i];
        if (lab < 0 || lab > kNumParts)
            throw invalid_input("extract_part_masks: label out of range: " + std::to_string(lab));
        if (lab > 0) out.masks[lab - 1][i] = S(1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization

template <typename S>
Tensor<S> normalize_image(const Tensor<std::uint8_t>& raw) {
    Tensor<S> out;
    out.shape = raw.shape;
    out.v.resize(raw.v.size());
    for (size_t i = 0; i < raw.v.size(); ++i)
        out.v[i] = static_cast<S>(raw.v[i]) / S(127.5) - S(1);
    return out;
}

template <typename S>
Tensor<std::uint8_t> denormalize_image(const Tensor<S>& img) {
    Tensor<std::uint8_t> out;
    out.shape = img.shape;
    out.v.resize(img.v.size());
    for (size_t i = 0; i < img.v.size(); ++i) {
        double x = (static_cast<double>(img.v[i]) + 1.0) * 127.5;
        x = std::min(255.0, std::max(0.0, x));
        out.v[i] = static_cast<std::uint8_t>(std::lround(x));
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic paired-sample generator

struct SynthConfig {
    int size = 64;
    // Part colors are sampled uniformly per channel from [palette_lo, palette_hi]
    // (8-bit scale) so per-part colors are mutually independent.
    int palette_lo = 60;
    int palette_hi = 255;
    double pose_sigma_base = 1.5;  // at size 64; scales linearly with size

    double pose_sigma() const { return pose_sigma_base * size / 64.0; }
};

namespace synth_detail {

// COCO-18 joint indices used by the skeleton.
enum Joint {
    kNose = 0, kNeck = 1, kRSho = 2, kRElb = 3, kRWri = 4, kLSho = 5, kLElb = 6, kLWri = 7,
    kRHip = 8, kRKnee = 9, kRAnk = 10, kLHip = 11, kLKnee = 12, kLAnk = 13,
    kREye = 14, kLEye = 15, kREar = 16, kLEar = 17
};

struct Figure {
    Keypoints kp;
};

inline Keypoint pt(double x, double y) { return Keypoint{x, y, true}; }

// Samples an articulated stick figure inside an SxS canvas.
inline Figure sample_figure(Rng& rng, int S) {
    Figure f;
    const double s = S / 64.0;
    double cx = S * 0.5 + rng.uniform(-6.0, 6.0) * s;
    double neck_y = S * rng.uniform(0.28, 0.34);
    double hip_y = neck_y + S * rng.uniform(0.26, 0.32);
    double shoulder_w = S * rng.uniform(0.13, 0.17);
    double hip_w = S * rng.uniform(0.09, 0.12);
    double head_r = S * rng.uniform(0.09, 0.11);

    auto& p = f.kp.points;
    p[kNeck] = pt(cx, neck_y);
    p[kNose] = pt(cx + rng.uniform(-2.0, 2.0) * s, neck_y - head_r * 1.1);
    p[kRSho] = pt(cx - shoulder_w, neck_y + 1.0 * s);
    p[kLSho] = pt(cx + shoulder_w, neck_y + 1.0 * s);
    p[kRHip] = pt(cx - hip_w, hip_y);
    p[kLHip] = pt(cx + hip_w, hip_y);

    auto limb = [&](int from, double angle_lo, double angle_hi, double len) {
        double a = rng.uniform(angle_lo, angle_hi);
        return pt(p[from].x + len * std::sin(a), p[from].y + len * std::cos(a));
    };
    const double arm_len = S * rng.uniform(0.14, 0.17);
    // angles measured from straight down; right arm swings outwards (negative x)
    p[kRElb] = limb(kRSho, -0.9, 0.25, arm_len);
    {
        double a = rng.uniform(-0.9, 0.35);
        p[kRWri] = pt(p[kRElb].x + arm_len * std::sin(a) * (p[kRElb].x <= p[kRSho].x ? -1 : 1),
                      p[kRElb].y + arm_len * std::cos(a));
    }
    p[kLElb] = limb(kLSho, -0.25, 0.9, arm_len);
    {
        double a = rng.uniform(-0.35, 0.9);
        p[kLWri] = pt(p[kLElb].x + arm_len * std::sin(a) * (p[kLElb].x >= p[kLSho].x ? 1 : -1),
                      p[kLElb].y + arm_len * std::cos(a));
    }
    const double leg_len = S * rng.uniform(0.13, 0.16);
    p[kRKnee] = limb(kRHip, -0.45, 0.1, leg_len);
    p[kLKnee] = limb(kLHip, -0.1, 0.45, leg_len);
    p[kRAnk] = pt(p[kRKnee].x + rng.uniform(-0.15, 0.15) * leg_len, p[kRKnee].y + leg_len);
    p[kLAnk] = pt(p[kLKnee].x + rng.uniform(-0.15, 0.15) * leg_len, p[kLKnee].y + leg_len);

    double eye_dx = head_r * 0.35, eye_dy = head_r * 0.25;
    p[kREye] = pt(p[kNose].x - eye_dx, p[kNose].y - eye_dy);
    p[kLEye] = pt(p[kNose].x + eye_dx, p[kNose].y - eye_dy);
    // ears flicker in and out of visibility to exercise the invisibility path
    p[kREar] = pt(p[kNose].x - head_r * 0.8, p[kNose].y);
    p[kLEar] = pt(p[kNose].x + head_r * 0.8, p[kNose].y);
    p[kREar].visible = rng.uniform() < 0.7;
    p[kLEar].visible = rng.uniform() < 0.7;

    // clamp everything inside the canvas
    for (auto& q : p) {
        q.x = std::min(static_cast<double>(S - 2), std::max(1.0, q.x));
        q.y = std::min(static_cast<double>(S - 2), std::max(1.0, q.y));
    }
    return f;
}

inline double dist_to_segment(double px, double py, double ax, double ay, double bx, double by) {
    double vx = bx - ax, vy = by - ay;
    double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::min(1.0, std::max(0.0, t));
    double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

struct Palette {
    // colors in [-1, 1] per part per RGB channel
    std::array<std::array<double, 3>, kNumParts> color;
};

inline Palette sample_palette(Rng& rng, const SynthConfig& cfg) {
    Palette pal;
    for (int k = 0; k < kNumParts; ++k)
        for (int c = 0; c < 3; ++c) {
            int byte = static_cast<int>(rng.uniform_int(cfg.palette_lo, cfg.palette_hi));
            pal.color[k][c] = byte / 127.5 - 1.0;
        }
    return pal;
}

// Rasterizes the figure: labels [H,W] and flat-colored image [3,H,W].
// Paint order pant < cloth < hand < head; the topmost part wins a pixel.
template <typename S>
void render(const Figure& f, const Palette& pal, int size, Tensor<S>& image,
            Tensor<std::uint8_t>& labels) {
    const auto& p = f.kp.points;
    const double s = size / 64.0;
    labels = Tensor<std::uint8_t>::zeros({size, size});
    image = Tensor<S>::full({3, size, size}, S(-1));  // background = -1 (black)

    auto paint = [&](int y, int x, Part part) {
        labels.at(y, x) = static_cast<std::uint8_t>(part_label(part));
        for (int c = 0; c < 3; ++c)
            image.at(c, y, x) = static_cast<S>(pal.color[static_cast<int>(part)][c]);
    };

    const double leg_r = 2.6 * s, arm_r = 2.2 * s, hand_r = 2.4 * s;
    double head_rx = std::abs(p[kLEar].x - p[kREar].x) * 0.65 + 2.0 * s;
    double head_ry = std::abs(p[kNeck].y - p[kNose].y) * 0.85 + 1.0 * s;

    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double fx = x, fy = y;
            // pants: hip->knee->ankle strokes plus the hip box
            bool pant =
                dist_to_segment(fx, fy, p[kRHip].x, p[kRHip].y, p[kRKnee].x, p[kRKnee].y) <= leg_r ||
                dist_to_segment(fx, fy, p[kRKnee].x, p[kRKnee].y, p[kRAnk].x, p[kRAnk].y) <= leg_r ||
                dist_to_segment(fx, fy, p[kLHip].x, p[kLHip].y, p[kLKnee].x, p[kLKnee].y) <= leg_r ||
                dist_to_segment(fx, fy, p[kLKnee].x, p[kLKnee].y, p[kLAnk].x, p[kLAnk].y) <= leg_r ||
                dist_to_segment(fx, fy, p[kRHip].x, p[kRHip].y, p[kLHip].x, p[kLHip].y) <= leg_r;
            if (pant) paint(y, x, Part::pant);

            // cloth: torso quad approximated by shoulder/hip strokes + center fill
            double mid_sx = (p[kRSho].x + p[kLSho].x) / 2, mid_sy = (p[kRSho].y + p[kLSho].y) / 2;
            double mid_hx = (p[kRHip].x + p[kLHip].x) / 2, mid_hy = (p[kRHip].y + p[kLHip].y) / 2;
            double torso_r = (std::abs(p[kLSho].x - p[kRSho].x) / 2 + 1.5 * s);
            bool cloth =
                dist_to_segment(fx, fy, mid_sx, mid_sy, mid_hx, mid_hy) <= torso_r ||
                dist_to_segment(fx, fy, p[kRSho].x, p[kRSho].y, p[kLSho].x, p[kLSho].y) <= arm_r ||
                dist_to_segment(fx, fy, p[kRSho].x, p[kRSho].y, p[kRElb].x, p[kRElb].y) <= arm_r ||
                dist_to_segment(fx, fy, p[kRElb].x, p[kRElb].y, p[kRWri].x, p[kRWri].y) <= arm_r ||
                dist_to_segment(fx, fy, p[kLSho].x, p[kLSho].y, p[kLElb].x, p[kLElb].y) <= arm_r ||
                dist_to_segment(fx, fy, p[kLElb].x, p[kLElb].y, p[kLWri].x, p[kLWri].y) <= arm_r;
            if (cloth) paint(y, x, Part::cloth);

            bool hand = std::hypot(fx - p[kRWri].x, fy - p[kRWri].y) <= hand_r ||
                        std::hypot(fx - p[kLWri].x, fy - p[kLWri].y) <= hand_r;
            if (hand) paint(y, x, Part::hand);

            double hx = (fx - p[kNose].x) / head_rx;
            double hy = (fy - (p[kNose].y + p[kNeck].y) * 0.5 + 1.0 * s) / head_ry;
            if (hx * hx + hy * hy <= 1.0) paint(y, x, Part::head);
        }
}

}  // namespace synth_detail

// Deterministic in seed: same seed -> bit-identical sample. Source and target
// are the same identity (same palette) rendered in two sampled poses.
template <typename S>
PairedSample<S> generate_synthetic_pair(std::uint64_t seed, const SynthConfig& cfg) {
    if (cfg.size < 16) throw invalid_input("generate_synthetic_pair: size must be >= 16");
    Rng rng(seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
    auto pal = synth_detail::sample_palette(rng, cfg);
    auto src_fig = synth_detail::sample_figure(rng, cfg.size);
    auto tgt_fig = synth_detail::sample_figure(rng, cfg.size);

    PairedSample<S> out;
    out.identity_id = std::to_string(seed);
    out.source_keypoints = src_fig.kp;
    out.target_keypoints = tgt_fig.kp;
    Tensor<std::uint8_t> src_labels, tgt_labels;
    synth_detail::render(src_fig, pal, cfg.size, out.source_image, src_labels);
    synth_detail::render(tgt_fig, pal, cfg.size, out.target_image, tgt_labels);
    out.source_parsing.labels = std::move(src_labels);
    out.target_parsing.labels = std::move(tgt_labels);
    out.target_pose = rasterize_pose_map<S>(tgt_fig.kp, cfg.size, cfg.size, cfg.pose_sigma());
    return out;
}

}  // namespace drdm

#endif  // DRDM_DATA_HPP
