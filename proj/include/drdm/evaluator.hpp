#ifndef DRDM_EVALUATOR_HPP
#define DRDM_EVALUATOR_HPP

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "drdm/data.hpp"
#include "drdm/random.hpp"
#include "drdm/tensor.hpp"

namespace drdm {

struct MetricReport {
    double ssim = 0.0;
    double fid_proxy = 0.0;
    std::array<std::optional<double>, kNumParts> part_color_error;  // empty mask -> nullopt
    int sample_count = 0;
    // LPIPS requires pretrained perceptual weights and is not available here;
    // the slot exists for report compatibility.
    std::optional<double> lpips;
};

// ---------------------------------------------------------------------------
// SSIM: 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, dynamic range 1.
// Inputs are model-space images in [-1,1]; they are mapped to [0,1] first.

namespace ssim_detail {

inline std::vector<double> gaussian_window(int radius, double sigma) {
    std::vector<double> w(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        w[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += w[i + radius];
    }
    for (auto& x : w) x /= sum;
    return w;
}

// separable Gaussian blur with edge-renormalized (truncated) window
inline void blur(const std::vector<double>& src, int H, int W, const std::vector<double>& win,
                 std::vector<double>& dst) {
    const int R = static_cast<int>(win.size()) / 2;
    std::vector<double> tmp(src.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double acc = 0, wsum = 0;
            for (int k = -R; k <= R; ++k) {
                int xx = x + k;
                if (xx < 0 || xx >= W) continue;
                acc += win[k + R] * src[y * W + xx];
                wsum += win[k + R];
            }
            tmp[y * W + x] = acc / wsum;
        }
    dst.resize(src.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double acc = 0, wsum = 0;
            for (int k = -R; k <= R; ++k) {
                int yy = y + k;
                if (yy < 0 || yy >= H) continue;
                acc += win[k + R] * tmp[yy * W + x];
                wsum += win[k + R];
            }
            dst[y * W + x] = acc / wsum;
        }
}

}  // namespace ssim_detail

template <typename S>
double ssim(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) throw invalid_input("ssim: shape mismatch");
    if (a.rank() != 3) throw invalid_input("ssim: expects [C,H,W]");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    auto win = ssim_detail::gaussian_window(5, 1.5);

    double total = 0;
    std::vector<double> xa(H * W), xb(H * W), mu_a, mu_b, aa(H * W), bb(H * W), ab(H * W);
    std::vector<double> s_aa, s_bb, s_ab;
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < H * W; ++i) {
            xa[i] = (static_cast<double>(a[c * H * W + i]) + 1.0) / 2.0;
            xb[i] = (static_cast<double>(b[c * H * W + i]) + 1.0) / 2.0;
            aa[i] = xa[i] * xa[i];
            bb[i] = xb[i] * xb[i];
            ab[i] = xa[i] * xb[i];
        }
        ssim_detail::blur(xa, H, W, win, mu_a);
        ssim_detail::blur(xb, H, W, win, mu_b);
        ssim_detail::blur(aa, H, W, win, s_aa);
        ssim_detail::blur(bb, H, W, win, s_bb);
        ssim_detail::blur(ab, H, W, win, s_ab);
        double acc = 0;
        for (int i = 0; i < H * W; ++i) {
            double va = s_aa[i] - mu_a[i] * mu_a[i];
            double vb = s_bb[i] - mu_b[i] * mu_b[i];
            double cov = s_ab[i] - mu_a[i] * mu_b[i];
            double num = (2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2);
            double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
            acc += num / den;
        }
        total += acc / (H * W);
    }
    return total / C;
}

// ---------------------------------------------------------------------------
// FID proxy: Frechet distance between Gaussian fits of features from a fixed,
// seed-pinned random-projection feature map. Tracks relative quality across
// training; values are NOT comparable to published Inception-based FID.

inline constexpr int kFidFeatureDim = 24;
inline constexpr std::uint64_t kFidProjectionSeed = 0xD2D40FEEDull;

namespace fid_detail {

// projection matrix depends only on (input_dim, seed) -> stable across machines
inline Eigen::MatrixXd projection(int input_dim) {
    Rng rng(kFidProjectionSeed);
    Eigen::MatrixXd P(kFidFeatureDim, input_dim);
    double scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
    for (int r = 0; r < kFidFeatureDim; ++r)
        for (int c = 0; c < input_dim; ++c) P(r, c) = rng.normal() * scale;
    return P;
}

template <typename S>
Eigen::MatrixXd features(const std::vector<Tensor<S>>& images) {
    const int n = static_cast<int>(images.size());
    const int d = static_cast<int>(images[0].size());
    Eigen::MatrixXd P = projection(d);
    Eigen::MatrixXd F(n, kFidFeatureDim);
    Eigen::VectorXd x(d);
    for (int i = 0; i < n; ++i) {
        if (images[i].size() != d) throw invalid_input("fid_proxy: inconsistent image shapes");
        for (int j = 0; j < d; ++j) x(j) = static_cast<double>(images[i][j]);
        F.row(i) = (P * x).transpose();
    }
    return F;
}

inline void gaussian_fit(const Eigen::MatrixXd& F, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    const int n = static_cast<int>(F.rows());
    mu = F.colwise().mean();
    Eigen::MatrixXd centered = F.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(n - 1);
}

// sqrt(A) for symmetric PSD A
inline Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& A) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline double frechet(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& c1,
                      const Eigen::VectorXd& mu2, const Eigen::MatrixXd& c2) {
    Eigen::VectorXd dm = mu1 - mu2;
    Eigen::MatrixXd s1 = sym_sqrt(c1);
    Eigen::MatrixXd prod = s1 * c2 * s1;  // symmetric PSD, same spectrum as c1*c2
    Eigen::MatrixXd sp = sym_sqrt(prod);
    double val = dm.squaredNorm() + c1.trace() + c2.trace() - 2.0 * sp.trace();
    return std::max(0.0, val);
}

}  // namespace fid_detail

template <typename S>
double fid_proxy(const std::vector<Tensor<S>>& set_a, const std::vector<Tensor<S>>& set_b) {
    if (set_a.size() < 8 || set_b.size() < 8)
        throw invalid_input("fid_proxy: need at least 8 samples per set");
    Eigen::MatrixXd fa = fid_detail::features(set_a);
    Eigen::MatrixXd fb = fid_detail::features(set_b);
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    fid_detail::gaussian_fit(fa, mu_a, cov_a);
    fid_detail::gaussian_fit(fb, mu_b, cov_b);
    return fid_detail::frechet(mu_a, cov_a, mu_b, cov_b);
}

// ---------------------------------------------------------------------------
// part-level color consistency

template <typename S>
std::array<double, 3> masked_mean_color(const Tensor<S>& image, const Tensor<S>& mask) {
    const int H = image.dim(1), W = image.dim(2);
    std::array<double, 3> mean{0, 0, 0};
    double count = 0;
    for (int i = 0; i < H * W; ++i)
        if (mask[i] > S(0.5)) {
            count += 1;
            for (int c = 0; c < 3; ++c) mean[c] += static_cast<double>(image[c * H * W + i]);
        }
    if (count > 0)
        for (auto& m : mean) m /= count;
    return mean;
}

// Per part: L2 gap between the generated image's mean color over the target
// mask and the source image's mean color over the source mask. Empty masks
// yield an empty optional.
template <typename S>
std::array<std::optional<double>, kNumParts> part_color_consistency(
    const Tensor<S>& generated, const Tensor<S>& source, const PartMaskSet<S>& source_masks,
    const PartMaskSet<S>& target_masks) {
    std::array<std::optional<double>, kNumParts> out;
    for (int k = 0; k < kNumParts; ++k) {
        double n_src = 0, n_tgt = 0;
        for (const auto& v : source_masks.masks[k].v) n_src += static_cast<double>(v);
        for (const auto& v : target_masks.masks[k].v) n_tgt += static_cast<double>(v);
        if (n_src == 0 || n_tgt == 0) continue;  // part absent; skipped with flag
        auto ms = masked_mean_color(source, source_masks.masks[k]);
        auto mg = masked_mean_color(generated, target_masks.masks[k]);
        double d2 = 0;
        for (int c = 0; c < 3; ++c) d2 += (mg[c] - ms[c]) * (mg[c] - ms[c]);
        out[k] = std::sqrt(d2);
    }
    return out;
}

}  // namespace drdm

#endif  // DRDM_EVALUATOR_HPP
