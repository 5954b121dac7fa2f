#ifndef DRDM_SCHEDULE_HPP
#define DRDM_SCHEDULE_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "drdm/random.hpp"
#include "drdm/tensor.hpp"

namespace drdm {

// DDPM forward-process tables. 1-indexed timesteps t in {1..T}; index 0 of
// alpha_bar holds the alpha_bar[0] == 1 convention.
template <typename S>
struct NoiseSchedule {
    int T = 0;
    std::vector<S> beta;                // beta[t], t in 1..T (beta[0] unused)
    std::vector<S> alpha;               // 1 - beta[t]
    std::vector<S> alpha_bar;           // prod_{u<=t} alpha[u]; alpha_bar[0] = 1
    std::vector<S> posterior_variance;  // beta_t * (1-abar_{t-1}) / (1-abar_t)

    void check_t(int t) const {
        if (t < 1 || t > T) throw invalid_input("timestep out of range");
    }
};

template <typename S>
struct LatentState {
    Tensor<S> y;  // [3,H,W]
    int t = 0;
};

template <typename S>
NoiseSchedule<S> make_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02) {
    if (T < 1) throw invalid_input("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw invalid_input("make_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule<S> s;
    s.T = T;
    s.beta.assign(T + 1, S(0));
    s.alpha.assign(T + 1, S(0));
    s.alpha_bar.assign(T + 1, S(1));
    s.posterior_variance.assign(T + 1, S(0));
    for (int t = 1; t <= T; ++t) {
        double b = T == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * (t - 1) / double(T - 1);
        s.beta[t] = static_cast<S>(b);
        s.alpha[t] = static_cast<S>(1.0 - b);
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
        s.posterior_variance[t] =
            s.beta[t] * (S(1) - s.alpha_bar[t - 1]) / (S(1) - s.alpha_bar[t]);
    }
    return s;
}

// Squared-cosine alpha_bar schedule. Compared to the linear-beta schedule it
// keeps the signal-to-noise ratio high through the middle of the chain while
// still reaching alpha_bar[T] ~ 0, which concentrates more timesteps in the
// regime where image content is decided.
template <typename S>
NoiseSchedule<S> make_cosine_schedule(int T, double offset = 0.008) {
    if (T < 1) throw invalid_input("make_cosine_schedule: T must be >= 1");
    if (!(offset > 0.0 && offset < 1.0))
        throw invalid_input("make_cosine_schedule: offset must be in (0, 1)");
    auto f = [&](double u) {
        double x = (u + offset) / (1.0 + offset) * 1.5707963267948966;
        double c = std::cos(x);
        return c * c;
    };
    NoiseSchedule<S> s;
    s.T = T;
    s.beta.assign(T + 1, S(0));
    s.alpha.assign(T + 1, S(0));
    s.alpha_bar.assign(T + 1, S(1));
    s.posterior_variance.assign(T + 1, S(0));
    const double f0 = f(0.0);
    double abar_prev = 1.0;
    for (int t = 1; t <= T; ++t) {
        double abar = f(double(t) / T) / f0;
        double b = std::min(0.999, std::max(1e-8, 1.0 - abar / abar_prev));
        abar = abar_prev * (1.0 - b);
        s.beta[t] = static_cast<S>(b);
        s.alpha[t] = static_cast<S>(1.0 - b);
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
        s.posterior_variance[t] =
            s.beta[t] * (S(1) - s.alpha_bar[t - 1]) / (S(1) - s.alpha_bar[t]);
        abar_prev = abar;
    }
    return s;
}

// y_t = sqrt(abar_t) y_0 + sqrt(1 - abar_t) eps
template <typename S>
Tensor<S> q_sample(const Tensor<S>& y0, int t, const Tensor<S>& eps,
                   const NoiseSchedule<S>& sched) {
    sched.check_t(t);
    if (!y0.same_shape(eps)) throw invalid_input("q_sample: eps shape mismatch");
    S a = std::sqrt(sched.alpha_bar[t]);
    S b = std::sqrt(S(1) - sched.alpha_bar[t]);
    Tensor<S> out = y0;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a * y0[i] + b * eps[i];
    return out;
}

// Posterior mean of y_{t-1} given y_t and the predicted noise.
template <typename S>
Tensor<S> posterior_mean(const Tensor<S>& y_t, int t, const Tensor<S>& eps_hat,
                         const NoiseSchedule<S>& sched) {
    sched.check_t(t);
    if (!y_t.same_shape(eps_hat)) throw invalid_input("posterior_mean: shape mismatch");
    S inv_sqrt_alpha = S(1) / std::sqrt(sched.alpha[t]);
    S coef = sched.beta[t] / std::sqrt(S(1) - sched.alpha_bar[t]);
    Tensor<S> mu = y_t;
    for (std::int64_t i = 0; i < mu.size(); ++i)
        mu[i] = inv_sqrt_alpha * (y_t[i] - coef * eps_hat[i]);
    return mu;
}

// One ancestral reverse step: mu + sqrt(posterior_variance) z for t > 1,
// exactly mu at t = 1.
template <typename S>
Tensor<S> posterior_step(const LatentState<S>& state, const Tensor<S>& eps_hat,
                         const NoiseSchedule<S>& sched, Rng& rng) {
    Tensor<S> mu = posterior_mean(state.y, state.t, eps_hat, sched);
    if (state.t == 1) return mu;
    S std_dev = std::sqrt(sched.posterior_variance[state.t]);
    for (std::int64_t i = 0; i < mu.size(); ++i)
        mu[i] += std_dev * static_cast<S>(rng.normal());
    return mu;
}

// Same ancestral step expressed through the predicted y_0, with the
// prediction clamped to the image range [-1, 1] before the posterior mean is
// formed. Equal to posterior_step whenever the unclamped prediction already
// lies in range; outside it the clamp keeps trajectories on the data
// manifold, which matters when guidance extrapolates the noise estimate.
template <typename S>
Tensor<S> posterior_step_clipped(const LatentState<S>& state, const Tensor<S>& eps_hat,
                                 const NoiseSchedule<S>& sched, Rng& rng) {
    sched.check_t(state.t);
    if (!state.y.same_shape(eps_hat))
        throw invalid_input("posterior_step_clipped: shape mismatch");
    const int t = state.t;
    const S abar = sched.alpha_bar[t];
    const S abar_prev = sched.alpha_bar[t - 1];
    const S inv_sqrt_abar = S(1) / std::sqrt(abar);
    const S sig = std::sqrt(S(1) - abar);
    const S c0 = std::sqrt(abar_prev) * sched.beta[t] / (S(1) - abar);
    const S cy = std::sqrt(sched.alpha[t]) * (S(1) - abar_prev) / (S(1) - abar);
    const S std_dev = t > 1 ? std::sqrt(sched.posterior_variance[t]) : S(0);
    Tensor<S> out = state.y;
    for (std::int64_t i = 0; i < out.size(); ++i) {
        S x0 = inv_sqrt_abar * (state.y[i] - sig * eps_hat[i]);
        x0 = std::clamp(x0, S(-1), S(1));
        out[i] = c0 * x0 + cy * state.y[i];
        if (t > 1) out[i] += std_dev * static_cast<S>(rng.normal());
    }
    return out;
}

}  // namespace drdm

#endif  // DRDM_SCHEDULE_HPP
