#ifndef DRDM_GUIDANCE_HPP
#define DRDM_GUIDANCE_HPP

#include <functional>
#include <optional>
#include <utility>

#include "drdm/data.hpp"
#include "drdm/network.hpp"
#include "drdm/schedule.hpp"

namespace drdm {

struct GuidanceWeights {
    double w_s = 3.0;  // style guidance scale
    double w_p = 2.5;  // pose guidance scale
};

// Raw conditions; an empty optional is the null condition and is realized as
// zero tensors at the network boundary.
template <typename S>
struct StyleCondition {
    Tensor<S> source_image;  // [3,H,W]
    PartMaskSet<S> masks;
};

template <typename S>
struct ConditionSet {
    std::optional<StyleCondition<S>> style;
    std::optional<PoseMap<S>> pose;
};

// Zero tensors for (I_s, M_s-derived masks, P_t) of the requested extent.
template <typename S>
ConditionSet<S> null_condition(int height, int width) {
    if (height <= 0 || width <= 0) throw invalid_input("null_condition: bad shape");
    ConditionSet<S> c;
    StyleCondition<S> st;
    st.source_image = Tensor<S>::zeros({3, height, width});
    for (int k = 0; k < kNumParts; ++k) st.masks.masks[k] = Tensor<S>::zeros({height, width});
    PoseMap<S> pm;
    pm.data = Tensor<S>::zeros({kNumKeypoints, height, width});
    c.style = std::move(st);
    c.pose = std::move(pm);
    return c;
}

// eps_cond = eps_uncond + w_s (eps_full - eps_pose_only) + w_p (eps_pose_only - eps_uncond)
template <typename S>
Tensor<S> compose_guidance(const Tensor<S>& eps_full, const Tensor<S>& eps_pose_only,
                           const Tensor<S>& eps_uncond, const GuidanceWeights& w) {
    if (!eps_full.same_shape(eps_pose_only) || !eps_full.same_shape(eps_uncond))
        throw invalid_input("compose_guidance: shape mismatch");
    // Eq. 2 telescopes exactly at the degenerate weights; keep those paths
    // bit-exact rather than relying on float cancellation.
    if (w.w_s == 1.0 && w.w_p == 1.0) return eps_full;
    if (w.w_s == 0.0 && w.w_p == 0.0) return eps_uncond;
    Tensor<S> out = eps_uncond;
    const S ws = static_cast<S>(w.w_s), wp = static_cast<S>(w.w_p);
    for (std::int64_t i = 0; i < out.size(); ++i)
        out[i] = eps_uncond[i] + ws * (eps_full[i] - eps_pose_only[i]) +
                 wp * (eps_pose_only[i] - eps_uncond[i]);
    return out;
}

// Texture and pose features for the three Eq.-2 branches, encoded once per
// sampling run (they do not depend on the timestep).
template <typename S>
struct EncodedConditions {
    TextureFeatures<S> tex_full;
    TextureFeatures<S> tex_null;  // encoders applied to zeroed style inputs
    PoseFeatures<S> pose_full;
    PoseFeatures<S> pose_null;  // pose encoder applied to the zero pose map
};

template <typename S>
EncodedConditions<S> encode_conditions(const ConditionSet<S>& cond, const ModelParams<S>& params,
                                       const NetworkConfig& cfg) {
    if (!cond.style || !cond.pose)
        throw invalid_input("encode_conditions: guided sampling needs style and pose");
    auto nulls = null_condition<S>(cfg.image_size, cfg.image_size);
    EncodedConditions<S> e;
    e.tex_full = encode_textures(cond.style->source_image, cond.style->masks, params, cfg);
    e.tex_null = encode_textures(nulls.style->source_image, nulls.style->masks, params, cfg);
    e.pose_full = encode_pose(*cond.pose, params, cfg);
    e.pose_null = encode_pose(*nulls.pose, params, cfg);
    return e;
}

template <typename S>
struct SampleResult {
    Tensor<S> y0;                  // final latent, in model units
    Tensor<std::uint8_t> image;    // denormalized 8-bit RGB
    int denoiser_evaluations = 0;  // condition-evaluations issued (3T when guided)
};

// Optional per-step observer for trajectory-level tests: (t, y_{t-1}).
template <typename S>
using StepObserver = std::function<void(int, const Tensor<S>&)>;

// Full PMDCF-guided ancestral loop over pre-encoded conditions.
template <typename S>
SampleResult<S> sample_encoded(const EncodedConditions<S>& enc, const GuidanceWeights& w,
                               const NoiseSchedule<S>& sched, const ModelParams<S>& params,
                               const NetworkConfig& cfg, Rng& rng,
                               const StepObserver<S>& observer = nullptr) {
    SampleResult<S> out;
    Tensor<S> y = rng.normal_tensor<S>({3, cfg.image_size, cfg.image_size});
    for (int t = sched.T; t >= 1; --t) {
        LatentState<S> state{y, t};
        // three branch predictions; guidance composition consumes no rng
        Tensor<S> eps_full = predict_noise<S>(state, enc.tex_full, enc.pose_full, params, cfg);
        Tensor<S> eps_pose = predict_noise<S>(state, enc.tex_null, enc.pose_full, params, cfg);
        Tensor<S> eps_unc = predict_noise<S>(state, enc.tex_null, enc.pose_null, params, cfg);
        out.denoiser_evaluations += 3;
        Tensor<S> eps = compose_guidance(eps_full, eps_pose, eps_unc, w);
        if (!eps.all_finite())
            throw numeric_failure("sample: non-finite prediction at step " + std::to_string(t));
        y = posterior_step_clipped(state, eps, sched, rng);
        if (observer) observer(t, y);
    }
    out.image = denormalize_image(y);
    out.y0 = std::move(y);
    return out;
}

template <typename S>
SampleResult<S> sample(const ConditionSet<S>& conditions, const GuidanceWeights& w,
                       const NoiseSchedule<S>& sched, const ModelParams<S>& params,
                       const NetworkConfig& cfg, Rng& rng,
                       const StepObserver<S>& observer = nullptr) {
    auto enc = encode_conditions(conditions, params, cfg);
    return sample_encoded(enc, w, sched, params, cfg, rng, observer);
}

// Plain conditional-only ancestral sampler; reference for the w=(1,1)
// telescoping identity.
template <typename S>
SampleResult<S> sample_conditional_only(const ConditionSet<S>& conditions,
                                        const NoiseSchedule<S>& sched,
                                        const ModelParams<S>& params, const NetworkConfig& cfg,
                                        Rng& rng, const StepObserver<S>& observer = nullptr) {
    auto enc = encode_conditions(conditions, params, cfg);
    SampleResult<S> out;
    Tensor<S> y = rng.normal_tensor<S>({3, cfg.image_size, cfg.image_size});
    for (int t = sched.T; t >= 1; --t) {
        LatentState<S> state{y, t};
        Tensor<S> eps = predict_noise<S>(state, enc.tex_full, enc.pose_full, params, cfg);
        out.denoiser_evaluations += 1;
        y = posterior_step_clipped(state, eps, sched, rng);
        if (observer) observer(t, y);
    }
    out.image = denormalize_image(y);
    out.y0 = std::move(y);
    return out;
}

}  // namespace drdm

#endif  // DRDM_GUIDANCE_HPP
