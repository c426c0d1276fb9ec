#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "vdsk/rng.hpp"
#include "vdsk/tensor.hpp"

namespace vdsk {

// beta/alpha/alpha_bar tables for t = 1..t_diff; alpha_bar kept in double
struct NoiseSchedule {
    int t_diff = 0;
    std::vector<double> beta;       // [t_diff], index t-1
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // cumulative product

    // alpha_bar at integer level t, with abar(0) = 1
    double abar(int t) const {
        if (t < 0 || t > t_diff) throw std::invalid_argument("timestep out of schedule range");
        return t == 0 ? 1.0 : alpha_bar[static_cast<size_t>(t - 1)];
    }
};

NoiseSchedule make_schedule(int t_diff = 1000, double beta_1 = 1e-4, double beta_t = 0.02);

struct SamplerConfig {
    int steps = 50;
    double guidance = 3.0;   // classifier-free guidance scale
    double eta = 0.0;        // 0 = deterministic
    uint64_t seed = 0;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <class S>
TensorT<S> q_sample(const TensorT<S>& x0, int t, const TensorT<S>& eps,
                    const NoiseSchedule& sched) {
    if (!x0.same_shape(eps)) throw std::invalid_argument("x0 and eps shapes differ");
    if (t < 1 || t > sched.t_diff) throw std::invalid_argument("timestep out of schedule range");
    double ab = sched.abar(t);
    S a = S(std::sqrt(ab));
    S b = S(std::sqrt(1.0 - ab));
    TensorT<S> out(x0.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

template <class S>
TensorT<S> cfg_combine(const TensorT<S>& eps_cond, const TensorT<S>& eps_uncond, double scale) {
    if (!eps_cond.same_shape(eps_uncond)) throw std::invalid_argument("eps shapes differ");
    TensorT<S> out(eps_cond.shape);
    S s = S(scale);
    for (int64_t i = 0; i < out.size(); ++i)
        out[i] = eps_uncond[i] + s * (eps_cond[i] - eps_uncond[i]);
    return out;
}

// Sampling timestep grid: ascending, evenly spaced, rounded down, includes
// t = 1; a single step degenerates to {t_diff} so sampling still starts from
// pure noise.
std::vector<int> ddim_timesteps(int steps, int t_diff);

inline constexpr double kX0Clamp = 3.0;

// One DDIM update from level t to level t_prev (t_prev = 0 lands on the final
// sample). The x0 estimate is clamped to +-kX0Clamp before reprojection.
template <class S>
TensorT<S> ddim_step(const TensorT<S>& x_t, const TensorT<S>& eps_hat, int t, int t_prev,
                     const NoiseSchedule& sched, double eta = 0.0, const TensorT<S>* z = nullptr) {
    if (!x_t.same_shape(eps_hat)) throw std::invalid_argument("x_t and eps shapes differ");
    double ab_t = sched.abar(t);
    double ab_p = sched.abar(t_prev);
    double sqrt_ab_t = std::sqrt(ab_t);
    double sqrt_one_minus = std::sqrt(1.0 - ab_t);
    double sigma = 0.0;
    if (eta > 0.0 && t_prev > 0)
        sigma = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
    double dir_coef = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));
    double sqrt_ab_p = std::sqrt(ab_p);

    TensorT<S> out(x_t.shape);
    for (int64_t i = 0; i < out.size(); ++i) {
        double x0 = (static_cast<double>(x_t[i]) -
                     sqrt_one_minus * static_cast<double>(eps_hat[i])) / sqrt_ab_t;
        x0 = std::clamp(x0, -kX0Clamp, kX0Clamp);
        double v = sqrt_ab_p * x0 + dir_coef * static_cast<double>(eps_hat[i]);
        if (sigma > 0.0 && z) v += sigma * static_cast<double>((*z)[i]);
        out[i] = S(v);
    }
    return out;
}

using EpsFn = std::function<Tensor(const Tensor& x_t, int t)>;

// Deterministic (eta = 0) DDIM recursion from seeded unit-normal noise down
// to the x0 estimate. eps_fn is expected to already fold in any guidance.
Tensor ddim_sample(const EpsFn& eps_fn, const NoiseSchedule& sched,
                   const std::vector<int64_t>& latent_shape, const SamplerConfig& cfg);

// Draws (t, eps) per item and corrupts x0 -> x_t; used by every training stage.
template <class S>
struct CorruptedBatch {
    TensorT<S> x_t;             // [B, tl, c, h, w]
    TensorT<S> eps;             // same shape
    std::vector<int> ts;
};

template <class S>
CorruptedBatch<S> corrupt_batch(const TensorT<S>& x0, const NoiseSchedule& sched, Rng& rng) {
    CorruptedBatch<S> out;
    out.x_t = TensorT<S>(x0.shape);
    out.eps = TensorT<S>(x0.shape);
    int64_t b_count = x0.shape[0];
    int64_t item = x0.size() / b_count;
    out.ts.resize(static_cast<size_t>(b_count));
    for (int64_t b = 0; b < b_count; ++b) {
        int t = static_cast<int>(rng.uniform_int(1, sched.t_diff));
        out.ts[static_cast<size_t>(b)] = t;
        double ab = sched.abar(t);
        S a = S(std::sqrt(ab));
        S s = S(std::sqrt(1.0 - ab));
        for (int64_t i = b * item; i < (b + 1) * item; ++i) {
            S e = S(rng.normal());
            out.eps[i] = e;
            out.x_t[i] = a * x0[i] + s * e;
        }
    }
    return out;
}

// Mean over the batch of per-element squared epsilon error. The denoiser is
// any callable (x_t item, t) -> eps_hat item, so tests can probe the
// objective with stubs; the trained path shares corrupt_batch with this.
template <class S, class Fn>
double diffusion_loss_value(Fn&& denoiser, const TensorT<S>& x0_batch,
                            const NoiseSchedule& sched, Rng& rng) {
    if (x0_batch.size() == 0) throw std::invalid_argument("empty batch");
    CorruptedBatch<S> cb = corrupt_batch(x0_batch, sched, rng);
    int64_t b_count = x0_batch.shape[0];
    int64_t item = x0_batch.size() / b_count;
    std::vector<int64_t> item_shape(x0_batch.shape.begin() + 1, x0_batch.shape.end());
    double loss = 0.0;
    for (int64_t b = 0; b < b_count; ++b) {
        TensorT<S> x_t(item_shape);
        std::copy(cb.x_t.data() + b * item, cb.x_t.data() + (b + 1) * item, x_t.data());
        TensorT<S> eps_hat = denoiser(x_t, cb.ts[static_cast<size_t>(b)]);
        double acc = 0.0;
        for (int64_t i = 0; i < item; ++i) {
            double dlt = static_cast<double>(cb.eps[b * item + i]) -
                         static_cast<double>(eps_hat[i]);
            acc += dlt * dlt;
        }
        loss += acc / static_cast<double>(item);
    }
    return loss / static_cast<double>(b_count);
}

}  // namespace vdsk
