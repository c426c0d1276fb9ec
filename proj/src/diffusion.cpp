#include "vdsk/diffusion.hpp"

namespace vdsk {

NoiseSchedule make_schedule(int t_diff, double beta_1, double beta_t) {
    if (t_diff < 1) throw std::invalid_argument("t_diff must be >= 1");
    if (!(beta_1 > 0.0) || !(beta_1 < beta_t) || !(beta_t < 1.0))
        throw std::invalid_argument("schedule requires 0 < beta_1 < beta_T < 1");
    NoiseSchedule s;
    s.t_diff = t_diff;
    s.beta.resize(static_cast<size_t>(t_diff));
    s.alpha.resize(static_cast<size_t>(t_diff));
    s.alpha_bar.resize(static_cast<size_t>(t_diff));
    double prod = 1.0;
    for (int t = 1; t <= t_diff; ++t) {
        double frac = t_diff == 1 ? 0.0
                                  : static_cast<double>(t - 1) / static_cast<double>(t_diff - 1);
        double b = beta_1 + frac * (beta_t - beta_1);
        double a = 1.0 - b;
        prod *= a;
        s.beta[static_cast<size_t>(t - 1)] = b;
        s.alpha[static_cast<size_t>(t - 1)] = a;
        s.alpha_bar[static_cast<size_t>(t - 1)] = prod;
    }
    return s;
}

std::vector<int> ddim_timesteps(int steps, int t_diff) {
    if (steps < 1 || steps > t_diff)
        throw std::invalid_argument("step count must satisfy 1 <= S <= t_diff");
    if (steps == 1) return {t_diff};
    std::vector<int> ts(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i)
        ts[static_cast<size_t>(i)] =
            1 + static_cast<int>((static_cast<int64_t>(t_diff - 1) * i) / (steps - 1));
    return ts;
}

Tensor ddim_sample(const EpsFn& eps_fn, const NoiseSchedule& sched,
                   const std::vector<int64_t>& latent_shape, const SamplerConfig& cfg) {
    std::vector<int> ts = ddim_timesteps(cfg.steps, sched.t_diff);
    Rng rng(mix_seed(cfg.seed, 0xdd1f));
    Tensor x(latent_shape);
    for (int64_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.normal());

    for (int i = static_cast<int>(ts.size()) - 1; i >= 0; --i) {
        int t = ts[static_cast<size_t>(i)];
        int t_prev = i > 0 ? ts[static_cast<size_t>(i - 1)] : 0;
        Tensor eps_hat = eps_fn(x, t);
        if (cfg.eta > 0.0 && t_prev > 0) {
            Tensor z(latent_shape);
            for (int64_t j = 0; j < z.size(); ++j) z[j] = static_cast<float>(rng.normal());
            x = ddim_step(x, eps_hat, t, t_prev, sched, cfg.eta, &z);
        } else {
            x = ddim_step<float>(x, eps_hat, t, t_prev, sched);
        }
    }
    return x;
}

}  // namespace vdsk
