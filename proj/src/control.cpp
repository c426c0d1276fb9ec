#include "vdsk/control.hpp"

#include <algorithm>
#include <stdexcept>

#include "vdsk/autoencoder.hpp"

namespace vdsk {

Adapter init_adapter(const UViT& base, Rng& rng) {
    Adapter a;
    a.init_from(base, rng);
    return a;
}

Tensor pool_control_grid(const ControlSignal& ctrl, int64_t latent_h, int64_t latent_w) {
    int64_t t = ctrl.data.shape[0];
    int64_t h = ctrl.data.shape[2];
    int64_t w = ctrl.data.shape[3];
    if (h % latent_h != 0 || w % latent_w != 0)
        throw std::invalid_argument("control frame size must be a multiple of the latent grid");
    int64_t fy = h / latent_h, fx = w / latent_w;
    int64_t tl = latent_frames_for(t);
    Tensor out = Tensor::zeros({tl, 1, latent_h, latent_w});
    Tensor frame_max({h, w});
    for (int64_t g = 0; g < tl; ++g) {
        frame_max.fill(0.0f);
        for (int64_t i = 0; i < kTemporalFactor; ++i) {
            int64_t src_t = g * kTemporalFactor + i;
            if (src_t >= t) break;
            const float* src = ctrl.data.data() + src_t * h * w;
            for (int64_t j = 0; j < h * w; ++j)
                frame_max[j] = std::max(frame_max[j], src[j]);
        }
        for (int64_t ly = 0; ly < latent_h; ++ly)
            for (int64_t lx = 0; lx < latent_w; ++lx) {
                double acc = 0.0;
                for (int64_t dy = 0; dy < fy; ++dy)
                    for (int64_t dx = 0; dx < fx; ++dx)
                        acc += frame_max[(ly * fy + dy) * w + lx * fx + dx];
                out.at4(g, 0, ly, lx) = static_cast<float>(acc / static_cast<double>(fy * fx));
            }
    }
    return out;
}

Tensor predict_frames(const EpsFn& eps_fn, const NoiseSchedule& sched, const Tensor& known,
                      const FrameMask& mask, const SamplerConfig& cfg,
                      const PredictObserver& observer) {
    int64_t tl = known.shape[0];
    if (static_cast<int64_t>(mask.given.size()) != tl)
        throw std::invalid_argument("mask length does not match the latent frame count");
    int64_t n_given = mask.count_given();
    if (n_given == 0)
        throw std::invalid_argument("prediction requires at least one given frame");
    if (n_given == tl)
        throw std::invalid_argument("prediction requires at least one free frame");

    int64_t frame = known.size() / tl;
    Rng rng(mix_seed(cfg.seed, 0xf4a3e));
    std::vector<int> ts = ddim_timesteps(cfg.steps, sched.t_diff);

    Tensor x(known.shape);
    for (int64_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.normal());

    Tensor overwrite_eps(known.shape);
    auto overwrite_given = [&](int level) {
        double ab = level == 0 ? 1.0 : sched.abar(level);
        float a = static_cast<float>(std::sqrt(ab));
        float s = static_cast<float>(std::sqrt(1.0 - ab));
        for (int64_t f = 0; f < tl; ++f) {
            if (!mask.given[static_cast<size_t>(f)]) continue;
            for (int64_t i = f * frame; i < (f + 1) * frame; ++i) {
                float e = static_cast<float>(rng.normal());
                overwrite_eps[i] = e;
                x[i] = a * known[i] + s * e;
            }
        }
    };

    // start from the corrupted known frames at the top level
    overwrite_given(ts.back());
    for (int i = static_cast<int>(ts.size()) - 1; i >= 0; --i) {
        int t = ts[static_cast<size_t>(i)];
        int t_prev = i > 0 ? ts[static_cast<size_t>(i - 1)] : 0;
        Tensor eps_hat = eps_fn(x, t);
        if (cfg.eta > 0.0 && t_prev > 0) {
            Tensor z(known.shape);
            for (int64_t j = 0; j < z.size(); ++j) z[j] = static_cast<float>(rng.normal());
            x = ddim_step(x, eps_hat, t, t_prev, sched, cfg.eta, &z);
        } else {
            x = ddim_step<float>(x, eps_hat, t, t_prev, sched);
        }
        overwrite_given(t_prev);
        if (observer) observer(x, t_prev, overwrite_eps);
    }
    return x;
}

VideoClip render_subject_image(int start_x, int start_y) {
    if (start_x < 0 || start_y < 0 || start_x + kSpriteBox > kFrameW ||
        start_y + kSpriteBox > kFrameH)
        throw std::invalid_argument("subject sprite must fit inside the frame");
    VideoClip clip{Tensor::full({1, 3, kFrameH, kFrameW}, -1.0f)};
    // disc of radius 5; red upper half, blue lower half
    for (int py = 0; py < kSpriteBox; ++py)
        for (int px = 0; px < kSpriteBox; ++px) {
            double dx = px - 4.5, dy = py - 4.5;
            if (dx * dx + dy * dy > 25.0) continue;
            int x = start_x + px, y = start_y + py;
            if (py < kSpriteBox / 2)
                clip.data.at4(0, 0, y, x) = 1.0f;
            else
                clip.data.at4(0, 2, y, x) = 1.0f;
        }
    return clip;
}

}  // namespace vdsk
