#include "vdsk/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <map>

#include "vdsk/autoencoder.hpp"
#include "vdsk/common.hpp"
#include "vdsk/gradcheck.hpp"
#include "vdsk/uvit.hpp"

namespace vdsk {

namespace {

struct Blob {
    int64_t count = 0;
    int64_t min_x = 0, max_x = 0, min_y = 0, max_y = 0;
    double cx = 0.0, cy = 0.0;

    double fill_ratio() const {
        int64_t area = (max_x - min_x + 1) * (max_y - min_y + 1);
        return static_cast<double>(count) / static_cast<double>(area);
    }
};

bool foreground(const VideoClip& clip, int64_t t, int64_t y, int64_t x) {
    return clip.data.at4(t, 0, y, x) > kForegroundThreshold ||
           clip.data.at4(t, 1, y, x) > kForegroundThreshold ||
           clip.data.at4(t, 2, y, x) > kForegroundThreshold;
}

// largest 4-connected foreground component of one frame
std::optional<Blob> dominant_blob(const VideoClip& clip, int64_t t) {
    int64_t h = clip.height(), w = clip.width();
    std::vector<uint8_t> seen(static_cast<size_t>(h * w), 0);
    std::optional<Blob> best;
    for (int64_t sy = 0; sy < h; ++sy) {
        for (int64_t sx = 0; sx < w; ++sx) {
            if (seen[static_cast<size_t>(sy * w + sx)] || !foreground(clip, t, sy, sx)) continue;
            Blob blob;
            blob.min_x = blob.max_x = sx;
            blob.min_y = blob.max_y = sy;
            std::deque<std::pair<int64_t, int64_t>> queue{{sy, sx}};
            seen[static_cast<size_t>(sy * w + sx)] = 1;
            double sum_x = 0.0, sum_y = 0.0;
            while (!queue.empty()) {
                auto [y, x] = queue.front();
                queue.pop_front();
                ++blob.count;
                sum_x += static_cast<double>(x);
                sum_y += static_cast<double>(y);
                blob.min_x = std::min(blob.min_x, x);
                blob.max_x = std::max(blob.max_x, x);
                blob.min_y = std::min(blob.min_y, y);
                blob.max_y = std::max(blob.max_y, y);
                const int64_t dy[4] = {-1, 1, 0, 0};
                const int64_t dx[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    int64_t ny = y + dy[k], nx = x + dx[k];
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    if (seen[static_cast<size_t>(ny * w + nx)]) continue;
                    if (!foreground(clip, t, ny, nx)) continue;
                    seen[static_cast<size_t>(ny * w + nx)] = 1;
                    queue.emplace_back(ny, nx);
                }
            }
            blob.cx = sum_x / static_cast<double>(blob.count);
            blob.cy = sum_y / static_cast<double>(blob.count);
            if (!best || blob.count > best->count) best = blob;
        }
    }
    return best;
}

constexpr double kFillSquare = 1.0;
constexpr double kFillCircle = 0.7853981633974483;  // pi/4
constexpr double kFillTriangle = 0.55;
constexpr double kSquareCircleBoundary = (kFillSquare + kFillCircle) / 2.0;
constexpr double kCircleTriangleBoundary = (kFillCircle + 0.5) / 2.0;

SpriteShape classify_fill(double fill) {
    if (fill >= kSquareCircleBoundary) return SpriteShape::square;
    if (fill >= kCircleTriangleBoundary) return SpriteShape::circle;
    return SpriteShape::triangle;
}

double shape_fill_target(SpriteShape s) {
    switch (s) {
        case SpriteShape::square: return kFillSquare;
        case SpriteShape::circle: return kFillCircle;
        case SpriteShape::triangle: return kFillTriangle;
    }
    return 0.0;
}

}  // namespace

AttributeReport analyze_clip(const VideoClip& clip) {
    int64_t t_frames = clip.frames();
    int64_t h = clip.height(), w = clip.width();

    // color from the mean of all foreground pixels
    double sum[3] = {0.0, 0.0, 0.0};
    int64_t fg_count = 0;
    for (int64_t t = 0; t < t_frames; ++t)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                if (foreground(clip, t, y, x)) {
                    ++fg_count;
                    for (int c = 0; c < 3; ++c)
                        sum[c] += static_cast<double>(clip.data.at4(t, c, y, x));
                }
    if (fg_count == 0) throw EmptyClipError("clip has no foreground pixels");

    const std::array<std::array<double, 3>, 4> pure = {{
        {1.0, -1.0, -1.0},   // red
        {-1.0, 1.0, -1.0},   // green
        {-1.0, -1.0, 1.0},   // blue
        {1.0, 1.0, -1.0},    // yellow
    }};
    double mean[3];
    for (int c = 0; c < 3; ++c) mean[c] = sum[c] / static_cast<double>(fg_count);
    double best_d = 1e30, second_d = 1e30;
    int best_color = 0;
    for (int k = 0; k < 4; ++k) {
        double d = 0.0;
        for (int c = 0; c < 3; ++c) {
            double diff = mean[c] - pure[static_cast<size_t>(k)][static_cast<size_t>(c)];
            d += diff * diff;
        }
        if (d < best_d) {
            second_d = best_d;
            best_d = d;
            best_color = k;
        } else if (d < second_d) {
            second_d = d;
        }
    }

    AttributeReport report;
    report.color = static_cast<SpriteColor>(best_color);
    report.color_confidence =
        second_d > 0.0 ? std::clamp(1.0 - best_d / second_d, 0.0, 1.0) : 0.0;

    // per-frame dominant blobs
    std::vector<std::pair<int64_t, Blob>> blobs;  // (frame, blob)
    for (int64_t t = 0; t < t_frames; ++t) {
        std::optional<Blob> blob = dominant_blob(clip, t);
        if (blob) blobs.emplace_back(t, *blob);
    }
    if (blobs.empty()) throw EmptyClipError("clip has no foreground pixels");

    // shape: per-frame fill-ratio vote
    std::map<SpriteShape, int> votes;
    double conf_sum = 0.0;
    for (const auto& [t, blob] : blobs) {
        double fill = blob.fill_ratio();
        SpriteShape s = classify_fill(fill);
        ++votes[s];
        conf_sum += std::clamp(1.0 - std::abs(fill - shape_fill_target(s)) / 0.25, 0.0, 1.0);
    }
    SpriteShape best_shape = SpriteShape::square;
    int best_votes = -1;
    for (SpriteShape s : {SpriteShape::square, SpriteShape::circle, SpriteShape::triangle}) {
        auto it = votes.find(s);
        int v = it == votes.end() ? 0 : it->second;
        if (v > best_votes) {
            best_votes = v;
            best_shape = s;
        }
    }
    report.shape = best_shape;
    report.shape_confidence = conf_sum / static_cast<double>(blobs.size());

    // direction: dominant axis of the centroid displacement
    if (t_frames > 1 && blobs.size() >= 2) {
        const Blob& first = blobs.front().second;
        const Blob& last = blobs.back().second;
        double dx = last.cx - first.cx;
        double dy = last.cy - first.cy;
        if (dx != 0.0 || dy != 0.0) {
            if (std::abs(dx) >= std::abs(dy))
                report.direction = dx > 0.0 ? MoveDirection::right : MoveDirection::left;
            else
                report.direction = dy > 0.0 ? MoveDirection::down : MoveDirection::up;
            report.direction_confidence =
                std::max(std::abs(dx), std::abs(dy)) / (std::abs(dx) + std::abs(dy));
        }
    }
    return report;
}

double temporal_consistency(const VideoClip& clip) {
    int64_t t_frames = clip.frames();
    if (t_frames <= 1) return 1.0;
    int64_t h = clip.height(), w = clip.width();
    std::vector<double> counts(static_cast<size_t>(t_frames), 0.0);
    for (int64_t t = 0; t < t_frames; ++t) {
        int64_t n = 0;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                if (foreground(clip, t, y, x)) ++n;
        counts[static_cast<size_t>(t)] = static_cast<double>(n);
    }
    double mean = 0.0;
    for (double c : counts) mean += c;
    mean /= static_cast<double>(t_frames);
    if (mean == 0.0) return 0.0;
    double var = 0.0;
    for (double c : counts) var += (c - mean) * (c - mean);
    var /= static_cast<double>(t_frames);
    return std::clamp(1.0 - var / (mean * mean), 0.0, 1.0);
}

double edge_agreement(const VideoClip& clip, const ControlSignal& ctrl, float threshold) {
    if (ctrl.data.shape[0] != clip.frames() || ctrl.data.shape[2] != clip.height() ||
        ctrl.data.shape[3] != clip.width())
        throw std::invalid_argument("control signal shape does not match the clip");
    ControlSignal own = edge_map(clip, threshold);
    int64_t t_frames = clip.frames();
    int64_t hw = clip.height() * clip.width();
    double f1_sum = 0.0;
    for (int64_t t = 0; t < t_frames; ++t) {
        const float* a = own.data.data() + t * hw;
        const float* b = ctrl.data.data() + t * hw;
        int64_t tp = 0, fp = 0, fn = 0;
        for (int64_t i = 0; i < hw; ++i) {
            bool pa = a[i] > 0.5f, pb = b[i] > 0.5f;
            tp += pa && pb;
            fp += pa && !pb;
            fn += !pa && pb;
        }
        double f1;
        if (tp + fp + fn == 0)
            f1 = 1.0;  // both empty
        else if (tp == 0 && (fp == 0 || fn == 0))
            f1 = 0.0;  // one side empty
        else
            f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
        f1_sum += f1;
    }
    return f1_sum / static_cast<double>(t_frames);
}

MetricBundle conditional_accuracy(const SamplerFn& sampler,
                                  const std::vector<PromptCase>& prompts, int n_per_prompt) {
    if (n_per_prompt < 1) throw std::invalid_argument("n_per_prompt must be >= 1");
    MetricBundle m;
    int64_t total = 0, color_hits = 0, shape_hits = 0;
    int64_t dir_total = 0, dir_hits = 0;
    double tc_sum = 0.0;
    for (const PromptCase& prompt : prompts) {
        for (int i = 0; i < n_per_prompt; ++i) {
            VideoClip clip = sampler(prompt, i);
            ++total;
            if (prompt.direction) ++dir_total;
            try {
                AttributeReport rep = analyze_clip(clip);
                color_hits += rep.color == prompt.color;
                shape_hits += rep.shape == prompt.shape;
                if (prompt.direction && rep.direction && *rep.direction == *prompt.direction)
                    ++dir_hits;
                tc_sum += temporal_consistency(clip);
            } catch (const EmptyClipError&) {
                ++m.empty_clips;
            }
        }
    }
    if (total > 0) {
        m.color_acc = static_cast<double>(color_hits) / static_cast<double>(total);
        m.shape_acc = static_cast<double>(shape_hits) / static_cast<double>(total);
        m.temporal_consistency = tc_sum / static_cast<double>(total);
    }
    m.direction_acc =
        dir_total > 0 ? static_cast<double>(dir_hits) / static_cast<double>(dir_total) : 0.0;
    m.edge_agreement = 1.0;  // no control constraint in play
    return m;
}

std::vector<PromptCase> build_prompt_grid(int count, const std::vector<int>& lengths) {
    std::vector<int> moving;
    bool has_single = false;
    for (int l : lengths) {
        if (l == 1)
            has_single = true;
        else
            moving.push_back(l);
    }
    std::vector<PromptCase> grid;
    int n_single = has_single ? count / 4 : 0;
    int n_moving = count - n_single;
    for (int i = 0; i < n_moving; ++i) {
        PromptCase pc;
        pc.color = static_cast<SpriteColor>(i % 4);
        pc.direction = static_cast<MoveDirection>((i / 4) % 4);
        pc.shape = static_cast<SpriteShape>((i / 16) % 3);
        pc.length_frames = moving[static_cast<size_t>(i) % moving.size()];
        ClipSpec spec;
        spec.color = pc.color;
        spec.shape = pc.shape;
        spec.direction = pc.direction;
        spec.length_frames = pc.length_frames;
        pc.caption = caption_of(spec);
        grid.push_back(pc);
    }
    for (int i = 0; i < n_single; ++i) {
        PromptCase pc;
        pc.color = static_cast<SpriteColor>(i % 4);
        pc.shape = static_cast<SpriteShape>((i / 4) % 3);
        pc.length_frames = 1;
        ClipSpec spec;
        spec.color = pc.color;
        spec.shape = pc.shape;
        spec.length_frames = 1;
        pc.caption = caption_of(spec);
        grid.push_back(pc);
    }
    return grid;
}

std::vector<std::pair<std::string, double>> metric_report_rows(const MetricBundle& m) {
    return {{"color_acc", m.color_acc},
            {"shape_acc", m.shape_acc},
            {"direction_acc", m.direction_acc},
            {"temporal_consistency", m.temporal_consistency},
            {"edge_agreement", m.edge_agreement}};
}

// ------------------------------------------------------------ gradcheck -----

namespace {

// mean squared error against a fixed target plus its gradient
template <class S>
double mse_value(const TensorT<S>& y, const TensorT<S>& target) {
    double acc = 0.0;
    for (int64_t i = 0; i < y.size(); ++i) {
        double d = static_cast<double>(y[i]) - static_cast<double>(target[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(y.size());
}

template <class S>
TensorT<S> mse_grad(const TensorT<S>& y, const TensorT<S>& target) {
    TensorT<S> g(y.shape);
    S scale = S(2.0 / static_cast<double>(y.size()));
    for (int64_t i = 0; i < y.size(); ++i) g[i] = scale * (y[i] - target[i]);
    return g;
}

template <class S>
FdResult check_linear_family(uint64_t seed, const FdOptions& opt, int64_t in_dim,
                             int64_t out_dim) {
    Rng rng(seed);
    LinearT<S> lin;
    lin.init(rng, in_dim, out_dim, S(0.3));
    for (int64_t i = 0; i < lin.b.size(); ++i) lin.b[i] = S(rng.normal() * 0.1);
    int64_t rows = 5;
    TensorT<S> x = TensorT<S>::randn(rng, {rows, in_dim});
    TensorT<S> target = TensorT<S>::randn(rng, {rows, out_dim});
    TensorT<S> y({rows, out_dim});
    ParamSet<S> params = lin.params();

    auto loss_fn = [&]() {
        lin.forward(x.data(), y.data(), rows);
        return mse_value(y, target);
    };
    auto grad_fn = [&]() {
        zero_grads(params);
        lin.forward(x.data(), y.data(), rows);
        TensorT<S> g = mse_grad(y, target);
        lin.backward(x.data(), g.data(), nullptr, rows);
    };
    return fd_check_params<S>(params, loss_fn, grad_fn, opt);
}

template <class S>
FdResult check_attention_family(uint64_t seed, const FdOptions& opt) {
    Rng rng(seed);
    AttentionT<S> attn;
    attn.init(rng, 16, 2, S(0.3));
    int64_t b_count = 2, n = 5;
    TensorT<S> x = TensorT<S>::randn(rng, {b_count * n, 16});
    TensorT<S> target = TensorT<S>::randn(rng, {b_count * n, 16});
    std::vector<uint8_t> mask(static_cast<size_t>(b_count * n), 0);
    mask[2] = 1;  // exercise the masked-key path
    TensorT<S> y({b_count * n, 16});
    ParamSet<S> params = attn.params();

    auto loss_fn = [&]() {
        attn.forward(x.data(), y.data(), b_count, n, mask, nullptr);
        return mse_value(y, target);
    };
    auto grad_fn = [&]() {
        zero_grads(params);
        AttentionCtx<S> ctx;
        attn.forward(x.data(), y.data(), b_count, n, mask, &ctx);
        TensorT<S> g = mse_grad(y, target);
        TensorT<S> gx(x.shape);
        attn.backward(x.data(), ctx, g.data(), gx.data(), b_count, n);
    };
    return fd_check_params<S>(params, loss_fn, grad_fn, opt);
}

template <class S>
FdResult check_mlp_family(uint64_t seed, const FdOptions& opt) {
    Rng rng(seed);
    MlpT<S> mlp;
    mlp.init(rng, 16, 32, S(0.3));
    int64_t rows = 6;
    TensorT<S> x = TensorT<S>::randn(rng, {rows, 16});
    TensorT<S> target = TensorT<S>::randn(rng, {rows, 16});
    TensorT<S> y({rows, 16});
    ParamSet<S> params = mlp.params();

    auto loss_fn = [&]() {
        mlp.forward(x.data(), y.data(), rows, nullptr);
        return mse_value(y, target);
    };
    auto grad_fn = [&]() {
        zero_grads(params);
        MlpCtx<S> ctx;
        mlp.forward(x.data(), y.data(), rows, &ctx);
        TensorT<S> g = mse_grad(y, target);
        TensorT<S> gx(x.shape);
        mlp.backward(x.data(), ctx, g.data(), gx.data(), rows);
    };
    return fd_check_params<S>(params, loss_fn, grad_fn, opt);
}

template <class S>
FdResult check_norm_family(uint64_t seed, const FdOptions& opt) {
    Rng rng(seed);
    LayerNormT<S> ln;
    ln.init(16);
    for (int64_t i = 0; i < 16; ++i) {
        ln.gamma[i] = S(1.0 + 0.3 * rng.normal());
        ln.beta[i] = S(0.2 * rng.normal());
    }
    int64_t rows = 6;
    TensorT<S> x = TensorT<S>::randn(rng, {rows, 16});
    TensorT<S> target = TensorT<S>::randn(rng, {rows, 16});
    TensorT<S> y({rows, 16});
    ParamSet<S> params = ln.params();

    auto loss_fn = [&]() {
        ln.forward(x.data(), y.data(), rows, nullptr);
        return mse_value(y, target);
    };
    auto grad_fn = [&]() {
        zero_grads(params);
        LayerNormCtx<S> ctx;
        ln.forward(x.data(), y.data(), rows, &ctx);
        TensorT<S> g = mse_grad(y, target);
        TensorT<S> gx(x.shape);
        ln.backward(ctx, g.data(), gx.data(), rows);
    };
    return fd_check_params<S>(params, loss_fn, grad_fn, opt);
}

UViTConfig micro_uvit_config() {
    UViTConfig cfg;
    cfg.d_model = 16;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.latent_c = 2;
    cfg.latent_h = 4;
    cfg.latent_w = 4;
    cfg.max_tl = 2;
    return cfg;
}

template <class S>
FdResult check_uvit_family(uint64_t seed, const FdOptions& opt) {
    Rng rng(seed);
    UViTT<S> model;
    model.init(rng, micro_uvit_config());
    EmbeddingT<S> emb;
    emb.init(rng, 17, 16, S(0.3));

    TensorT<S> x_t = TensorT<S>::randn(rng, {1, 2, 2, 4, 4});
    TensorT<S> eps = TensorT<S>::randn(rng, {1, 2, 2, 4, 4});
    std::vector<int> ts = {7};
    PromptTokens prompt;
    prompt.ids = {2, 3, 7, 11, 13, 0, 0, 0};
    prompt.true_len = 5;
    std::vector<PromptTokens> prompts = {prompt};

    ParamSet<S> params = model.params();
    params.push_back({"emb", &emb.table, &emb.grad});

    auto loss_fn = [&]() {
        TensorT<S> eps_hat = uvit_forward(model, emb, x_t, ts, prompts, nullptr, nullptr);
        return mse_value(eps_hat, eps);
    };
    auto grad_fn = [&]() {
        zero_grads(params);
        UViTCtx<S> ctx;
        TensorT<S> eps_hat = uvit_forward(model, emb, x_t, ts, prompts, &ctx, nullptr);
        TensorT<S> g = mse_grad(eps_hat, eps);
        uvit_backward(model, emb, ctx, g, nullptr);
    };
    FdOptions o = opt;
    o.max_coords = 24;
    return fd_check_params<S>(params, loss_fn, grad_fn, o);
}

template <class S>
FdResult check_ae_family(uint64_t seed, const FdOptions& opt) {
    Rng rng(seed);
    ConvAET<S> ae;
    ae.init(rng, {4, 6, 2}, S(0.2));
    std::vector<TensorT<S>> clips;
    clips.push_back(TensorT<S>::randn(rng, {4, 3, 8, 8}));
    clips.push_back(TensorT<S>::randn(rng, {1, 3, 8, 8}));
    ParamSet<S> params = ae.params();

    auto loss_fn = [&]() {
        double acc = 0.0;
        for (const auto& clip : clips) {
            TensorT<S> z = ae.encode_raw(clip, nullptr);
            TensorT<S> recon = ae.decode_raw(z, clip.shape[0], nullptr);
            acc += mse_value(recon, clip);
        }
        return acc / static_cast<double>(clips.size());
    };
    auto grad_fn = [&]() {
        zero_grads(params);
        for (const auto& clip : clips) {
            AECtx<S> ctx;
            ae.encode_raw(clip, &ctx);
            TensorT<S> recon = ae.decode_raw(ctx.z, clip.shape[0], &ctx);
            TensorT<S> g = mse_grad(recon, clip);
            S scale = S(1.0 / static_cast<double>(clips.size()));
            for (int64_t i = 0; i < g.size(); ++i) g[i] *= scale;
            ae.backward(ctx, g);
        }
    };
    FdOptions o = opt;
    o.max_coords = 32;
    return fd_check_params<S>(params, loss_fn, grad_fn, o);
}

template <class S>
void run_family_checks(std::vector<GradCheckFamily>& out, double tol, bool single) {
    FdOptions opt = fd_options_for(single);
    const char* suffix = single ? " (f32)" : " (f64)";
    auto add = [&](const std::string& name, FdResult r) {
        out.push_back({name + suffix, r.max_rel, r.max_abs});
        if (r.max_rel > tol)
            throw CheckFailure("gradient check failed for family " + name + suffix +
                                   ": max relative error " + std::to_string(r.max_rel) +
                                   " exceeds " + std::to_string(tol),
                               name);
    };
    add("patch_embed", check_linear_family<S>(101, opt, 16, 24));
    add("attention", check_attention_family<S>(102, opt));
    add("mlp", check_mlp_family<S>(103, opt));
    add("norm", check_norm_family<S>(104, opt));
    add("skip_merge", check_linear_family<S>(105, opt, 32, 16));
    add("uvit_loss", check_uvit_family<S>(106, opt));
    add("ae_convs", check_ae_family<S>(107, opt));
}

}  // namespace

GradCheckReport gradcheck_suite(double tol_single, double tol_double) {
    GradCheckReport report;
    run_family_checks<double>(report.families, tol_double, false);
    run_family_checks<float>(report.families, tol_single, true);
    for (const auto& f : report.families) report.worst_rel = std::max(report.worst_rel, f.max_rel);
    return report;
}

}  // namespace vdsk
