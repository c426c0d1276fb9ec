#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "vdsk/diffusion.hpp"
#include "vdsk/synth.hpp"
#include "vdsk/uvit.hpp"

namespace vdsk {

// ------------------------------------------------------------- adapter ------

// Control branch: copies of the first depth/2 transformer blocks run on the
// token sequence with control tokens added at the patch positions; each copy's
// output passes a zero-initialized projection and is added to the matching
// base block output before its skip push. Zero projections make a fresh
// adapter exactly inert.
template <class S>
struct AdapterT {
    LinearT<S> ctrl_embed;               // pooled-edge patch (4) -> d
    std::vector<BlockT<S>> blocks;       // depth/2 copies of base blocks
    std::vector<LinearT<S>> zero_proj;   // d -> d, zero-initialized

    void init_from(const UViTT<S>& base, Rng& rng) {
        const UViTConfig& cfg = base.cfg;
        int half = cfg.depth / 2;
        ctrl_embed.init(rng, 4, cfg.d_model, S(0.02));
        blocks.assign(base.blocks.begin(), base.blocks.begin() + half);
        for (auto& blk : blocks) {
            ParamSet<S> ps = blk.params();
            for (auto& p : ps) p.grad->fill(S(0));
        }
        zero_proj.resize(static_cast<size_t>(half));
        for (auto& p : zero_proj) {
            p.w = TensorT<S>::zeros({cfg.d_model, cfg.d_model});
            p.b = TensorT<S>::zeros({cfg.d_model});
            p.gw = TensorT<S>::zeros(p.w.shape);
            p.gb = TensorT<S>::zeros(p.b.shape);
        }
    }

    ParamSet<S> params() {
        ParamSet<S> out;
        append_params(out, "ctrl_embed.", ctrl_embed.params());
        for (size_t i = 0; i < blocks.size(); ++i)
            append_params(out, "block" + std::to_string(i) + ".", blocks[i].params());
        for (size_t i = 0; i < zero_proj.size(); ++i)
            append_params(out, "zero_proj" + std::to_string(i) + ".", zero_proj[i].params());
        return out;
    }
};

using Adapter = AdapterT<float>;

Adapter init_adapter(const UViT& base, Rng& rng);

// Aligns a T x 1 x H x W binary control signal to the latent grid: max over
// each group of kTemporalFactor source frames, then mean pooling down to the
// latent h x w. Output is [tl, 1, h, w] with values in [0, 1].
Tensor pool_control_grid(const ControlSignal& ctrl, int64_t latent_h, int64_t latent_w);

template <class S>
struct AdapterCtx {
    int64_t b_count = 0, n_tokens = 0, p_count = 0;
    TensorT<S> ctrl_patches;              // (B*P) x 4
    std::vector<TensorT<S>> a_vals;       // adapter stream after each block
    std::vector<BlockCtx<S>> block_ctx;
    std::vector<TensorT<S>> g_inj;        // injection-node gradients (backward)
};

// Shared state between the uvit hooks that drive the adapter stream.
template <class S>
struct AdapterStream {
    const AdapterT<S>* adapter = nullptr;
    TensorT<S> ctrl_tok;   // (B*P) x d
    TensorT<S> a;          // running adapter stream, (B*N) x d
    std::vector<uint8_t> key_mask;
    int64_t b_count = 0, n_tokens = 0, p_count = 0, d = 0;
    int prefix = 0;
    AdapterCtx<S>* actx = nullptr;

    UViTHooks<S> hooks() {
        UViTHooks<S> h;
        h.on_tokens = [this](const TensorT<S>& tokens, const std::vector<uint8_t>& mask) {
            a = tokens;
            key_mask = mask;
            for (int64_t b = 0; b < b_count; ++b)
                for (int64_t p = 0; p < p_count; ++p) {
                    S* dst = a.data() + (b * n_tokens + prefix + p) * d;
                    const S* src = ctrl_tok.data() + (b * p_count + p) * d;
                    for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                }
        };
        h.post_block = [this](int k, TensorT<S>& xs) {
            int64_t rows = b_count * n_tokens;
            TensorT<S> next({rows, d});
            adapter->blocks[static_cast<size_t>(k)].forward(
                a.data(), next.data(), b_count, n_tokens, key_mask,
                actx ? &actx->block_ctx[static_cast<size_t>(k)] : nullptr);
            a = std::move(next);
            if (actx) actx->a_vals[static_cast<size_t>(k)] = a;
            TensorT<S> inj({rows, d});
            adapter->zero_proj[static_cast<size_t>(k)].forward(a.data(), inj.data(), rows);
            for (int64_t i = 0; i < rows * d; ++i) xs.data()[i] += inj.data()[i];
        };
        h.post_block_grad = [this](int k, const TensorT<S>& g) {
            if (actx) actx->g_inj[static_cast<size_t>(k)] = g;
        };
        return h;
    }
};

// Forward with control injection; pooled_ctrl is [B, tl, 1, h, w]. With a
// freshly initialized adapter the output matches uvit_forward exactly.
template <class S>
TensorT<S> uvit_forward_controlled(const UViTT<S>& model, const EmbeddingT<S>& emb,
                                   const AdapterT<S>& adapter, const TensorT<S>& x,
                                   const std::vector<int>& ts,
                                   const std::vector<PromptTokens>& prompts,
                                   const TensorT<S>& pooled_ctrl,
                                   UViTCtx<S>* ctx = nullptr, AdapterCtx<S>* actx = nullptr,
                                   AdapterStream<S>* stream_out = nullptr) {
    const UViTConfig& cfg = model.cfg;
    int64_t b_count = x.shape[0];
    int64_t tl = x.shape[1];
    int64_t p_count = tl * cfg.grid();
    if (pooled_ctrl.rank() != 5 || pooled_ctrl.shape[0] != b_count ||
        pooled_ctrl.shape[1] != tl || pooled_ctrl.shape[2] != 1 ||
        pooled_ctrl.shape[3] != cfg.latent_h || pooled_ctrl.shape[4] != cfg.latent_w)
        throw std::invalid_argument("control grid shape does not match the latent batch");

    TensorT<S> ctrl_patches({b_count * p_count, 4});
    for (int64_t b = 0; b < b_count; ++b) {
        TensorT<S> item({tl, 1, cfg.latent_h, cfg.latent_w});
        std::copy(pooled_ctrl.data() + b * item.size(),
                  pooled_ctrl.data() + (b + 1) * item.size(), item.data());
        PatchMeta meta;
        TensorT<S> pv = patchify(item, meta);
        std::copy(pv.data(), pv.data() + pv.size(), ctrl_patches.data() + b * p_count * 4);
    }

    AdapterStream<S> local;
    AdapterStream<S>& stream = stream_out ? *stream_out : local;
    stream.adapter = &adapter;
    stream.b_count = b_count;
    stream.n_tokens = cfg.tokens_for(tl);
    stream.p_count = p_count;
    stream.d = cfg.d_model;
    stream.prefix = static_cast<int>(cfg.prefix_tokens());
    stream.actx = actx;
    stream.ctrl_tok = TensorT<S>({b_count * p_count, cfg.d_model});
    adapter.ctrl_embed.forward(ctrl_patches.data(), stream.ctrl_tok.data(), b_count * p_count);

    if (actx) {
        int half = cfg.depth / 2;
        actx->b_count = b_count;
        actx->n_tokens = stream.n_tokens;
        actx->p_count = p_count;
        actx->ctrl_patches = std::move(ctrl_patches);
        actx->a_vals.resize(static_cast<size_t>(half));
        actx->block_ctx.resize(static_cast<size_t>(half));
        actx->g_inj.assign(static_cast<size_t>(half), TensorT<S>());
    }

    UViTHooks<S> hooks = stream.hooks();
    return uvit_forward(model, emb, x, ts, prompts, ctx, &hooks);
}

// Backpropagates the captured injection gradients through the adapter chain.
// Call after uvit_backward ran with the same stream's hooks. Only adapter
// parameters receive gradients; the base stays frozen during adapter training.
template <class S>
void adapter_backward(AdapterT<S>& adapter, AdapterStream<S>& stream, AdapterCtx<S>& actx) {
    int half = static_cast<int>(adapter.blocks.size());
    int64_t rows = actx.b_count * actx.n_tokens;
    int64_t d = adapter.ctrl_embed.out_dim();
    TensorT<S> g_a({rows, d});
    g_a.fill(S(0));
    TensorT<S> g_prev({rows, d});
    for (int k = half - 1; k >= 0; --k) {
        TensorT<S> g_from_proj({rows, d});
        adapter.zero_proj[static_cast<size_t>(k)].backward(
            actx.a_vals[static_cast<size_t>(k)].data(), actx.g_inj[static_cast<size_t>(k)].data(),
            g_from_proj.data(), rows);
        for (int64_t i = 0; i < rows * d; ++i) g_a.data()[i] += g_from_proj.data()[i];
        adapter.blocks[static_cast<size_t>(k)].backward(actx.block_ctx[static_cast<size_t>(k)],
                                                        g_a.data(), g_prev.data(), actx.b_count,
                                                        actx.n_tokens);
        std::swap(g_a, g_prev);
    }
    // g_a is now the gradient of the adapter stream input; the control-token
    // rows feed the control embedding
    TensorT<S> g_ctrl_tok({actx.b_count * actx.p_count, d});
    for (int64_t b = 0; b < actx.b_count; ++b)
        for (int64_t p = 0; p < actx.p_count; ++p)
            std::copy(g_a.data() + (b * actx.n_tokens + stream.prefix + p) * d,
                      g_a.data() + (b * actx.n_tokens + stream.prefix + p + 1) * d,
                      g_ctrl_tok.data() + (b * actx.p_count + p) * d);
    adapter.ctrl_embed.backward(actx.ctrl_patches.data(), g_ctrl_tok.data(), nullptr,
                                actx.b_count * actx.p_count);
}

// ------------------------------------------------------- video prediction ---

// Which latent frames are clamped to known content during sampling.
struct FrameMask {
    std::vector<uint8_t> given;  // 1 = frame is conditioned

    int64_t count_given() const {
        int64_t n = 0;
        for (uint8_t g : given) n += g;
        return n;
    }
};

using PredictObserver =
    std::function<void(const Tensor& x, int t_prev, const Tensor& overwrite_eps)>;

// Inpainting-style sampling: after every DDIM update to level t_prev, given
// frames are overwritten with q_sample(known, t_prev, fresh eps); at t_prev = 0
// the overwrite is the clean known frame, so conditioned frames come out exact.
Tensor predict_frames(const EpsFn& eps_fn, const NoiseSchedule& sched, const Tensor& known,
                      const FrameMask& mask, const SamplerConfig& cfg,
                      const PredictObserver& observer = nullptr);

// --------------------------------------------------------- subject driving --

// Single-frame clips of one subject plus the activated "<V>" token id.
struct SubjectSet {
    std::vector<VideoClip> images;
    int subject_token_id = -1;
};

// The held-out two-tone disc sprite used as the finetuning subject; the base
// corpus generator never produces it.
VideoClip render_subject_image(int start_x, int start_y);

}  // namespace vdsk
