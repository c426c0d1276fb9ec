#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "vdsk/nn.hpp"
#include "vdsk/text.hpp"

namespace vdsk {

// ----------------------------------------------------------- 3D patching ----

struct PatchMeta {
    int64_t tl = 0, c = 0, h = 0, w = 0;
    int64_t gh() const { return h / 2; }
    int64_t gw() const { return w / 2; }
    int64_t patches() const { return tl * gh() * gw(); }
    int64_t patch_dim() const { return c * 4; }
};

// Splits a latent (tl, c, h, w) into (1, 2, 2) patches, row-major over
// (tl, gy, gx); each patch flattens (c, pt, ph, pw) in that order.
template <class S>
TensorT<S> patchify(const TensorT<S>& latent, PatchMeta& meta) {
    if (latent.rank() != 4) throw std::invalid_argument("latent must be rank 4");
    meta = {latent.shape[0], latent.shape[1], latent.shape[2], latent.shape[3]};
    if (meta.h % 2 != 0 || meta.w % 2 != 0)
        throw std::invalid_argument("latent spatial dims must be divisible by the patch size");
    TensorT<S> out({meta.patches(), meta.patch_dim()});
    int64_t p = 0;
    for (int64_t tl = 0; tl < meta.tl; ++tl)
        for (int64_t gy = 0; gy < meta.gh(); ++gy)
            for (int64_t gx = 0; gx < meta.gw(); ++gx, ++p) {
                S* vec = out.data() + p * meta.patch_dim();
                for (int64_t c = 0; c < meta.c; ++c)
                    for (int64_t dy = 0; dy < 2; ++dy)
                        for (int64_t dx = 0; dx < 2; ++dx)
                            vec[c * 4 + dy * 2 + dx] =
                                latent.at4(tl, c, 2 * gy + dy, 2 * gx + dx);
            }
    return out;
}

template <class S>
TensorT<S> unpatchify(const TensorT<S>& patches, const PatchMeta& meta) {
    if (patches.rank() != 2 || patches.shape[0] != meta.patches() ||
        patches.shape[1] != meta.patch_dim())
        throw std::invalid_argument("patch count does not match the grid");
    TensorT<S> latent({meta.tl, meta.c, meta.h, meta.w});
    int64_t p = 0;
    for (int64_t tl = 0; tl < meta.tl; ++tl)
        for (int64_t gy = 0; gy < meta.gh(); ++gy)
            for (int64_t gx = 0; gx < meta.gw(); ++gx, ++p) {
                const S* vec = patches.data() + p * meta.patch_dim();
                for (int64_t c = 0; c < meta.c; ++c)
                    for (int64_t dy = 0; dy < 2; ++dy)
                        for (int64_t dx = 0; dx < 2; ++dx)
                            latent.at4(tl, c, 2 * gy + dy, 2 * gx + dx) =
                                vec[c * 4 + dy * 2 + dx];
            }
    return latent;
}

// sin/cos features of the integer timestep, frequencies log-spaced over 1e4
template <class S>
void timestep_sinusoid(int t, int64_t d, S* out) {
    int64_t half = d / 2;
    for (int64_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                               static_cast<double>(half));
        double arg = static_cast<double>(t) * freq;
        out[i] = S(std::sin(arg));
        out[half + i] = S(std::cos(arg));
    }
}

// ----------------------------------------------------------------- model ----

struct UViTConfig {
    int64_t d_model = 128;
    int depth = 8;           // even; depth/2 skip merges
    int heads = 4;
    int64_t mlp_ratio = 4;
    int64_t latent_c = 4;
    int64_t latent_h = 8;
    int64_t latent_w = 8;
    int64_t max_tl = 4;

    int64_t patch_dim() const { return latent_c * 4; }
    int64_t grid() const { return (latent_h / 2) * (latent_w / 2); }
    int64_t patches_per_frame() const { return grid(); }
    int64_t prefix_tokens() const { return 1 + kPromptLen; }
    int64_t tokens_for(int64_t tl) const { return prefix_tokens() + tl * grid(); }
};

// Token order is [time, text x8, patches]; blocks 0..D/2-1 push their outputs
// on a stack, blocks D/2..D-1 pop one, concatenate and pass through a linear
// merge before running.
template <class S>
struct UViTT {
    UViTConfig cfg;
    LinearT<S> patch_embed;            // patch_dim -> d
    LinearT<S> time_fc1, time_fc2;     // d -> d each, GELU between
    TensorT<S> pos_time, g_pos_time;   // [max_tl, d]
    TensorT<S> pos_space, g_pos_space; // [grid, d]
    TensorT<S> pos_slots, g_pos_slots; // [1 + text len, d]
    std::vector<BlockT<S>> blocks;
    std::vector<LinearT<S>> skip_merge;  // [depth/2], 2d -> d
    LayerNormT<S> final_ln;
    LinearT<S> out_proj;               // d -> patch_dim

    void init(Rng& rng, const UViTConfig& config) {
        cfg = config;
        if (cfg.depth % 2 != 0) throw std::invalid_argument("depth must be even");
        S sd = S(0.02);
        patch_embed.init(rng, cfg.patch_dim(), cfg.d_model, sd);
        time_fc1.init(rng, cfg.d_model, cfg.d_model, sd);
        time_fc2.init(rng, cfg.d_model, cfg.d_model, sd);
        pos_time = TensorT<S>::randn(rng, {cfg.max_tl, cfg.d_model}, sd);
        pos_space = TensorT<S>::randn(rng, {cfg.grid(), cfg.d_model}, sd);
        pos_slots = TensorT<S>::randn(rng, {cfg.prefix_tokens(), cfg.d_model}, sd);
        g_pos_time = TensorT<S>::zeros(pos_time.shape);
        g_pos_space = TensorT<S>::zeros(pos_space.shape);
        g_pos_slots = TensorT<S>::zeros(pos_slots.shape);
        blocks.resize(static_cast<size_t>(cfg.depth));
        for (auto& b : blocks)
            b.init(rng, cfg.d_model, cfg.heads, cfg.d_model * cfg.mlp_ratio, sd);
        skip_merge.resize(static_cast<size_t>(cfg.depth / 2));
        for (auto& m : skip_merge) m.init(rng, 2 * cfg.d_model, cfg.d_model, sd);
        final_ln.init(cfg.d_model);
        out_proj.init(rng, cfg.d_model, cfg.patch_dim(), sd);
    }

    ParamSet<S> params() {
        ParamSet<S> out;
        append_params(out, "patch_embed.", patch_embed.params());
        append_params(out, "time_fc1.", time_fc1.params());
        append_params(out, "time_fc2.", time_fc2.params());
        out.push_back({"pos_time", &pos_time, &g_pos_time});
        out.push_back({"pos_space", &pos_space, &g_pos_space});
        out.push_back({"pos_slots", &pos_slots, &g_pos_slots});
        for (size_t i = 0; i < blocks.size(); ++i)
            append_params(out, "block" + std::to_string(i) + ".", blocks[i].params());
        for (size_t i = 0; i < skip_merge.size(); ++i)
            append_params(out, "skip" + std::to_string(i) + ".", skip_merge[i].params());
        append_params(out, "final_ln.", final_ln.params());
        append_params(out, "out_proj.", out_proj.params());
        return out;
    }
};

using UViT = UViTT<float>;

// Optional injection hooks; the control adapter adds its projected block
// outputs at the push sites through these.
template <class S>
struct UViTHooks {
    // the assembled token sequence and key mask, before the first block
    std::function<void(const TensorT<S>& tokens, const std::vector<uint8_t>& key_mask)> on_tokens;
    // after block k (first half only) computed its output; may add into x
    std::function<void(int k, TensorT<S>& x)> post_block;
    // gradient arriving at the injection node during backward
    std::function<void(int k, const TensorT<S>& g)> post_block_grad;
};

template <class S>
struct UViTCtx {
    int64_t b_count = 0, n_tokens = 0, tl = 0;
    PatchMeta meta;
    std::vector<int> ts;
    std::vector<PromptTokens> prompts;
    TensorT<S> patch_vecs;     // (B*P) x patch_dim
    TensorT<S> sinus;          // B x d
    TensorT<S> time_h_pre;     // B x d
    TensorT<S> time_h_act;     // B x d
    TensorT<S> tokens0;        // (B*N) x d
    std::vector<uint8_t> key_mask;
    std::vector<BlockCtx<S>> block_ctx;
    std::vector<TensorT<S>> merge_in;   // concatenated [x, skip] per merge
    LayerNormCtx<S> fln_ctx;
    TensorT<S> fln_in;         // (B*N) x d
    TensorT<S> patch_rows;     // (B*P) x d, input of out_proj
};

// Assembles the token sequence for one item: slot embeddings on the time and
// text tokens, factorized time+space position embeddings on patch tokens.
template <class S>
void assemble_sequence(const UViTT<S>& model, const S* time_vec, const S* text_rows,
                       const S* patch_rows, int64_t tl, S* tokens_out,
                       const PromptTokens& prompt, uint8_t* mask_out) {
    const UViTConfig& cfg = model.cfg;
    int64_t d = cfg.d_model;
    int64_t grid = cfg.grid();
    int64_t n = cfg.tokens_for(tl);

    for (int64_t j = 0; j < d; ++j)
        tokens_out[j] = time_vec[j] + model.pos_slots.data()[j];
    mask_out[0] = 0;
    for (int64_t i = 0; i < kPromptLen; ++i) {
        const S* slot = model.pos_slots.data() + (1 + i) * d;
        const S* src = text_rows + i * d;
        S* dst = tokens_out + (1 + i) * d;
        for (int64_t j = 0; j < d; ++j) dst[j] = src[j] + slot[j];
        mask_out[1 + i] = prompt.ids[static_cast<size_t>(i)] == kPadId ? 1 : 0;
    }
    for (int64_t p = 0; p < tl * grid; ++p) {
        int64_t frame = p / grid;
        int64_t cell = p % grid;
        const S* pt = model.pos_time.data() + frame * d;
        const S* ps = model.pos_space.data() + cell * d;
        const S* src = patch_rows + p * d;
        S* dst = tokens_out + (cfg.prefix_tokens() + p) * d;
        for (int64_t j = 0; j < d; ++j) dst[j] = src[j] + pt[j] + ps[j];
        mask_out[cfg.prefix_tokens() + p] = 0;
    }
    (void)n;
}

// Forward pass over a batch of same-length latents x: [B, tl, c, h, w].
// Returns predicted noise with the same shape. ctx enables backward.
template <class S>
TensorT<S> uvit_forward(const UViTT<S>& model, const EmbeddingT<S>& emb,
                        const TensorT<S>& x, const std::vector<int>& ts,
                        const std::vector<PromptTokens>& prompts,
                        UViTCtx<S>* ctx = nullptr, const UViTHooks<S>* hooks = nullptr) {
    const UViTConfig& cfg = model.cfg;
    if (x.rank() != 5) throw std::invalid_argument("batch latent must be rank 5");
    int64_t b_count = x.shape[0];
    int64_t tl = x.shape[1];
    if (tl < 1 || tl > cfg.max_tl) throw std::invalid_argument("latent frame count out of range");
    if (x.shape[2] != cfg.latent_c || x.shape[3] != cfg.latent_h || x.shape[4] != cfg.latent_w)
        throw std::invalid_argument("latent shape does not match the model");
    if (static_cast<int64_t>(ts.size()) != b_count ||
        static_cast<int64_t>(prompts.size()) != b_count)
        throw std::invalid_argument("batch metadata sizes disagree");

    int64_t d = cfg.d_model;
    int64_t n = cfg.tokens_for(tl);
    int64_t p_count = tl * cfg.grid();
    int64_t rows = b_count * n;

    // patchify + embed
    TensorT<S> patch_vecs({b_count * p_count, cfg.patch_dim()});
    PatchMeta meta;
    for (int64_t b = 0; b < b_count; ++b) {
        TensorT<S> item({tl, cfg.latent_c, cfg.latent_h, cfg.latent_w});
        std::copy(x.data() + b * item.size(), x.data() + (b + 1) * item.size(), item.data());
        TensorT<S> pv = patchify(item, meta);
        std::copy(pv.data(), pv.data() + pv.size(),
                  patch_vecs.data() + b * p_count * cfg.patch_dim());
    }
    TensorT<S> patch_tok({b_count * p_count, d});
    model.patch_embed.forward(patch_vecs.data(), patch_tok.data(), b_count * p_count);

    // timestep token
    TensorT<S> sinus({b_count, d});
    for (int64_t b = 0; b < b_count; ++b)
        timestep_sinusoid(ts[static_cast<size_t>(b)], d, sinus.data() + b * d);
    TensorT<S> time_h_pre({b_count, d});
    model.time_fc1.forward(sinus.data(), time_h_pre.data(), b_count);
    TensorT<S> time_h_act({b_count, d});
    for (int64_t i = 0; i < b_count * d; ++i) time_h_act.data()[i] = gelu(time_h_pre.data()[i]);
    TensorT<S> time_tok({b_count, d});
    model.time_fc2.forward(time_h_act.data(), time_tok.data(), b_count);

    // assemble tokens
    TensorT<S> tokens({rows, d});
    std::vector<uint8_t> key_mask(static_cast<size_t>(rows), 0);
    for (int64_t b = 0; b < b_count; ++b) {
        TensorT<S> text_rows = emb.forward(prompts[static_cast<size_t>(b)]);
        assemble_sequence(model, time_tok.data() + b * d, text_rows.data(),
                          patch_tok.data() + b * p_count * d, tl, tokens.data() + b * n * d,
                          prompts[static_cast<size_t>(b)],
                          key_mask.data() + b * n);
    }

    if (hooks && hooks->on_tokens) hooks->on_tokens(tokens, key_mask);

    if (ctx) {
        ctx->b_count = b_count;
        ctx->n_tokens = n;
        ctx->tl = tl;
        ctx->meta = meta;
        ctx->ts = ts;
        ctx->prompts = prompts;
        ctx->patch_vecs = patch_vecs;
        ctx->sinus = std::move(sinus);
        ctx->time_h_pre = std::move(time_h_pre);
        ctx->time_h_act = std::move(time_h_act);
        ctx->tokens0 = tokens;
        ctx->key_mask = key_mask;
        ctx->block_ctx.resize(static_cast<size_t>(cfg.depth));
        ctx->merge_in.resize(static_cast<size_t>(cfg.depth / 2));
    }

    // transformer with long skips
    int half = cfg.depth / 2;
    std::vector<TensorT<S>> stack;
    TensorT<S> cur = std::move(tokens);
    TensorT<S> next({rows, d});
    for (int k = 0; k < cfg.depth; ++k) {
        if (k >= half) {
            TensorT<S> popped = std::move(stack.back());
            stack.pop_back();
            int mi = k - half;
            TensorT<S> merged({rows, 2 * d});
            for (int64_t r = 0; r < rows; ++r) {
                std::copy(cur.data() + r * d, cur.data() + (r + 1) * d,
                          merged.data() + r * 2 * d);
                std::copy(popped.data() + r * d, popped.data() + (r + 1) * d,
                          merged.data() + r * 2 * d + d);
            }
            model.skip_merge[static_cast<size_t>(mi)].forward(merged.data(), cur.data(), rows);
            if (ctx) ctx->merge_in[static_cast<size_t>(mi)] = std::move(merged);
        }
        model.blocks[static_cast<size_t>(k)].forward(
            cur.data(), next.data(), b_count, n, key_mask,
            ctx ? &ctx->block_ctx[static_cast<size_t>(k)] : nullptr);
        std::swap(cur, next);
        if (k < half) {
            if (hooks && hooks->post_block) hooks->post_block(k, cur);
            stack.push_back(cur);
        }
    }

    TensorT<S> fln_out({rows, d});
    model.final_ln.forward(cur.data(), fln_out.data(), rows, ctx ? &ctx->fln_ctx : nullptr);
    if (ctx) ctx->fln_in = std::move(cur);

    // read out patch rows only
    TensorT<S> patch_rows({b_count * p_count, d});
    for (int64_t b = 0; b < b_count; ++b)
        std::copy(fln_out.data() + (b * n + cfg.prefix_tokens()) * d,
                  fln_out.data() + (b * n + n) * d,
                  patch_rows.data() + b * p_count * d);
    TensorT<S> out_vecs({b_count * p_count, cfg.patch_dim()});
    model.out_proj.forward(patch_rows.data(), out_vecs.data(), b_count * p_count);
    if (ctx) ctx->patch_rows = std::move(patch_rows);

    TensorT<S> eps({b_count, tl, cfg.latent_c, cfg.latent_h, cfg.latent_w});
    for (int64_t b = 0; b < b_count; ++b) {
        TensorT<S> item_patches({p_count, cfg.patch_dim()});
        std::copy(out_vecs.data() + b * p_count * cfg.patch_dim(),
                  out_vecs.data() + (b + 1) * p_count * cfg.patch_dim(), item_patches.data());
        TensorT<S> item = unpatchify(item_patches, meta);
        std::copy(item.data(), item.data() + item.size(), eps.data() + b * item.size());
    }
    return eps;
}

// Accumulates parameter gradients for d(loss)/d(eps_hat) = g_eps.
template <class S>
void uvit_backward(UViTT<S>& model, EmbeddingT<S>& emb, UViTCtx<S>& ctx,
                   const TensorT<S>& g_eps, const UViTHooks<S>* hooks = nullptr) {
    const UViTConfig& cfg = model.cfg;
    int64_t b_count = ctx.b_count;
    int64_t n = ctx.n_tokens;
    int64_t tl = ctx.tl;
    int64_t d = cfg.d_model;
    int64_t p_count = tl * cfg.grid();
    int64_t rows = b_count * n;

    // out projection
    TensorT<S> g_outvecs({b_count * p_count, cfg.patch_dim()});
    for (int64_t b = 0; b < b_count; ++b) {
        TensorT<S> item({tl, cfg.latent_c, cfg.latent_h, cfg.latent_w});
        std::copy(g_eps.data() + b * item.size(), g_eps.data() + (b + 1) * item.size(),
                  item.data());
        PatchMeta meta;
        TensorT<S> pv = patchify(item, meta);
        std::copy(pv.data(), pv.data() + pv.size(),
                  g_outvecs.data() + b * p_count * cfg.patch_dim());
    }
    TensorT<S> g_patch_rows({b_count * p_count, d});
    model.out_proj.backward(ctx.patch_rows.data(), g_outvecs.data(), g_patch_rows.data(),
                            b_count * p_count);

    TensorT<S> g_fln_out({rows, d});
    g_fln_out.fill(S(0));
    for (int64_t b = 0; b < b_count; ++b)
        std::copy(g_patch_rows.data() + b * p_count * d,
                  g_patch_rows.data() + (b + 1) * p_count * d,
                  g_fln_out.data() + (b * n + cfg.prefix_tokens()) * d);

    TensorT<S> g_cur({rows, d});
    model.final_ln.backward(ctx.fln_ctx, g_fln_out.data(), g_cur.data(), rows);

    // blocks in reverse; skip grads flow back to their push sites
    int half = cfg.depth / 2;
    std::vector<TensorT<S>> skip_grad(static_cast<size_t>(half));
    TensorT<S> g_prev({rows, d});
    for (int k = cfg.depth - 1; k >= 0; --k) {
        if (k < half) {
            // the push site: add the goal gradient from the merge that popped it
            const TensorT<S>& sg = skip_grad[static_cast<size_t>(k)];
            for (int64_t i = 0; i < rows * d; ++i) g_cur.data()[i] += sg.data()[i];
            if (hooks && hooks->post_block_grad) hooks->post_block_grad(k, g_cur);
        }
        model.blocks[static_cast<size_t>(k)].backward(ctx.block_ctx[static_cast<size_t>(k)],
                                                      g_cur.data(), g_prev.data(), b_count, n);
        std::swap(g_cur, g_prev);
        if (k >= half) {
            int mi = k - half;
            TensorT<S> g_merged({rows, 2 * d});
            model.skip_merge[static_cast<size_t>(mi)].backward(
                ctx.merge_in[static_cast<size_t>(mi)].data(), g_cur.data(), g_merged.data(),
                rows);
            TensorT<S> g_skip({rows, d});
            for (int64_t r = 0; r < rows; ++r) {
                std::copy(g_merged.data() + r * 2 * d, g_merged.data() + r * 2 * d + d,
                          g_cur.data() + r * d);
                std::copy(g_merged.data() + r * 2 * d + d, g_merged.data() + (r + 1) * 2 * d,
                          g_skip.data() + r * d);
            }
            skip_grad[static_cast<size_t>(cfg.depth - 1 - k)] = std::move(g_skip);
        }
    }

    // g_cur now holds gradients of the assembled tokens
    TensorT<S>& g_tokens = g_cur;

    // positional tables and slot embeddings
    for (int64_t b = 0; b < b_count; ++b) {
        const S* gt = g_tokens.data() + b * n * d;
        for (int64_t j = 0; j < d; ++j) model.g_pos_slots.data()[j] += gt[j];
        for (int64_t i = 0; i < kPromptLen; ++i) {
            const S* src = gt + (1 + i) * d;
            S* dst = model.g_pos_slots.data() + (1 + i) * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
        for (int64_t p = 0; p < p_count; ++p) {
            int64_t frame = p / cfg.grid();
            int64_t cell = p % cfg.grid();
            const S* src = gt + (cfg.prefix_tokens() + p) * d;
            S* dt = model.g_pos_time.data() + frame * d;
            S* ds = model.g_pos_space.data() + cell * d;
            for (int64_t j = 0; j < d; ++j) {
                dt[j] += src[j];
                ds[j] += src[j];
            }
        }
    }

    // text embedding rows
    for (int64_t b = 0; b < b_count; ++b) {
        TensorT<S> g_rows({kPromptLen, d});
        std::copy(g_tokens.data() + (b * n + 1) * d,
                  g_tokens.data() + (b * n + 1 + kPromptLen) * d, g_rows.data());
        emb.accumulate_grad(ctx.prompts[static_cast<size_t>(b)], g_rows);
    }

    // time token MLP
    TensorT<S> g_time_tok({b_count, d});
    for (int64_t b = 0; b < b_count; ++b)
        std::copy(g_tokens.data() + b * n * d, g_tokens.data() + b * n * d + d,
                  g_time_tok.data() + b * d);
    TensorT<S> g_time_h({b_count, d});
    model.time_fc2.backward(ctx.time_h_act.data(), g_time_tok.data(), g_time_h.data(), b_count);
    for (int64_t i = 0; i < b_count * d; ++i)
        g_time_h.data()[i] *= gelu_grad(ctx.time_h_pre.data()[i]);
    model.time_fc1.backward(ctx.sinus.data(), g_time_h.data(), nullptr, b_count);

    // patch embedding
    TensorT<S> g_patch_tok({b_count * p_count, d});
    for (int64_t b = 0; b < b_count; ++b)
        std::copy(g_tokens.data() + (b * n + cfg.prefix_tokens()) * d,
                  g_tokens.data() + (b * n + n) * d, g_patch_tok.data() + b * p_count * d);
    model.patch_embed.backward(ctx.patch_vecs.data(), g_patch_tok.data(), nullptr,
                               b_count * p_count);
}

// Single-item convenience wrapper: predicted noise for one latent.
template <class S>
TensorT<S> predict_noise(const UViTT<S>& model, const EmbeddingT<S>& emb,
                         const TensorT<S>& x_t, int t, const PromptTokens& prompt,
                         const UViTHooks<S>* hooks = nullptr) {
    TensorT<S> batch({1, x_t.shape[0], x_t.shape[1], x_t.shape[2], x_t.shape[3]});
    std::copy(x_t.data(), x_t.data() + x_t.size(), batch.data());
    TensorT<S> eps = uvit_forward<S>(model, emb, batch, {t}, {prompt}, nullptr, hooks);
    TensorT<S> out(x_t.shape);
    std::copy(eps.data(), eps.data() + out.size(), out.data());
    return out;
}

}  // namespace vdsk
