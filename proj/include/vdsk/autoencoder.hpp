#pragma once

#include <stdexcept>
#include <vector>

#include "vdsk/gemm.hpp"
#include "vdsk/nn.hpp"
#include "vdsk/synth.hpp"

namespace vdsk {

inline constexpr int kSpatialFactor = 4;   // two stride-2 stages
inline constexpr int kTemporalFactor = 4;  // one stride-4 stage

inline int64_t latent_frames_for(int64_t t) {
    return (t + kTemporalFactor - 1) / kTemporalFactor;
}

// Autoencoder latent grid, Tl x c x h x w.
struct LatentVideo {
    Tensor data;

    int64_t frames() const { return data.shape[0]; }
};

// ------------------------------------------------------- spatial 3x3 conv ---

// 3x3 conv with pad 1, applied frame-wise over an [F, C, H, W] stack.
template <class S>
struct Conv2dT {
    TensorT<S> w;  // [c_out, c_in * 9]
    TensorT<S> b;  // [c_out]
    TensorT<S> gw, gb;
    int64_t c_in = 0, c_out = 0;
    int stride = 1;

    void init(Rng& rng, int64_t in_ch, int64_t out_ch, int stride_, S stddev) {
        c_in = in_ch;
        c_out = out_ch;
        stride = stride_;
        w = TensorT<S>::randn(rng, {out_ch, in_ch * 9}, stddev);
        b = TensorT<S>::zeros({out_ch});
        gw = TensorT<S>::zeros(w.shape);
        gb = TensorT<S>::zeros(b.shape);
    }

    int64_t out_hw(int64_t in_hw) const { return (in_hw + 2 - 3) / stride + 1; }

    void im2col(const S* frame, int64_t h, int64_t w_in, TensorT<S>& col) const {
        int64_t ho = out_hw(h), wo = out_hw(w_in);
        for (int64_t ci = 0; ci < c_in; ++ci) {
            const S* ch = frame + ci * h * w_in;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    S* row = col.data() + ((ci * 3 + ky) * 3 + kx) * ho * wo;
                    for (int64_t oy = 0; oy < ho; ++oy) {
                        int64_t y = oy * stride - 1 + ky;
                        for (int64_t ox = 0; ox < wo; ++ox) {
                            int64_t x = ox * stride - 1 + kx;
                            row[oy * wo + ox] =
                                (y >= 0 && y < h && x >= 0 && x < w_in) ? ch[y * w_in + x] : S(0);
                        }
                    }
                }
            }
        }
    }

    TensorT<S> forward(const TensorT<S>& x) const {
        int64_t f = x.shape[0], h = x.shape[2], w_in = x.shape[3];
        int64_t ho = out_hw(h), wo = out_hw(w_in);
        TensorT<S> y({f, c_out, ho, wo});
        TensorT<S> col({c_in * 9, ho * wo});
        for (int64_t t = 0; t < f; ++t) {
            im2col(x.data() + t * c_in * h * w_in, h, w_in, col);
            S* out = y.data() + t * c_out * ho * wo;
            mm(out, w.data(), col.data(), c_out, c_in * 9, ho * wo);
            for (int64_t co = 0; co < c_out; ++co) {
                S bias = b[co];
                S* row = out + co * ho * wo;
                for (int64_t i = 0; i < ho * wo; ++i) row[i] += bias;
            }
        }
        return y;
    }

    void backward(const TensorT<S>& x, const TensorT<S>& g_out, TensorT<S>* g_x) {
        int64_t f = x.shape[0], h = x.shape[2], w_in = x.shape[3];
        int64_t ho = out_hw(h), wo = out_hw(w_in);
        TensorT<S> col({c_in * 9, ho * wo});
        TensorT<S> g_col({c_in * 9, ho * wo});
        for (int64_t t = 0; t < f; ++t) {
            const S* go = g_out.data() + t * c_out * ho * wo;
            im2col(x.data() + t * c_in * h * w_in, h, w_in, col);
            mm_a_bt_acc(gw.data(), go, col.data(), c_out, ho * wo, c_in * 9);
            for (int64_t co = 0; co < c_out; ++co) {
                const S* row = go + co * ho * wo;
                S acc = S(0);
                for (int64_t i = 0; i < ho * wo; ++i) acc += row[i];
                gb[co] += acc;
            }
            if (!g_x) continue;
            mm_at_b(g_col.data(), w.data(), go, c_in * 9, c_out, ho * wo);
            // col2im accumulate
            S* gx_frame = g_x->data() + t * c_in * h * w_in;
            for (int64_t ci = 0; ci < c_in; ++ci) {
                S* ch = gx_frame + ci * h * w_in;
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const S* row = g_col.data() + ((ci * 3 + ky) * 3 + kx) * ho * wo;
                        for (int64_t oy = 0; oy < ho; ++oy) {
                            int64_t y = oy * stride - 1 + ky;
                            if (y < 0 || y >= h) continue;
                            for (int64_t ox = 0; ox < wo; ++ox) {
                                int64_t x2 = ox * stride - 1 + kx;
                                if (x2 < 0 || x2 >= w_in) continue;
                                ch[y * w_in + x2] += row[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    ParamSet<S> params() {
        return {{"w", &w, &gw}, {"b", &b, &gb}};
    }
};

// --------------------------------------------------- temporal stride-4 conv -

// Groups of kTemporalFactor frames -> one latent frame; input shorter than a
// full group is right-padded by replicating the last frame.
template <class S>
struct TemporalConvT {
    TensorT<S> w;  // [c_out, c_in * 4]
    TensorT<S> b;  // [c_out]
    TensorT<S> gw, gb;
    int64_t c_in = 0, c_out = 0;

    void init(Rng& rng, int64_t in_ch, int64_t out_ch, S stddev) {
        c_in = in_ch;
        c_out = out_ch;
        w = TensorT<S>::randn(rng, {out_ch, in_ch * 4}, stddev);
        b = TensorT<S>::zeros({out_ch});
        gw = TensorT<S>::zeros(w.shape);
        gb = TensorT<S>::zeros(b.shape);
    }

    TensorT<S> forward(const TensorT<S>& x) const {
        int64_t t = x.shape[0], h = x.shape[2], w_in = x.shape[3];
        int64_t hw = h * w_in;
        int64_t tl = latent_frames_for(t);
        TensorT<S> y({tl, c_out, h, w_in});
        TensorT<S> grp({c_in * 4, hw});
        for (int64_t g = 0; g < tl; ++g) {
            for (int64_t ci = 0; ci < c_in; ++ci) {
                for (int64_t i = 0; i < 4; ++i) {
                    int64_t src_t = std::min(g * 4 + i, t - 1);
                    std::copy(x.data() + (src_t * c_in + ci) * hw,
                              x.data() + (src_t * c_in + ci + 1) * hw,
                              grp.data() + (ci * 4 + i) * hw);
                }
            }
            S* out = y.data() + g * c_out * hw;
            mm(out, w.data(), grp.data(), c_out, c_in * 4, hw);
            for (int64_t co = 0; co < c_out; ++co) {
                S bias = b[co];
                S* row = out + co * hw;
                for (int64_t i = 0; i < hw; ++i) row[i] += bias;
            }
        }
        return y;
    }

    void backward(const TensorT<S>& x, const TensorT<S>& g_out, TensorT<S>* g_x) {
        int64_t t = x.shape[0], h = x.shape[2], w_in = x.shape[3];
        int64_t hw = h * w_in;
        int64_t tl = latent_frames_for(t);
        TensorT<S> grp({c_in * 4, hw});
        TensorT<S> g_grp({c_in * 4, hw});
        for (int64_t g = 0; g < tl; ++g) {
            for (int64_t ci = 0; ci < c_in; ++ci) {
                for (int64_t i = 0; i < 4; ++i) {
                    int64_t src_t = std::min(g * 4 + i, t - 1);
                    std::copy(x.data() + (src_t * c_in + ci) * hw,
                              x.data() + (src_t * c_in + ci + 1) * hw,
                              grp.data() + (ci * 4 + i) * hw);
                }
            }
            const S* go = g_out.data() + g * c_out * hw;
            mm_a_bt_acc(gw.data(), go, grp.data(), c_out, hw, c_in * 4);
            for (int64_t co = 0; co < c_out; ++co) {
                const S* row = go + co * hw;
                S acc = S(0);
                for (int64_t i = 0; i < hw; ++i) acc += row[i];
                gb[co] += acc;
            }
            if (!g_x) continue;
            mm_at_b(g_grp.data(), w.data(), go, c_in * 4, c_out, hw);
            for (int64_t ci = 0; ci < c_in; ++ci) {
                for (int64_t i = 0; i < 4; ++i) {
                    int64_t src_t = std::min(g * 4 + i, t - 1);
                    S* dst = g_x->data() + (src_t * c_in + ci) * hw;
                    const S* src = g_grp.data() + (ci * 4 + i) * hw;
                    for (int64_t j = 0; j < hw; ++j) dst[j] += src[j];
                }
            }
        }
    }

    ParamSet<S> params() {
        return {{"w", &w, &gw}, {"b", &b, &gb}};
    }
};

// -------------------------------------------- temporal unfold (decoder side) -

// Each latent frame emits kTemporalFactor output frames through per-phase
// 1x1 projections (the mirror of the stride-4 encoder conv); output is
// cropped to the requested frame count.
template <class S>
struct TemporalUnfoldT {
    TensorT<S> w;  // [c_out * 4, c_in]
    TensorT<S> b;  // [c_out * 4]
    TensorT<S> gw, gb;
    int64_t c_in = 0, c_out = 0;

    void init(Rng& rng, int64_t in_ch, int64_t out_ch, S stddev) {
        c_in = in_ch;
        c_out = out_ch;
        w = TensorT<S>::randn(rng, {out_ch * 4, in_ch}, stddev);
        b = TensorT<S>::zeros({out_ch * 4});
        gw = TensorT<S>::zeros(w.shape);
        gb = TensorT<S>::zeros(b.shape);
    }

    TensorT<S> forward(const TensorT<S>& z, int64_t target_t) const {
        int64_t tl = z.shape[0], h = z.shape[2], w_in = z.shape[3];
        int64_t hw = h * w_in;
        TensorT<S> y({target_t, c_out, h, w_in});
        TensorT<S> tmp({c_out * 4, hw});
        for (int64_t g = 0; g < tl; ++g) {
            mm(tmp.data(), w.data(), z.data() + g * c_in * hw, c_out * 4, c_in, hw);
            for (int64_t co = 0; co < c_out; ++co) {
                for (int64_t p = 0; p < 4; ++p) {
                    int64_t dst_t = g * 4 + p;
                    if (dst_t >= target_t) continue;
                    S bias = b[co * 4 + p];
                    const S* src = tmp.data() + (co * 4 + p) * hw;
                    S* dst = y.data() + (dst_t * c_out + co) * hw;
                    for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] + bias;
                }
            }
        }
        return y;
    }

    void backward(const TensorT<S>& z, const TensorT<S>& g_out, TensorT<S>* g_z) {
        int64_t tl = z.shape[0], h = z.shape[2], w_in = z.shape[3];
        int64_t hw = h * w_in;
        int64_t target_t = g_out.shape[0];
        TensorT<S> g_tmp({c_out * 4, hw});
        for (int64_t g = 0; g < tl; ++g) {
            g_tmp.fill(S(0));
            for (int64_t co = 0; co < c_out; ++co) {
                for (int64_t p = 0; p < 4; ++p) {
                    int64_t dst_t = g * 4 + p;
                    if (dst_t >= target_t) continue;
                    const S* src = g_out.data() + (dst_t * c_out + co) * hw;
                    S* dst = g_tmp.data() + (co * 4 + p) * hw;
                    std::copy(src, src + hw, dst);
                    S acc = S(0);
                    for (int64_t i = 0; i < hw; ++i) acc += src[i];
                    gb[co * 4 + p] += acc;
                }
            }
            mm_a_bt_acc(gw.data(), g_tmp.data(), z.data() + g * c_in * hw, c_out * 4, hw, c_in);
            if (g_z)
                mm_at_b_acc(g_z->data() + g * c_in * hw, w.data(), g_tmp.data(), c_in,
                            c_out * 4, hw);
        }
    }

    ParamSet<S> params() {
        return {{"w", &w, &gw}, {"b", &b, &gb}};
    }
};

// ------------------------------------------------------------- upsampling ---

template <class S>
TensorT<S> upsample2x(const TensorT<S>& x) {
    int64_t f = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    TensorT<S> y({f, c, h * 2, w * 2});
    for (int64_t i = 0; i < f * c; ++i) {
        const S* src = x.data() + i * h * w;
        S* dst = y.data() + i * h * w * 4;
        for (int64_t yy = 0; yy < h; ++yy)
            for (int64_t xx = 0; xx < w; ++xx) {
                S v = src[yy * w + xx];
                dst[(2 * yy) * 2 * w + 2 * xx] = v;
                dst[(2 * yy) * 2 * w + 2 * xx + 1] = v;
                dst[(2 * yy + 1) * 2 * w + 2 * xx] = v;
                dst[(2 * yy + 1) * 2 * w + 2 * xx + 1] = v;
            }
    }
    return y;
}

template <class S>
TensorT<S> upsample2x_backward(const TensorT<S>& g_out) {
    int64_t f = g_out.shape[0], c = g_out.shape[1], h2 = g_out.shape[2], w2 = g_out.shape[3];
    int64_t h = h2 / 2, w = w2 / 2;
    TensorT<S> g({f, c, h, w});
    for (int64_t i = 0; i < f * c; ++i) {
        const S* src = g_out.data() + i * h2 * w2;
        S* dst = g.data() + i * h * w;
        for (int64_t yy = 0; yy < h; ++yy)
            for (int64_t xx = 0; xx < w; ++xx)
                dst[yy * w + xx] = src[(2 * yy) * w2 + 2 * xx] + src[(2 * yy) * w2 + 2 * xx + 1] +
                                   src[(2 * yy + 1) * w2 + 2 * xx] +
                                   src[(2 * yy + 1) * w2 + 2 * xx + 1];
    }
    return g;
}

// ---------------------------------------------------------------- ConvAE ----

struct AEWidths {
    int64_t hidden1 = 32;
    int64_t hidden2 = 64;
    int64_t latent = 4;
};

template <class S>
struct AECtx {
    TensorT<S> x;
    TensorT<S> e1p, e1, e2p, e2, z;
    TensorT<S> dtp, dt, u1, d1p, d1, u2;
};

// Encoder: two stride-2 spatial convs then the temporal stride-4 conv.
// Decoder: temporal unfold, then two (nearest upsample + conv) stages.
template <class S>
struct ConvAET {
    AEWidths widths;
    Conv2dT<S> enc1, enc2;
    TemporalConvT<S> enc_t;
    TemporalUnfoldT<S> dec_t;
    Conv2dT<S> dec1, dec2;

    void init(Rng& rng, AEWidths w = {}, S stddev = S(0.05)) {
        widths = w;
        enc1.init(rng, 3, w.hidden1, 2, stddev);
        enc2.init(rng, w.hidden1, w.hidden2, 2, stddev);
        enc_t.init(rng, w.hidden2, w.latent, stddev);
        dec_t.init(rng, w.latent, w.hidden2, stddev);
        dec1.init(rng, w.hidden2, w.hidden1, 1, stddev);
        dec2.init(rng, w.hidden1, 3, 1, stddev);
    }

    TensorT<S> encode_raw(const TensorT<S>& clip, AECtx<S>* ctx = nullptr) const {
        if (clip.shape[2] % kSpatialFactor != 0 || clip.shape[3] % kSpatialFactor != 0)
            throw std::invalid_argument("frame size must be divisible by the spatial factor");
        TensorT<S> e1p = enc1.forward(clip);
        TensorT<S> e1(e1p.shape);
        for (int64_t i = 0; i < e1.size(); ++i) e1[i] = gelu(e1p[i]);
        TensorT<S> e2p = enc2.forward(e1);
        TensorT<S> e2(e2p.shape);
        for (int64_t i = 0; i < e2.size(); ++i) e2[i] = gelu(e2p[i]);
        TensorT<S> z = enc_t.forward(e2);
        if (ctx) {
            ctx->x = clip;
            ctx->e1p = std::move(e1p);
            ctx->e1 = std::move(e1);
            ctx->e2p = std::move(e2p);
            ctx->e2 = std::move(e2);
            ctx->z = z;
        }
        return z;
    }

    TensorT<S> decode_raw(const TensorT<S>& z, int64_t target_t, AECtx<S>* ctx = nullptr) const {
        if (latent_frames_for(target_t) != z.shape[0])
            throw std::invalid_argument("latent frame count does not match the target length");
        TensorT<S> dtp = dec_t.forward(z, target_t);
        TensorT<S> dt(dtp.shape);
        for (int64_t i = 0; i < dt.size(); ++i) dt[i] = gelu(dtp[i]);
        TensorT<S> u1 = upsample2x(dt);
        TensorT<S> d1p = dec1.forward(u1);
        TensorT<S> d1(d1p.shape);
        for (int64_t i = 0; i < d1.size(); ++i) d1[i] = gelu(d1p[i]);
        TensorT<S> u2 = upsample2x(d1);
        TensorT<S> out = dec2.forward(u2);
        if (ctx) {
            ctx->dtp = std::move(dtp);
            ctx->dt = std::move(dt);
            ctx->u1 = std::move(u1);
            ctx->d1p = std::move(d1p);
            ctx->d1 = std::move(d1);
            ctx->u2 = std::move(u2);
        }
        return out;
    }

    // accumulates parameter gradients for a reconstruction pass;
    // g_out is d(loss)/d(decoder output)
    void backward(AECtx<S>& ctx, const TensorT<S>& g_out) {
        TensorT<S> g_u2(ctx.u2.shape);
        g_u2.fill(S(0));
        dec2.backward(ctx.u2, g_out, &g_u2);
        TensorT<S> g_d1 = upsample2x_backward(g_u2);
        for (int64_t i = 0; i < g_d1.size(); ++i) g_d1[i] *= gelu_grad(ctx.d1p[i]);
        TensorT<S> g_u1(ctx.u1.shape);
        g_u1.fill(S(0));
        dec1.backward(ctx.u1, g_d1, &g_u1);
        TensorT<S> g_dt = upsample2x_backward(g_u1);
        for (int64_t i = 0; i < g_dt.size(); ++i) g_dt[i] *= gelu_grad(ctx.dtp[i]);
        TensorT<S> g_z(ctx.z.shape);
        g_z.fill(S(0));
        dec_t.backward(ctx.z, g_dt, &g_z);

        TensorT<S> g_e2(ctx.e2.shape);
        g_e2.fill(S(0));
        enc_t.backward(ctx.e2, g_z, &g_e2);
        for (int64_t i = 0; i < g_e2.size(); ++i) g_e2[i] *= gelu_grad(ctx.e2p[i]);
        TensorT<S> g_e1(ctx.e1.shape);
        g_e1.fill(S(0));
        enc2.backward(ctx.e1, g_e2, &g_e1);
        for (int64_t i = 0; i < g_e1.size(); ++i) g_e1[i] *= gelu_grad(ctx.e1p[i]);
        enc1.backward(ctx.x, g_e1, nullptr);
    }

    ParamSet<S> params() {
        ParamSet<S> out;
        append_params(out, "enc1.", enc1.params());
        append_params(out, "enc2.", enc2.params());
        append_params(out, "enc_t.", enc_t.params());
        append_params(out, "dec_t.", dec_t.params());
        append_params(out, "dec1.", dec1.params());
        append_params(out, "dec2.", dec2.params());
        return out;
    }
};

using ConvAE = ConvAET<float>;

// ------------------------------------------------------------- public ops ---

LatentVideo encode(const ConvAE& ae, const VideoClip& clip);
VideoClip decode(const ConvAE& ae, const LatentVideo& latent, int64_t target_t);

// 20 log10(peak / rms error) with peak 2.0; equal inputs report the 99 dB cap
double psnr(const VideoClip& a, const VideoClip& b);

}  // namespace vdsk
