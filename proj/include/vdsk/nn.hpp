#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vdsk/gemm.hpp"
#include "vdsk/tensor.hpp"

namespace vdsk {

// ------------------------------------------------------------- parameters ---

template <class S>
struct ParamRef {
    std::string name;
    TensorT<S>* value;
    TensorT<S>* grad;
};

template <class S>
using ParamSet = std::vector<ParamRef<S>>;

template <class S>
void zero_grads(const ParamSet<S>& params) {
    for (const auto& p : params) p.grad->fill(S(0));
}

template <class S>
void append_params(ParamSet<S>& out, const std::string& prefix, const ParamSet<S>& in) {
    for (const auto& p : in) out.push_back({prefix + p.name, p.value, p.grad});
}

// ------------------------------------------------------------- activations --

template <class S>
inline S gelu(S x) {
    return S(0.5) * x * (S(1) + S(std::erf(static_cast<double>(x) * 0.7071067811865475244)));
}

template <class S>
inline S gelu_grad(S x) {
    double xd = static_cast<double>(x);
    double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475244));
    double pdf = std::exp(-0.5 * xd * xd) * 0.3989422804014326779;
    return S(cdf + xd * pdf);
}

// ----------------------------------------------------------------- linear ---

// y = x W^T + b, with x as rows x in_dim
template <class S>
struct LinearT {
    TensorT<S> w;  // [out, in]
    TensorT<S> b;  // [out]
    TensorT<S> gw, gb;

    void init(Rng& rng, int64_t in_dim, int64_t out_dim, S stddev) {
        w = TensorT<S>::randn(rng, {out_dim, in_dim}, stddev);
        b = TensorT<S>::zeros({out_dim});
        gw = TensorT<S>::zeros({out_dim, in_dim});
        gb = TensorT<S>::zeros({out_dim});
    }

    int64_t in_dim() const { return w.shape[1]; }
    int64_t out_dim() const { return w.shape[0]; }

    void forward(const S* x, S* y, int64_t rows) const {
        mm_a_bt(y, x, w.data(), rows, in_dim(), out_dim());
        const S* bias = b.data();
        int64_t od = out_dim();
        for (int64_t r = 0; r < rows; ++r) {
            S* yr = y + r * od;
            for (int64_t j = 0; j < od; ++j) yr[j] += bias[j];
        }
    }

    // accumulates gw, gb; writes gx when non-null
    void backward(const S* x, const S* gy, S* gx, int64_t rows) {
        mm_at_b_acc(gw.data(), gy, x, out_dim(), rows, in_dim());
        S* gbd = gb.data();
        int64_t od = out_dim();
        for (int64_t r = 0; r < rows; ++r) {
            const S* gyr = gy + r * od;
            for (int64_t j = 0; j < od; ++j) gbd[j] += gyr[j];
        }
        if (gx) mm(gx, gy, w.data(), rows, out_dim(), in_dim());
    }

    ParamSet<S> params() {
        return {{"w", &w, &gw}, {"b", &b, &gb}};
    }
};

// -------------------------------------------------------------- layer norm --

template <class S>
struct LayerNormCtx {
    TensorT<S> xhat;          // [rows, d]
    std::vector<S> rstd;      // [rows]
};

template <class S>
struct LayerNormT {
    TensorT<S> gamma;
    TensorT<S> beta;
    TensorT<S> ggamma, gbeta;
    static constexpr double kEps = 1e-5;

    void init(int64_t d) {
        gamma = TensorT<S>::full({d}, S(1));
        beta = TensorT<S>::zeros({d});
        ggamma = TensorT<S>::zeros({d});
        gbeta = TensorT<S>::zeros({d});
    }

    int64_t dim() const { return gamma.shape[0]; }

    void forward(const S* x, S* y, int64_t rows, LayerNormCtx<S>* ctx = nullptr) const {
        int64_t d = dim();
        if (ctx) {
            ctx->xhat = TensorT<S>({rows, d});
            ctx->rstd.assign(static_cast<size_t>(rows), S(0));
        }
        for (int64_t r = 0; r < rows; ++r) {
            const S* xr = x + r * d;
            S* yr = y + r * d;
            double mean = 0.0;
            for (int64_t j = 0; j < d; ++j) mean += static_cast<double>(xr[j]);
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                double c = static_cast<double>(xr[j]) - mean;
                var += c * c;
            }
            var /= static_cast<double>(d);
            S rstd = S(1.0 / std::sqrt(var + kEps));
            for (int64_t j = 0; j < d; ++j) {
                S xh = (xr[j] - S(mean)) * rstd;
                if (ctx) ctx->xhat.data()[r * d + j] = xh;
                yr[j] = xh * gamma.data()[j] + beta.data()[j];
            }
            if (ctx) ctx->rstd[static_cast<size_t>(r)] = rstd;
        }
    }

    void backward(const LayerNormCtx<S>& ctx, const S* gy, S* gx, int64_t rows) {
        int64_t d = dim();
        for (int64_t r = 0; r < rows; ++r) {
            const S* gyr = gy + r * d;
            const S* xh = ctx.xhat.data() + r * d;
            S* gxr = gx + r * d;
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                double dxh = static_cast<double>(gyr[j]) * static_cast<double>(gamma.data()[j]);
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * static_cast<double>(xh[j]);
                ggamma.data()[j] += gyr[j] * xh[j];
                gbeta.data()[j] += gyr[j];
            }
            double inv_d = 1.0 / static_cast<double>(d);
            double rstd = static_cast<double>(ctx.rstd[static_cast<size_t>(r)]);
            for (int64_t j = 0; j < d; ++j) {
                double dxh = static_cast<double>(gyr[j]) * static_cast<double>(gamma.data()[j]);
                gxr[j] = S(rstd * (dxh - inv_d * sum_dxhat -
                                   static_cast<double>(xh[j]) * inv_d * sum_dxhat_xhat));
            }
        }
    }

    ParamSet<S> params() {
        return {{"gamma", &gamma, &ggamma}, {"beta", &beta, &gbeta}};
    }
};

// -------------------------------------------------------- self-attention ----

template <class S>
struct AttentionCtx {
    TensorT<S> q, k, v;      // [B*N, d]
    TensorT<S> probs;        // [B, heads, N, N]
    TensorT<S> heads_out;    // [B*N, d] (pre output-projection)
};

// Multi-head self-attention over B sequences of N tokens. key_mask marks
// tokens (per sequence) that must not be attended to as keys.
template <class S>
struct AttentionT {
    LinearT<S> wq, wk, wv, wo;
    int heads = 0;

    void init(Rng& rng, int64_t d, int n_heads, S stddev) {
        heads = n_heads;
        wq.init(rng, d, d, stddev);
        wk.init(rng, d, d, stddev);
        wv.init(rng, d, d, stddev);
        wo.init(rng, d, d, stddev);
    }

    int64_t dim() const { return wq.in_dim(); }

    void forward(const S* x, S* y, int64_t b_count, int64_t n_tokens,
                 const std::vector<uint8_t>& key_mask, AttentionCtx<S>* ctx) const {
        int64_t d = dim();
        int64_t rows = b_count * n_tokens;
        int64_t dh = d / heads;
        S scale = S(1.0 / std::sqrt(static_cast<double>(dh)));

        TensorT<S> q({rows, d}), k({rows, d}), v({rows, d});
        wq.forward(x, q.data(), rows);
        wk.forward(x, k.data(), rows);
        wv.forward(x, v.data(), rows);

        TensorT<S> heads_out({rows, d});
        TensorT<S> probs({b_count, static_cast<int64_t>(heads), n_tokens, n_tokens});
        TensorT<S> scores({n_tokens, n_tokens});

        for (int64_t b = 0; b < b_count; ++b) {
            const uint8_t* mask = key_mask.data() + b * n_tokens;
            for (int h = 0; h < heads; ++h) {
                const S* qh = q.data() + b * n_tokens * d + h * dh;
                const S* kh = k.data() + b * n_tokens * d + h * dh;
                const S* vh = v.data() + b * n_tokens * d + h * dh;
                // scores = Qh Kh^T, with head slices strided by d
                using StridedC = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                                            0, Eigen::OuterStride<>>;
                using Strided = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                                           0, Eigen::OuterStride<>>;
                StridedC qm(qh, n_tokens, dh, Eigen::OuterStride<>(d));
                StridedC km(kh, n_tokens, dh, Eigen::OuterStride<>(d));
                EMap<S>(scores.data(), n_tokens, n_tokens).noalias() = qm * km.transpose() * scale;

                S* pr = probs.data() + ((b * heads + h) * n_tokens) * n_tokens;
                for (int64_t i = 0; i < n_tokens; ++i) {
                    S* row = scores.data() + i * n_tokens;
                    S mx = -std::numeric_limits<S>::infinity();
                    for (int64_t j = 0; j < n_tokens; ++j)
                        if (!mask[j] && row[j] > mx) mx = row[j];
                    double denom = 0.0;
                    S* prow = pr + i * n_tokens;
                    for (int64_t j = 0; j < n_tokens; ++j) {
                        if (mask[j]) {
                            prow[j] = S(0);
                        } else {
                            S e = S(std::exp(static_cast<double>(row[j] - mx)));
                            prow[j] = e;
                            denom += static_cast<double>(e);
                        }
                    }
                    S inv = S(1.0 / denom);
                    for (int64_t j = 0; j < n_tokens; ++j) prow[j] *= inv;
                }

                Strided om(heads_out.data() + b * n_tokens * d + h * dh, n_tokens, dh,
                           Eigen::OuterStride<>(d));
                StridedC vm(vh, n_tokens, dh, Eigen::OuterStride<>(d));
                om.noalias() = ECMap<S>(pr, n_tokens, n_tokens) * vm;
            }
        }

        wo.forward(heads_out.data(), y, rows);
        if (ctx) {
            ctx->q = std::move(q);
            ctx->k = std::move(k);
            ctx->v = std::move(v);
            ctx->probs = std::move(probs);
            ctx->heads_out = std::move(heads_out);
        }
    }

    void backward(const S* x, const AttentionCtx<S>& ctx, const S* gy, S* gx,
                  int64_t b_count, int64_t n_tokens) {
        int64_t d = dim();
        int64_t rows = b_count * n_tokens;
        int64_t dh = d / heads;
        S scale = S(1.0 / std::sqrt(static_cast<double>(dh)));

        TensorT<S> g_heads({rows, d});
        wo.backward(ctx.heads_out.data(), gy, g_heads.data(), rows);

        TensorT<S> gq({rows, d}), gk({rows, d}), gv({rows, d});
        gq.fill(S(0));
        gk.fill(S(0));
        gv.fill(S(0));
        TensorT<S> dscores({n_tokens, n_tokens});

        for (int64_t b = 0; b < b_count; ++b) {
            for (int h = 0; h < heads; ++h) {
                using StridedC = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                                            0, Eigen::OuterStride<>>;
                using Strided = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                                           0, Eigen::OuterStride<>>;
                int64_t base = b * n_tokens * d + h * dh;
                StridedC qm(ctx.q.data() + base, n_tokens, dh, Eigen::OuterStride<>(d));
                StridedC km(ctx.k.data() + base, n_tokens, dh, Eigen::OuterStride<>(d));
                StridedC vm(ctx.v.data() + base, n_tokens, dh, Eigen::OuterStride<>(d));
                StridedC gom(g_heads.data() + base, n_tokens, dh, Eigen::OuterStride<>(d));
                Strided gqm(gq.data() + base, n_tokens, dh, Eigen::OuterStride<>(d));
                Strided gkm(gk.data() + base, n_tokens, dh, Eigen::OuterStride<>(d));
                Strided gvm(gv.data() + base, n_tokens, dh, Eigen::OuterStride<>(d));
                const S* pr = ctx.probs.data() + ((b * heads + h) * n_tokens) * n_tokens;
                ECMap<S> pm(pr, n_tokens, n_tokens);

                gvm.noalias() += pm.transpose() * gom;
                // dprobs, then softmax backward into dscores
                EMap<S>(dscores.data(), n_tokens, n_tokens).noalias() = gom * vm.transpose();
                for (int64_t i = 0; i < n_tokens; ++i) {
                    S* drow = dscores.data() + i * n_tokens;
                    const S* prow = pr + i * n_tokens;
                    double dot = 0.0;
                    for (int64_t j = 0; j < n_tokens; ++j)
                        dot += static_cast<double>(drow[j]) * static_cast<double>(prow[j]);
                    for (int64_t j = 0; j < n_tokens; ++j)
                        drow[j] = (drow[j] - S(dot)) * prow[j] * scale;
                }
                gqm.noalias() += ECMap<S>(dscores.data(), n_tokens, n_tokens) * km;
                gkm.noalias() += ECMap<S>(dscores.data(), n_tokens, n_tokens).transpose() * qm;
            }
        }

        // gx accumulates from all three projections
        TensorT<S> tmp({rows, d});
        wq.backward(x, gq.data(), gx, rows);
        wk.backward(x, gk.data(), tmp.data(), rows);
        for (int64_t i = 0; i < rows * d; ++i) gx[i] += tmp.data()[i];
        wv.backward(x, gv.data(), tmp.data(), rows);
        for (int64_t i = 0; i < rows * d; ++i) gx[i] += tmp.data()[i];
    }

    ParamSet<S> params() {
        ParamSet<S> out;
        append_params(out, "wq.", wq.params());
        append_params(out, "wk.", wk.params());
        append_params(out, "wv.", wv.params());
        append_params(out, "wo.", wo.params());
        return out;
    }
};

// ----------------------------------------------------------------- MLP ------

template <class S>
struct MlpCtx {
    TensorT<S> h_pre;   // [rows, hidden]
    TensorT<S> h_act;   // [rows, hidden]
};

template <class S>
struct MlpT {
    LinearT<S> fc1, fc2;

    void init(Rng& rng, int64_t d, int64_t hidden, S stddev) {
        fc1.init(rng, d, hidden, stddev);
        fc2.init(rng, hidden, d, stddev);
    }

    void forward(const S* x, S* y, int64_t rows, MlpCtx<S>* ctx) const {
        int64_t hidden = fc1.out_dim();
        TensorT<S> h_pre({rows, hidden});
        fc1.forward(x, h_pre.data(), rows);
        TensorT<S> h_act({rows, hidden});
        for (int64_t i = 0; i < rows * hidden; ++i) h_act.data()[i] = gelu(h_pre.data()[i]);
        fc2.forward(h_act.data(), y, rows);
        if (ctx) {
            ctx->h_pre = std::move(h_pre);
            ctx->h_act = std::move(h_act);
        }
    }

    void backward(const S* x, const MlpCtx<S>& ctx, const S* gy, S* gx, int64_t rows) {
        int64_t hidden = fc1.out_dim();
        TensorT<S> gh({rows, hidden});
        fc2.backward(ctx.h_act.data(), gy, gh.data(), rows);
        for (int64_t i = 0; i < rows * hidden; ++i)
            gh.data()[i] *= gelu_grad(ctx.h_pre.data()[i]);
        fc1.backward(x, gh.data(), gx, rows);
    }

    ParamSet<S> params() {
        ParamSet<S> out;
        append_params(out, "fc1.", fc1.params());
        append_params(out, "fc2.", fc2.params());
        return out;
    }
};

// ------------------------------------------------------ transformer block ---

template <class S>
struct BlockCtx {
    TensorT<S> x_in;          // block input
    LayerNormCtx<S> ln1_ctx;
    TensorT<S> ln1_out;
    AttentionCtx<S> attn_ctx;
    TensorT<S> x_mid;         // after attention residual
    LayerNormCtx<S> ln2_ctx;
    TensorT<S> ln2_out;
    MlpCtx<S> mlp_ctx;
};

// pre-norm: x + Attn(LN1(x)), then + MLP(LN2(.))
template <class S>
struct BlockT {
    LayerNormT<S> ln1, ln2;
    AttentionT<S> attn;
    MlpT<S> mlp;

    void init(Rng& rng, int64_t d, int n_heads, int64_t mlp_hidden, S stddev) {
        ln1.init(d);
        ln2.init(d);
        attn.init(rng, d, n_heads, stddev);
        mlp.init(rng, d, mlp_hidden, stddev);
    }

    void forward(const S* x, S* y, int64_t b_count, int64_t n_tokens,
                 const std::vector<uint8_t>& key_mask, BlockCtx<S>* ctx) const {
        int64_t d = ln1.dim();
        int64_t rows = b_count * n_tokens;
        TensorT<S> ln1_out({rows, d});
        ln1.forward(x, ln1_out.data(), rows, ctx ? &ctx->ln1_ctx : nullptr);
        TensorT<S> attn_out({rows, d});
        attn.forward(ln1_out.data(), attn_out.data(), b_count, n_tokens, key_mask,
                     ctx ? &ctx->attn_ctx : nullptr);
        TensorT<S> x_mid({rows, d});
        for (int64_t i = 0; i < rows * d; ++i) x_mid.data()[i] = x[i] + attn_out.data()[i];

        TensorT<S> ln2_out({rows, d});
        ln2.forward(x_mid.data(), ln2_out.data(), rows, ctx ? &ctx->ln2_ctx : nullptr);
        TensorT<S> mlp_out({rows, d});
        mlp.forward(ln2_out.data(), mlp_out.data(), rows, ctx ? &ctx->mlp_ctx : nullptr);
        for (int64_t i = 0; i < rows * d; ++i) y[i] = x_mid.data()[i] + mlp_out.data()[i];

        if (ctx) {
            ctx->x_in = TensorT<S>({rows, d});
            std::copy(x, x + rows * d, ctx->x_in.data());
            ctx->ln1_out = std::move(ln1_out);
            ctx->x_mid = std::move(x_mid);
            ctx->ln2_out = std::move(ln2_out);
        }
    }

    void backward(BlockCtx<S>& ctx, const S* gy, S* gx, int64_t b_count, int64_t n_tokens) {
        int64_t d = ln1.dim();
        int64_t rows = b_count * n_tokens;

        TensorT<S> g_ln2out({rows, d});
        mlp.backward(ctx.ln2_out.data(), ctx.mlp_ctx, gy, g_ln2out.data(), rows);
        TensorT<S> g_xmid({rows, d});
        ln2.backward(ctx.ln2_ctx, g_ln2out.data(), g_xmid.data(), rows);
        for (int64_t i = 0; i < rows * d; ++i) g_xmid.data()[i] += gy[i];

        TensorT<S> g_ln1out({rows, d});
        attn.backward(ctx.ln1_out.data(), ctx.attn_ctx, g_xmid.data(), g_ln1out.data(),
                      b_count, n_tokens);
        ln1.backward(ctx.ln1_ctx, g_ln1out.data(), gx, rows);
        for (int64_t i = 0; i < rows * d; ++i) gx[i] += g_xmid.data()[i];
    }

    ParamSet<S> params() {
        ParamSet<S> out;
        append_params(out, "ln1.", ln1.params());
        append_params(out, "attn.", attn.params());
        append_params(out, "ln2.", ln2.params());
        append_params(out, "mlp.", mlp.params());
        return out;
    }
};

// ----------------------------------------------------------------- Adam -----

template <class S>
struct AdamT {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step_count = 0;
    std::vector<TensorT<S>> m, v;

    void ensure_state(const ParamSet<S>& params) {
        if (!m.empty()) return;
        for (const auto& p : params) {
            m.push_back(TensorT<S>::zeros(p.value->shape));
            v.push_back(TensorT<S>::zeros(p.value->shape));
        }
    }

    void step(const ParamSet<S>& params, double lr_now) {
        ensure_state(params);
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            TensorT<S>& p = *params[i].value;
            const TensorT<S>& g = *params[i].grad;
            TensorT<S>& mi = m[i];
            TensorT<S>& vi = v[i];
            for (int64_t j = 0; j < p.size(); ++j) {
                double gj = static_cast<double>(g[j]);
                double mj = beta1 * static_cast<double>(mi[j]) + (1.0 - beta1) * gj;
                double vj = beta2 * static_cast<double>(vi[j]) + (1.0 - beta2) * gj * gj;
                mi[j] = S(mj);
                vi[j] = S(vj);
                p[j] = S(static_cast<double>(p[j]) -
                         lr_now * (mj / bc1) / (std::sqrt(vj / bc2) + eps));
            }
        }
    }
};

using Adam = AdamT<float>;

}  // namespace vdsk
