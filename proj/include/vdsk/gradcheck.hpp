#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vdsk/nn.hpp"

namespace vdsk {

struct FdOptions {
    double h_rel = 1e-6;          // step relative to the parameter scale
    double h_floor = 1e-7;        // minimum step
    int64_t max_coords = 64;      // per-tensor coordinate sample cap
    uint64_t seed = 17;
    double denom_floor = 1e-8;
};

inline FdOptions fd_options_for(bool single_precision) {
    FdOptions o;
    if (single_precision) {
        o.h_rel = 2e-2;
        o.h_floor = 2e-3;
    } else {
        o.h_rel = 1e-5;
        o.h_floor = 1e-7;
    }
    return o;
}

struct FdResult {
    double max_rel = 0.0;
    double max_abs = 0.0;
};

// Central finite differences over a deterministic coordinate sample of every
// parameter tensor. loss_fn must be a pure function of the current parameter
// values; grad_fn fills the analytic gradients for the same loss.
template <class S>
FdResult fd_check_params(const ParamSet<S>& params, const std::function<double()>& loss_fn,
                         const std::function<void()>& grad_fn, const FdOptions& opt = {}) {
    grad_fn();

    // snapshot analytic grads; loss_fn re-evaluations must not disturb them
    std::vector<TensorT<S>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(*p.grad);

    double scale = 0.0;
    std::vector<std::vector<int64_t>> coords(params.size());
    Rng rng(opt.seed);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        int64_t n = params[pi].value->size();
        std::vector<int64_t>& cs = coords[pi];
        if (n <= opt.max_coords) {
            for (int64_t i = 0; i < n; ++i) cs.push_back(i);
        } else {
            for (int64_t i = 0; i < opt.max_coords; ++i)
                cs.push_back(rng.uniform_int(0, n - 1));
        }
        for (int64_t c : cs)
            scale = std::max(scale, std::abs(static_cast<double>(analytic[pi][c])));
    }

    FdResult res;
    std::vector<double> fd_scale_candidates;
    struct Entry {
        double a, f;
    };
    std::vector<Entry> entries;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        TensorT<S>& value = *params[pi].value;
        for (int64_t c : coords[pi]) {
            S saved = value[c];
            double h = std::max(opt.h_floor, opt.h_rel * std::abs(static_cast<double>(saved)));
            value[c] = S(static_cast<double>(saved) + h);
            double lp = loss_fn();
            value[c] = S(static_cast<double>(saved) - h);
            double lm = loss_fn();
            value[c] = saved;
            // use the actually applied step (float rounding shrinks tiny h)
            double h_eff = 0.5 * (static_cast<double>(S(static_cast<double>(saved) + h)) -
                                  static_cast<double>(S(static_cast<double>(saved) - h)));
            double fd = (lp - lm) / (2.0 * h_eff);
            entries.push_back({static_cast<double>(analytic[pi][c]), fd});
            scale = std::max(scale, std::abs(fd));
        }
    }

    double denom = std::max(scale, opt.denom_floor);
    for (const Entry& e : entries) {
        double diff = std::abs(e.a - e.f);
        res.max_abs = std::max(res.max_abs, diff);
        res.max_rel = std::max(res.max_rel, diff / denom);
    }
    return res;
}

}  // namespace vdsk
