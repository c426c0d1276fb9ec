#pragma once

#include <cassert>
#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "vdsk/rng.hpp"

namespace vdsk {

// Dense row-major tensor. Rank and shape are dynamic; storage is contiguous.
template <class S>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<S> v;

    TensorT() = default;
    explicit TensorT(std::vector<int64_t> shp)
        : shape(std::move(shp)), v(static_cast<size_t>(count(shape)), S(0)) {}

    static int64_t count(const std::vector<int64_t>& shp) {
        int64_t n = 1;
        for (int64_t d : shp) n *= d;
        return n;
    }

    static TensorT zeros(std::vector<int64_t> shp) { return TensorT(std::move(shp)); }

    static TensorT full(std::vector<int64_t> shp, S value) {
        TensorT t(std::move(shp));
        for (auto& x : t.v) x = value;
        return t;
    }

    static TensorT randn(Rng& rng, std::vector<int64_t> shp, S stddev = S(1)) {
        TensorT t(std::move(shp));
        for (auto& x : t.v) x = static_cast<S>(rng.normal()) * stddev;
        return t;
    }

    int64_t size() const { return static_cast<int64_t>(v.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    S* data() { return v.data(); }
    const S* data() const { return v.data(); }

    S& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    const S& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    // flat index helpers for the common ranks
    int64_t idx2(int64_t a, int64_t b) const { return a * shape[1] + b; }
    int64_t idx3(int64_t a, int64_t b, int64_t c) const {
        return (a * shape[1] + b) * shape[2] + c;
    }
    int64_t idx4(int64_t a, int64_t b, int64_t c, int64_t d) const {
        return ((a * shape[1] + b) * shape[2] + c) * shape[3] + d;
    }

    S& at2(int64_t a, int64_t b) { return v[static_cast<size_t>(idx2(a, b))]; }
    const S& at2(int64_t a, int64_t b) const { return v[static_cast<size_t>(idx2(a, b))]; }
    S& at3(int64_t a, int64_t b, int64_t c) { return v[static_cast<size_t>(idx3(a, b, c))]; }
    const S& at3(int64_t a, int64_t b, int64_t c) const { return v[static_cast<size_t>(idx3(a, b, c))]; }
    S& at4(int64_t a, int64_t b, int64_t c, int64_t d) { return v[static_cast<size_t>(idx4(a, b, c, d))]; }
    const S& at4(int64_t a, int64_t b, int64_t c, int64_t d) const { return v[static_cast<size_t>(idx4(a, b, c, d))]; }

    void fill(S value) {
        for (auto& x : v) x = value;
    }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (const S& x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }
};

using Tensor = TensorT<float>;

template <class S>
TensorT<S> operator+(const TensorT<S>& a, const TensorT<S>& b) {
    assert(a.same_shape(b));
    TensorT<S> out = a;
    for (int64_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

template <class S>
TensorT<S> operator-(const TensorT<S>& a, const TensorT<S>& b) {
    assert(a.same_shape(b));
    TensorT<S> out = a;
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

template <class S>
TensorT<S> operator*(const TensorT<S>& a, S s) {
    TensorT<S> out = a;
    for (auto& x : out.v) x *= s;
    return out;
}

template <class S>
double max_abs_diff(const TensorT<S>& a, const TensorT<S>& b) {
    assert(a.same_shape(b));
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <class S>
double max_abs(const TensorT<S>& a) {
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i])));
    return m;
}

}  // namespace vdsk
