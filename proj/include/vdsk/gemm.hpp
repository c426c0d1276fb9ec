#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace vdsk {

// Thin wrappers mapping raw row-major buffers onto Eigen for the handful of
// GEMM variants the layers need. Single-threaded by construction so results
// are bit-reproducible across runs.

template <class S>
using EMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using ECMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// C = A (m x k) * B (k x n)
template <class S>
void mm(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n) {
    EMap<S>(c, m, n).noalias() = ECMap<S>(a, m, k) * ECMap<S>(b, k, n);
}

// C += A * B
template <class S>
void mm_acc(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n) {
    EMap<S>(c, m, n).noalias() += ECMap<S>(a, m, k) * ECMap<S>(b, k, n);
}

// C = A^T (A is k x m) * B (k x n)
template <class S>
void mm_at_b(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n) {
    EMap<S>(c, m, n).noalias() = ECMap<S>(a, k, m).transpose() * ECMap<S>(b, k, n);
}

template <class S>
void mm_at_b_acc(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n) {
    EMap<S>(c, m, n).noalias() += ECMap<S>(a, k, m).transpose() * ECMap<S>(b, k, n);
}

// C = A (m x k) * B^T (B is n x k)
template <class S>
void mm_a_bt(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n) {
    EMap<S>(c, m, n).noalias() = ECMap<S>(a, m, k) * ECMap<S>(b, n, k).transpose();
}

template <class S>
void mm_a_bt_acc(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n) {
    EMap<S>(c, m, n).noalias() += ECMap<S>(a, m, k) * ECMap<S>(b, n, k).transpose();
}

}  // namespace vdsk
