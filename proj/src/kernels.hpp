#pragma once

// Dense kernels shared by the autograd ops and the fused attention primitive.
// All matrices are row-major; every kernel accumulates into its output.

#include <Eigen/Core>
#include <cstddef>

namespace mit::kernels {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;
// Column block of a wider row-major matrix (e.g. one attention head).
using ConstStrided = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using MutStrided = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

// c[n×m] += a[n×k] · b[k×m]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k), M = static_cast<Eigen::Index>(m);
  MutMap(c, N, M).noalias() += ConstMap(a, N, K) * ConstMap(b, K, M);
}

// c[n×m] += a[n×k] · b[m×k]ᵀ
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k), M = static_cast<Eigen::Index>(m);
  MutMap(c, N, M).noalias() += ConstMap(a, N, K) * ConstMap(b, M, K).transpose();
}

// c[k×m] += a[n×k]ᵀ · b[n×m]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k), M = static_cast<Eigen::Index>(m);
  MutMap(c, K, M).noalias() += ConstMap(a, N, K).transpose() * ConstMap(b, N, M);
}

}  // namespace mit::kernels
