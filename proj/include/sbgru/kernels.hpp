#pragma once

// Dense row-major kernels behind the tensor ops.
//
// Two implementations are kept side by side: `serial` is the plain triple loop
// used as the test reference, `omp` is the cache-friendly OpenMP version used
// by the library. Both accumulate each output element in the same order
// (ascending inner index, starting from zero, then added to the destination),
// so their results are bitwise identical as long as FMA contraction is off.

#include <cstddef>
#include <span>

namespace sbgru::kernels {

/// Shapes of a product C[m×n] = op(A) · op(B) with inner extent k.
struct GemmDims {
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t n = 0;
};

namespace serial {
// C (+)= A·B, A:[m×k], B:[k×n]
void matmul(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
            bool accumulate);
// C (+)= Aᵀ·B, A:[k×m], B:[k×n]
void matmul_tn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
               bool accumulate);
// C (+)= A·Bᵀ, A:[m×k], B:[n×k]
void matmul_nt(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
               bool accumulate);
}  // namespace serial

namespace omp {
void matmul(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
            bool accumulate);
void matmul_tn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
               bool accumulate);
void matmul_nt(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
               bool accumulate);
}  // namespace omp

/// Work (m·n·k multiply-adds) below which the OpenMP kernels stay on one thread.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

}  // namespace sbgru::kernels
