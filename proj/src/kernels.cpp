#include "sbgru/kernels.hpp"

#include <vector>

namespace sbgru::kernels {

namespace serial {

void matmul(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
            bool accumulate) {
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) acc += a[i * d.k + p] * b[p * d.n + j];
      c[i * d.n + j] = accumulate ? c[i * d.n + j] + acc : acc;
    }
  }
}

void matmul_tn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
               bool accumulate) {
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) acc += a[p * d.m + i] * b[p * d.n + j];
      c[i * d.n + j] = accumulate ? c[i * d.n + j] + acc : acc;
    }
  }
}

void matmul_nt(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
               bool accumulate) {
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) acc += a[i * d.k + p] * b[j * d.k + p];
      c[i * d.n + j] = accumulate ? c[i * d.n + j] + acc : acc;
    }
  }
}

}  // namespace serial

namespace omp {

namespace {

inline void finish_row(double* crow, const double* acc, std::size_t n, bool accumulate) {
  if (accumulate) {
    for (std::size_t j = 0; j < n; ++j) crow[j] += acc[j];
  } else {
    for (std::size_t j = 0; j < n; ++j) crow[j] = acc[j];
  }
}

}  // namespace

void matmul(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
            bool accumulate) {
  const std::size_t m = d.m, k = d.k, n = d.n;
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel if (m * n * k > kParallelThreshold && m > 1)
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (std::size_t i = 0; i < m; ++i) {
      double* accp = acc.data();
      for (std::size_t j = 0; j < n; ++j) accp[j] = 0.0;
      const double* arow = ap + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = bp + p * n;
        for (std::size_t j = 0; j < n; ++j) accp[j] += av * brow[j];
      }
      finish_row(cp + i * n, accp, n, accumulate);
    }
  }
}

void matmul_tn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
               bool accumulate) {
  const std::size_t m = d.m, k = d.k, n = d.n;
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel if (m * n * k > kParallelThreshold && m > 1)
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (std::size_t i = 0; i < m; ++i) {
      double* accp = acc.data();
      for (std::size_t j = 0; j < n; ++j) accp[j] = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ap[p * m + i];
        const double* brow = bp + p * n;
        for (std::size_t j = 0; j < n; ++j) accp[j] += av * brow[j];
      }
      finish_row(cp + i * n, accp, n, accumulate);
    }
  }
}

void matmul_nt(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c,
               bool accumulate) {
  const std::size_t m = d.m, k = d.k, n = d.n;
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for collapse(2) schedule(static) if (m * n * k > kParallelThreshold)
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* arow = ap + i * k;
      const double* brow = bp + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      cp[i * n + j] = accumulate ? cp[i * n + j] + acc : acc;
    }
  }
}

}  // namespace omp

}  // namespace sbgru::kernels
