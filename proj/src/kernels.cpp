#include "kaqa/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace kaqa::kernels {
namespace {

// Row kernels shared by both flavours so their arithmetic is identical.

inline void gemm_nn_row(GemmDims d, std::size_t i, const double* a, const double* b,
                        double* c, bool accumulate) {
  double* crow = c + i * d.n;
  if (!accumulate) std::fill(crow, crow + d.n, 0.0);
  const double* arow = a + i * d.k;
  for (std::size_t p = 0; p < d.k; ++p) {
    const double av = arow[p];
    const double* brow = b + p * d.n;
    for (std::size_t j = 0; j < d.n; ++j) crow[j] += av * brow[j];
  }
}

inline void gemm_tn_row(GemmDims d, std::size_t i, const double* a, const double* b,
                        double* c, bool accumulate) {
  double* crow = c + i * d.n;
  if (!accumulate) std::fill(crow, crow + d.n, 0.0);
  for (std::size_t p = 0; p < d.k; ++p) {
    const double av = a[p * d.m + i];
    const double* brow = b + p * d.n;
    for (std::size_t j = 0; j < d.n; ++j) crow[j] += av * brow[j];
  }
}

inline double dot4(const double* x, const double* y, std::size_t len) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t p = 0;
  for (; p + 4 <= len; p += 4) {
    s0 += x[p] * y[p];
    s1 += x[p + 1] * y[p + 1];
    s2 += x[p + 2] * y[p + 2];
    s3 += x[p + 3] * y[p + 3];
  }
  for (; p < len; ++p) s0 += x[p] * y[p];
  return (s0 + s1) + (s2 + s3);
}

inline void gemm_nt_row(GemmDims d, std::size_t i, const double* a, const double* b,
                        double* c, bool accumulate) {
  double* crow = c + i * d.n;
  const double* arow = a + i * d.k;
  for (std::size_t j = 0; j < d.n; ++j) {
    const double v = dot4(arow, b + j * d.k, d.k);
    crow[j] = accumulate ? crow[j] + v : v;
  }
}

inline void softmax_row(std::size_t cols, const double* x, double* y) {
  if (cols == 0) return;
  const double mx = *std::max_element(x, x + cols);
  double total = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    total += y[j];
  }
  const double inv = 1.0 / total;
  for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline bool worth_threading(GemmDims d) { return d.m > 1 && d.m * d.k * d.n >= kParallelGrain; }

}  // namespace

namespace serial {

void gemm_nn(GemmDims d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < d.m; ++i) gemm_nn_row(d, i, a.data(), b.data(), c.data(), accumulate);
}

void gemm_tn(GemmDims d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < d.m; ++i) gemm_tn_row(d, i, a.data(), b.data(), c.data(), accumulate);
}

void gemm_nt(GemmDims d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < d.m; ++i) gemm_nt_row(d, i, a.data(), b.data(), c.data(), accumulate);
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(cols, x.data() + r * cols, y.data() + r * cols);
}

}  // namespace serial

namespace parallel {

void gemm_nn(GemmDims d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(d.m);
#pragma omp parallel for schedule(static) if (worth_threading(d))
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    gemm_nn_row(d, static_cast<std::size_t>(i), a.data(), b.data(), c.data(), accumulate);
  }
}

void gemm_tn(GemmDims d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(d.m);
#pragma omp parallel for schedule(static) if (worth_threading(d))
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    gemm_tn_row(d, static_cast<std::size_t>(i), a.data(), b.data(), c.data(), accumulate);
  }
}

void gemm_nt(GemmDims d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(d.m);
#pragma omp parallel for schedule(static) if (worth_threading(d))
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    gemm_nt_row(d, static_cast<std::size_t>(i), a.data(), b.data(), c.data(), accumulate);
  }
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelGrain)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const auto off = static_cast<std::size_t>(r) * cols;
    softmax_row(cols, x.data() + off, y.data() + off);
  }
}

}  // namespace parallel
}  // namespace kaqa::kernels
