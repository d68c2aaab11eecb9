#pragma once

// Dense row-major kernels behind the tensor ops.
//
// Every kernel exists twice: `serial` is the plain reference loop nest kept
// for testing and benchmarking, `parallel` splits the same loop nest across
// OpenMP threads by output row. Each output element is produced by exactly one
// thread with the same summation order as the serial version, so the two are
// bitwise identical for any thread count.

#include <cstddef>
#include <span>

namespace kaqa::kernels {

struct GemmDims {
  std::size_t m = 0;  // rows of op(A) and C
  std::size_t k = 0;  // inner dimension
  std::size_t n = 0;  // cols of op(B) and C
};

namespace serial {

// C (+)= A·B with A: m×k, B: k×n.
void gemm_nn(GemmDims d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate);
// C (+)= Aᵀ·B with A stored k×m, B: k×n.
void gemm_tn(GemmDims d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate);
// C (+)= A·Bᵀ with A: m×k, B stored n×k.
void gemm_nt(GemmDims d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate);
// Row-wise max-subtracted softmax of a rows×cols block.
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);

}  // namespace serial

namespace parallel {

void gemm_nn(GemmDims d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate);
void gemm_tn(GemmDims d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate);
void gemm_nt(GemmDims d, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate);
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);

}  // namespace parallel

// Work (m·k·n) below which the parallel kernels stay on the calling thread.
inline constexpr std::size_t kParallelGrain = std::size_t{1} << 16;

}  // namespace kaqa::kernels
