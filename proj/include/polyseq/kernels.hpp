#pragma once

// Dense inner loops used by the autodiff engine. Every kernel exists twice: a
// serial reference and an OpenMP version that parallelises over output rows.
// Both accumulate each output element in the same order, so their results
// are bit-identical for any thread count.

#include <cstddef>
#include <span>

namespace polyseq::kernels {

enum class Trans { kNo, kYes };

/// Shape of one GEMM call C[m x n] (+)= op(A)[m x k] * op(B)[k x n].
/// `A` is stored as m x k (or k x m when transposed); likewise for `B`.
struct GemmShape {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  Trans trans_a = Trans::kNo;
  Trans trans_b = Trans::kNo;
  bool accumulate = false;
};

namespace serial {
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c);
void im2col3x3(std::span<const double> x, std::size_t channels, std::size_t height,
               std::size_t width, std::span<double> cols);
void col2im3x3(std::span<const double> cols, std::size_t channels, std::size_t height,
               std::size_t width, std::span<double> dx);
}  // namespace serial

namespace parallel {
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c);
void im2col3x3(std::span<const double> x, std::size_t channels, std::size_t height,
               std::size_t width, std::span<double> cols);
void col2im3x3(std::span<const double> cols, std::size_t channels, std::size_t height,
               std::size_t width, std::span<double> dx);
}  // namespace parallel

/// Worker threads used by the dispatching entry points below. 1 selects the
/// serial reference path.
void set_num_threads(int threads);
int num_threads();

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c);
void im2col3x3(std::span<const double> x, std::size_t channels, std::size_t height,
               std::size_t width, std::span<double> cols);
void col2im3x3(std::span<const double> cols, std::size_t channels, std::size_t height,
               std::size_t width, std::span<double> dx);

}  // namespace polyseq::kernels
