#include "polyseq/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <stdexcept>

namespace polyseq::kernels {

namespace {

std::atomic<int> g_threads{1};

void check_gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
                std::span<double> c) {
  if (a.size() < s.m * s.k || b.size() < s.k * s.n || c.size() < s.m * s.n) {
    throw std::invalid_argument("gemm: buffer smaller than declared shape");
  }
}

inline void gemm_row(const GemmShape& s, const double* a, const double* b, double* c,
                     std::size_t i) {
  double* crow = c + i * s.n;
  if (!s.accumulate) std::fill(crow, crow + s.n, 0.0);
  const bool ta = s.trans_a == Trans::kYes;
  const bool tb = s.trans_b == Trans::kYes;
  if (!tb) {
    for (std::size_t p = 0; p < s.k; ++p) {
      const double av = ta ? a[p * s.m + i] : a[i * s.k + p];
      const double* brow = b + p * s.n;
      for (std::size_t j = 0; j < s.n; ++j) crow[j] += av * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* bcol = b + j * s.k;
      double acc = 0.0;
      if (ta) {
        for (std::size_t p = 0; p < s.k; ++p) acc += a[p * s.m + i] * bcol[p];
      } else {
        const double* arow = a + i * s.k;
        for (std::size_t p = 0; p < s.k; ++p) acc += arow[p] * bcol[p];
      }
      crow[j] += acc;
    }
  }
}

inline void im2col_channel(const double* x, std::size_t c, std::size_t h, std::size_t w,
                           double* cols) {
  const std::size_t hw = h * w;
  for (std::size_t ky = 0; ky < 3; ++ky) {
    for (std::size_t kx = 0; kx < 3; ++kx) {
      double* dst = cols + (c * 9 + ky * 3 + kx) * hw;
      const double* src = x + c * hw;
      for (std::size_t y = 0; y < h; ++y) {
        const long yy = static_cast<long>(y) + static_cast<long>(ky) - 1;
        for (std::size_t xo = 0; xo < w; ++xo) {
          const long xx = static_cast<long>(xo) + static_cast<long>(kx) - 1;
          const bool inside = yy >= 0 && xx >= 0 && yy < static_cast<long>(h) &&
                              xx < static_cast<long>(w);
          dst[y * w + xo] =
              inside ? src[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)] : 0.0;
        }
      }
    }
  }
}

inline void col2im_channel(const double* cols, std::size_t c, std::size_t h, std::size_t w,
                           double* dx) {
  const std::size_t hw = h * w;
  double* dst = dx + c * hw;
  for (std::size_t ky = 0; ky < 3; ++ky) {
    for (std::size_t kx = 0; kx < 3; ++kx) {
      const double* src = cols + (c * 9 + ky * 3 + kx) * hw;
      for (std::size_t y = 0; y < h; ++y) {
        const long yy = static_cast<long>(y) + static_cast<long>(ky) - 1;
        if (yy < 0 || yy >= static_cast<long>(h)) continue;
        for (std::size_t xo = 0; xo < w; ++xo) {
          const long xx = static_cast<long>(xo) + static_cast<long>(kx) - 1;
          if (xx < 0 || xx >= static_cast<long>(w)) continue;
          dst[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)] += src[y * w + xo];
        }
      }
    }
  }
}

}  // namespace

namespace serial {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c) {
  check_gemm(s, a, b, c);
  for (std::size_t i = 0; i < s.m; ++i) gemm_row(s, a.data(), b.data(), c.data(), i);
}

void im2col3x3(std::span<const double> x, std::size_t channels, std::size_t height,
               std::size_t width, std::span<double> cols) {
  for (std::size_t c = 0; c < channels; ++c) im2col_channel(x.data(), c, height, width, cols.data());
}

void col2im3x3(std::span<const double> cols, std::size_t channels, std::size_t height,
               std::size_t width, std::span<double> dx) {
  for (std::size_t c = 0; c < channels; ++c) col2im_channel(cols.data(), c, height, width, dx.data());
}

}  // namespace serial

namespace parallel {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c) {
  check_gemm(s, a, b, c);
  const long m = static_cast<long>(s.m);
#pragma omp parallel for schedule(static) num_threads(g_threads.load())
  for (long i = 0; i < m; ++i) gemm_row(s, a.data(), b.data(), c.data(), static_cast<std::size_t>(i));
}

void im2col3x3(std::span<const double> x, std::size_t channels, std::size_t height,
               std::size_t width, std::span<double> cols) {
  const long nc = static_cast<long>(channels);
#pragma omp parallel for schedule(static) num_threads(g_threads.load())
  for (long c = 0; c < nc; ++c) {
    im2col_channel(x.data(), static_cast<std::size_t>(c), height, width, cols.data());
  }
}

void col2im3x3(std::span<const double> cols, std::size_t channels, std::size_t height,
               std::size_t width, std::span<double> dx) {
  const long nc = static_cast<long>(channels);
#pragma omp parallel for schedule(static) num_threads(g_threads.load())
  for (long c = 0; c < nc; ++c) {
    col2im_channel(cols.data(), static_cast<std::size_t>(c), height, width, dx.data());
  }
}

}  // namespace parallel

void set_num_threads(int threads) { g_threads.store(std::max(1, threads)); }
int num_threads() { return g_threads.load(); }

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c) {
  // Small products are not worth a parallel region.
  if (g_threads.load() > 1 && s.m * s.n * s.k >= 32768) {
    parallel::gemm(s, a, b, c);
  } else {
    serial::gemm(s, a, b, c);
  }
}

void im2col3x3(std::span<const double> x, std::size_t channels, std::size_t height,
               std::size_t width, std::span<double> cols) {
  if (g_threads.load() > 1) {
    parallel::im2col3x3(x, channels, height, width, cols);
  } else {
    serial::im2col3x3(x, channels, height, width, cols);
  }
}

void col2im3x3(std::span<const double> cols, std::size_t channels, std::size_t height,
               std::size_t width, std::span<double> dx) {
  if (g_threads.load() > 1) {
    parallel::col2im3x3(cols, channels, height, width, dx);
  } else {
    serial::col2im3x3(cols, channels, height, width, dx);
  }
}

}  // namespace polyseq::kernels
