#include "scribeid/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace scribeid::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1 << 15;

std::vector<double> transposed(std::span<const double> src, int rows, int cols) {
  std::vector<double> dst(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
  }
  return dst;
}

// C += A * B with A [m x k] row-major (or column-major when a_transposed), B [k x n].
// Each C entry accumulates over p in increasing order, as the reference does;
// blocking only keeps a 4 x 8 tile of C in registers and a slab of B in cache,
// storing the running sums back to C between slabs.
void gemm_rows(bool a_transposed, int m, int n, int k, const double* a, const double* b, double* c) {
  constexpr int kMr = 4, kNr = 8, kKc = 256;
  const long work = static_cast<long>(m) * n * k;
  const int blocks = (m + kMr - 1) / kMr;
  auto at = [&](int i, int p) {
    return a_transposed ? a[static_cast<std::size_t>(p) * m + i] : a[static_cast<std::size_t>(i) * k + p];
  };
  for (int p0 = 0; p0 < k; p0 += kKc) {
    const int p1 = std::min(k, p0 + kKc);
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (int blk = 0; blk < blocks; ++blk) {
      const int i0 = blk * kMr;
      const int rows = std::min(kMr, m - i0);
      int j0 = 0;
      if (rows == kMr) {
        for (; j0 + kNr <= n; j0 += kNr) {
          double acc[kMr][kNr];
          for (int r = 0; r < kMr; ++r)
            for (int q = 0; q < kNr; ++q) acc[r][q] = c[static_cast<std::size_t>(i0 + r) * n + j0 + q];
          for (int p = p0; p < p1; ++p) {
            const double* brow = b + static_cast<std::size_t>(p) * n + j0;
            double av[kMr];
            for (int r = 0; r < kMr; ++r) av[r] = at(i0 + r, p);
            for (int r = 0; r < kMr; ++r)
              for (int q = 0; q < kNr; ++q) acc[r][q] += av[r] * brow[q];
          }
          for (int r = 0; r < kMr; ++r)
            for (int q = 0; q < kNr; ++q) c[static_cast<std::size_t>(i0 + r) * n + j0 + q] = acc[r][q];
        }
      }
      for (int r = 0; r < rows; ++r) {
        double* crow = c + static_cast<std::size_t>(i0 + r) * n;
        for (int p = p0; p < p1; ++p) {
          const double aip = at(i0 + r, p);
          const double* brow = b + static_cast<std::size_t>(p) * n;
          for (int j = j0; j < n; ++j) crow[j] += aip * brow[j];
        }
      }
    }
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm(Op op_a, Op op_b, int m, int n, int k, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(m) * n, 0.0);
  if (op_b == Op::Transpose) {
    const std::vector<double> bt = transposed(b, n, k);
    gemm_rows(op_a == Op::Transpose, m, n, k, a.data(), bt.data(), c.data());
  } else {
    gemm_rows(op_a == Op::Transpose, m, n, k, a.data(), b.data(), c.data());
  }
}

void conv1d_forward(int batch, int c_in, int t_in, int c_out, int s, int pad, std::span<const double> x,
                    std::span<const double> w, std::span<double> out) {
  const int t_out = t_in + 2 * pad - s + 1;
  const long work = static_cast<long>(batch) * c_out * c_in * s * t_out;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelWork)
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < c_out; ++o) {
      double* orow = out.data() + (static_cast<std::size_t>(b) * c_out + o) * t_out;
      std::fill(orow, orow + t_out, 0.0);
      for (int j = 0; j < s; ++j) {
        const int lo = std::max(0, pad - j);
        const int hi = std::min(t_out, t_in + pad - j);
        for (int i = 0; i < c_in; ++i) {
          const double wv = w[(static_cast<std::size_t>(o) * c_in + i) * s + j];
          const double* xrow = x.data() + (static_cast<std::size_t>(b) * c_in + i) * t_in + (j - pad);
          for (int t = lo; t < hi; ++t) orow[t] += wv * xrow[t];
        }
      }
    }
  }
}

void conv1d_backward_input(int batch, int c_in, int t_in, int c_out, int s, int pad, std::span<const double> w,
                           std::span<const double> dout, std::span<double> dx) {
  const int t_out = t_in + 2 * pad - s + 1;
  const long work = static_cast<long>(batch) * c_out * c_in * s * t_out;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelWork)
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < c_in; ++i) {
      double* dxrow = dx.data() + (static_cast<std::size_t>(b) * c_in + i) * t_in;
      for (int o = 0; o < c_out; ++o) {
        const double* drow = dout.data() + (static_cast<std::size_t>(b) * c_out + o) * t_out;
        for (int j = 0; j < s; ++j) {
          const double wv = w[(static_cast<std::size_t>(o) * c_in + i) * s + j];
          const int lo = std::max(0, pad - j);
          const int hi = std::min(t_out, t_in + pad - j);
          double* target = dxrow + (j - pad);
          for (int t = lo; t < hi; ++t) target[t] += wv * drow[t];
        }
      }
    }
  }
}

void conv1d_backward_weight(int batch, int c_in, int t_in, int c_out, int s, int pad, std::span<const double> x,
                            std::span<const double> dout, std::span<double> dw) {
  const int t_out = t_in + 2 * pad - s + 1;
  const long work = static_cast<long>(batch) * c_out * c_in * s * t_out;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int o = 0; o < c_out; ++o) {
    for (int b = 0; b < batch; ++b) {
      const double* drow = dout.data() + (static_cast<std::size_t>(b) * c_out + o) * t_out;
      for (int i = 0; i < c_in; ++i) {
        const double* xrow = x.data() + (static_cast<std::size_t>(b) * c_in + i) * t_in;
        for (int j = 0; j < s; ++j) {
          const int lo = std::max(0, pad - j);
          const int hi = std::min(t_out, t_in + pad - j);
          double acc = 0.0;
          for (int t = lo; t < hi; ++t) acc += drow[t] * xrow[t + j - pad];
          dw[(static_cast<std::size_t>(o) * c_in + i) * s + j] += acc;
        }
      }
    }
  }
}

void im2col(int c, int h, int w, int k, int pad, std::span<const double> img, std::span<double> col, int ld) {
  const int oh = h + 2 * pad - k + 1;
  const int ow = w + 2 * pad - k + 1;
  const int ohw = oh * ow;
  if (ld == 0) ld = ohw;
#pragma omp parallel for schedule(static) if (static_cast<long>(c) * k * k * ohw > kParallelWork)
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col.data() + (static_cast<std::size_t>(ch) * k * k + ky * k + kx) * ld;
        for (int y = 0; y < oh; ++y) {
          const int sy = y + ky - pad;
          for (int x = 0; x < ow; ++x) {
            const int sx = x + kx - pad;
            row[y * ow + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                  ? img[(static_cast<std::size_t>(ch) * h + sy) * w + sx]
                                  : 0.0;
          }
        }
      }
    }
  }
}

void col2im(int c, int h, int w, int k, int pad, std::span<const double> col, std::span<double> img, int ld) {
  const int oh = h + 2 * pad - k + 1;
  const int ow = w + 2 * pad - k + 1;
  const int ohw = oh * ow;
  if (ld == 0) ld = ohw;
#pragma omp parallel for schedule(static) if (static_cast<long>(c) * k * k * ohw > kParallelWork)
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col.data() + (static_cast<std::size_t>(ch) * k * k + ky * k + kx) * ld;
        for (int y = 0; y < oh; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < ow; ++x) {
            const int sx = x + kx - pad;
            if (sx < 0 || sx >= w) continue;
            img[(static_cast<std::size_t>(ch) * h + sy) * w + sx] += row[y * ow + x];
          }
        }
      }
    }
  }
}

}  // namespace scribeid::kernels
