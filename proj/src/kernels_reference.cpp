#include <algorithm>
#include <cstddef>

#include "scribeid/kernels.hpp"

namespace scribeid::kernels::reference {

void gemm(Op op_a, Op op_b, int m, int n, int k, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = op_a == Op::None ? a[static_cast<std::size_t>(i) * k + p] : a[static_cast<std::size_t>(p) * m + i];
        const double bv = op_b == Op::None ? b[static_cast<std::size_t>(p) * n + j] : b[static_cast<std::size_t>(j) * k + p];
        acc += av * bv;
      }
      double& dst = c[static_cast<std::size_t>(i) * n + j];
      dst = accumulate ? dst + acc : acc;
    }
  }
}

void conv1d_forward(int batch, int c_in, int t_in, int c_out, int s, int pad, std::span<const double> x,
                    std::span<const double> w, std::span<double> out) {
  const int t_out = t_in + 2 * pad - s + 1;
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < c_out; ++o) {
      for (int t = 0; t < t_out; ++t) {
        double acc = 0.0;
        for (int j = 0; j < s; ++j) {
          const int src = t + j - pad;
          if (src < 0 || src >= t_in) continue;
          for (int i = 0; i < c_in; ++i) {
            acc += w[(static_cast<std::size_t>(o) * c_in + i) * s + j] * x[(static_cast<std::size_t>(b) * c_in + i) * t_in + src];
          }
        }
        out[(static_cast<std::size_t>(b) * c_out + o) * t_out + t] = acc;
      }
    }
  }
}

void conv1d_backward_input(int batch, int c_in, int t_in, int c_out, int s, int pad, std::span<const double> w,
                           std::span<const double> dout, std::span<double> dx) {
  const int t_out = t_in + 2 * pad - s + 1;
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < c_out; ++o) {
      for (int t = 0; t < t_out; ++t) {
        const double g = dout[(static_cast<std::size_t>(b) * c_out + o) * t_out + t];
        for (int j = 0; j < s; ++j) {
          const int src = t + j - pad;
          if (src < 0 || src >= t_in) continue;
          for (int i = 0; i < c_in; ++i) {
            dx[(static_cast<std::size_t>(b) * c_in + i) * t_in + src] += g * w[(static_cast<std::size_t>(o) * c_in + i) * s + j];
          }
        }
      }
    }
  }
}

void conv1d_backward_weight(int batch, int c_in, int t_in, int c_out, int s, int pad, std::span<const double> x,
                            std::span<const double> dout, std::span<double> dw) {
  const int t_out = t_in + 2 * pad - s + 1;
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < c_out; ++o) {
      for (int t = 0; t < t_out; ++t) {
        const double g = dout[(static_cast<std::size_t>(b) * c_out + o) * t_out + t];
        for (int j = 0; j < s; ++j) {
          const int src = t + j - pad;
          if (src < 0 || src >= t_in) continue;
          for (int i = 0; i < c_in; ++i) {
            dw[(static_cast<std::size_t>(o) * c_in + i) * s + j] += g * x[(static_cast<std::size_t>(b) * c_in + i) * t_in + src];
          }
        }
      }
    }
  }
}

void conv2d_forward(int c_in, int h, int w, int c_out, int k, int pad, std::span<const double> img,
                    std::span<const double> weights, std::span<double> out) {
  const int oh = h + 2 * pad - k + 1;
  const int ow = w + 2 * pad - k + 1;
  for (int o = 0; o < c_out; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int i = 0; i < c_in; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int sy = y + ky - pad;
              const int sx = x + kx - pad;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
              acc += weights[((static_cast<std::size_t>(o) * c_in + i) * k + ky) * k + kx] *
                     img[(static_cast<std::size_t>(i) * h + sy) * w + sx];
            }
          }
        }
        out[(static_cast<std::size_t>(o) * oh + y) * ow + x] = acc;
      }
    }
  }
}

}  // namespace scribeid::kernels::reference
