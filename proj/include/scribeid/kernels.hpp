#pragma once

// Dense numeric kernels behind the autodiff primitives.
//
// Two implementations share one interface: `kernels::` is the OpenMP-parallel
// version used by the engine, `kernels::reference::` is a plain serial version
// kept for tests and benchmarks. Parallel loops split work over independent
// output rows, so per-element summation order (and therefore every result bit)
// is the same for any thread count.

#include <span>

namespace scribeid::kernels {

enum class Op { None, Transpose };

// C[m x n] (+)= op(A)[m x k] * op(B)[k x n].
// A is stored [m x k] (or [k x m] when transposed); B is [k x n] (or [n x k]).
void gemm(Op op_a, Op op_b, int m, int n, int k, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate);

// x: [batch, c_in, t_in], w: [c_out, c_in, s], out: [batch, c_out, t_in + 2*pad - s + 1].
// out[b, o, t] = sum_{j<s} sum_{i<c_in} w[o, i, j] * x[b, i, t + j - pad], with zero padding,
// accumulated in exactly that order starting from 0.
void conv1d_forward(int batch, int c_in, int t_in, int c_out, int s, int pad, std::span<const double> x,
                    std::span<const double> w, std::span<double> out);
// Accumulates into dx / dw.
void conv1d_backward_input(int batch, int c_in, int t_in, int c_out, int s, int pad, std::span<const double> w,
                           std::span<const double> dout, std::span<double> dx);
void conv1d_backward_weight(int batch, int c_in, int t_in, int c_out, int s, int pad, std::span<const double> x,
                            std::span<const double> dout, std::span<double> dw);

// Square-kernel, stride-1 image columns: col is [c * k * k, oh * ow] with
// oh = h + 2*pad - k + 1 (likewise ow), rows `ld` apart (0 means oh * ow).
void im2col(int c, int h, int w, int k, int pad, std::span<const double> img, std::span<double> col, int ld = 0);
// Adjoint of im2col; accumulates into img.
void col2im(int c, int h, int w, int k, int pad, std::span<const double> col, std::span<double> img, int ld = 0);

namespace reference {

void gemm(Op op_a, Op op_b, int m, int n, int k, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate);
void conv1d_forward(int batch, int c_in, int t_in, int c_out, int s, int pad, std::span<const double> x,
                    std::span<const double> w, std::span<double> out);
void conv1d_backward_input(int batch, int c_in, int t_in, int c_out, int s, int pad, std::span<const double> w,
                           std::span<const double> dout, std::span<double> dx);
void conv1d_backward_weight(int batch, int c_in, int t_in, int c_out, int s, int pad, std::span<const double> x,
                            std::span<const double> dout, std::span<double> dw);
// Direct convolution of one image: img [c_in, h, w], w [c_out, c_in, k, k], out [c_out, oh, ow].
void conv2d_forward(int c_in, int h, int w, int c_out, int k, int pad, std::span<const double> img,
                    std::span<const double> weights, std::span<double> out);

}  // namespace reference

// Number of OpenMP threads the kernels will use (1 without OpenMP).
int max_threads();

}  // namespace scribeid::kernels
