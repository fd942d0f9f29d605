#include "scribeid/ops.hpp"
#include "scribeid/vmath.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "scribeid/errors.hpp"
#include "scribeid/kernels.hpp"

namespace scribeid::ops {
namespace {

using kernels::Op;

Tape& tape_of(Var a) {
  if (!a.valid()) throw UsageError("operation on an empty Var");
  return *a.tape;
}

void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw UsageError("operands live on different tapes");
}

bool needs(Tape& t, Var v) { return v.valid() && t.requires_grad(v); }

double stable_sigmoid(double x) { return vmath::sigmoid(x); }

int normalize_axis(int axis, int rank, const char* what) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError(std::string(what) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return a;
}

// Maps each flat input index to the flat index of the reduced output.
struct Reduction {
  Shape out_shape;
  std::vector<int> target;
  std::size_t group = 1;  // inputs per output element
};

std::shared_ptr<const Reduction> make_reduction(const Shape& shape, std::vector<int> axes, const char* what) {
  const int rank = static_cast<int>(shape.size());
  std::vector<bool> reduced(rank, false);
  for (int& a : axes) {
    a = normalize_axis(a, rank, what);
    reduced[a] = true;
  }
  auto r = std::make_shared<Reduction>();
  for (int i = 0; i < rank; ++i) {
    if (reduced[i]) {
      r->group *= shape[i];
    } else {
      r->out_shape.push_back(shape[i]);
    }
  }
  if (r->out_shape.empty()) r->out_shape.push_back(1);
  const std::size_t n = shape_size(shape);
  r->target.resize(n);
  std::vector<int> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t out = 0;
    for (int i = 0; i < rank; ++i) {
      if (!reduced[i]) out = out * shape[i] + idx[i];
    }
    r->target[flat] = static_cast<int>(out);
    for (int i = rank - 1; i >= 0; --i) {
      if (++idx[i] < shape[i]) break;
      idx[i] = 0;
    }
  }
  return r;
}

template <typename F, typename D>
Var unary(const char* name, Var a, F&& f, D dfdx) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return t.record(name, std::move(y), {a},
                  [a, dfdx](Tape& tp, const Tensor& out, const Tensor& g) {
                    const Tensor& x = tp.value(a);
                    Tensor& gx = tp.grad(a);
                    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * dfdx(x[i], out[i]);
                  });
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Reductions with eight interleaved partial sums combined in a fixed order:
// deterministic, and independent chains let the loop vectorize.
constexpr int kLanes = 8;

double combine(const double (&acc)[kLanes]) {
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

double lane_sum(const double* x, std::size_t n) {
  double acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int l = 0; l < kLanes; ++l) acc[l] += x[i + l];
  for (; i < n; ++i) acc[i % kLanes] += x[i];
  return combine(acc);
}

double lane_dot(const double* x, const double* y, std::size_t n) {
  double acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int l = 0; l < kLanes; ++l) acc[l] += x[i + l] * y[i + l];
  for (; i < n; ++i) acc[i % kLanes] += x[i] * y[i];
  return combine(acc);
}

double lane_sq_dev(const double* x, std::size_t n, double mu) {
  double acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int l = 0; l < kLanes; ++l) acc[l] += (x[i + l] - mu) * (x[i + l] - mu);
  for (; i < n; ++i) acc[i % kLanes] += (x[i] - mu) * (x[i] - mu);
  return combine(acc);
}

}  // namespace

Var add(Var a, Var b) {
  same_tape(a, b);
  expect_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape_of(a).record("add", std::move(y), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (needs(t, a)) accumulate(t.grad(a), g);
    if (needs(t, b)) accumulate(t.grad(b), g);
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  expect_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return tape_of(a).record("sub", std::move(y), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (needs(t, a)) accumulate(t.grad(a), g);
    if (needs(t, b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  expect_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return tape_of(a).record("mul", std::move(y), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (needs(t, a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (needs(t, b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double k) {
  Tensor y = a.value();
  for (double& v : y.storage()) v *= k;
  return tape_of(a).record("scale", std::move(y), {a}, [a, k](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += k * g[i];
  });
}

Var add_constant(Var a, double k) {
  Tensor y = a.value();
  for (double& v : y.storage()) v += k;
  return tape_of(a).record("add_constant", std::move(y), {a},
                           [a](Tape& t, const Tensor&, const Tensor& g) { accumulate(t.grad(a), g); });
}

Var mul_scalar(Var a, Var s) {
  same_tape(a, s);
  if (s.value().size() != 1) throw DimensionError("mul_scalar: scale must have one element");
  const double k = s.value()[0];
  Tensor y = a.value();
  for (double& v : y.storage()) v *= k;
  return tape_of(a).record("mul_scalar", std::move(y), {a, s}, [a, s](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& av = t.value(a);
    const double k = t.value(s)[0];
    if (needs(t, a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += k * g[i];
    }
    if (needs(t, s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) acc += g[i] * av[i];
      t.grad(s)[0] += acc;
    }
  });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return vmath::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return tape_of(a).record("sum", Tensor::scalar(acc), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (double& v : ga.storage()) v += g[0];
  });
}

Var mean(Var a, std::vector<int> axes) {
  const Tensor& x = a.value();
  auto r = make_reduction(x.shape(), std::move(axes), "mean");
  Tensor y(r->out_shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[r->target[i]] += x[i];
  const double inv = 1.0 / static_cast<double>(r->group);
  for (double& v : y.storage()) v *= inv;
  return tape_of(a).record("mean", std::move(y), {a}, [a, r, inv](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[r->target[i]] * inv;
  });
}

Var variance(Var a, std::vector<int> axes) {
  const Tensor& x = a.value();
  auto r = make_reduction(x.shape(), std::move(axes), "variance");
  const double inv = 1.0 / static_cast<double>(r->group);
  auto mu = std::make_shared<Tensor>(r->out_shape);
  for (std::size_t i = 0; i < x.size(); ++i) (*mu)[r->target[i]] += x[i];
  for (double& v : mu->storage()) v *= inv;
  Tensor y(r->out_shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - (*mu)[r->target[i]];
    y[r->target[i]] += d * d;
  }
  for (double& v : y.storage()) v *= inv;
  return tape_of(a).record("variance", std::move(y), {a}, [a, r, mu, inv](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const int o = r->target[i];
      ga[i] += g[o] * 2.0 * inv * (x[i] - (*mu)[o]);
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return tape_of(a).record("reshape", std::move(y), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    accumulate(t.grad(a), g);
  });
}

Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw UsageError("concat of zero tensors");
  Tape& t = tape_of(xs[0]);
  const Shape& first = xs[0].shape();
  const int rank = static_cast<int>(first.size());
  const int ax = normalize_axis(axis, rank, "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const Var& v : xs) {
    same_tape(xs[0], v);
    const Shape& s = v.shape();
    if (static_cast<int>(s.size()) != rank) throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != ax && s[i] != first[i]) {
        throw DimensionError("concat: extent mismatch on axis " + std::to_string(i));
      }
    }
    out_shape[ax] += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= first[i];
  for (int i = ax + 1; i < rank; ++i) inner *= first[i];
  Tensor y(out_shape);
  const std::size_t out_stride = static_cast<std::size_t>(out_shape[ax]) * inner;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& v : xs) {
    offsets.push_back(off);
    const std::size_t chunk = static_cast<std::size_t>(v.shape()[ax]) * inner;
    const Tensor& src = v.value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.data().begin() + o * chunk, chunk, y.data().begin() + o * out_stride + off);
    }
    off += chunk;
  }
  return t.record("concat", std::move(y), xs,
                  [xs, offsets, outer, inner, ax, out_stride](Tape& tp, const Tensor&, const Tensor& g) {
                    for (std::size_t k = 0; k < xs.size(); ++k) {
                      if (!needs(tp, xs[k])) continue;
                      Tensor& gx = tp.grad(xs[k]);
                      const std::size_t chunk = static_cast<std::size_t>(gx.shape()[ax]) * inner;
                      for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t i = 0; i < chunk; ++i) gx[o * chunk + i] += g[o * out_stride + offsets[k] + i];
                      }
                    }
                  });
}

Var slice(Var a, int axis, int start, int length) {
  const Shape& s = a.shape();
  const int rank = static_cast<int>(s.size());
  const int ax = normalize_axis(axis, rank, "slice");
  if (start < 0 || length <= 0 || start + length > s[ax]) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside axis " + std::to_string(ax) + " of extent " + std::to_string(s[ax]));
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[i];
  for (int i = ax + 1; i < rank; ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[ax] = length;
  Tensor y(out_shape);
  const std::size_t in_stride = static_cast<std::size_t>(s[ax]) * inner;
  const std::size_t chunk = static_cast<std::size_t>(length) * inner;
  const std::size_t off = static_cast<std::size_t>(start) * inner;
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().begin() + o * in_stride + off, chunk, y.data().begin() + o * chunk);
  }
  return tape_of(a).record("slice", std::move(y), {a},
                           [a, outer, in_stride, chunk, off](Tape& t, const Tensor&, const Tensor& g) {
                             Tensor& ga = t.grad(a);
                             for (std::size_t o = 0; o < outer; ++o) {
                               for (std::size_t i = 0; i < chunk; ++i) ga[o * in_stride + off + i] += g[o * chunk + i];
                             }
                           });
}

Var matmul(Var a, Var b, bool transpose_b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  expect_rank(av, 2, "matmul lhs");
  expect_rank(bv, 2, "matmul rhs");
  const int m = av.dim(0), k = av.dim(1);
  const int n = transpose_b ? bv.dim(0) : bv.dim(1);
  expect_dim(bv, transpose_b ? 1 : 0, k, "matmul rhs");
  Tensor y({m, n});
  kernels::gemm(Op::None, transpose_b ? Op::Transpose : Op::None, m, n, k, av.data(), bv.data(), y.data(), false);
  return tape_of(a).record("matmul", std::move(y), {a, b},
                           [a, b, m, n, k, transpose_b](Tape& t, const Tensor&, const Tensor& g) {
                             if (needs(t, a)) {
                               // dA = G * op(B)^T
                               kernels::gemm(Op::None, transpose_b ? Op::None : Op::Transpose, m, k, n, g.data(),
                                             t.value(b).data(), t.grad(a).data(), true);
                             }
                             if (needs(t, b)) {
                               if (transpose_b) {
                                 kernels::gemm(Op::Transpose, Op::None, n, k, m, g.data(), t.value(a).data(),
                                               t.grad(b).data(), true);
                               } else {
                                 kernels::gemm(Op::Transpose, Op::None, k, n, m, t.value(a).data(), g.data(),
                                               t.grad(b).data(), true);
                               }
                             }
                           });
}

Var dense(Var x, Var w, Var bias) {
  same_tape(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  expect_rank(xv, 2, "dense input");
  expect_rank(wv, 2, "dense weight");
  const int batch = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
  expect_dim(wv, 1, in, "dense weight");
  Tensor y({batch, out});
  kernels::gemm(Op::None, Op::Transpose, batch, out, in, xv.data(), wv.data(), y.data(), false);
  std::vector<Var> inputs{x, w};
  if (bias.valid()) {
    same_tape(x, bias);
    expect_rank(bias.value(), 1, "dense bias");
    expect_dim(bias.value(), 0, out, "dense bias");
    const Tensor& bv = bias.value();
    for (int r = 0; r < batch; ++r) {
      for (int c = 0; c < out; ++c) y[static_cast<std::size_t>(r) * out + c] += bv[c];
    }
    inputs.push_back(bias);
  }
  return tape_of(x).record("dense", std::move(y), inputs,
                           [x, w, bias, batch, in, out](Tape& t, const Tensor&, const Tensor& g) {
                             if (needs(t, x)) {
                               kernels::gemm(Op::None, Op::None, batch, in, out, g.data(), t.value(w).data(),
                                             t.grad(x).data(), true);
                             }
                             if (needs(t, w)) {
                               kernels::gemm(Op::Transpose, Op::None, out, in, batch, g.data(), t.value(x).data(),
                                             t.grad(w).data(), true);
                             }
                             if (needs(t, bias)) {
                               Tensor& gb = t.grad(bias);
                               for (int r = 0; r < batch; ++r) {
                                 for (int c = 0; c < out; ++c) gb[c] += g[static_cast<std::size_t>(r) * out + c];
                               }
                             }
                           });
}

Var conv1d(Var x, Var w, int padding) {
  same_tape(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 2 && xv.rank() != 3) {
    throw DimensionError("conv1d: input must be [C_in, T] or [B, C_in, T], got " + shape_string(xv.shape()));
  }
  expect_rank(wv, 3, "conv1d weights");
  const bool batched = xv.rank() == 3;
  const int batch = batched ? xv.dim(0) : 1;
  const int c_in = xv.dim(-2), t_in = xv.dim(-1);
  const int c_out = wv.dim(0), s = wv.dim(2);
  if (wv.dim(1) != c_in) {
    throw DimensionError("conv1d: weights axis 1 (input channels) is " + std::to_string(wv.dim(1)) +
                         " but input axis " + std::to_string(batched ? 1 : 0) + " is " + std::to_string(c_in));
  }
  if (padding < 0 || s > t_in + 2 * padding) {
    throw DimensionError("conv1d: kernel size " + std::to_string(s) + " exceeds padded time axis of " +
                         std::to_string(t_in + 2 * padding));
  }
  const int t_out = t_in + 2 * padding - s + 1;
  Tensor y(batched ? Shape{batch, c_out, t_out} : Shape{c_out, t_out});
  kernels::conv1d_forward(batch, c_in, t_in, c_out, s, padding, xv.data(), wv.data(), y.data());
  return tape_of(x).record("conv1d", std::move(y), {x, w},
                           [x, w, batch, c_in, t_in, c_out, s, padding](Tape& t, const Tensor&, const Tensor& g) {
                             if (needs(t, x)) {
                               kernels::conv1d_backward_input(batch, c_in, t_in, c_out, s, padding, t.value(w).data(),
                                                              g.data(), t.grad(x).data());
                             }
                             if (needs(t, w)) {
                               kernels::conv1d_backward_weight(batch, c_in, t_in, c_out, s, padding,
                                                               t.value(x).data(), g.data(), t.grad(w).data());
                             }
                           });
}

Var add_channel_bias(Var x, Var b) {
  same_tape(x, b);
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw DimensionError("add_channel_bias: input needs a channel axis 1");
  expect_rank(b.value(), 1, "add_channel_bias bias");
  const int c = xv.dim(1);
  expect_dim(b.value(), 0, c, "add_channel_bias bias");
  const int outer = xv.dim(0);
  const std::size_t inner = xv.size() / (static_cast<std::size_t>(outer) * c);
  Tensor y = xv;
  const Tensor& bv = b.value();
  for (int o = 0; o < outer; ++o) {
    for (int ch = 0; ch < c; ++ch) {
      double* row = y.data().data() + (static_cast<std::size_t>(o) * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) row[i] += bv[ch];
    }
  }
  return tape_of(x).record("add_channel_bias", std::move(y), {x, b},
                           [x, b, outer, c, inner](Tape& t, const Tensor&, const Tensor& g) {
                             if (needs(t, x)) accumulate(t.grad(x), g);
                             if (needs(t, b)) {
                               Tensor& gb = t.grad(b);
                               for (int o = 0; o < outer; ++o) {
                                 for (int ch = 0; ch < c; ++ch) {
                                   const double* row = g.data().data() + (static_cast<std::size_t>(o) * c + ch) * inner;
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < inner; ++i) acc += row[i];
                                   gb[ch] += acc;
                                 }
                               }
                             }
                           });
}

Var conv2d(Var x, Var w, int padding) {
  same_tape(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  expect_rank(xv, 4, "conv2d input");
  expect_rank(wv, 4, "conv2d weights");
  const int batch = xv.dim(0), c_in = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int c_out = wv.dim(0), k = wv.dim(2);
  expect_dim(wv, 1, c_in, "conv2d weights");
  expect_dim(wv, 3, k, "conv2d weights");
  const int oh = h + 2 * padding - k + 1, ow = wd + 2 * padding - k + 1;
  if (oh <= 0 || ow <= 0) throw DimensionError("conv2d: kernel larger than padded image");
  const int ohw = oh * ow;
  const int ckk = c_in * k * k;
  // Images are lowered in groups so that each product has a wide right-hand
  // side; the reduction order per output entry is unchanged.
  const int group = std::clamp(512 / ohw, 1, batch);
  Tensor y({batch, c_out, oh, ow});
  const std::size_t in_img = static_cast<std::size_t>(c_in) * h * wd;
  const std::size_t out_img = static_cast<std::size_t>(c_out) * ohw;
  {
    std::vector<double> col(static_cast<std::size_t>(ckk) * group * ohw);
    std::vector<double> out(static_cast<std::size_t>(c_out) * group * ohw);
    for (int b0 = 0; b0 < batch; b0 += group) {
      const int n = std::min(group, batch - b0);
      const int ld = n * ohw;
      for (int g = 0; g < n; ++g) {
        kernels::im2col(c_in, h, wd, k, padding, xv.data().subspan((b0 + g) * in_img, in_img),
                        std::span<double>(col).subspan(static_cast<std::size_t>(g) * ohw), ld);
      }
      kernels::gemm(Op::None, Op::None, c_out, ld, ckk, wv.data(), col, out, false);
      for (int g = 0; g < n; ++g)
        for (int o = 0; o < c_out; ++o)
          std::copy_n(out.data() + static_cast<std::size_t>(o) * ld + g * ohw, ohw,
                      y.data().data() + (b0 + g) * out_img + static_cast<std::size_t>(o) * ohw);
    }
  }
  return tape_of(x).record(
      "conv2d", std::move(y), {x, w},
      [x, w, batch, c_in, h, wd, c_out, k, padding, ohw, ckk, in_img, out_img, group](Tape& t, const Tensor&,
                                                                                     const Tensor& g) {
        std::vector<double> col(static_cast<std::size_t>(ckk) * group * ohw);
        std::vector<double> gout(static_cast<std::size_t>(c_out) * group * ohw);
        const bool gx = needs(t, x), gw = needs(t, w);
        for (int b0 = 0; b0 < batch; b0 += group) {
          const int n = std::min(group, batch - b0);
          const int ld = n * ohw;
          for (int i = 0; i < n; ++i)
            for (int o = 0; o < c_out; ++o)
              std::copy_n(g.data().data() + (b0 + i) * out_img + static_cast<std::size_t>(o) * ohw, ohw,
                          gout.data() + static_cast<std::size_t>(o) * ld + i * ohw);
          const std::span<const double> gspan(gout.data(), static_cast<std::size_t>(c_out) * ld);
          if (gw) {
            for (int i = 0; i < n; ++i) {
              kernels::im2col(c_in, h, wd, k, padding, t.value(x).data().subspan((b0 + i) * in_img, in_img),
                              std::span<double>(col).subspan(static_cast<std::size_t>(i) * ohw), ld);
            }
            kernels::gemm(Op::None, Op::Transpose, c_out, ckk, ld, gspan,
                          std::span<const double>(col.data(), static_cast<std::size_t>(ckk) * ld), t.grad(w).data(), true);
          }
          if (gx) {
            kernels::gemm(Op::Transpose, Op::None, ckk, ld, c_out, t.value(w).data(), gspan,
                          std::span<double>(col.data(), static_cast<std::size_t>(ckk) * ld), false);
            for (int i = 0; i < n; ++i) {
              kernels::col2im(c_in, h, wd, k, padding, std::span<const double>(col).subspan(static_cast<std::size_t>(i) * ohw),
                              t.grad(x).data().subspan((b0 + i) * in_img, in_img), ld);
            }
          }
        }
      });
}

Var maxpool2d(Var x, int k) {
  const Tensor& xv = x.value();
  expect_rank(xv, 4, "maxpool2d input");
  const int batch = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int oh = h / k, ow = w / k;
  if (oh == 0 || ow == 0) throw DimensionError("maxpool2d: window larger than image");
  Tensor y({batch, c, oh, ow});
  auto arg = std::make_shared<std::vector<std::size_t>>(y.size());
  for (int bc = 0; bc < batch * c; ++bc) {
    const std::size_t in_base = static_cast<std::size_t>(bc) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        std::size_t best = in_base + static_cast<std::size_t>(oy * k) * w + ox * k;
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) {
            const std::size_t idx = in_base + static_cast<std::size_t>(oy * k + dy) * w + ox * k + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(bc) * oh + oy) * ow + ox;
        y[o] = xv[best];
        (*arg)[o] = best;
      }
    }
  }
  return tape_of(x).record("maxpool2d", std::move(y), {x}, [x, arg](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t o = 0; o < arg->size(); ++o) gx[(*arg)[o]] += g[o];
  });
}

Var global_avg_pool(Var x) {
  const Tensor& xv = x.value();
  expect_rank(xv, 4, "global_avg_pool input");
  const int batch = xv.dim(0), c = xv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor y({batch, c});
  for (int bc = 0; bc < batch * c; ++bc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += xv[bc * hw + i];
    y[bc] = acc / static_cast<double>(hw);
  }
  return tape_of(x).record("global_avg_pool", std::move(y), {x}, [x, hw](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& gx = t.grad(x);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i / hw] * inv;
  });
}

Var channel_normalize(Var x, double eps, Tensor* batch_mean, Tensor* batch_var) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw DimensionError("channel_normalize: input needs a channel axis 1");
  const int outer = xv.dim(0), c = xv.dim(1);
  const std::size_t inner = xv.size() / (static_cast<std::size_t>(outer) * c);
  const std::size_t count = static_cast<std::size_t>(outer) * inner;
  if (count < 2) {
    throw StatisticsError("channel_normalize: need at least 2 values per channel, got " + std::to_string(count));
  }
  Tensor mu({c}), var({c});
  for (int o = 0; o < outer; ++o) {
    for (int ch = 0; ch < c; ++ch) {
      const double* row = xv.data().data() + (static_cast<std::size_t>(o) * c + ch) * inner;
      mu[ch] += lane_sum(row, inner);
    }
  }
  for (double& v : mu.storage()) v /= static_cast<double>(count);
  for (int o = 0; o < outer; ++o) {
    for (int ch = 0; ch < c; ++ch) {
      const double* row = xv.data().data() + (static_cast<std::size_t>(o) * c + ch) * inner;
      var[ch] += lane_sq_dev(row, inner, mu[ch]);
    }
  }
  for (double& v : var.storage()) v /= static_cast<double>(count);
  auto inv_std = std::make_shared<std::vector<double>>(c);
  for (int ch = 0; ch < c; ++ch) (*inv_std)[ch] = 1.0 / std::sqrt(var[ch] + eps);
  Tensor y(xv.shape());
  for (int o = 0; o < outer; ++o) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(o) * c + ch) * inner;
      const double m = mu[ch], is = (*inv_std)[ch];
      for (std::size_t i = 0; i < inner; ++i) y[base + i] = (xv[base + i] - m) * is;
    }
  }
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;
  return tape_of(x).record(
      "channel_normalize", std::move(y), {x},
      [x, outer, c, inner, count, inv_std](Tape& t, const Tensor& xhat, const Tensor& g) {
        // dx = inv_std * (g - mean(g) - xhat * mean(g * xhat)) per channel.
        std::vector<double> mean_g(c, 0.0), mean_gx(c, 0.0);
        for (int o = 0; o < outer; ++o) {
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(o) * c + ch) * inner;
            mean_g[ch] += lane_sum(g.data().data() + base, inner);
            mean_gx[ch] += lane_dot(g.data().data() + base, xhat.data().data() + base, inner);
          }
        }
        for (int ch = 0; ch < c; ++ch) {
          mean_g[ch] /= static_cast<double>(count);
          mean_gx[ch] /= static_cast<double>(count);
        }
        Tensor& gx = t.grad(x);
        for (int o = 0; o < outer; ++o) {
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(o) * c + ch) * inner;
            const double is = (*inv_std)[ch], mg = mean_g[ch], mgx = mean_gx[ch];
            for (std::size_t i = 0; i < inner; ++i) gx[base + i] += is * (g[base + i] - mg - xhat[base + i] * mgx);
          }
        }
      });
}

Var channel_affine(Var x, Var w, Var b) {
  same_tape(x, w);
  same_tape(x, b);
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw DimensionError("channel_affine: input needs a channel axis 1");
  const int outer = xv.dim(0), c = xv.dim(1);
  expect_rank(w.value(), 1, "channel_affine weight");
  expect_dim(w.value(), 0, c, "channel_affine weight");
  expect_same_shape(w.value(), b.value(), "channel_affine bias");
  const std::size_t inner = xv.size() / (static_cast<std::size_t>(outer) * c);
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  Tensor y(xv.shape());
  for (int o = 0; o < outer; ++o) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(o) * c + ch) * inner;
      const double wc = wv[ch], bc = bv[ch];
      for (std::size_t i = 0; i < inner; ++i) y[base + i] = wc * xv[base + i] + bc;
    }
  }
  return tape_of(x).record("channel_affine", std::move(y), {x, w, b},
                           [x, w, b, outer, c, inner](Tape& t, const Tensor&, const Tensor& g) {
                             const Tensor& xv = t.value(x);
                             const Tensor& wv = t.value(w);
                             const bool gx = needs(t, x), gw = needs(t, w), gb = needs(t, b);
                             for (int o = 0; o < outer; ++o) {
                               for (int ch = 0; ch < c; ++ch) {
                                 const std::size_t base = (static_cast<std::size_t>(o) * c + ch) * inner;
                                 const double sw = lane_dot(g.data().data() + base, xv.data().data() + base, inner);
                                 const double sb = lane_sum(g.data().data() + base, inner);
                                 if (gx) {
                                   Tensor& dx = t.grad(x);
                                   const double wc = wv[ch];
                                   for (std::size_t i = 0; i < inner; ++i) dx[base + i] += wc * g[base + i];
                                 }
                                 if (gw) t.grad(w)[ch] += sw;
                                 if (gb) t.grad(b)[ch] += sb;
                               }
                             }
                           });
}

namespace {

Var softmax_impl(Var x, const Tensor* mask) {
  const Tensor& xv = x.value();
  const int k = xv.dim(-1);
  const std::size_t rows = xv.size() / k;
  if (mask) expect_same_shape(xv, *mask, "masked_softmax mask");
  Tensor y(xv.shape());
  std::vector<double> terms;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * k;
    double* out = y.data().data() + r * k;
    auto kept = [&](int i) { return !mask || (*mask)[r * k + i] != 0.0; };
    double mx = -INFINITY;
    for (int i = 0; i < k; ++i) {
      if (kept(i)) mx = std::max(mx, in[i]);
    }
    if (mx == -INFINITY) throw UsageError("masked_softmax: row with no kept entries");
    for (int i = 0; i < k; ++i) out[i] = kept(i) ? std::exp(in[i] - mx) : 0.0;
    // Summing in sorted order makes the result independent of input order.
    terms.assign(out, out + k);
    std::sort(terms.begin(), terms.end());
    double z = 0.0;
    for (double v : terms) z += v;
    for (int i = 0; i < k; ++i) out[i] /= z;
  }
  return tape_of(x).record(mask ? "masked_softmax" : "softmax", std::move(y), {x},
                           [x, k, rows](Tape& t, const Tensor& y, const Tensor& g) {
                             Tensor& gx = t.grad(x);
                             for (std::size_t r = 0; r < rows; ++r) {
                               double dot = 0.0;
                               for (int i = 0; i < k; ++i) dot += g[r * k + i] * y[r * k + i];
                               for (int i = 0; i < k; ++i) gx[r * k + i] += y[r * k + i] * (g[r * k + i] - dot);
                             }
                           });
}

}  // namespace

Var softmax(Var x) { return softmax_impl(x, nullptr); }

Var masked_softmax(Var x, const Tensor& mask) { return softmax_impl(x, &mask); }

Var l2_normalize(Var x, double eps) {
  const Tensor& xv = x.value();
  const int k = xv.dim(-1);
  const std::size_t rows = xv.size() / k;
  auto norms = std::make_shared<std::vector<double>>(rows);
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (int i = 0; i < k; ++i) ss += xv[r * k + i] * xv[r * k + i];
    const double n = std::max(std::sqrt(ss), eps);
    (*norms)[r] = n;
    for (int i = 0; i < k; ++i) y[r * k + i] = xv[r * k + i] / n;
  }
  return tape_of(x).record("l2_normalize", std::move(y), {x},
                           [x, k, rows, norms, eps](Tape& t, const Tensor& y, const Tensor& g) {
                             Tensor& gx = t.grad(x);
                             for (std::size_t r = 0; r < rows; ++r) {
                               const double n = (*norms)[r];
                               if (n <= eps) {
                                 for (int i = 0; i < k; ++i) gx[r * k + i] += g[r * k + i] / eps;
                                 continue;
                               }
                               double dot = 0.0;
                               for (int i = 0; i < k; ++i) dot += g[r * k + i] * y[r * k + i];
                               for (int i = 0; i < k; ++i) gx[r * k + i] += (g[r * k + i] - y[r * k + i] * dot) / n;
                             }
                           });
}

Var mix(const std::vector<Var>& xs, Var w) {
  if (xs.empty()) throw UsageError("mix of zero tensors");
  const Tensor& wv = w.value();
  expect_rank(wv, 2, "mix weights");
  const int batch = wv.dim(0);
  const int n = static_cast<int>(xs.size());
  expect_dim(wv, 1, n, "mix weights");
  const Shape& shape = xs[0].shape();
  for (const Var& v : xs) {
    same_tape(w, v);
    if (v.shape() != shape) throw DimensionError("mix: operand shapes differ");
  }
  if (shape[0] != batch) throw DimensionError("mix: operand axis 0 does not match weight batch");
  const std::size_t inner = shape_size(shape) / batch;
  Tensor y(shape);
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < n; ++i) {
      const double wi = wv[static_cast<std::size_t>(b) * n + i];
      const double* src = xs[i].value().data().data() + b * inner;
      double* dst = y.data().data() + b * inner;
      for (std::size_t j = 0; j < inner; ++j) dst[j] += wi * src[j];
    }
  }
  std::vector<Var> inputs = xs;
  inputs.push_back(w);
  return tape_of(w).record("mix", std::move(y), inputs, [xs, w, batch, n, inner](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& wv = t.value(w);
    const bool gw = needs(t, w);
    for (int i = 0; i < n; ++i) {
      const bool gx = needs(t, xs[i]);
      if (!gx && !gw) continue;
      const Tensor& xv = t.value(xs[i]);
      for (int b = 0; b < batch; ++b) {
        const double* gr = g.data().data() + b * inner;
        if (gx) {
          const double wi = wv[static_cast<std::size_t>(b) * n + i];
          double* dst = t.grad(xs[i]).data().data() + b * inner;
          for (std::size_t j = 0; j < inner; ++j) dst[j] += wi * gr[j];
        }
        if (gw) {
          const double* src = xv.data().data() + b * inner;
          double acc = 0.0;
          for (std::size_t j = 0; j < inner; ++j) acc += gr[j] * src[j];
          t.grad(w)[static_cast<std::size_t>(b) * n + i] += acc;
        }
      }
    }
  });
}

Var max_stack(const std::vector<Var>& xs, const Tensor* mask) {
  if (xs.empty()) throw UsageError("max_stack of zero tensors");
  const Shape& shape = xs[0].shape();
  for (const Var& v : xs) {
    same_tape(xs[0], v);
    if (v.shape() != shape) throw DimensionError("max_stack: operand shapes differ");
  }
  const int n = static_cast<int>(xs.size());
  const int batch = shape[0];
  const std::size_t inner = shape_size(shape) / batch;
  if (mask) {
    expect_rank(*mask, 2, "max_stack mask");
    expect_dim(*mask, 0, batch, "max_stack mask");
    expect_dim(*mask, 1, n, "max_stack mask");
  }
  auto kept = [&](int b, int i) { return !mask || (*mask)[static_cast<std::size_t>(b) * n + i] != 0.0; };
  Tensor y(shape);
  auto arg = std::make_shared<std::vector<int>>(y.size(), -1);
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < n; ++i) {
      if (!kept(b, i)) continue;
      const double* src = xs[i].value().data().data() + b * inner;
      for (std::size_t j = 0; j < inner; ++j) {
        int& a = (*arg)[b * inner + j];
        if (a < 0 || src[j] > y[b * inner + j]) {
          y[b * inner + j] = src[j];
          a = i;
        }
      }
    }
    if ((*arg)[b * inner] < 0) throw UsageError("max_stack: row with no kept operands");
  }
  return tape_of(xs[0]).record("max_stack", std::move(y), xs, [xs, arg](Tape& t, const Tensor&, const Tensor& g) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!needs(t, xs[i])) continue;
      Tensor& gx = t.grad(xs[i]);
      for (std::size_t j = 0; j < gx.size(); ++j) {
        if ((*arg)[j] == static_cast<int>(i)) gx[j] += g[j];
      }
    }
  });
}

Var time_pool(Var e, Var w) {
  same_tape(e, w);
  const Tensor& ev = e.value();
  const Tensor& wv = w.value();
  expect_rank(ev, 3, "time_pool features");
  expect_rank(wv, 2, "time_pool weights");
  const int batch = ev.dim(0), h = ev.dim(1), steps = ev.dim(2);
  expect_dim(wv, 0, batch, "time_pool weights");
  expect_dim(wv, 1, steps, "time_pool weights");
  Tensor y({batch, h});
  for (int b = 0; b < batch; ++b) {
    const double* wr = wv.data().data() + static_cast<std::size_t>(b) * steps;
    for (int i = 0; i < h; ++i) {
      const double* row = ev.data().data() + (static_cast<std::size_t>(b) * h + i) * steps;
      double acc = 0.0;
      for (int s = 0; s < steps; ++s) acc += wr[s] * row[s];
      y[static_cast<std::size_t>(b) * h + i] = acc;
    }
  }
  return tape_of(e).record("time_pool", std::move(y), {e, w}, [e, w, batch, h, steps](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& ev = t.value(e);
    const Tensor& wv = t.value(w);
    const bool ge = needs(t, e), gw = needs(t, w);
    for (int b = 0; b < batch; ++b) {
      const double* wr = wv.data().data() + static_cast<std::size_t>(b) * steps;
      for (int i = 0; i < h; ++i) {
        const double gi = g[static_cast<std::size_t>(b) * h + i];
        const std::size_t base = (static_cast<std::size_t>(b) * h + i) * steps;
        if (ge) {
          double* dst = t.grad(e).data().data() + base;
          for (int s = 0; s < steps; ++s) dst[s] += gi * wr[s];
        }
        if (gw) {
          double* dw = t.grad(w).data().data() + static_cast<std::size_t>(b) * steps;
          for (int s = 0; s < steps; ++s) dw[s] += gi * ev[base + s];
        }
      }
    }
  });
}

Var max_time(Var e) {
  const Tensor& ev = e.value();
  expect_rank(ev, 3, "max_time features");
  const int batch = ev.dim(0), h = ev.dim(1), steps = ev.dim(2);
  Tensor y({batch, h});
  auto arg = std::make_shared<std::vector<std::size_t>>(y.size());
  for (std::size_t r = 0; r < y.size(); ++r) {
    std::size_t best = r * steps;
    for (int s = 1; s < steps; ++s) {
      if (ev[r * steps + s] > ev[best]) best = r * steps + s;
    }
    y[r] = ev[best];
    (*arg)[r] = best;
  }
  return tape_of(e).record("max_time", std::move(y), {e}, [e, arg](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& ge = t.grad(e);
    for (std::size_t r = 0; r < arg->size(); ++r) ge[(*arg)[r]] += g[r];
  });
}

Var broadcast_time(Var h, int steps) {
  const Tensor& hv = h.value();
  expect_rank(hv, 2, "broadcast_time input");
  if (steps <= 0) throw DimensionError("broadcast_time: non-positive step count");
  const std::size_t rows = hv.size();
  Tensor y({hv.dim(0), hv.dim(1), steps});
  for (std::size_t r = 0; r < rows; ++r) {
    for (int s = 0; s < steps; ++s) y[r * steps + s] = hv[r];
  }
  return tape_of(h).record("broadcast_time", std::move(y), {h}, [h, rows, steps](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& gh = t.grad(h);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (int s = 0; s < steps; ++s) acc += g[r * steps + s];
      gh[r] += acc;
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  expect_rank(z, 2, "softmax_cross_entropy logits");
  const int batch = z.dim(0), classes = z.dim(1);
  if (static_cast<int>(labels.size()) != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  }
  auto probs = std::make_shared<std::vector<double>>(z.size());
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  double loss = 0.0;
  for (int b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || y >= classes) throw UsageError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    const double* row = z.data().data() + static_cast<std::size_t>(b) * classes;
    double mx = row[0];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (int c = 0; c < classes; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    loss += lse - row[y];
    for (int c = 0; c < classes; ++c) (*probs)[static_cast<std::size_t>(b) * classes + c] = std::exp(row[c] - lse);
  }
  loss /= batch;
  return tape_of(logits).record("softmax_cross_entropy", Tensor::scalar(loss), {logits},
                                [logits, probs, lab, batch, classes](Tape& t, const Tensor&, const Tensor& g) {
                                  Tensor& gz = t.grad(logits);
                                  const double k = g[0] / batch;
                                  for (int b = 0; b < batch; ++b) {
                                    for (int c = 0; c < classes; ++c) {
                                      const std::size_t i = static_cast<std::size_t>(b) * classes + c;
                                      gz[i] += k * ((*probs)[i] - ((*lab)[b] == c ? 1.0 : 0.0));
                                    }
                                  }
                                });
}

LstmState lstm_cell(Var x, Var h_prev, Var c_prev, const LstmWeights& w) {
  const bool single = x.value().rank() == 1;
  if (single) {
    x = reshape(x, {1, x.value().dim(0)});
    h_prev = reshape(h_prev, {1, h_prev.value().dim(0)});
    c_prev = reshape(c_prev, {1, c_prev.value().dim(0)});
  }
  const int hidden = w.recurrent.value().dim(1);
  expect_dim(w.input.value(), 0, 4 * hidden, "lstm input weights");
  expect_dim(w.recurrent.value(), 0, 4 * hidden, "lstm recurrent weights");
  expect_dim(h_prev.value(), 1, hidden, "lstm hidden state");
  expect_dim(c_prev.value(), 1, hidden, "lstm cell state");
  Var gates = add(dense(x, w.input, w.bias), matmul(h_prev, w.recurrent, true));
  Var i = sigmoid(slice(gates, 1, 0, hidden));
  Var f = sigmoid(slice(gates, 1, hidden, hidden));
  Var g = tanh(slice(gates, 1, 2 * hidden, hidden));
  Var o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
  Var c = add(mul(f, c_prev), mul(i, g));
  Var h = mul(o, tanh(c));
  if (single) {
    h = reshape(h, {hidden});
    c = reshape(c, {hidden});
  }
  return {h, c};
}

Var lstm_sequence(Var x, const LstmWeights& w, bool reverse) {
  const Tensor& xv = x.value();
  expect_rank(xv, 3, "lstm_sequence input");
  const Tensor& wx = w.input.value();
  const Tensor& wh = w.recurrent.value();
  const Tensor& bv = w.bias.value();
  const int batch = xv.dim(0), d = xv.dim(1), steps = xv.dim(2);
  const int hidden = wh.dim(1);
  const int g4 = 4 * hidden;
  expect_dim(wx, 0, g4, "lstm input weights");
  expect_dim(wx, 1, d, "lstm input weights");
  expect_dim(wh, 0, g4, "lstm recurrent weights");
  expect_dim(bv, 0, g4, "lstm bias");

  // Time-major copies: xs[t][b][:] and per-step caches.
  const std::size_t tb = static_cast<std::size_t>(steps) * batch;
  auto xs = std::make_shared<std::vector<double>>(tb * d);
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < d; ++i) {
      const double* src = xv.data().data() + (static_cast<std::size_t>(b) * d + i) * steps;
      for (int t = 0; t < steps; ++t) (*xs)[(static_cast<std::size_t>(t) * batch + b) * d + i] = src[t];
    }
  }
  auto acts = std::make_shared<std::vector<double>>(tb * g4);  // activated gates i, f, g, o
  auto cells = std::make_shared<std::vector<double>>(tb * hidden);
  auto hs = std::make_shared<std::vector<double>>(tb * hidden);
  kernels::gemm(Op::None, Op::Transpose, static_cast<int>(tb), g4, d, *xs, wx.data(), *acts, false);
  std::vector<double> wh_t(static_cast<std::size_t>(hidden) * g4);
  for (int r = 0; r < g4; ++r) {
    for (int c = 0; c < hidden; ++c) wh_t[static_cast<std::size_t>(c) * g4 + r] = wh[static_cast<std::size_t>(r) * hidden + c];
  }
  const std::size_t step_gates = static_cast<std::size_t>(batch) * g4;
  const std::size_t step_state = static_cast<std::size_t>(batch) * hidden;
  auto tcs = std::make_shared<std::vector<double>>(tb * hidden);  // tanh of the cell state
  for (int k = 0; k < steps; ++k) {
    const int t = reverse ? steps - 1 - k : k;
    const int prev = reverse ? t + 1 : t - 1;
    double* a = acts->data() + t * step_gates;
    if (k > 0) {
      kernels::gemm(Op::None, Op::None, batch, g4, hidden, std::span<const double>(hs->data() + prev * step_state, step_state),
                    wh_t, std::span<double>(a, step_gates), true);
    }
    for (int b = 0; b < batch; ++b) {
      double* __restrict ab = a + static_cast<std::size_t>(b) * g4;
      for (int j = 0; j < g4; ++j) ab[j] += bv[j];
      for (int j = 0; j < 2 * hidden; ++j) ab[j] = vmath::sigmoid(ab[j]);
      for (int j = 2 * hidden; j < 3 * hidden; ++j) ab[j] = vmath::tanh(ab[j]);
      for (int j = 3 * hidden; j < g4; ++j) ab[j] = vmath::sigmoid(ab[j]);
      double* __restrict cb = cells->data() + t * step_state + static_cast<std::size_t>(b) * hidden;
      double* __restrict tb_ = tcs->data() + t * step_state + static_cast<std::size_t>(b) * hidden;
      double* __restrict hb = hs->data() + t * step_state + static_cast<std::size_t>(b) * hidden;
      if (k > 0) {
        const double* __restrict cprev = cells->data() + prev * step_state + static_cast<std::size_t>(b) * hidden;
        for (int j = 0; j < hidden; ++j) cb[j] = ab[hidden + j] * cprev[j] + ab[j] * ab[2 * hidden + j];
      } else {
        for (int j = 0; j < hidden; ++j) cb[j] = 0.0 + ab[j] * ab[2 * hidden + j];
      }
      for (int j = 0; j < hidden; ++j) tb_[j] = vmath::tanh(cb[j]);
      for (int j = 0; j < hidden; ++j) hb[j] = ab[3 * hidden + j] * tb_[j];
    }
  }
  Tensor y({batch, hidden, steps});
  for (int t = 0; t < steps; ++t) {
    for (int b = 0; b < batch; ++b) {
      for (int j = 0; j < hidden; ++j) {
        y[(static_cast<std::size_t>(b) * hidden + j) * steps + t] = (*hs)[t * step_state + static_cast<std::size_t>(b) * hidden + j];
      }
    }
  }
  Var wi = w.input, wr = w.recurrent, wb = w.bias;
  return tape_of(x).record(
      reverse ? "lstm_sequence_reverse" : "lstm_sequence", std::move(y), {x, wi, wr, wb},
      [=](Tape& tp, const Tensor&, const Tensor& g) {
        std::vector<double> dgates(tb * g4, 0.0);
        std::vector<double> dc_step(step_state), dc_next(step_state, 0.0), dh_next(step_state, 0.0);
        // Output gradient in time-major order.
        std::vector<double> g_time(tb * hidden);
        for (int b = 0; b < batch; ++b) {
          for (int j = 0; j < hidden; ++j) {
            const double* src = g.data().data() + (static_cast<std::size_t>(b) * hidden + j) * steps;
            for (int t = 0; t < steps; ++t) g_time[(static_cast<std::size_t>(t) * batch + b) * hidden + j] = src[t];
          }
        }
        const Tensor& wh = tp.value(wr);
        for (int k = steps - 1; k >= 0; --k) {
          const int t = reverse ? steps - 1 - k : k;
          const int prev = reverse ? t + 1 : t - 1;
          const double* a = acts->data() + t * step_gates;
          double* da = dgates.data() + t * step_gates;
          for (int b = 0; b < batch; ++b) {
            const std::size_t row = static_cast<std::size_t>(b) * hidden;
            const double* __restrict ab = a + static_cast<std::size_t>(b) * g4;
            double* __restrict dab = da + static_cast<std::size_t>(b) * g4;
            const double* __restrict tc = tcs->data() + t * step_state + row;
            const double* __restrict gt = g_time.data() + t * step_state + row;
            double* __restrict dcn = dc_next.data() + row;
            const double* __restrict dhn = dh_next.data() + row;
            double* __restrict dcs = dc_step.data() + row;
            for (int j = 0; j < hidden; ++j) {
              const double dhj = gt[j] + dhn[j];
              const double ig = ab[j], gg = ab[2 * hidden + j], og = ab[3 * hidden + j];
              const double dc = dhj * og * (1.0 - tc[j] * tc[j]) + dcn[j];
              dcs[j] = dc;
              dab[j] = dc * gg * ig * (1.0 - ig);
              dab[2 * hidden + j] = dc * ig * (1.0 - gg * gg);
              dab[3 * hidden + j] = dhj * tc[j] * og * (1.0 - og);
              dcn[j] = dc * ab[hidden + j];
            }
            if (k > 0) {
              const double* __restrict cprev = cells->data() + prev * step_state + row;
              for (int j = 0; j < hidden; ++j) {
                const double fg = ab[hidden + j];
                dab[hidden + j] = dcs[j] * cprev[j] * fg * (1.0 - fg);
              }
            } else {
              for (int j = 0; j < hidden; ++j) dab[hidden + j] = 0.0;
            }
          }
          // dh_prev = dgates_t * Wh
          kernels::gemm(Op::None, Op::None, batch, hidden, g4, std::span<const double>(da, step_gates), wh.data(), dh_next,
                        false);
        }
        if (needs(tp, wr)) {
          // dWh += sum_t dgates_t^T h_{prev(t)}; steps without a predecessor contribute nothing.
          std::vector<double> hprev(tb * hidden, 0.0);
          for (int k = 1; k < steps; ++k) {
            const int t = reverse ? steps - 1 - k : k;
            const int prev = reverse ? t + 1 : t - 1;
            std::copy_n(hs->data() + prev * step_state, step_state, hprev.data() + t * step_state);
          }
          kernels::gemm(Op::Transpose, Op::None, g4, hidden, static_cast<int>(tb), dgates, hprev, tp.grad(wr).data(), true);
        }
        if (needs(tp, wi)) {
          kernels::gemm(Op::Transpose, Op::None, g4, d, static_cast<int>(tb), dgates, *xs, tp.grad(wi).data(), true);
        }
        if (needs(tp, wb)) {
          Tensor& gb = tp.grad(wb);
          for (std::size_t r = 0; r < tb; ++r) {
            for (int j = 0; j < g4; ++j) gb[j] += dgates[r * g4 + j];
          }
        }
        if (needs(tp, x)) {
          std::vector<double> dxs(tb * d);
          kernels::gemm(Op::None, Op::None, static_cast<int>(tb), d, g4, dgates, tp.value(wi).data(), dxs, false);
          Tensor& gx = tp.grad(x);
          for (int t = 0; t < steps; ++t) {
            for (int b = 0; b < batch; ++b) {
              for (int i = 0; i < d; ++i) {
                gx[(static_cast<std::size_t>(b) * d + i) * steps + t] += dxs[(static_cast<std::size_t>(t) * batch + b) * d + i];
              }
            }
          }
        }
      });
}

Var bilstm(Var x, const LstmWeights& forward, const LstmWeights& backward) {
  return concat({lstm_sequence(x, forward, false), lstm_sequence(x, backward, true)}, 1);
}

}  // namespace scribeid::ops
