#pragma once

// Differentiable primitives recorded on a Tape.
//
// Layout conventions: batched tensors put the batch on axis 0 and channels on
// axis 1 ([B, C, T] sequences, [B, C, H, W] images). No implicit broadcasting;
// every op states the shapes it accepts and throws DimensionError otherwise.

#include <span>
#include <vector>

#include "scribeid/autodiff.hpp"

namespace scribeid::ops {

// Elementwise, identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
Var add_constant(Var a, double k);
// a * s for a single-element `s`.
Var mul_scalar(Var a, Var s);

Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);

Var sum(Var a);
// Mean / biased (1/N) variance over `axes`; the reduced axes are dropped.
Var mean(Var a, std::vector<int> axes);
Var variance(Var a, std::vector<int> axes);

Var reshape(Var a, Shape shape);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(Var a, int axis, int start, int length);

// [M, K] x [K, N]; with transpose_b, b is [N, K].
Var matmul(Var a, Var b, bool transpose_b = false);
// x [B, in], w [out, in], optional bias [out] -> [B, out].
Var dense(Var x, Var w, Var bias = {});

// x [C_in, T] or [B, C_in, T]; w [C_out, C_in, S]; zero padding on both ends.
Var conv1d(Var x, Var w, int padding);
// Adds b[c] along axis 1 of x (rank >= 2).
Var add_channel_bias(Var x, Var b);
// x [B, C_in, H, W]; w [C_out, C_in, K, K]; stride 1.
Var conv2d(Var x, Var w, int padding);
// Non-overlapping k x k max pooling (floor on odd extents).
Var maxpool2d(Var x, int k);
// [B, C, H, W] -> [B, C].
Var global_avg_pool(Var x);

// Per-channel standardization over every axis except 1, using batch
// statistics (biased variance). Statistics are written to the optional outputs.
Var channel_normalize(Var x, double eps, Tensor* batch_mean = nullptr, Tensor* batch_var = nullptr);
// y = w[c] * x + b[c] along axis 1.
Var channel_affine(Var x, Var w, Var b);

// Softmax over the last axis (max-subtracted).
Var softmax(Var x);
// Softmax over the last axis restricted to entries where mask != 0; masked
// entries get weight exactly 0. Each row needs at least one kept entry.
Var masked_softmax(Var x, const Tensor& mask);
// Row-wise (last axis) x / max(||x||, eps).
Var l2_normalize(Var x, double eps = 1e-12);

// xs: N tensors of identical shape [B, ...]; w [B, N] -> sum_i w[:, i] * xs[i].
Var mix(const std::vector<Var>& xs, Var w);
// Elementwise maximum over xs (gradient routed to the first maximizer). With a
// [B, N] mask, operand i is skipped for batch row b where mask[b, i] == 0.
Var max_stack(const std::vector<Var>& xs, const Tensor* mask = nullptr);
// e [B, H, T], w [B, T] -> [B, H] with out[b, h] = sum_t w[b, t] e[b, h, t].
Var time_pool(Var e, Var w);
// e [B, H, T] -> [B, H], maximum over time.
Var max_time(Var e);
// h [B, C] -> [B, C, T] repeated along time.
Var broadcast_time(Var h, int steps);

// Mean cross-entropy of logits [B, C] against integer labels.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

// Gate rows are ordered input, forget, candidate, output.
struct LstmWeights {
  Var input;      // [4H, D]
  Var recurrent;  // [4H, H]
  Var bias;       // [4H]
};

struct LstmState {
  Var h;
  Var c;
};

// One LSTM step composed from primitives. x [B, D] (or [D]), h/c [B, H] (or [H]).
LstmState lstm_cell(Var x, Var h_prev, Var c_prev, const LstmWeights& w);
// Whole-sequence LSTM from zero state as a single fused node.
// x [B, D, T] -> hidden states [B, H, T]. With `reverse`, the recurrence runs
// from t = T-1 down to 0 and output t holds the state after consuming x_t.
Var lstm_sequence(Var x, const LstmWeights& w, bool reverse = false);
// [B, D, T] -> [B, 2H, T]: forward states then backward states, every timestep.
Var bilstm(Var x, const LstmWeights& forward, const LstmWeights& backward);

}  // namespace scribeid::ops
