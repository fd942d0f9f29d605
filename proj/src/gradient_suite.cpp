#include "scribeid/gradient_suite.hpp"

#include <algorithm>

#include "scribeid/model.hpp"
#include "scribeid/ops.hpp"
#include "scribeid/training.hpp"

namespace scribeid {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

Parameter& random_param(ParameterStore& store, const std::string& name, Shape shape, Rng& rng) {
  return store.add(name, random_tensor(std::move(shape), rng));
}

ops::LstmWeights lstm_from(const std::vector<Var>& v, std::size_t first) {
  return {v[first], v[first + 1], v[first + 2]};
}

}  // namespace

std::vector<PrimitiveCase> primitive_cases() {
  using V = std::vector<Var>;
  const int D = 3, H = 2, T = 4, B = 2;
  const std::vector<Shape> lstm_shapes = {{4 * H, D}, {4 * H, H}, {4 * H}};
  auto with_lstm = [&](std::vector<Shape> head, int copies) {
    for (int c = 0; c < copies; ++c) head.insert(head.end(), lstm_shapes.begin(), lstm_shapes.end());
    return head;
  };
  return {
      {"add", {{2, 3}, {2, 3}}, [](Tape&, const V& v, Rng&) { return ops::add(v[0], v[1]); }},
      {"sub", {{2, 3}, {2, 3}}, [](Tape&, const V& v, Rng&) { return ops::sub(v[0], v[1]); }},
      {"mul", {{2, 3}, {2, 3}}, [](Tape&, const V& v, Rng&) { return ops::mul(v[0], v[1]); }},
      {"scale", {{4}}, [](Tape&, const V& v, Rng&) { return ops::scale(v[0], -1.7); }},
      {"add_constant", {{4}}, [](Tape&, const V& v, Rng&) { return ops::add_constant(v[0], 0.3); }},
      {"mul_scalar", {{2, 3}, {1}}, [](Tape&, const V& v, Rng&) { return ops::mul_scalar(v[0], v[1]); }},
      {"tanh", {{5}}, [](Tape&, const V& v, Rng&) { return ops::tanh(v[0]); }},
      {"sigmoid", {{5}}, [](Tape&, const V& v, Rng&) { return ops::sigmoid(ops::scale(v[0], 4.0)); }},
      {"relu", {{6}}, [](Tape&, const V& v, Rng&) { return ops::relu(v[0]); }},
      {"sum", {{2, 3}}, [](Tape&, const V& v, Rng&) { return ops::sum(v[0]); }},
      {"mean", {{2, 3, 4}}, [](Tape&, const V& v, Rng&) { return ops::mean(v[0], {0, 2}); }},
      {"variance", {{2, 3, 4}}, [](Tape&, const V& v, Rng&) { return ops::variance(v[0], {0, 2}); }},
      {"reshape", {{2, 6}}, [](Tape&, const V& v, Rng&) { return ops::tanh(ops::reshape(v[0], {3, 4})); }},
      {"concat", {{2, 3}, {2, 2}}, [](Tape&, const V& v, Rng&) { return ops::concat({v[0], v[1]}, 1); }},
      {"slice", {{3, 5}}, [](Tape&, const V& v, Rng&) { return ops::slice(v[0], 1, 1, 3); }},
      {"matmul", {{3, 4}, {4, 2}}, [](Tape&, const V& v, Rng&) { return ops::matmul(v[0], v[1]); }},
      {"matmul_bt", {{3, 4}, {2, 4}}, [](Tape&, const V& v, Rng&) { return ops::matmul(v[0], v[1], true); }},
      {"dense", {{3, 4}, {2, 4}, {2}}, [](Tape&, const V& v, Rng&) { return ops::dense(v[0], v[1], v[2]); }},
      {"conv1d", {{2, 3, 9}, {4, 3, 3}}, [](Tape&, const V& v, Rng&) { return ops::conv1d(v[0], v[1], 1); }},
      {"conv1d_unbatched", {{2, 8}, {3, 2, 7}}, [](Tape&, const V& v, Rng&) { return ops::conv1d(v[0], v[1], 3); }},
      {"add_channel_bias", {{2, 3, 4}, {3}}, [](Tape&, const V& v, Rng&) { return ops::add_channel_bias(v[0], v[1]); }},
      {"conv2d", {{2, 2, 5, 4}, {3, 2, 3, 3}}, [](Tape&, const V& v, Rng&) { return ops::conv2d(v[0], v[1], 1); }},
      {"maxpool2d", {{2, 2, 4, 5}}, [](Tape&, const V& v, Rng&) { return ops::maxpool2d(v[0], 2); }},
      {"global_avg_pool", {{2, 3, 2, 2}}, [](Tape&, const V& v, Rng&) { return ops::global_avg_pool(v[0]); }},
      {"channel_normalize", {{3, 2, 4}}, [](Tape&, const V& v, Rng&) { return ops::channel_normalize(v[0], 1e-5); }},
      {"channel_affine", {{2, 3, 4}, {3}, {3}},
       [](Tape&, const V& v, Rng&) { return ops::channel_affine(v[0], v[1], v[2]); }},
      {"softmax", {{2, 5}}, [](Tape&, const V& v, Rng&) { return ops::softmax(ops::scale(v[0], 3.0)); }},
      {"masked_softmax", {{3, 4}},
       [](Tape&, const V& v, Rng& rng) {
         Tensor mask({3, 4});
         for (int r = 0; r < 3; ++r) {
           mask.at({r, static_cast<int>(rng.below(4))}) = 1.0;
           for (int c = 0; c < 4; ++c) {
             if (rng.uniform() < 0.5) mask.at({r, c}) = 1.0;
           }
         }
         return ops::masked_softmax(v[0], mask);
       }},
      {"l2_normalize", {{3, 4}}, [](Tape&, const V& v, Rng&) { return ops::l2_normalize(v[0]); }},
      {"mix", {{2, 3, 4}, {2, 3, 4}, {2, 3, 4}, {2, 3}},
       [](Tape&, const V& v, Rng&) { return ops::mix({v[0], v[1], v[2]}, v[3]); }},
      {"max_stack", {{2, 5}, {2, 5}, {2, 5}}, [](Tape&, const V& v, Rng&) { return ops::max_stack({v[0], v[1], v[2]}); }},
      {"time_pool", {{2, 3, 5}, {2, 5}}, [](Tape&, const V& v, Rng&) { return ops::time_pool(v[0], v[1]); }},
      {"max_time", {{2, 3, 5}}, [](Tape&, const V& v, Rng&) { return ops::max_time(v[0]); }},
      {"broadcast_time", {{2, 3}}, [](Tape&, const V& v, Rng&) { return ops::broadcast_time(v[0], 4); }},
      {"softmax_cross_entropy", {{4, 3}},
       [](Tape&, const V& v, Rng& rng) {
         std::vector<int> labels(4);
         for (int& l : labels) l = static_cast<int>(rng.below(3));
         return ops::softmax_cross_entropy(ops::scale(v[0], 2.0), labels);
       }},
      {"lstm_cell", with_lstm({{B, D}, {B, H}, {B, H}}, 1),
       [](Tape&, const V& v, Rng&) {
         auto s = ops::lstm_cell(v[0], v[1], v[2], lstm_from(v, 3));
         return ops::concat({s.h, s.c}, 1);
       }},
      {"lstm_sequence", with_lstm({{B, D, T}}, 1),
       [](Tape&, const V& v, Rng&) { return ops::lstm_sequence(v[0], lstm_from(v, 1)); }},
      {"lstm_sequence_reverse", with_lstm({{B, D, T}}, 1),
       [](Tape&, const V& v, Rng&) { return ops::lstm_sequence(v[0], lstm_from(v, 1), true); }},
      {"bilstm", with_lstm({{B, D, T}}, 2),
       [](Tape&, const V& v, Rng&) { return ops::bilstm(v[0], lstm_from(v, 1), lstm_from(v, 4)); }},
  };
}

GradCheckReport check_primitive(const PrimitiveCase& c, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x5052494dULL}));
  ParameterStore store;
  std::vector<Parameter*> params;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    params.push_back(&random_param(store, c.name + "/" + std::to_string(i), c.inputs[i], rng));
  }
  const std::uint64_t op_seed = rng.next_u64();
  Tensor readout;
  auto loss = [&](Tape& t) {
    std::vector<Var> vars;
    for (Parameter* p : params) vars.push_back(t.parameter(*p));
    Rng op_rng(op_seed);
    Var y = c.op(t, vars, op_rng);
    if (readout.empty()) {
      Rng r(op_seed ^ 0x9e37ULL);
      readout = random_tensor(y.shape(), r);
    }
    return ops::sum(ops::mul(y, t.constant(readout)));
  };
  return grad_check(loss, params);
}


GradCheckReport check_end_to_end(std::uint64_t seed, std::size_t sample) {
  ModelConfig c;
  c.alphabet = "abc";
  c.timesteps = 10;
  c.raster = 16;
  c.segment_channels = 4;
  c.stroke_hidden = 3;
  c.temporal_hidden = 4;
  c.image_widths = {2, 2, 3, 3, 4};
  c.num_writers = 3;
  c.seed = seed;
  WriterNet net(c);
  Rng rng(derive_seed(seed, {0x4532454eULL}));
  ModelInput in;
  for (char l : c.alphabet) {
    LetterGroup g;
    g.letter = l;
    g.xy = random_tensor({4, 2, c.timesteps}, rng);
    g.raster = random_tensor({4, 1, c.raster, c.raster}, rng, 0.0, 1.0);
    in.letters.push_back(std::move(g));
  }
  const std::vector<int> labels = {0, 1, 2, 1};
  GradCheckOptions opt;
  opt.sample = sample;
  opt.seed = seed;
  // Central differences through the whole network carry ~1e-10 of roundoff;
  // near-zero gradients are compared on that absolute scale.
  opt.abs_floor = 1e-5;
  return grad_check(
      [&](Tape& t) {
        const ForwardResult r = net.forward(t, in, NormContext{true, false});
        return norm_softmax_loss(net, r.embedding, labels);
      },
      net.params().trainable(), opt);
}

GradientSuiteResult run_gradient_suite(std::uint64_t seed) {
  GradientSuiteResult out;
  auto add = [&](std::string name, GradCheckReport r) {
    out.max_rel_error = std::max(out.max_rel_error, r.max_rel_error);
    out.passed = out.passed && r.passed;
    out.cases.emplace_back(std::move(name), std::move(r));
  };
  for (const PrimitiveCase& c : primitive_cases()) add(c.name, check_primitive(c, seed));
  add("end_to_end", check_end_to_end(seed));
  return out;
}

}  // namespace scribeid
