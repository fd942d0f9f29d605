#include "scribeid/encoder.hpp"

#include "scribeid/errors.hpp"
#include "scribeid/init.hpp"

namespace scribeid {

ops::LstmWeights LstmParams::on(Tape& tape) const {
  return {tape.parameter(*input), tape.parameter(*recurrent), tape.parameter(*bias)};
}

LstmParams add_lstm(ParameterStore& store, const std::string& prefix, int input, int hidden, Rng& rng) {
  Tensor wi({4 * hidden, input}), wh({4 * hidden, hidden}), b({4 * hidden});
  xavier_uniform(wi, input, hidden, rng);
  xavier_uniform(wh, hidden, hidden, rng);
  for (int u = 0; u < hidden; ++u) b[hidden + u] = 1.0;
  LstmParams p;
  p.input = &store.add(prefix + "/input", std::move(wi));
  p.recurrent = &store.add(prefix + "/recurrent", std::move(wh));
  p.bias = &store.add(prefix + "/bias", std::move(b));
  return p;
}

TrajectoryEncoder::TrajectoryEncoder(ParameterStore& store, const ModelConfig& config)
    : kernel_(config.kernel), timesteps_(config.timesteps) {
  const int c = config.segment_channels, s = config.kernel, h = config.stroke_hidden;
  for (int i = 0; i < config.branches; ++i) {
    Rng rng(derive_seed(config.seed, {0x4252414eULL, static_cast<std::uint64_t>(i)}));
    const std::string prefix = "branch/" + std::to_string(i);
    BranchParams bp;
    Tensor w({c, 2, s});
    xavier_uniform(w, 2 * s, c * s, rng);
    bp.conv_weight = &store.add(prefix + "/conv/weight", std::move(w));
    bp.conv_bias = &store.add(prefix + "/conv/bias", Tensor({c}));
    bp.forward = add_lstm(store, prefix + "/lstm/forward", c, h, rng);
    bp.backward = add_lstm(store, prefix + "/lstm/backward", c, h, rng);
    branches_.push_back(bp);
  }
}

std::vector<std::vector<Var>> TrajectoryEncoder::encode(Lsa& lsa, const std::vector<char>& letters,
                                                        const std::vector<Var>& xs, const NormContext& ctx) const {
  if (letters.size() != xs.size() || xs.empty()) throw UsageError("encode needs one letter label per input group");
  std::vector<int> rows;
  for (const Var& x : xs) {
    expect_rank(x.value(), 3, "trajectory batch");
    expect_dim(x.value(), 1, 2, "trajectory batch");
    expect_dim(x.value(), 2, timesteps_, "trajectory batch");
    rows.push_back(x.shape()[0]);
  }
  auto split = [&](Var v) {
    std::vector<Var> parts;
    if (xs.size() == 1) return std::vector<Var>{v};
    int offset = 0;
    for (int r : rows) {
      parts.push_back(ops::slice(v, 0, offset, r));
      offset += r;
    }
    return parts;
  };
  Tape& tape = *xs[0].tape;
  const Var all = xs.size() == 1 ? xs[0] : ops::concat(xs, 0);

  std::vector<std::vector<Var>> out(xs.size());
  for (const BranchParams& bp : branches_) {
    const int branch = static_cast<int>(&bp - branches_.data());
    Var seg = ops::conv1d(all, tape.parameter(*bp.conv_weight), (kernel_ - 1) / 2);
    seg = ops::tanh(ops::add_channel_bias(seg, tape.parameter(*bp.conv_bias)));
    std::vector<LsaInput> seg_in;
    const std::vector<Var> seg_parts = split(seg);
    for (std::size_t g = 0; g < xs.size(); ++g) seg_in.push_back({letters[g], branch, seg_parts[g]});
    const std::vector<Var> seg_norm = lsa.apply(LsaStage::Segment, seg_in, ctx);

    const Var joined = seg_norm.size() == 1 ? seg_norm[0] : ops::concat(seg_norm, 0);
    const Var stroke = ops::bilstm(joined, bp.forward.on(tape), bp.backward.on(tape));
    std::vector<LsaInput> stroke_in;
    const std::vector<Var> stroke_parts = split(stroke);
    for (std::size_t g = 0; g < xs.size(); ++g) stroke_in.push_back({letters[g], branch, stroke_parts[g]});
    const std::vector<Var> stroke_norm = lsa.apply(LsaStage::Stroke, stroke_in, ctx);
    for (std::size_t g = 0; g < xs.size(); ++g) out[g].push_back(stroke_norm[g]);
  }
  return out;
}

ImageEncoder::ImageEncoder(ParameterStore& store, const ModelConfig& config)
    : raster_(config.raster), eps_(config.bn_eps), momentum_(config.bn_momentum) {
  Rng rng(derive_seed(config.seed, {0x494d4147ULL}));
  int c_in = 1;
  for (std::size_t k = 0; k < config.image_widths.size(); ++k) {
    const int c = config.image_widths[k];
    const std::string prefix = "image/layer" + std::to_string(k);
    Layer layer;
    Tensor w({c, c_in, 3, 3});
    he_uniform(w, c_in * 9, rng);
    layer.weight = &store.add(prefix + "/conv/weight", std::move(w));
    layer.gamma = &store.add(prefix + "/bn/weight", Tensor({c}, 1.0));
    layer.beta = &store.add(prefix + "/bn/bias", Tensor({c}, 0.0));
    layer.running_mean = &store.add(prefix + "/bn/running_mean", Tensor({c}, 0.0), false);
    layer.running_var = &store.add(prefix + "/bn/running_var", Tensor({c}, 1.0), false);
    layers_.push_back(layer);
    c_in = c;
  }
  updates_.assign(layers_.size(), 0);
}

Var ImageEncoder::encode(Var images, const NormContext& ctx) {
  const Tensor& v = images.value();
  expect_rank(v, 4, "image batch");
  expect_dim(v, 1, 1, "image batch");
  expect_dim(v, 2, raster_, "image batch");
  expect_dim(v, 3, raster_, "image batch");
  Tape& tape = *images.tape;
  Var x = images;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Layer& layer = layers_[k];
    x = ops::conv2d(x, tape.parameter(*layer.weight), 1);
    x = standardize(x, {layer.running_mean, layer.running_var, &updates_[k]}, eps_, momentum_, ctx);
    x = ops::relu(ops::channel_affine(x, tape.parameter(*layer.gamma), tape.parameter(*layer.beta)));
    if (k + 1 < layers_.size()) x = ops::maxpool2d(x, 2);
  }
  return ops::global_avg_pool(x);
}

}  // namespace scribeid
