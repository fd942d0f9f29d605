#include <gtest/gtest.h>

#include "scribeid/encoder.hpp"
#include "scribeid/errors.hpp"
#include "scribeid/gradcheck.hpp"
#include "test_support.hpp"

namespace scribeid {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

ModelConfig tiny() {
  ModelConfig c;
  c.timesteps = 12;
  c.segment_channels = 4;
  c.stroke_hidden = 3;
  c.temporal_hidden = 4;
  c.raster = 16;
  c.image_widths = {2, 2, 3, 3, 4};
  return c;
}

const NormContext kTrain{true, false};
const NormContext kBatch{false, true};

struct Encoders {
  explicit Encoders(const ModelConfig& c) : config(c), traj(store, c), lsa(store, c), image(store, c) {}
  ModelConfig config;
  ParameterStore store;
  TrajectoryEncoder traj;
  Lsa lsa;
  ImageEncoder image;
};

std::vector<Tensor> encode_values(Encoders& e, char letter, const Tensor& x, const NormContext& ctx) {
  Tape tape;
  const auto out = e.traj.encode(e.lsa, {letter}, {tape.constant(x)}, ctx);
  std::vector<Tensor> values;
  for (const Var& v : out[0]) values.push_back(v.value());
  return values;
}

TEST(TrajectoryEncoder, OutputShapeIsHByT) {
  Encoders e(tiny());
  Rng rng(1);
  const auto out = encode_values(e, 'a', random_tensor({2, 2, 12}, rng), kTrain);
  ASSERT_EQ(out.size(), 3u);
  for (const Tensor& t : out) EXPECT_EQ(t.shape(), (Shape{2, 6, 12}));
}

TEST(TrajectoryEncoder, DefaultSizesGive512By64) {
  Encoders e{ModelConfig{}};
  Rng rng(2);
  const auto out = encode_values(e, 'g', random_tensor({1, 2, 64}, rng), kBatch);
  ASSERT_EQ(out.size(), 3u);
  for (const Tensor& t : out) {
    EXPECT_EQ(t.shape(), (Shape{1, 512, 64}));
    for (double v : t.data()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(TrajectoryEncoder, SingleBranch) {
  ModelConfig c = tiny();
  c.branches = 1;
  Encoders e(c);
  Rng rng(3);
  EXPECT_EQ(encode_values(e, 'b', random_tensor({2, 2, 12}, rng), kTrain).size(), 1u);
}

TEST(TrajectoryEncoder, BranchesAreInitializedDifferently) {
  Encoders e(tiny());
  Rng rng(4);
  const auto out = encode_values(e, 'c', random_tensor({2, 2, 12}, rng), kBatch);
  EXPECT_GT(max_abs_diff(out[0].data(), out[1].data()), 0.0);
  EXPECT_GT(max_abs_diff(out[1].data(), out[2].data()), 0.0);
  EXPECT_GT(max_abs_diff(e.traj.branch(0).conv_weight->value.data(), e.traj.branch(1).conv_weight->value.data()),
            0.0);
}

TEST(TrajectoryEncoder, IsDeterministic) {
  Encoders a(tiny()), b(tiny());
  Rng rng(5);
  const Tensor x = random_tensor({3, 2, 12}, rng);
  const auto ya = encode_values(a, 'd', x, kBatch), yb = encode_values(b, 'd', x, kBatch);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(max_abs_diff(ya[i].data(), yb[i].data()), 0.0);
}

TEST(TrajectoryEncoder, PerturbingOneBranchLeavesOthersBitIdentical) {
  Encoders e(tiny());
  Rng rng(6);
  const Tensor x = random_tensor({2, 2, 12}, rng);
  const auto before = encode_values(e, 'e', x, kBatch);
  for (Parameter* p : e.store.all()) {
    if (p->name.rfind("branch/2/", 0) == 0) {
      for (double& v : p->value.storage()) v += rng.uniform(-0.5, 0.5);
    }
  }
  const auto after = encode_values(e, 'e', x, kBatch);
  EXPECT_EQ(max_abs_diff(before[0].data(), after[0].data()), 0.0);
  EXPECT_EQ(max_abs_diff(before[1].data(), after[1].data()), 0.0);
  EXPECT_GT(max_abs_diff(before[2].data(), after[2].data()), 0.0);
}

TEST(TrajectoryEncoder, CrossBranchGradientsAreExactlyZero) {
  Encoders e(tiny());
  Rng rng(7);
  const Tensor x = random_tensor({2, 2, 12}, rng);
  Tape tape;
  const auto out = e.traj.encode(e.lsa, {'a'}, {tape.constant(x)}, kTrain);
  tape.backward(ops::sum(ops::mul(out[0][1], tape.constant(random_tensor({2, 6, 12}, rng)))));
  double own = 0.0;
  for (Parameter* p : e.store.all()) {
    const bool branch1 = p->name.rfind("branch/1/", 0) == 0 || p->name.find("/a/1/") != std::string::npos;
    for (std::size_t i = 0; i < p->grad.size(); ++i) {
      if (branch1) {
        own += std::abs(p->grad[i]);
      } else {
        ASSERT_EQ(p->grad[i], 0.0) << p->name;
      }
    }
  }
  EXPECT_GT(own, 0.0);
}

TEST(TrajectoryEncoder, ZeroInputIsDeterminedByAdapterBias) {
  Encoders e(tiny());
  for (int b = 0; b < 3; ++b) {
    for (double& v : e.traj.branch(b).conv_bias->value.storage()) v = 0.0;
  }
  LsaSubmodule& seg = e.lsa.select('a', 0, LsaStage::Segment);
  for (int c = 0; c < 4; ++c) seg.bias->value[c] = 0.1 * (c + 1);
  Tape tape;
  const Var x = tape.constant(Tensor({2, 2, 12}));
  const Var conv = ops::conv1d(x, tape.parameter(*e.traj.branch(0).conv_weight), 3);
  for (double v : conv.value().data()) EXPECT_EQ(v, 0.0);
  // The segment adapter maps the all-zero activation to its bias, so every
  // sample and time step of the stroke output is the same.
  const auto out = encode_values(e, 'a', Tensor({2, 2, 12}), kTrain);
  for (int h = 0; h < 6; ++h) {
    EXPECT_EQ(out[0].at({0, h, 0}), out[0].at({1, h, 0}));
  }
}

TEST(TrajectoryEncoder, GroupedBatchMatchesSeparateGroups) {
  Encoders e(tiny());
  Rng rng(8);
  const Tensor xa = random_tensor({2, 2, 12}, rng), xb = random_tensor({3, 2, 12}, rng);
  Tape tape;
  const auto joint = e.traj.encode(e.lsa, {'a', 'b'}, {tape.constant(xa), tape.constant(xb)}, kBatch);
  const auto a = encode_values(e, 'a', xa, kBatch), b = encode_values(e, 'b', xb, kBatch);
  for (int i = 0; i < 3; ++i) {
    EXPECT_LE(max_abs_diff(joint[0][i].value().data(), a[i].data()), 1e-12);
    EXPECT_LE(max_abs_diff(joint[1][i].value().data(), b[i].data()), 1e-12);
  }
}

TEST(TrajectoryEncoder, RejectsWrongLength) {
  Encoders e(tiny());
  Tape tape;
  EXPECT_THROW(e.traj.encode(e.lsa, {'a'}, {tape.constant(Tensor({1, 2, 11}))}, kBatch), DimensionError);
  EXPECT_THROW(e.traj.encode(e.lsa, {'z'}, {tape.constant(Tensor({2, 2, 12}))}, kBatch), UnsupportedLetterError);
}

TEST(TrajectoryEncoder, GradientMatchesFiniteDifferences) {
  Encoders e(tiny());
  Rng rng(9);
  const Tensor x = random_tensor({2, 2, 12}, rng);
  const Tensor r = random_tensor({2, 6, 12}, rng);
  const auto loss = [&](Tape& tape) {
    const auto out = e.traj.encode(e.lsa, {'b'}, {tape.constant(x)}, kTrain);
    return ops::sum(ops::mul(ops::add(ops::add(out[0][0], out[0][1]), out[0][2]), tape.constant(r)));
  };
  std::vector<Parameter*> params;
  for (Parameter* p : e.store.trainable()) {
    if (p->name.rfind("branch/", 0) == 0 || p->name.find("/b/") != std::string::npos) params.push_back(p);
  }
  GradCheckOptions opt;
  opt.sample = 400;
  opt.seed = 9;
  const auto report = grad_check(loss, params, opt);
  EXPECT_TRUE(report.passed) << format_report(report);
}

TEST(ImageEncoder, OutputDimension) {
  Encoders e{ModelConfig{}};
  Rng rng(10);
  Tape tape;
  const Var y = e.image.encode(tape.constant(random_tensor({3, 1, 32, 32}, rng, 0.0, 1.0)), kTrain);
  EXPECT_EQ(y.shape(), (Shape{3, 64}));
  for (double v : y.value().data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW(e.image.encode(tape.constant(Tensor({1, 1, 28, 28})), kTrain), DimensionError);
}

TEST(ImageEncoder, ZeroImageGivesShiftTerms) {
  Encoders e(tiny());
  Rng rng(11);
  for (Parameter* p : e.store.all()) {
    if (p->name.find("/bn/bias") != std::string::npos) {
      for (double& v : p->value.storage()) v = rng.uniform(-1.0, 1.0);
    }
  }
  Tape tape;
  const Var y = e.image.encode(tape.constant(Tensor({2, 1, 16, 16})), kBatch);
  // Convolutions without bias keep zeros at zero, so each layer emits relu(beta).
  const Tensor& beta = e.store.get("image/layer4/bn/bias").value;
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 4; ++c) EXPECT_EQ(y.value().at({b, c}), std::max(0.0, beta[c]));
}

TEST(ImageEncoder, SharedAcrossLetters) {
  Encoders e(tiny());
  Rng rng(12);
  const Tensor img = random_tensor({1, 1, 16, 16}, rng, 0.0, 1.0);
  Tensor pair({2, 1, 16, 16});
  std::copy(img.data().begin(), img.data().end(), pair.storage().begin());
  std::copy(img.data().begin(), img.data().end(), pair.storage().begin() + 256);
  Tape tape;
  e.image.encode(tape.constant(pair), kTrain);
  const Var y = e.image.encode(tape.constant(pair), NormContext{});
  for (int c = 0; c < 4; ++c) EXPECT_EQ(y.value().at({0, c}), y.value().at({1, c}));
}

TEST(ImageEncoder, GradientMatchesFiniteDifferences) {
  Encoders e(tiny());
  Rng rng(13);
  const Tensor img = random_tensor({3, 1, 16, 16}, rng, 0.0, 1.0);
  const Tensor r = random_tensor({3, 4}, rng);
  const auto loss = [&](Tape& tape) {
    return ops::sum(ops::mul(e.image.encode(tape.constant(img), kTrain), tape.constant(r)));
  };
  std::vector<Parameter*> params;
  for (Parameter* p : e.store.trainable()) {
    if (p->name.rfind("image/", 0) == 0) params.push_back(p);
  }
  const auto report = grad_check(loss, params);
  EXPECT_TRUE(report.passed) << format_report(report);
}

TEST(Encoders, ParameterNames) {
  Encoders e(tiny());
  EXPECT_TRUE(e.store.contains("branch/0/conv/weight"));
  EXPECT_TRUE(e.store.contains("branch/2/lstm/backward/recurrent"));
  EXPECT_EQ(e.store.get("branch/1/conv/weight").value.shape(), (Shape{4, 2, 7}));
  EXPECT_EQ(e.store.get("branch/1/lstm/forward/input").value.shape(), (Shape{12, 4}));
  EXPECT_TRUE(e.store.contains("image/layer0/conv/weight"));
  EXPECT_EQ(e.image.updates().size(), 5u);
}

}  // namespace
}  // namespace scribeid
