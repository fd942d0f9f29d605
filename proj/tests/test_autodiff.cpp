#include <gtest/gtest.h>

#include "scribeid/errors.hpp"
#include "scribeid/gradcheck.hpp"
#include "scribeid/ops.hpp"
#include "test_support.hpp"

using namespace scribeid;

TEST(Autodiff, SumGradientIsOnes) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::vector({0.5, -2.0, 3.0}));
  Tape tape;
  tape.backward(ops::sum(tape.parameter(p)));
  for (double g : p.grad.data()) EXPECT_EQ(g, 1.0);
}

TEST(Autodiff, SquareGradient) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::vector({1.0, 2.0, 3.0}));
  Tape tape;
  Var v = tape.parameter(p);
  tape.backward(ops::sum(ops::mul(v, v)));
  EXPECT_EQ(p.grad[0], 2.0);
  EXPECT_EQ(p.grad[1], 4.0);
  EXPECT_EQ(p.grad[2], 6.0);
}

TEST(Autodiff, ValueUsedTwiceAccumulatesBothPaths) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::vector({1.5, -0.5}));
  Tape tape;
  Var v = tape.parameter(p);
  Var a = ops::scale(v, 3.0);
  Var b = ops::tanh(v);
  tape.backward(ops::sum(ops::add(a, b)));
  for (int i = 0; i < 2; ++i) {
    const double t = std::tanh(p.value[i]);
    EXPECT_NEAR(p.grad[i], 3.0 + (1.0 - t * t), 1e-15);
  }
}

TEST(Autodiff, GradientsAccumulateAcrossTapes) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::vector({1.0, 1.0}));
  for (int k = 0; k < 2; ++k) {
    Tape tape;
    tape.backward(ops::sum(tape.parameter(p)));
  }
  EXPECT_EQ(p.grad[0], 2.0);
  store.zero_grad();
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(Autodiff, ParameterAppearsOnceOnTape) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::scalar(1.0));
  Tape tape;
  EXPECT_EQ(tape.parameter(p).id, tape.parameter(p).id);
}

TEST(Autodiff, BackwardOnNonScalarThrows) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::vector({1.0, 2.0}));
  Tape tape;
  EXPECT_THROW(tape.backward(tape.parameter(p)), UsageError);
}

TEST(Autodiff, DuplicateParameterNameThrows) {
  ParameterStore store;
  store.add("w", Tensor::scalar(0.0));
  EXPECT_THROW(store.add("w", Tensor::scalar(1.0)), ConfigurationError);
}

TEST(Autodiff, DumpListsOpsInOrder) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::vector({1.0, 2.0}));
  Tape tape;
  ops::sum(ops::tanh(tape.parameter(p)));
  const std::string dump = tape.dump();
  const auto t = dump.find("tanh"), s = dump.find("sum");
  ASSERT_NE(t, std::string::npos);
  ASSERT_NE(s, std::string::npos);
  EXPECT_LT(t, s);
}

TEST(Autodiff, GradDisabledStillComputesValues) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::vector({0.25}));
  Tape tape;
  tape.set_grad_enabled(false);
  Var y = ops::tanh(tape.parameter(p));
  EXPECT_DOUBLE_EQ(y.value()[0], std::tanh(0.25));
}

TEST(GradCheck, IdentitySumHasZeroError) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::vector({0.1, 0.2, 0.3}));
  auto report = grad_check([&](Tape& t) { return ops::sum(t.parameter(p)); }, {&p});
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.max_rel_error, 1e-9);
}

TEST(GradCheck, Conv1dComposite) {
  Rng rng(42);
  ParameterStore store;
  Parameter& x = scribeid::testing::random_param(store, "x", {2, 16}, rng);
  Parameter& w = scribeid::testing::random_param(store, "w", {3, 2, 3}, rng);
  const Tensor r = scribeid::testing::random_tensor({3, 14}, rng);
  auto report = grad_check(
      [&](Tape& t) {
        Var y = ops::conv1d(t.parameter(x), t.parameter(w), 0);
        return ops::sum(ops::mul(y, t.constant(r)));
      },
      {&x, &w});
  EXPECT_LE(report.max_rel_error, 1e-6) << format_report(report);
}

TEST(GradCheck, DetectsWrongGradient) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::vector({0.7, -0.3}));
  auto report = grad_check(
      [&](Tape& t) {
        Var v = t.parameter(p);
        Tensor y = v.value();
        for (double& e : y.storage()) e = e * e;
        // Deliberately reports d(x^2)/dx as x.
        Var out = t.record("bad_square", std::move(y), {v}, [v](Tape& tp, const Tensor&, const Tensor& g) {
          Tensor& gx = tp.grad(v);
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * v.value()[i];
        });
        return ops::sum(out);
      },
      {&p});
  EXPECT_FALSE(report.passed);
}
