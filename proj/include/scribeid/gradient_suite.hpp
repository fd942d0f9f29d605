#pragma once

// Small randomized instances of every differentiable primitive plus an
// end-to-end loss, checked against central differences.

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "scribeid/gradcheck.hpp"
#include "scribeid/rng.hpp"

namespace scribeid {

struct PrimitiveCase {
  std::string name;
  std::vector<Shape> inputs;
  std::function<Var(Tape&, const std::vector<Var>&, Rng&)> op;
};

inline void PrintTo(const PrimitiveCase& c, std::ostream* os) { *os << c.name; }

std::vector<PrimitiveCase> primitive_cases();

// Builds one seeded instance and checks sum(op(inputs) * R) for a random R.
GradCheckReport check_primitive(const PrimitiveCase& c, std::uint64_t seed);

// Norm-softmax loss of a small full model (all modules, training-mode
// normalization) with `sample` randomly chosen coordinates. Relative errors
// use an absolute floor of 1e-5.
GradCheckReport check_end_to_end(std::uint64_t seed, std::size_t sample = 600);

struct GradientSuiteResult {
  std::vector<std::pair<std::string, GradCheckReport>> cases;
  double max_rel_error = 0.0;
  bool passed = true;
};

// Every primitive plus the end-to-end loss.
GradientSuiteResult run_gradient_suite(std::uint64_t seed = 1);

}  // namespace scribeid
