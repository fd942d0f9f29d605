#pragma once

#include <string>
#include <vector>

#include "scribeid/autodiff.hpp"
#include "scribeid/rng.hpp"
#include "scribeid/tensor.hpp"

namespace scribeid::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

inline Parameter& random_param(ParameterStore& store, const std::string& name, Shape shape, Rng& rng,
                               double lo = -1.0, double hi = 1.0) {
  return store.add(name, random_tensor(std::move(shape), rng, lo, hi));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace scribeid::testing
