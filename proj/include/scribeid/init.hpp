#pragma once

#include <cmath>

#include "scribeid/rng.hpp"
#include "scribeid/tensor.hpp"

namespace scribeid {

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline void xavier_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : t.storage()) v = rng.uniform(-limit, limit);
}

// Uniform in +-sqrt(6 / fan_in), for layers followed by ReLU.
inline void he_uniform(Tensor& t, int fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / fan_in);
  for (double& v : t.storage()) v = rng.uniform(-limit, limit);
}

}  // namespace scribeid
