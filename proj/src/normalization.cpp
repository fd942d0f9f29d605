#include "scribeid/normalization.hpp"

#include <cmath>

#include "scribeid/errors.hpp"
#include "scribeid/ops.hpp"

namespace scribeid {

Var standardize(Var x, RunningStats stats, double eps, double momentum, const NormContext& ctx) {
  if (ctx.training || ctx.batch_stats) {
    Tensor mu, var;
    Var y = ops::channel_normalize(x, eps, &mu, &var);
    if (ctx.training) {
      Tensor& rm = stats.mean->value;
      Tensor& rv = stats.var->value;
      for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = momentum * rm[c] + (1.0 - momentum) * mu[c];
        rv[c] = momentum * rv[c] + (1.0 - momentum) * var[c];
      }
      ++*stats.updates;
    }
    return y;
  }
  if (*stats.updates <= 0) {
    throw UsageError("running statistics of '" + stats.mean->name + "' were never populated by a training step");
  }
  const Tensor& rm = stats.mean->value;
  const Tensor& rv = stats.var->value;
  Tensor scale(rm.shape()), shift(rm.shape());
  for (std::size_t c = 0; c < rm.size(); ++c) {
    scale[c] = 1.0 / std::sqrt(rv[c] + eps);
    shift[c] = -rm[c] * scale[c];
  }
  Tape& tape = *x.tape;
  return ops::channel_affine(x, tape.constant(std::move(scale)), tape.constant(std::move(shift)));
}

}  // namespace scribeid
