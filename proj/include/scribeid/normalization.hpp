#pragma once

#include "scribeid/autodiff.hpp"

namespace scribeid {

struct NormContext {
  bool training = false;
  // Evaluate with the statistics of the current batch instead of running averages.
  bool batch_stats = false;
};

// Running statistics of one normalization site. `updates` counts training
// batches folded into the averages.
struct RunningStats {
  Parameter* mean = nullptr;
  Parameter* var = nullptr;
  long* updates = nullptr;
};

// Per-channel (axis 1) standardization. Training or batch_stats mode uses the
// batch statistics (biased variance) and, when training, folds them into the
// running averages: r <- momentum * r + (1 - momentum) * batch. Otherwise the
// running averages are used and UsageError is thrown if none were recorded.
Var standardize(Var x, RunningStats stats, double eps, double momentum, const NormContext& ctx);

}  // namespace scribeid
