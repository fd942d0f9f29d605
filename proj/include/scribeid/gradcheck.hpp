#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scribeid/autodiff.hpp"

namespace scribeid {

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
  // 0 checks every scalar; otherwise this many coordinates are sampled in total.
  std::size_t sample = 0;
  std::uint64_t seed = 0;
};

// `loss` must build a single-element node on the tape it is given; it is
// called once for the analytic gradient and twice per checked coordinate.
using LossFn = std::function<Var(Tape&)>;

// Compares tape gradients with central differences, parameter by parameter.
GradCheckReport grad_check(const LossFn& loss, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options = {});

std::string format_report(const GradCheckReport& report);

}  // namespace scribeid
