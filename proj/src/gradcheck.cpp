#include "scribeid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scribeid/rng.hpp"

namespace scribeid {
namespace {

double evaluate(const LossFn& loss) {
  Tape tape;
  tape.set_grad_enabled(false);
  return loss(tape).value().item();
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options) {
  for (Parameter* p : params) p->grad.fill(0.0);
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  std::vector<std::vector<std::size_t>> coords(params.size());
  if (options.sample == 0) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      coords[i].resize(params[i]->value.size());
      for (std::size_t j = 0; j < coords[i].size(); ++j) coords[i][j] = j;
    }
  } else {
    std::size_t total = 0;
    for (Parameter* p : params) total += p->value.size();
    Rng rng(options.seed);
    for (std::size_t s = 0; s < options.sample && total > 0; ++s) {
      std::size_t flat = rng.below(total);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (flat < params[i]->value.size()) {
          coords[i].push_back(flat);
          break;
        }
        flat -= params[i]->value.size();
      }
    }
  }

  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    GradCheckEntry entry{p.name, 0, 0.0};
    for (std::size_t j : coords[i]) {
      const double saved = p.value[j];
      p.value[j] = saved + options.step;
      const double up = evaluate(loss);
      p.value[j] = saved - options.step;
      const double down = evaluate(loss);
      p.value[j] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p.grad[j];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(analytic - numeric) / denom);
      ++entry.checked;
    }
    if (entry.checked == 0) continue;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream os;
  for (const auto& e : report.entries) {
    os << e.name << " checked=" << e.checked << " max_rel_error=" << e.max_rel_error << '\n';
  }
  os << "max_rel_error=" << report.max_rel_error << " tolerance=" << report.tolerance
     << (report.passed ? " PASS" : " FAIL") << '\n';
  return os.str();
}

}  // namespace scribeid
