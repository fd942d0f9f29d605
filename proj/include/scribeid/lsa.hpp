#pragma once

// Letters-and-styles adapter: per-(letter, branch) standardization followed by
// an elementwise affine selection, applied after the segment encoder and after
// the stroke encoder.

#include <map>
#include <string>
#include <vector>

#include "scribeid/autodiff.hpp"
#include "scribeid/config.hpp"
#include "scribeid/normalization.hpp"

namespace scribeid {

enum class LsaStage { Segment, Stroke };

const char* to_string(LsaStage stage);

struct LsaSubmodule {
  std::string key;                // lsa/<stage>/<letter>/<branch>, '*' for a shared part
  Parameter* weight = nullptr;    // null when selection is disabled
  Parameter* bias = nullptr;
  Parameter* running_mean = nullptr;
  Parameter* running_var = nullptr;
  long updates = 0;
};

struct LsaInput {
  char letter = 0;
  int branch = 0;
  Var x;  // [B, d, T]
};

class Lsa {
 public:
  Lsa(ParameterStore& store, const ModelConfig& config);
  Lsa(const Lsa&) = delete;
  Lsa& operator=(const Lsa&) = delete;

  // Throws UnsupportedLetterError for letters outside the alphabet,
  // ConfigurationError for a branch out of range and UsageError when the mode
  // has no adapters.
  LsaSubmodule& select(char letter, int branch, LsaStage stage);
  const LsaSubmodule& select(char letter, int branch, LsaStage stage) const;

  // Applies each input's submodule. Inputs that resolve to the same submodule
  // (sharing modes) are standardized jointly on the concatenated batch.
  std::vector<Var> apply(LsaStage stage, const std::vector<LsaInput>& inputs, const NormContext& ctx);

  std::size_t submodule_count() const { return subs_.size(); }
  std::vector<LsaSubmodule*> submodules();
  std::vector<const LsaSubmodule*> submodules() const;
  LsaMode mode() const { return mode_; }

 private:
  std::string key(char letter, int branch, LsaStage stage) const;

  LsaMode mode_;
  std::string alphabet_;
  int branches_;
  double eps_;
  double momentum_;
  std::map<std::string, LsaSubmodule> subs_;
};

}  // namespace scribeid
