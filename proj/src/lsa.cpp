#include "scribeid/lsa.hpp"

#include <algorithm>

#include "scribeid/errors.hpp"
#include "scribeid/ops.hpp"

namespace scribeid {

const char* to_string(LsaStage stage) { return stage == LsaStage::Segment ? "segment" : "stroke"; }

Lsa::Lsa(ParameterStore& store, const ModelConfig& config)
    : mode_(config.lsa_mode),
      alphabet_(config.alphabet),
      branches_(config.branches),
      eps_(config.lsa_eps),
      momentum_(config.lsa_momentum) {
  if (mode_ == LsaMode::WithoutLsa) return;
  const bool selection = mode_ != LsaMode::WithoutSelection;
  for (LsaStage stage : {LsaStage::Segment, LsaStage::Stroke}) {
    const int d = stage == LsaStage::Segment ? config.segment_channels : config.feature_dim();
    for (char letter : alphabet_) {
      for (int b = 0; b < branches_; ++b) {
        const std::string k = key(letter, b, stage);
        if (subs_.count(k)) continue;
        LsaSubmodule sub;
        sub.key = k;
        if (selection) {
          sub.weight = &store.add(k + "/weight", Tensor({d}, 1.0));
          sub.bias = &store.add(k + "/bias", Tensor({d}, 0.0));
        }
        sub.running_mean = &store.add(k + "/running_mean", Tensor({d}, 0.0), false);
        sub.running_var = &store.add(k + "/running_var", Tensor({d}, 1.0), false);
        subs_.emplace(k, std::move(sub));
      }
    }
  }
}

std::string Lsa::key(char letter, int branch, LsaStage stage) const {
  const bool by_letter = mode_ == LsaMode::Full || mode_ == LsaMode::WithoutSelection || mode_ == LsaMode::StyleSharing;
  const bool by_branch =
      mode_ == LsaMode::Full || mode_ == LsaMode::WithoutSelection || mode_ == LsaMode::LetterSharing;
  return std::string("lsa/") + to_string(stage) + "/" + (by_letter ? std::string(1, letter) : "*") + "/" +
         (by_branch ? std::to_string(branch) : "*");
}

LsaSubmodule& Lsa::select(char letter, int branch, LsaStage stage) {
  return const_cast<LsaSubmodule&>(static_cast<const Lsa&>(*this).select(letter, branch, stage));
}

const LsaSubmodule& Lsa::select(char letter, int branch, LsaStage stage) const {
  if (letter == 0 || alphabet_.find(letter) == std::string::npos) {
    throw UnsupportedLetterError(std::string("letter '") + (letter ? std::string(1, letter) : "") +
                                 "' has no adapter; registered alphabet is '" + alphabet_ + "'");
  }
  if (branch < 0 || branch >= branches_) {
    throw ConfigurationError("branch " + std::to_string(branch) + " has no adapter");
  }
  if (mode_ == LsaMode::WithoutLsa) throw UsageError("adapters are disabled in without-lsa mode");
  return subs_.at(key(letter, branch, stage));
}

std::vector<Var> Lsa::apply(LsaStage stage, const std::vector<LsaInput>& inputs, const NormContext& ctx) {
  std::vector<Var> out(inputs.size());
  if (mode_ == LsaMode::WithoutLsa) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (alphabet_.find(inputs[i].letter) == std::string::npos) {
        throw UnsupportedLetterError(std::string("letter '") + inputs[i].letter + "' is not registered");
      }
      out[i] = inputs[i].x;
    }
    return out;
  }
  // Group inputs by submodule, in order of first appearance.
  std::vector<std::pair<LsaSubmodule*, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    LsaSubmodule* sub = &select(inputs[i].letter, inputs[i].branch, stage);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == sub; });
    if (it == groups.end()) {
      groups.push_back({sub, {i}});
    } else {
      it->second.push_back(i);
    }
  }
  for (auto& [sub, members] : groups) {
    Var x;
    if (members.size() == 1) {
      x = inputs[members[0]].x;
    } else {
      std::vector<Var> parts;
      for (std::size_t i : members) parts.push_back(inputs[i].x);
      x = ops::concat(parts, 0);
    }
    Tape& tape = *x.tape;
    Var y = standardize(x, {sub->running_mean, sub->running_var, &sub->updates}, eps_, momentum_, ctx);
    if (sub->weight) y = ops::channel_affine(y, tape.parameter(*sub->weight), tape.parameter(*sub->bias));
    if (members.size() == 1) {
      out[members[0]] = y;
      continue;
    }
    int offset = 0;
    for (std::size_t i : members) {
      const int rows = inputs[i].x.shape()[0];
      out[i] = ops::slice(y, 0, offset, rows);
      offset += rows;
    }
  }
  return out;
}

std::vector<LsaSubmodule*> Lsa::submodules() {
  std::vector<LsaSubmodule*> out;
  for (auto& [k, s] : subs_) out.push_back(&s);
  return out;
}

std::vector<const LsaSubmodule*> Lsa::submodules() const {
  std::vector<const LsaSubmodule*> out;
  for (const auto& [k, s] : subs_) out.push_back(&s);
  return out;
}

}  // namespace scribeid
