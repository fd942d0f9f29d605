#pragma once

// Multi-branch trajectory encoder and the shared letter-image encoder.

#include <string>
#include <vector>

#include "scribeid/autodiff.hpp"
#include "scribeid/config.hpp"
#include "scribeid/rng.hpp"
#include "scribeid/lsa.hpp"
#include "scribeid/ops.hpp"

namespace scribeid {

struct LstmParams {
  Parameter* input = nullptr;
  Parameter* recurrent = nullptr;
  Parameter* bias = nullptr;

  ops::LstmWeights on(Tape& tape) const;
};

// Registers "<prefix>/{input,recurrent,bias}" with Xavier-uniform weights and
// a forget-gate bias of 1.
LstmParams add_lstm(ParameterStore& store, const std::string& prefix, int input, int hidden, Rng& rng);

struct BranchParams {
  Parameter* conv_weight = nullptr;  // [C, 2, S]
  Parameter* conv_bias = nullptr;    // [C]
  LstmParams forward;
  LstmParams backward;
};

class TrajectoryEncoder {
 public:
  TrajectoryEncoder(ParameterStore& store, const ModelConfig& config);

  // letters[g] labels xs[g] ([B_g, 2, T]). Returns out[g][i], the [B_g, H, T]
  // style feature of group g from branch i: conv -> tanh -> segment LSA ->
  // biLSTM -> stroke LSA. Groups are batched together through shared layers.
  std::vector<std::vector<Var>> encode(Lsa& lsa, const std::vector<char>& letters, const std::vector<Var>& xs,
                                       const NormContext& ctx) const;

  const BranchParams& branch(int i) const { return branches_.at(static_cast<std::size_t>(i)); }
  int branches() const { return static_cast<int>(branches_.size()); }

 private:
  std::vector<BranchParams> branches_;
  int kernel_;
  int timesteps_;
};

class ImageEncoder {
 public:
  ImageEncoder(ParameterStore& store, const ModelConfig& config);

  // [B, 1, S, S] -> [B, 64]: five conv3x3 + batch-norm + ReLU layers, 2x2 max
  // pooling after the first four, then global average pooling.
  Var encode(Var images, const NormContext& ctx);

  std::vector<long>& updates() { return updates_; }
  const std::vector<long>& updates() const { return updates_; }

 private:
  struct Layer {
    Parameter* weight = nullptr;
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
    Parameter* running_mean = nullptr;
    Parameter* running_var = nullptr;
  };
  std::vector<Layer> layers_;
  std::vector<long> updates_;
  int raster_;
  double eps_;
  double momentum_;
};

}  // namespace scribeid
