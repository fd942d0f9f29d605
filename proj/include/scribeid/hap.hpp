#pragma once

// Hierarchical attention pooling: branches -> time -> letters.

#include <vector>

#include "scribeid/autodiff.hpp"
#include "scribeid/config.hpp"
#include "scribeid/encoder.hpp"

namespace scribeid {

// Per-letter result of the style and temporal levels.
struct LetterPooling {
  Var feature;                // [B, H]
  Tensor style;               // [B, N] branch weights
  Tensor temporal_raw;        // [B, T] softmax weights
  Tensor temporal_effective;  // [B, T] weights applied to the features
};

class Hap {
 public:
  Hap(ParameterStore& store, const ModelConfig& config);

  HapMode mode() const { return mode_; }

  // softmax(dense(h)) over the N branches: [B, 64] -> [B, N].
  Var style_weights(Var h) const;
  // sum_i w_i * styles[i]; writes w when `weights` is given.
  Var style_attend(const std::vector<Var>& styles, Var h, Tensor* weights = nullptr) const;

  // softmax(tau * readout(LSTM([h, e_t]))) over time: [B, T]. `head` selects
  // the per-branch head in order-changed mode.
  Var temporal_raw_weights(Var e, Var h, int head = 0) const;
  // sum_t (w_raw_t + 1/T) e_t: [B, H, T] -> [B, H].
  Var temporal_attend(Var e, Var h, int head = 0, Tensor* raw = nullptr, Tensor* effective = nullptr) const;

  // f_rel(h): [B, 64] -> [B, 1].
  Var reliability(Var h) const;
  // Softmax of reliabilities over the letters kept by `mask` ([B, L], 1 keeps)
  // and the weighted sum of letter features.
  Var letter_attend(const std::vector<Var>& letters, const std::vector<Var>& images, const Tensor* mask = nullptr,
                    Tensor* weights = nullptr) const;

  // Mode-dependent style and temporal levels for one letter group.
  LetterPooling pool_letter(const std::vector<Var>& styles, Var h) const;
  // Mode-dependent letter level.
  Var pool_letters(const std::vector<LetterPooling>& letters, const std::vector<Var>& images, const Tensor* mask,
                   Tensor* weights) const;

 private:
  struct TemporalHead {
    LstmParams lstm;
    Parameter* readout = nullptr;  // [1, hidden, 1]
    Parameter* tau = nullptr;      // [1]
  };

  bool style_attention() const;
  bool temporal_attention() const;
  bool letter_attention() const;

  HapMode mode_;
  int branches_;
  int timesteps_;
  Parameter* style_weight_ = nullptr;
  Parameter* style_bias_ = nullptr;
  std::vector<TemporalHead> temporal_;
  Parameter* letter_weight_ = nullptr;
  Parameter* letter_bias_ = nullptr;
};

}  // namespace scribeid
