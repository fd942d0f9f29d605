#include "scribeid/hap.hpp"

#include "scribeid/errors.hpp"
#include "scribeid/init.hpp"
#include "scribeid/ops.hpp"

namespace scribeid {

Hap::Hap(ParameterStore& store, const ModelConfig& config)
    : mode_(config.hap_mode), branches_(config.branches), timesteps_(config.timesteps) {
  Rng rng(derive_seed(config.seed, {0x48415000ULL}));
  const int img = config.image_dim();
  if (style_attention()) {
    Tensor w({branches_, img});
    xavier_uniform(w, img, branches_, rng);
    style_weight_ = &store.add("hap/style/weight", std::move(w));
    style_bias_ = &store.add("hap/style/bias", Tensor({branches_}));
  }
  if (temporal_attention()) {
    const int heads = mode_ == HapMode::OrderChanged ? branches_ : 1;
    for (int i = 0; i < heads; ++i) {
      const std::string prefix = heads == 1 ? std::string("hap/temporal") : "hap/temporal/" + std::to_string(i);
      TemporalHead head;
      head.lstm = add_lstm(store, prefix + "/lstm", img + config.feature_dim(), config.temporal_hidden, rng);
      Tensor r({1, config.temporal_hidden, 1});
      xavier_uniform(r, config.temporal_hidden, 1, rng);
      head.readout = &store.add(prefix + "/readout", std::move(r));
      head.tau = &store.add(prefix + "/tau", Tensor::scalar(1.0));
      temporal_.push_back(head);
    }
  }
  if (letter_attention()) {
    Tensor w({1, img});
    xavier_uniform(w, img, 1, rng);
    letter_weight_ = &store.add("hap/letter/weight", std::move(w));
    letter_bias_ = &store.add("hap/letter/bias", Tensor({1}));
  }
}

bool Hap::style_attention() const {
  return mode_ == HapMode::Full || mode_ == HapMode::WithStyle || mode_ == HapMode::WithStyleTemporal ||
         mode_ == HapMode::OrderChanged;
}

bool Hap::temporal_attention() const {
  return mode_ == HapMode::Full || mode_ == HapMode::WithStyleTemporal || mode_ == HapMode::OrderChanged;
}

bool Hap::letter_attention() const { return mode_ == HapMode::Full || mode_ == HapMode::OrderChanged; }

Var Hap::style_weights(Var h) const {
  if (!style_weight_) throw UsageError("style attention is disabled in " + to_string(mode_) + " mode");
  Tape& t = *h.tape;
  return ops::softmax(ops::dense(h, t.parameter(*style_weight_), t.parameter(*style_bias_)));
}

Var Hap::style_attend(const std::vector<Var>& styles, Var h, Tensor* weights) const {
  if (static_cast<int>(styles.size()) != branches_) throw DimensionError("style_attend: expected one input per branch");
  const Var w = style_weights(h);
  if (weights) *weights = w.value();
  return ops::mix(styles, w);
}

Var Hap::temporal_raw_weights(Var e, Var h, int head) const {
  if (temporal_.empty()) throw UsageError("temporal attention is disabled in " + to_string(mode_) + " mode");
  const TemporalHead& th = temporal_.at(static_cast<std::size_t>(head));
  Tape& t = *e.tape;
  const int batch = e.shape()[0], steps = e.shape()[2];
  const Var g = ops::concat({ops::broadcast_time(h, steps), e}, 1);
  const Var states = ops::lstm_sequence(g, th.lstm.on(t));
  const Var scores = ops::reshape(ops::conv1d(states, t.parameter(*th.readout), 0), {batch, steps});
  return ops::softmax(ops::mul_scalar(scores, t.parameter(*th.tau)));
}

Var Hap::temporal_attend(Var e, Var h, int head, Tensor* raw, Tensor* effective) const {
  const Var w_raw = temporal_raw_weights(e, h, head);
  const Var w = ops::add_constant(w_raw, 1.0 / e.shape()[2]);
  if (raw) *raw = w_raw.value();
  if (effective) *effective = w.value();
  return ops::time_pool(e, w);
}

Var Hap::reliability(Var h) const {
  if (!letter_weight_) throw UsageError("letter attention is disabled in " + to_string(mode_) + " mode");
  Tape& t = *h.tape;
  return ops::dense(h, t.parameter(*letter_weight_), t.parameter(*letter_bias_));
}

namespace {

Tensor full_mask(int batch, int n) { return Tensor({batch, n}, 1.0); }

}  // namespace

Var Hap::letter_attend(const std::vector<Var>& letters, const std::vector<Var>& images, const Tensor* mask,
                       Tensor* weights) const {
  if (letters.empty()) throw UsageError("letter attention needs at least one letter");
  if (letters.size() != images.size()) throw DimensionError("letter_attend: one image feature per letter expected");
  std::vector<Var> logits;
  for (const Var& h : images) logits.push_back(reliability(h));
  const int batch = letters[0].shape()[0];
  const Tensor m = mask ? *mask : full_mask(batch, static_cast<int>(letters.size()));
  const Var w = ops::masked_softmax(ops::concat(logits, 1), m);
  if (weights) *weights = w.value();
  return ops::mix(letters, w);
}

LetterPooling Hap::pool_letter(const std::vector<Var>& styles, Var h) const {
  if (static_cast<int>(styles.size()) != branches_) throw DimensionError("pool_letter: expected one input per branch");
  Tape& t = *h.tape;
  const int batch = styles[0].shape()[0], steps = styles[0].shape()[2];
  LetterPooling out;
  const Var uniform_time = t.constant(Tensor({batch, steps}, 1.0 / steps));
  const Var uniform_style = t.constant(Tensor({batch, branches_}, 1.0 / branches_));

  switch (mode_) {
    case HapMode::MeanPooling: {
      out.style = uniform_style.value();
      out.temporal_raw = out.temporal_effective = uniform_time.value();
      out.feature = ops::time_pool(ops::mix(styles, uniform_style), uniform_time);
      break;
    }
    case HapMode::MaxPooling: {
      out.feature = ops::max_time(ops::max_stack(styles));
      break;
    }
    case HapMode::WithStyle: {
      const Var e = style_attend(styles, h, &out.style);
      out.temporal_raw = out.temporal_effective = uniform_time.value();
      out.feature = ops::time_pool(e, uniform_time);
      break;
    }
    case HapMode::Full:
    case HapMode::WithStyleTemporal: {
      const Var e = style_attend(styles, h, &out.style);
      out.feature = temporal_attend(e, h, 0, &out.temporal_raw, &out.temporal_effective);
      break;
    }
    case HapMode::OrderChanged: {
      std::vector<Var> pooled;
      std::vector<Tensor> raws, effs;
      for (int i = 0; i < branches_; ++i) {
        Tensor raw, eff;
        pooled.push_back(temporal_attend(styles[static_cast<std::size_t>(i)], h, i, &raw, &eff));
        raws.push_back(std::move(raw));
        effs.push_back(std::move(eff));
      }
      const Var w = style_weights(h);
      out.style = w.value();
      out.feature = ops::mix(pooled, w);
      // Report the style-weighted average of the per-branch temporal weights.
      out.temporal_raw = Tensor({batch, steps});
      out.temporal_effective = Tensor({batch, steps});
      for (int b = 0; b < batch; ++b) {
        for (int i = 0; i < branches_; ++i) {
          const double wi = out.style.at({b, i});
          for (int s = 0; s < steps; ++s) {
            out.temporal_raw.at({b, s}) += wi * raws[i].at({b, s});
            out.temporal_effective.at({b, s}) += wi * effs[i].at({b, s});
          }
        }
      }
      break;
    }
  }
  return out;
}

Var Hap::pool_letters(const std::vector<LetterPooling>& letters, const std::vector<Var>& images, const Tensor* mask,
                      Tensor* weights) const {
  if (letters.empty()) throw UsageError("letter pooling needs at least one letter");
  std::vector<Var> features;
  for (const LetterPooling& l : letters) features.push_back(l.feature);
  Tape& t = *features[0].tape;
  const int batch = features[0].shape()[0], n = static_cast<int>(features.size());
  if (letter_attention()) return letter_attend(features, images, mask, weights);
  if (mode_ == HapMode::MaxPooling) {
    if (weights) *weights = Tensor();
    return ops::max_stack(features, mask);
  }
  const Tensor m = mask ? *mask : full_mask(batch, n);
  const Var w = ops::masked_softmax(t.constant(Tensor({batch, n})), m);
  if (weights) *weights = w.value();
  return ops::mix(features, w);
}

}  // namespace scribeid
