#include "scribeid/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scribeid/errors.hpp"
#include "scribeid/ops.hpp"

namespace scribeid {
namespace {

void require_nonzero_rows(const Tensor& t, const char* what) {
  for (int r = 0; r < t.dim(0); ++r) {
    double ss = 0.0;
    for (int j = 0; j < t.dim(1); ++j) ss += t.at({r, j}) * t.at({r, j});
    if (std::sqrt(ss) < 1e-12) throw NormalizationError(std::string(what) + " row " + std::to_string(r) + " has zero norm");
  }
}

}  // namespace

Var norm_softmax_loss(Var embedding, Var weight, Var scale, std::span<const int> labels) {
  expect_rank(embedding.value(), 2, "embedding");
  expect_rank(weight.value(), 2, "classifier weight");
  require_nonzero_rows(embedding.value(), "embedding");
  require_nonzero_rows(weight.value(), "classifier weight");
  const int classes = weight.shape()[0];
  for (int y : labels) {
    if (y < 0 || y >= classes) throw ProtocolError("label " + std::to_string(y) + " outside the classifier");
  }
  const Var cosines = ops::matmul(ops::l2_normalize(embedding), ops::l2_normalize(weight), true);
  return ops::softmax_cross_entropy(ops::mul_scalar(cosines, scale), labels);
}

Var norm_softmax_loss(WriterNet& net, Var embedding, std::span<const int> labels) {
  if (!net.has_classifier()) throw UsageError("model has no classifier head");
  Tape& t = *embedding.tape;
  return norm_softmax_loss(embedding, t.parameter(net.params().get("classifier/weight")),
                           t.parameter(net.params().get("classifier/scale")), labels);
}

void RmsProp::step(const std::vector<Parameter*>& params, double lr) {
  for (Parameter* p : params) {
    if (p->grad.size() == 0) continue;
    Tensor& v = v_[p];
    if (v.size() == 0) v = Tensor(p->value.shape());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double g = p->grad[i];
      v[i] = rho_ * v[i] + (1.0 - rho_) * g * g;
      p->value[i] -= lr * g / (std::sqrt(v[i]) + eps_);
    }
  }
}

const Tensor& RmsProp::state(const Parameter& p) const {
  static const Tensor empty;
  const auto it = v_.find(&p);
  return it == v_.end() ? empty : it->second;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigurationError(what);
  };
  require(lr > 0.0, "lr must be positive");
  require(decay > 0.0 && decay <= 1.0, "decay must be in (0, 1]");
  require(decay_interval >= 1, "decay_interval must be at least 1");
  require(epochs >= 0, "epochs must be non-negative");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(steps_per_epoch >= 0, "steps_per_epoch must be non-negative");
  require(keep_all_probability >= 0.0 && keep_all_probability <= 1.0, "keep_all_probability must be in [0, 1]");
  require(clip_norm >= 0.0, "clip_norm must be non-negative");
  require(checkpoint_every >= 0, "checkpoint_every must be non-negative");
  require(checkpoint_every == 0 || !checkpoint_dir.empty(), "checkpoint_every needs checkpoint_dir");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"decay", c.decay},
          {"decay_interval", c.decay_interval},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"steps_per_epoch", c.steps_per_epoch},
          {"letters", c.letters},
          {"letter_independent", c.letter_independent},
          {"keep_all_probability", c.keep_all_probability},
          {"clip_norm", c.clip_norm},
          {"report_accuracy", c.report_accuracy},
          {"trainable_prefixes", c.trainable_prefixes},
          {"freeze_statistics", c.freeze_statistics},
          {"checkpoint_every", c.checkpoint_every},
          {"checkpoint_dir", c.checkpoint_dir.string()},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.decay = j.value("decay", c.decay);
    c.decay_interval = j.value("decay_interval", c.decay_interval);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.letters = j.value("letters", c.letters);
    c.letter_independent = j.value("letter_independent", c.letter_independent);
    c.keep_all_probability = j.value("keep_all_probability", c.keep_all_probability);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.report_accuracy = j.value("report_accuracy", c.report_accuracy);
    c.trainable_prefixes = j.value("trainable_prefixes", c.trainable_prefixes);
    c.freeze_statistics = j.value("freeze_statistics", c.freeze_statistics);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.checkpoint_dir = j.value("checkpoint_dir", std::string());
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

double learning_rate(const TrainConfig& c, int epoch) {
  return c.lr * std::pow(c.decay, epoch / c.decay_interval);
}

std::vector<Sample> assemble_batch(const CellIndex& cells, const std::vector<int>& letters,
                                   const std::vector<int>& writers, int batch_size, Rng& rng) {
  if (writers.empty()) throw ProtocolError("no training writers");
  std::vector<Sample> batch(static_cast<std::size_t>(batch_size));
  for (Sample& s : batch) {
    s.writer = writers[rng.below(writers.size())];
    for (int l : letters) {
      const auto& cell = cells.at(static_cast<std::size_t>(s.writer)).at(static_cast<std::size_t>(l));
      if (cell.empty()) {
        throw ProtocolError("writer " + std::to_string(s.writer) + " has no training record of letter " +
                            std::to_string(l));
      }
      s.records.push_back(cell[rng.below(cell.size())]);
    }
  }
  return batch;
}

Tensor letter_dropout_mask(int batch, int letters, double keep_all, Rng& rng) {
  Tensor mask({batch, letters}, 1.0);
  if (letters <= 2) return mask;
  std::vector<int> order(static_cast<std::size_t>(letters));
  for (int b = 0; b < batch; ++b) {
    if (rng.uniform() < keep_all) continue;
    const int keep = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(letters - 2)));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (int k = keep; k < letters; ++k) mask.at({b, order[k]}) = 0.0;
  }
  return mask;
}

std::vector<int> training_writers(const PreparedCorpus& corpus, const std::vector<Partition>& assignment,
                                  const std::string& letters) {
  const CellIndex cells = index_cells(corpus, assignment, Partition::Train);
  std::vector<int> out;
  for (std::size_t w = 0; w < cells.size(); ++w) {
    bool complete = true;
    for (char l : letters) {
      const int li = corpus.letter_index(l);
      if (li < 0) throw UnsupportedLetterError(std::string("letter '") + l + "' is not in the corpus alphabet");
      complete = complete && !cells[w][static_cast<std::size_t>(li)].empty();
    }
    if (complete) out.push_back(static_cast<int>(w));
  }
  return out;
}

nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j = {{"epoch", r.epoch}, {"lr", r.lr}, {"loss", r.loss}};
  if (r.train_acc >= 0.0) j["train_acc"] = r.train_acc;
  return j;
}

TrainReport train(WriterNet& net, const PreparedCorpus& corpus, const std::vector<Partition>& assignment,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (!net.has_classifier()) throw UsageError("training needs a model with a classifier head");
  const std::string letters = config.letters.empty() ? net.config().alphabet : config.letters;
  std::vector<int> letter_ids;
  for (char l : letters) {
    if (net.config().alphabet.find(l) == std::string::npos) {
      throw UnsupportedLetterError(std::string("letter '") + l + "' is not in the model alphabet");
    }
    letter_ids.push_back(corpus.letter_index(l));
    if (letter_ids.back() < 0) throw UnsupportedLetterError(std::string("letter '") + l + "' is not in the corpus");
  }
  const std::vector<int> writers = training_writers(corpus, assignment, letters);
  if (static_cast<int>(writers.size()) != net.config().num_writers) {
    throw ConfigurationError("classifier has " + std::to_string(net.config().num_writers) + " rows but " +
                             std::to_string(writers.size()) + " training writers are complete");
  }
  std::vector<int> label_of(corpus.writers.size(), -1);
  nlohmann::json ids = nlohmann::json::array();
  for (std::size_t k = 0; k < writers.size(); ++k) {
    label_of[static_cast<std::size_t>(writers[k])] = static_cast<int>(k);
    ids.push_back(corpus.writers[static_cast<std::size_t>(writers[k])]);
  }
  net.metadata["writers"] = ids;

  const CellIndex cells = index_cells(corpus, assignment, Partition::Train);
  long trajectories = 0;
  for (int w : writers)
    for (int l : letter_ids) trajectories += static_cast<long>(cells[w][l].size());
  const long per_step = static_cast<long>(letters.size()) * config.batch_size;
  const long steps_per_epoch =
      config.steps_per_epoch > 0 ? config.steps_per_epoch : std::max(1L, (trajectories + per_step - 1) / per_step);

  std::vector<Parameter*> params;
  for (Parameter* p : net.params().trainable()) {
    bool take = config.trainable_prefixes.empty();
    for (const auto& prefix : config.trainable_prefixes) take = take || p->name.rfind(prefix, 0) == 0;
    if (take) params.push_back(p);
  }
  RmsProp optimizer;
  Rng rng(derive_seed(config.seed, {0x545241494eULL}));
  const NormContext ctx{!config.freeze_statistics, false};
  TrainReport report;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate(config, epoch);
    double loss_sum = 0.0;
    long correct = 0, seen = 0;
    for (long step = 0; step < steps_per_epoch; ++step) {
      const std::vector<Sample> batch = assemble_batch(cells, letter_ids, writers, config.batch_size, rng);
      std::vector<std::vector<int>> rows;
      std::vector<int> labels;
      for (const Sample& s : batch) {
        rows.push_back(s.records);
        labels.push_back(label_of[static_cast<std::size_t>(s.writer)]);
      }
      ModelInput input = make_input(corpus, letters, rows);
      if (config.letter_independent) {
        input.mask = letter_dropout_mask(config.batch_size, static_cast<int>(letters.size()),
                                         config.keep_all_probability, rng);
      }
      net.params().zero_grad();
      Tape tape;
      const ForwardResult fwd = net.forward(tape, input, ctx);
      const Var logits = net.logits(fwd.embedding);
      const Var loss = ops::softmax_cross_entropy(logits, labels);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw DivergenceError("loss is not finite at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(report.steps));
      }
      tape.backward(loss);
      if (config.clip_norm > 0.0) {
        double ss = 0.0;
        for (Parameter* p : params)
          for (std::size_t i = 0; i < p->grad.size(); ++i) ss += p->grad[i] * p->grad[i];
        const double norm = std::sqrt(ss);
        if (norm > config.clip_norm) {
          for (Parameter* p : params)
            for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= config.clip_norm / norm;
        }
      }
      optimizer.step(params, lr);
      net.project_parameters();
      if (report.steps == 0) report.first_step_loss = value;
      ++report.steps;
      loss_sum += value;
      if (config.report_accuracy) {
        const Tensor& z = logits.value();
        for (int b = 0; b < z.dim(0); ++b) {
          int best = 0;
          for (int c = 1; c < z.dim(1); ++c)
            if (z.at({b, c}) > z.at({b, best})) best = c;
          correct += best == labels[static_cast<std::size_t>(b)];
          ++seen;
        }
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = loss_sum / static_cast<double>(steps_per_epoch);
    if (config.report_accuracy) rec.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      std::filesystem::create_directories(config.checkpoint_dir);
      net.save(config.checkpoint_dir / ("epoch-" + std::to_string(epoch + 1) + ".ckpt"));
    }
  }
  return report;
}

}  // namespace scribeid
