#pragma once

// Norm-softmax objective, RMSprop, batch assembly and the training loop.

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "scribeid/dataset.hpp"
#include "scribeid/model.hpp"
#include "scribeid/rng.hpp"

namespace scribeid {

// Cross-entropy of s * normalize(E) normalize(W)^T, averaged over the batch.
// Throws NormalizationError when a feature or weight row has zero norm.
Var norm_softmax_loss(Var embedding, Var weight, Var scale, std::span<const int> labels);
Var norm_softmax_loss(WriterNet& net, Var embedding, std::span<const int> labels);

class RmsProp {
 public:
  explicit RmsProp(double rho = 0.9, double eps = 1e-8) : rho_(rho), eps_(eps) {}
  // v <- rho v + (1 - rho) g^2;  p <- p - lr g / (sqrt(v) + eps)
  void step(const std::vector<Parameter*>& params, double lr);
  // Squared-gradient average of `p`; empty before its first step.
  const Tensor& state(const Parameter& p) const;

 private:
  double rho_;
  double eps_;
  std::unordered_map<const Parameter*, Tensor> v_;
};

struct TrainConfig {
  double lr = 1e-3;
  double decay = 0.5;
  int decay_interval = 100;  // epochs
  int epochs = 500;
  int batch_size = 32;
  int steps_per_epoch = 0;  // 0: ceil(train trajectories / (letters * batch_size))
  std::string letters;      // letters fed to the model; empty means the model alphabet
  bool letter_independent = false;
  double keep_all_probability = 0.5;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables
  bool report_accuracy = true;
  // Only parameters whose name starts with one of these are updated (all when empty).
  std::vector<std::string> trainable_prefixes;
  // Run normalization layers on their running statistics and leave them unchanged.
  bool freeze_statistics = false;
  int checkpoint_every = 0;  // epochs, 0 disables
  std::filesystem::path checkpoint_dir;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// lr0 * decay^floor(epoch / interval)
double learning_rate(const TrainConfig& c, int epoch);

// One training example: a writer and one record per letter.
struct Sample {
  int writer = -1;
  std::vector<int> records;
};

// Writers uniform with replacement from `writers`; for each letter one record
// uniform over that writer's cell. Throws ProtocolError for an empty cell.
std::vector<Sample> assemble_batch(const CellIndex& cells, const std::vector<int>& letters,
                                   const std::vector<int>& writers, int batch_size, Rng& rng);

// [batch, letters] keep-mask: each row keeps everything with probability
// `keep_all`, otherwise a random subset whose size is uniform in [2, letters - 1].
Tensor letter_dropout_mask(int batch, int letters, double keep_all, Rng& rng);

// Writers with a training record of every letter in `letters`, in corpus order.
std::vector<int> training_writers(const PreparedCorpus& corpus, const std::vector<Partition>& assignment,
                                  const std::string& letters);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_acc = -1.0;  // negative when not tracked
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double first_step_loss = 0.0;
  long steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains the classifier-equipped model on the Train partition. The classifier
// rows follow training_writers(); their ids are stored in
// net.metadata["writers"]. Throws DivergenceError on a non-finite loss.
TrainReport train(WriterNet& net, const PreparedCorpus& corpus, const std::vector<Partition>& assignment,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace scribeid
