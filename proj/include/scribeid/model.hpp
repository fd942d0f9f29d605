#pragma once

// The complete network: encoders, adapters, pooling and the cosine classifier,
// plus the checkpoint container.

#include <filesystem>
#include <istream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scribeid/autodiff.hpp"
#include "scribeid/config.hpp"
#include "scribeid/dataset.hpp"
#include "scribeid/encoder.hpp"
#include "scribeid/hap.hpp"
#include "scribeid/lsa.hpp"

namespace scribeid {

// One letter for a batch of B samples.
struct LetterGroup {
  char letter = 0;
  Tensor xy;      // [B, 2, T]
  Tensor raster;  // [B, 1, S, S]
};

struct ModelInput {
  std::vector<LetterGroup> letters;  // distinct letters, every group with the same B
  // Optional [B, letters.size()] keep-mask in the order of `letters`; each row
  // keeps at least one letter.
  std::optional<Tensor> mask;

  int batch() const { return letters.empty() ? 0 : letters[0].xy.dim(0); }
};

struct ForwardResult {
  Var embedding;                       // [B, H]
  std::string letters;                 // letters in alphabet order
  std::vector<LetterPooling> pooling;  // per letter, same order
  Tensor letter_weights;               // [B, letters.size()], empty in max-pooling mode
  std::vector<Var> images;             // per-letter image features [B, 64]
};

class WriterNet {
 public:
  explicit WriterNet(ModelConfig config);
  WriterNet(const WriterNet&) = delete;
  WriterNet& operator=(const WriterNet&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  Lsa& lsa() { return *lsa_; }
  const Lsa& lsa() const { return *lsa_; }
  TrajectoryEncoder& trajectory_encoder() { return *trajectory_; }
  ImageEncoder& image_encoder() { return *image_; }
  const Hap& hap() const { return *hap_; }

  // Letters are processed in alphabet order regardless of input order, so the
  // embedding does not depend on how the groups are listed.
  ForwardResult forward(Tape& tape, const ModelInput& input, const NormContext& ctx);

  bool has_classifier() const { return classifier_ != nullptr; }
  // s * normalize(E) normalize(W)^T. Throws NormalizationError for a zero row.
  Var logits(Var embedding);
  // Keeps the classifier scale at or above 1 after an update.
  void project_parameters();

  std::size_t parameter_count() const { return store_.trainable_scalars(); }

  // Free-form JSON stored with the checkpoint (e.g. classifier writer ids).
  nlohmann::json metadata = nlohmann::json::object();

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<WriterNet> load(const std::filesystem::path& path);

 private:
  static std::unique_ptr<WriterNet> read_payload(std::istream& in, const nlohmann::json& header);

  ModelConfig config_;
  ParameterStore store_;
  std::unique_ptr<Lsa> lsa_;
  std::unique_ptr<TrajectoryEncoder> trajectory_;
  std::unique_ptr<ImageEncoder> image_;
  std::unique_ptr<Hap> hap_;
  Parameter* classifier_ = nullptr;
  Parameter* scale_ = nullptr;
};

// Copies prepared records into a letter group: rows[b] is a record index.
LetterGroup make_group(const PreparedCorpus& corpus, char letter, const std::vector<int>& rows);
// From normalized trajectories (one per sample), rasterizing on the fly.
LetterGroup make_group(const std::vector<NormalizedTrajectory>& trajs, char letter, int raster_size);

// samples[b][k] is the record of letters[k] for sample b.
ModelInput make_input(const PreparedCorpus& corpus, const std::string& letters,
                      const std::vector<std::vector<int>>& samples);

// SHA-256 of a file as lowercase hex.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace scribeid
