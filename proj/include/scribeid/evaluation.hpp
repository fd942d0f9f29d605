#pragma once

// Closed-set accuracy, open-set rank-k over cosine templates, fewer-letter
// subsets, embedding export and latency.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "scribeid/dataset.hpp"
#include "scribeid/model.hpp"
#include "scribeid/training.hpp"

namespace scribeid {

// Test samples of the given writers: each letter's records are shuffled
// (seeded per writer and letter) and zipped, giving min cell size samples per
// writer. Writers with an empty cell get none.
std::vector<Sample> test_samples(const CellIndex& cells, const std::vector<int>& letters,
                                 const std::vector<int>& writers, std::uint64_t seed);

// Eval-mode embeddings [n, H] of `samples`. With `subsets` ([L] keep-masks in
// the order of `letters`, sorted to alphabet order internally) the letter level
// is re-pooled once per mask from a single encoder pass; the result then holds
// one tensor per mask. An empty `subsets` gives the plain embedding.
std::vector<Tensor> embed_samples(WriterNet& net, const PreparedCorpus& corpus, const std::string& letters,
                                  const std::vector<Sample>& samples, const std::vector<std::vector<double>>& subsets = {},
                                  int batch_size = 64);

struct ClosedReport {
  double accuracy = 0.0;
  long correct = 0;
  long samples = 0;
};

nlohmann::json to_json(const ClosedReport& r);

// Argmax over classifier rows. `labels` index net.metadata["writers"].
ClosedReport closed_accuracy(WriterNet& net, const Tensor& embeddings, const std::vector<int>& labels);

// Closed-set evaluation on the Test partition. Throws ProtocolError when a test
// writer has no classifier row.
ClosedReport eval_closed(WriterNet& net, const PreparedCorpus& corpus, const std::vector<Partition>& assignment,
                         std::uint64_t seed = 1);

struct RankReport {
  double rank1 = 0.0;
  double rank5 = 0.0;
  std::vector<double> draw_rank1;
  std::vector<double> draw_rank5;
  int draws = 0;
  std::uint64_t seed = 0;
  int writers = 0;
  long probes_per_draw = 0;
};

nlohmann::json to_json(const RankReport& r);
std::string to_text(const RankReport& r);

// Index of `target` in the ranking of `scores` (descending); ties are broken
// by a shuffle drawn from `rng` before a stable sort.
int rank_of(const std::vector<double>& scores, int target, Rng& rng);

struct GalleryResult {
  long probes = 0;
  long hits1 = 0;
  long hits5 = 0;
};

// Ranks every row outside `gallery` against the gallery rows by cosine
// similarity. `gallery[k]` is the template row of the k-th writer in ascending
// label order; ties are broken with `rng`.
GalleryResult rank_against_gallery(const Tensor& embeddings, const std::vector<int>& labels,
                                   const std::vector<int>& gallery, Rng& rng);

// Per draw: one random sample per writer forms the gallery, every other sample
// is a probe ranked by cosine similarity. `labels[i]` is the writer of row i.
// Throws ProtocolError when a writer has fewer than two samples.
RankReport rank_evaluation(const Tensor& embeddings, const std::vector<int>& labels, int draws, std::uint64_t seed);

// Open-set evaluation on the Test partition (writers unseen in training).
RankReport eval_open(WriterNet& net, const PreparedCorpus& corpus, const std::vector<Partition>& assignment,
                     int draws = 10, std::uint64_t seed = 1);

// All subsets of `alphabet` with at least `min_size` letters, by size then
// lexicographically.
std::vector<std::string> letter_subsets(const std::string& alphabet, int min_size = 2);

struct SubsetResult {
  std::string letters;
  double rank1 = 0.0;  // closed: accuracy
  double rank5 = 0.0;  // closed: unused (equals rank1)
};

struct FewerLettersReport {
  SplitMode mode = SplitMode::Open;
  std::vector<SubsetResult> subsets;
  // size -> mean over subsets of that size
  std::vector<std::pair<int, double>> mean_rank1;
  std::vector<std::pair<int, double>> mean_rank5;
};

nlohmann::json to_json(const FewerLettersReport& r);
std::string to_text(const FewerLettersReport& r);

// Restricts the samples and the letter attention to each subset, using one
// model. Throws UnsupportedLetterError for letters outside the model alphabet.
FewerLettersReport eval_fewer_letters(WriterNet& net, const PreparedCorpus& corpus,
                                      const std::vector<Partition>& assignment, SplitMode mode,
                                      const std::vector<std::string>& subsets, int draws = 10,
                                      std::uint64_t seed = 1);

// CSV with header writer_id,letters,e0..e{dim-1}; one row per sample.
// `embeddings` is [rows, dim], or empty when there are no rows.
void write_embeddings_csv(const std::filesystem::path& path, const std::vector<std::string>& writer_ids,
                          const std::string& letters, int dim, const Tensor& embeddings);

// Embeds the Test partition (every record when the assignment is empty) and
// writes it as CSV. Returns the number of rows.
long export_embeddings(WriterNet& net, const PreparedCorpus& corpus, const std::vector<Partition>& assignment,
                       const std::filesystem::path& path, std::uint64_t seed = 1);

double median(std::vector<double> values);

struct LatencyReport {
  double median_ms = 0.0;
  std::vector<double> samples_ms;
};

// Wall time of an eval-mode forward pass on a single thread, `reps` times.
LatencyReport measure_latency(WriterNet& net, const ModelInput& input, int reps);

}  // namespace scribeid
