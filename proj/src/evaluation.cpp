#include "scribeid/evaluation.hpp"

#include <omp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "scribeid/errors.hpp"

namespace scribeid {

namespace {

std::vector<int> letter_ids(const PreparedCorpus& corpus, const std::string& letters) {
  std::vector<int> ids;
  for (char l : letters) {
    const int id = corpus.letter_index(l);
    if (id < 0) throw UnsupportedLetterError(std::string("letter '") + l + "' is not in the corpus");
    ids.push_back(id);
  }
  return ids;
}

void check_alphabet(const WriterNet& net, const std::string& letters) {
  for (char l : letters) {
    if (net.config().alphabet.find(l) == std::string::npos) {
      throw UnsupportedLetterError(std::string("letter '") + l + "' is not in the model alphabet '" +
                                   net.config().alphabet + "'");
    }
  }
}

// Writers whose cells hold at least one record of every letter.
std::vector<int> writers_with(const CellIndex& cells, const std::vector<int>& letters) {
  std::vector<int> out;
  for (std::size_t w = 0; w < cells.size(); ++w) {
    bool ok = true;
    for (int l : letters) ok = ok && !cells[w][static_cast<std::size_t>(l)].empty();
    if (ok) out.push_back(static_cast<int>(w));
  }
  return out;
}

Tensor l2_rows(const Tensor& x) {
  Tensor y = x;
  const int n = x.dim(0), h = x.dim(1);
  for (int i = 0; i < n; ++i) {
    double ss = 0.0;
    for (int j = 0; j < h; ++j) ss += x.at({i, j}) * x.at({i, j});
    const double norm = std::sqrt(ss);
    if (norm < 1e-12) throw NormalizationError("embedding row " + std::to_string(i) + " has zero norm");
    for (int j = 0; j < h; ++j) y.at({i, j}) = x.at({i, j}) / norm;
  }
  return y;
}

std::vector<std::pair<int, double>> size_means(const std::vector<SubsetResult>& rows, bool top5) {
  std::map<int, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    auto& a = acc[static_cast<int>(r.letters.size())];
    a.first += top5 ? r.rank5 : r.rank1;
    ++a.second;
  }
  std::vector<std::pair<int, double>> out;
  for (auto it = acc.rbegin(); it != acc.rend(); ++it) out.emplace_back(it->first, it->second.first / it->second.second);
  return out;
}

}  // namespace

std::vector<Sample> test_samples(const CellIndex& cells, const std::vector<int>& letters,
                                 const std::vector<int>& writers, std::uint64_t seed) {
  std::vector<Sample> out;
  for (int w : writers) {
    std::vector<std::vector<int>> columns;
    std::size_t count = std::numeric_limits<std::size_t>::max();
    for (int l : letters) {
      std::vector<int> col = cells.at(static_cast<std::size_t>(w)).at(static_cast<std::size_t>(l));
      Rng rng(derive_seed(seed, {0x54455354ULL, static_cast<std::uint64_t>(w), static_cast<std::uint64_t>(l)}));
      rng.shuffle(col);
      count = std::min(count, col.size());
      columns.push_back(std::move(col));
    }
    if (letters.empty()) count = 0;
    for (std::size_t i = 0; i < count; ++i) {
      Sample s;
      s.writer = w;
      for (const auto& col : columns) s.records.push_back(col[i]);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<Tensor> embed_samples(WriterNet& net, const PreparedCorpus& corpus, const std::string& letters,
                                  const std::vector<Sample>& samples, const std::vector<std::vector<double>>& subsets,
                                  int batch_size) {
  if (batch_size < 1) throw UsageError("batch size must be positive");
  check_alphabet(net, letters);
  const int n = static_cast<int>(samples.size()), h = net.config().feature_dim(), nl = static_cast<int>(letters.size());
  for (const auto& s : subsets) {
    if (static_cast<int>(s.size()) != nl) throw DimensionError("letter subset mask has the wrong length");
    if (std::none_of(s.begin(), s.end(), [](double v) { return v != 0.0; })) {
      throw UsageError("letter subset keeps no letter");
    }
  }
  if (n == 0) throw UsageError("no samples to embed");
  std::vector<Tensor> out(std::max<std::size_t>(1, subsets.size()), Tensor({n, h}));
  for (int start = 0; start < n; start += batch_size) {
    const int b = std::min(batch_size, n - start);
    std::vector<std::vector<int>> rows;
    for (int i = 0; i < b; ++i) rows.push_back(samples[static_cast<std::size_t>(start + i)].records);
    const ModelInput input = make_input(corpus, letters, rows);
    Tape tape;
    tape.set_grad_enabled(false);
    const ForwardResult fwd = net.forward(tape, input, NormContext{false, false});
    auto copy_rows = [&](const Tensor& e, Tensor& dst) {
      std::copy(e.data().begin(), e.data().end(), dst.storage().begin() + static_cast<long>(start) * h);
    };
    if (subsets.empty()) {
      copy_rows(fwd.embedding.value(), out[0]);
      continue;
    }
    for (std::size_t k = 0; k < subsets.size(); ++k) {
      if (std::all_of(subsets[k].begin(), subsets[k].end(), [](double v) { return v != 0.0; })) {
        copy_rows(fwd.embedding.value(), out[k]);
        continue;
      }
      // Mask columns follow the forward's alphabet order.
      Tensor mask({b, nl});
      for (int j = 0; j < nl; ++j) {
        const double keep = subsets[k][letters.find(fwd.letters[static_cast<std::size_t>(j)])];
        for (int i = 0; i < b; ++i) mask.at({i, j}) = keep != 0.0 ? 1.0 : 0.0;
      }
      Tensor weights;
      const Var e = net.hap().pool_letters(fwd.pooling, fwd.images, &mask, &weights);
      copy_rows(e.value(), out[k]);
    }
  }
  return out;
}

nlohmann::json to_json(const ClosedReport& r) {
  return {{"accuracy", r.accuracy}, {"correct", r.correct}, {"samples", r.samples}};
}

ClosedReport closed_accuracy(WriterNet& net, const Tensor& embeddings, const std::vector<int>& labels) {
  ClosedReport r;
  r.samples = static_cast<long>(labels.size());
  if (labels.empty()) return r;
  Tape tape;
  tape.set_grad_enabled(false);
  const Tensor z = net.logits(tape.constant(embeddings)).value();
  for (int i = 0; i < z.dim(0); ++i) {
    int best = 0;
    for (int c = 1; c < z.dim(1); ++c)
      if (z.at({i, c}) > z.at({i, best})) best = c;
    r.correct += best == labels[static_cast<std::size_t>(i)];
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.samples);
  return r;
}

namespace {

// Test samples of the closed split with their classifier rows.
std::vector<Sample> closed_samples(const WriterNet& net, const PreparedCorpus& corpus,
                                   const std::vector<Partition>& assignment, const std::vector<int>& letters,
                                   std::uint64_t seed, std::vector<int>& labels) {
  if (!net.has_classifier()) throw UsageError("closed-set evaluation needs a classifier head");
  std::map<std::string, int> row;
  if (net.metadata.contains("writers")) {
    const auto& ids = net.metadata["writers"];
    for (std::size_t k = 0; k < ids.size(); ++k) row[ids[k].get<std::string>()] = static_cast<int>(k);
  }
  const CellIndex cells = index_cells(corpus, assignment, Partition::Test);
  const std::vector<int> writers = writers_with(cells, letters);
  for (int w : writers) {
    if (!row.count(corpus.writers[static_cast<std::size_t>(w)])) {
      throw ProtocolError("test writer '" + corpus.writers[static_cast<std::size_t>(w)] +
                          "' has no classifier row");
    }
  }
  std::vector<Sample> samples = test_samples(cells, letters, writers, seed);
  labels.clear();
  for (const Sample& s : samples) labels.push_back(row[corpus.writers[static_cast<std::size_t>(s.writer)]]);
  return samples;
}

}  // namespace

ClosedReport eval_closed(WriterNet& net, const PreparedCorpus& corpus, const std::vector<Partition>& assignment,
                         std::uint64_t seed) {
  const std::string& letters = net.config().alphabet;
  std::vector<int> labels;
  const std::vector<Sample> samples = closed_samples(net, corpus, assignment, letter_ids(corpus, letters), seed, labels);
  const Tensor e = embed_samples(net, corpus, letters, samples)[0];
  return closed_accuracy(net, e, labels);
}

nlohmann::json to_json(const RankReport& r) {
  return {{"rank1", r.rank1},
          {"rank5", r.rank5},
          {"draw_rank1", r.draw_rank1},
          {"draw_rank5", r.draw_rank5},
          {"draws", r.draws},
          {"seed", r.seed},
          {"writers", r.writers},
          {"probes_per_draw", r.probes_per_draw}};
}

std::string to_text(const RankReport& r) {
  std::ostringstream os;
  char line[96];
  os << "draw  rank1   rank5\n";
  for (std::size_t d = 0; d < r.draw_rank1.size(); ++d) {
    std::snprintf(line, sizeof line, "%4zu  %.4f  %.4f\n", d, r.draw_rank1[d], r.draw_rank5[d]);
    os << line;
  }
  std::snprintf(line, sizeof line, "mean  %.4f  %.4f\n", r.rank1, r.rank5);
  os << line;
  std::snprintf(line, sizeof line, "writers %d, probes per draw %ld, seed %llu\n", r.writers, r.probes_per_draw,
                static_cast<unsigned long long>(r.seed));
  os << line;
  return os.str();
}

int rank_of(const std::vector<double>& scores, int target, Rng& rng) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return static_cast<int>(std::find(order.begin(), order.end(), target) - order.begin());
}

namespace {

// Writers in ascending label order with their rows; every writer needs two.
std::map<int, std::vector<int>> rows_by_writer(const Tensor& embeddings, const std::vector<int>& labels) {
  expect_rank(embeddings, 2, "embeddings");
  if (static_cast<std::size_t>(embeddings.dim(0)) != labels.size()) {
    throw DimensionError("one label per embedding row is needed");
  }
  std::map<int, std::vector<int>> rows_of;
  for (std::size_t i = 0; i < labels.size(); ++i) rows_of[labels[i]].push_back(static_cast<int>(i));
  for (const auto& [w, rows] : rows_of) {
    if (rows.size() < 2) {
      throw ProtocolError("writer " + std::to_string(w) + " has " + std::to_string(rows.size()) +
                          " test sample(s); two are needed");
    }
  }
  return rows_of;
}

GalleryResult rank_unit(const Tensor& unit, const std::vector<int>& labels, const std::map<int, int>& slot,
                        const std::vector<int>& gallery, Rng& rng) {
  const int h = unit.dim(1), nw = static_cast<int>(gallery.size());
  std::vector<char> is_template(labels.size(), 0);
  for (int g : gallery) is_template.at(static_cast<std::size_t>(g)) = 1;
  GalleryResult r;
  std::vector<double> scores(static_cast<std::size_t>(nw));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (is_template[i]) continue;
    const double* a = unit.data().data() + i * static_cast<std::size_t>(h);
    for (int k = 0; k < nw; ++k) {
      const double* g = unit.data().data() + static_cast<std::size_t>(gallery[static_cast<std::size_t>(k)]) * h;
      double s = 0.0;
      for (int j = 0; j < h; ++j) s += a[j] * g[j];
      scores[static_cast<std::size_t>(k)] = s;
    }
    const int pos = rank_of(scores, slot.at(labels[i]), rng);
    ++r.probes;
    r.hits1 += pos < 1;
    r.hits5 += pos < 5;
  }
  return r;
}

}  // namespace

GalleryResult rank_against_gallery(const Tensor& embeddings, const std::vector<int>& labels,
                                   const std::vector<int>& gallery, Rng& rng) {
  const auto rows_of = rows_by_writer(embeddings, labels);
  if (gallery.size() != rows_of.size()) throw UsageError("one gallery row per writer is needed");
  std::map<int, int> slot;
  int k = 0;
  for (const auto& [w, rows] : rows_of) {
    const int g = gallery[static_cast<std::size_t>(k)];
    if (g < 0 || g >= static_cast<int>(labels.size()) || labels[static_cast<std::size_t>(g)] != w) {
      throw UsageError("gallery row " + std::to_string(k) + " does not belong to writer " + std::to_string(w));
    }
    slot[w] = k++;
  }
  return rank_unit(l2_rows(embeddings), labels, slot, gallery, rng);
}

RankReport rank_evaluation(const Tensor& embeddings, const std::vector<int>& labels, int draws, std::uint64_t seed) {
  if (draws < 1) throw UsageError("at least one draw is needed");
  const auto rows_of = rows_by_writer(embeddings, labels);
  const Tensor unit = l2_rows(embeddings);
  std::map<int, int> slot;
  for (const auto& [w, rows] : rows_of) slot.emplace(w, static_cast<int>(slot.size()));

  RankReport r;
  r.draws = draws;
  r.seed = seed;
  r.writers = static_cast<int>(rows_of.size());
  for (int d = 0; d < draws; ++d) {
    Rng rng(derive_seed(seed, {0x52414e4bULL, static_cast<std::uint64_t>(d)}));
    std::vector<int> gallery;
    for (const auto& [w, rows] : rows_of) gallery.push_back(rows[rng.below(rows.size())]);
    const GalleryResult g = rank_unit(unit, labels, slot, gallery, rng);
    r.probes_per_draw = g.probes;
    r.draw_rank1.push_back(g.probes ? static_cast<double>(g.hits1) / static_cast<double>(g.probes) : 0.0);
    r.draw_rank5.push_back(g.probes ? static_cast<double>(g.hits5) / static_cast<double>(g.probes) : 0.0);
  }
  r.rank1 = std::accumulate(r.draw_rank1.begin(), r.draw_rank1.end(), 0.0) / draws;
  r.rank5 = std::accumulate(r.draw_rank5.begin(), r.draw_rank5.end(), 0.0) / draws;
  return r;
}

RankReport eval_open(WriterNet& net, const PreparedCorpus& corpus, const std::vector<Partition>& assignment,
                     int draws, std::uint64_t seed) {
  const std::string& letters = net.config().alphabet;
  const std::vector<int> ids = letter_ids(corpus, letters);
  const CellIndex cells = index_cells(corpus, assignment, Partition::Test);
  const std::vector<Sample> samples = test_samples(cells, ids, writers_with(cells, ids), seed);
  std::vector<int> labels;
  for (const Sample& s : samples) labels.push_back(s.writer);
  const Tensor e = embed_samples(net, corpus, letters, samples)[0];
  return rank_evaluation(e, labels, draws, seed);
}

std::vector<std::string> letter_subsets(const std::string& alphabet, int min_size) {
  const int n = static_cast<int>(alphabet.size());
  if (n > 20) throw UsageError("too many letters to enumerate subsets");
  std::vector<std::string> out;
  for (unsigned bits = 1; bits < (1u << n); ++bits) {
    std::string s;
    for (int i = 0; i < n; ++i)
      if (bits & (1u << i)) s.push_back(alphabet[static_cast<std::size_t>(i)]);
    if (static_cast<int>(s.size()) >= min_size) out.push_back(s);
  }
  std::sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
    return a.size() != b.size() ? a.size() > b.size() : a < b;
  });
  return out;
}

nlohmann::json to_json(const FewerLettersReport& r) {
  nlohmann::json subsets = nlohmann::json::array();
  for (const auto& s : r.subsets) subsets.push_back({{"letters", s.letters}, {"rank1", s.rank1}, {"rank5", s.rank5}});
  nlohmann::json means = nlohmann::json::array();
  for (std::size_t k = 0; k < r.mean_rank1.size(); ++k) {
    means.push_back({{"letters", r.mean_rank1[k].first}, {"rank1", r.mean_rank1[k].second},
                     {"rank5", r.mean_rank5[k].second}});
  }
  return {{"mode", to_string(r.mode)}, {"subsets", subsets}, {"means", means}};
}

std::string to_text(const FewerLettersReport& r) {
  std::ostringstream os;
  char line[96];
  const bool closed = r.mode == SplitMode::Closed;
  os << (closed ? "letters  accuracy\n" : "letters  rank1   rank5\n");
  for (std::size_t k = 0; k < r.mean_rank1.size(); ++k) {
    if (closed) {
      std::snprintf(line, sizeof line, "%7d  %.4f\n", r.mean_rank1[k].first, r.mean_rank1[k].second);
    } else {
      std::snprintf(line, sizeof line, "%7d  %.4f  %.4f\n", r.mean_rank1[k].first, r.mean_rank1[k].second,
                    r.mean_rank5[k].second);
    }
    os << line;
  }
  return os.str();
}

FewerLettersReport eval_fewer_letters(WriterNet& net, const PreparedCorpus& corpus,
                                      const std::vector<Partition>& assignment, SplitMode mode,
                                      const std::vector<std::string>& subsets, int draws, std::uint64_t seed) {
  if (mode == SplitMode::None) throw UsageError("fewer-letters evaluation needs a closed or open split");
  const std::string& letters = net.config().alphabet;
  std::vector<std::vector<double>> masks;
  for (const std::string& s : subsets) {
    if (s.empty()) throw UsageError("empty letter subset");
    check_alphabet(net, s);
    std::vector<double> m(letters.size(), 0.0);
    for (char l : s) {
      if (m[letters.find(l)] != 0.0) throw UsageError(std::string("letter '") + l + "' repeated in subset");
      m[letters.find(l)] = 1.0;
    }
    masks.push_back(std::move(m));
  }
  const std::vector<int> ids = letter_ids(corpus, letters);
  std::vector<int> labels;
  std::vector<Sample> samples;
  if (mode == SplitMode::Closed) {
    samples = closed_samples(net, corpus, assignment, ids, seed, labels);
  } else {
    const CellIndex cells = index_cells(corpus, assignment, Partition::Test);
    samples = test_samples(cells, ids, writers_with(cells, ids), seed);
    for (const Sample& s : samples) labels.push_back(s.writer);
  }
  FewerLettersReport r;
  r.mode = mode;
  if (masks.empty()) return r;
  const std::vector<Tensor> e = embed_samples(net, corpus, letters, samples, masks);
  for (std::size_t k = 0; k < subsets.size(); ++k) {
    SubsetResult s;
    s.letters = subsets[k];
    if (mode == SplitMode::Closed) {
      s.rank1 = s.rank5 = closed_accuracy(net, e[k], labels).accuracy;
    } else {
      const RankReport rr = rank_evaluation(e[k], labels, draws, seed);
      s.rank1 = rr.rank1;
      s.rank5 = rr.rank5;
    }
    r.subsets.push_back(s);
  }
  r.mean_rank1 = size_means(r.subsets, false);
  r.mean_rank5 = size_means(r.subsets, true);
  return r;
}

void write_embeddings_csv(const std::filesystem::path& path, const std::vector<std::string>& writer_ids,
                          const std::string& letters, int dim, const Tensor& embeddings) {
  const int n = static_cast<int>(writer_ids.size()), h = dim;
  if (n > 0 && (embeddings.rank() != 2 || embeddings.dim(0) != n || embeddings.dim(1) != h)) {
    throw DimensionError("embeddings must be [writer ids, dim]");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "writer_id,letters";
  for (int j = 0; j < h; ++j) out << ",e" << j;
  out << '\n';
  char buf[32];
  for (int i = 0; i < n; ++i) {
    out << writer_ids[static_cast<std::size_t>(i)] << ',' << letters;
    for (int j = 0; j < h; ++j) {
      const auto res = std::to_chars(buf, buf + sizeof buf, embeddings.at({i, j}));
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

long export_embeddings(WriterNet& net, const PreparedCorpus& corpus, const std::vector<Partition>& assignment,
                       const std::filesystem::path& path, std::uint64_t seed) {
  const std::string& letters = net.config().alphabet;
  const std::vector<int> ids = letter_ids(corpus, letters);
  const CellIndex cells = index_cells(corpus, assignment, Partition::Test);
  const std::vector<Sample> samples = test_samples(cells, ids, writers_with(cells, ids), seed);
  std::vector<std::string> names;
  for (const Sample& s : samples) names.push_back(corpus.writers[static_cast<std::size_t>(s.writer)]);
  const Tensor e = samples.empty() ? Tensor() : embed_samples(net, corpus, letters, samples)[0];
  write_embeddings_csv(path, names, letters, net.config().feature_dim(), e);
  return static_cast<long>(samples.size());
}

double median(std::vector<double> values) {
  if (values.empty()) throw UsageError("median of an empty series");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

LatencyReport measure_latency(WriterNet& net, const ModelInput& input, int reps) {
  if (reps < 1) throw UsageError("reps must be positive");
  const int threads = omp_get_max_threads();
  omp_set_num_threads(1);
  LatencyReport r;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Tape tape;
    tape.set_grad_enabled(false);
    net.forward(tape, input, NormContext{false, false});
    const auto t1 = std::chrono::steady_clock::now();
    r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  omp_set_num_threads(threads);
  r.median_ms = median(r.samples_ms);
  return r;
}

}  // namespace scribeid
