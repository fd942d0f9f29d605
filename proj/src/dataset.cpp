#include "scribeid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "scribeid/errors.hpp"
#include "scribeid/jsonl.hpp"
#include "scribeid/rng.hpp"

namespace scribeid {

std::string to_string(SplitMode mode) {
  switch (mode) {
    case SplitMode::None:
      return "none";
    case SplitMode::Closed:
      return "closed";
    case SplitMode::Open:
      return "open";
  }
  return "none";
}

SplitMode split_mode_from_string(const std::string& s) {
  if (s == "none") return SplitMode::None;
  if (s == "closed") return SplitMode::Closed;
  if (s == "open") return SplitMode::Open;
  throw SchemaError("unknown split mode '" + s + "'");
}

DatasetManifest build_manifest(const std::vector<RawTrajectory>& records, const std::string& alphabet,
                               std::uint64_t master_seed) {
  DatasetManifest m;
  m.master_seed = master_seed;
  m.alphabet = alphabet;
  std::set<std::string> seen;
  for (const RawTrajectory& r : records) {
    if (seen.insert(r.writer_id).second) m.writers.push_back(r.writer_id);
    ++m.counts[r.writer_id][r.letter];
  }
  return m;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [writer, row] : m.counts) {
    nlohmann::json r = nlohmann::json::object();
    for (const auto& [letter, n] : row) r[std::string(1, letter)] = n;
    counts[writer] = r;
  }
  std::string assignment;
  assignment.reserve(m.assignment.size());
  for (Partition p : m.assignment) assignment.push_back(p == Partition::Train ? 'r' : 'e');
  return {{"master_seed", m.master_seed},
          {"alphabet", m.alphabet},
          {"files", m.files},
          {"writers", m.writers},
          {"counts", counts},
          {"split", {{"mode", to_string(m.split_mode)}, {"seed", m.split_seed}, {"assignment", assignment}}}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.alphabet = j.at("alphabet").get<std::string>();
    m.files = j.at("files").get<std::vector<std::string>>();
    m.writers = j.at("writers").get<std::vector<std::string>>();
    for (const auto& [writer, row] : j.at("counts").items()) {
      for (const auto& [letter, n] : row.items()) {
        if (letter.size() != 1) throw SchemaError("count key '" + letter + "' is not a single letter");
        m.counts[writer][letter[0]] = n.get<int>();
      }
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      m.split_mode = split_mode_from_string(s.at("mode").get<std::string>());
      m.split_seed = s.at("seed").get<std::uint64_t>();
      for (char c : s.at("assignment").get<std::string>()) {
        if (c != 'r' && c != 'e') throw SchemaError("split assignment contains '" + std::string(1, c) + "'");
        m.assignment.push_back(c == 'r' ? Partition::Train : Partition::Test);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest_to_json(m).dump(1) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset d;
  d.manifest = load_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  for (const std::string& f : d.manifest.files) {
    auto part = load_jsonl(dir / f);
    d.records.insert(d.records.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (!d.manifest.assignment.empty() && d.manifest.assignment.size() != d.records.size()) {
    throw SchemaError("split assignment has " + std::to_string(d.manifest.assignment.size()) + " entries for " +
                      std::to_string(d.records.size()) + " records");
  }
  return d;
}

Selection select_writers(const CountTable& counts, int m, int n) {
  std::set<char> letters;
  for (const auto& [writer, row] : counts) {
    for (const auto& [letter, c] : row) letters.insert(letter);
  }
  auto count = [&](const std::string& writer, char letter) {
    const auto& row = counts.at(writer);
    auto it = row.find(letter);
    return it == row.end() ? 0 : it->second;
  };

  Selection sel;
  std::map<char, std::set<std::string>> b;
  for (char l : letters) {
    for (const auto& [writer, row] : counts) {
      if (count(writer, l) >= m) b[l].insert(writer);
    }
    if (static_cast<long>(b[l].size()) > n) sel.letters.push_back(l);
  }
  if (sel.letters.empty()) return sel;
  for (const auto& [writer, row] : counts) {
    bool all = true;
    for (char l : sel.letters) all = all && b[l].count(writer) > 0;
    if (all) sel.writers.push_back(writer);
  }
  return sel;
}

void split_closed(DatasetManifest& manifest, const std::vector<RawTrajectory>& records, int train_parts,
                  int test_parts, std::uint64_t seed) {
  if (train_parts <= 0 || test_parts <= 0) throw ConfigurationError("split ratio parts must be positive");
  std::map<std::pair<std::string, char>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < records.size(); ++i) cells[{records[i].writer_id, records[i].letter}].push_back(i);

  std::vector<Partition> assignment(records.size(), Partition::Test);
  for (auto& [key, idx] : cells) {
    const int total = static_cast<int>(idx.size());
    if (total < 2) {
      throw ProtocolError("cell (" + key.first + ", " + std::string(1, key.second) + ") has " + std::to_string(total) +
                          " record(s); a closed split needs at least 2");
    }
    const double share = static_cast<double>(total) * train_parts / (train_parts + test_parts);
    const int n_train = std::clamp(static_cast<int>(std::lround(share)), 1, total - 1);
    std::uint64_t writer_tag = 0;
    for (unsigned char c : key.first) writer_tag = mix64(writer_tag ^ c);
    Rng rng(derive_seed(seed, {writer_tag, static_cast<std::uint64_t>(key.second)}));
    rng.shuffle(idx);
    for (int k = 0; k < n_train; ++k) assignment[idx[static_cast<std::size_t>(k)]] = Partition::Train;
  }
  manifest.split_mode = SplitMode::Closed;
  manifest.split_seed = seed;
  manifest.assignment = std::move(assignment);
}

void split_open(DatasetManifest& manifest, const std::vector<RawTrajectory>& records, int train_writers,
                std::uint64_t seed) {
  std::vector<std::string> writers;
  std::set<std::string> seen;
  for (const RawTrajectory& r : records) {
    if (seen.insert(r.writer_id).second) writers.push_back(r.writer_id);
  }
  std::sort(writers.begin(), writers.end());
  if (train_writers <= 0 || train_writers >= static_cast<int>(writers.size())) {
    throw ProtocolError("open split needs 0 < train writers < " + std::to_string(writers.size()) + ", got " +
                        std::to_string(train_writers));
  }
  Rng rng(derive_seed(seed, {0x4f50454eULL}));
  rng.shuffle(writers);
  const std::set<std::string> train(writers.begin(), writers.begin() + train_writers);
  manifest.assignment.assign(records.size(), Partition::Test);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (train.count(records[i].writer_id)) manifest.assignment[i] = Partition::Train;
  }
  manifest.split_mode = SplitMode::Open;
  manifest.split_seed = seed;
}

int PreparedCorpus::letter_index(char letter) const {
  const auto pos = alphabet.find(letter);
  return pos == std::string::npos ? -1 : static_cast<int>(pos);
}

int PreparedCorpus::writer_index(const std::string& id) const {
  auto it = std::find(writers.begin(), writers.end(), id);
  return it == writers.end() ? -1 : static_cast<int>(it - writers.begin());
}

PreparedCorpus prepare_corpus(const std::vector<RawTrajectory>& records, const std::string& alphabet, int timesteps,
                              int raster_size) {
  PreparedCorpus c;
  c.alphabet = alphabet;
  c.timesteps = timesteps;
  c.raster_size = raster_size;
  std::set<std::string> seen;
  for (const RawTrajectory& r : records) {
    if (seen.insert(r.writer_id).second) c.writers.push_back(r.writer_id);
  }
  c.records.resize(records.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < records.size(); ++i) {
    const NormalizedTrajectory n = normalize(records[i], timesteps);
    PreparedRecord& p = c.records[i];
    p.xy = n.xy;
    const Tensor img = rasterize(n, raster_size);
    p.raster.assign(img.data().begin(), img.data().end());
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    c.records[i].letter = c.letter_index(records[i].letter);
    c.records[i].writer = c.writer_index(records[i].writer_id);
  }
  return c;
}

CellIndex index_cells(const PreparedCorpus& corpus, const std::vector<Partition>& assignment, Partition part) {
  if (!assignment.empty() && assignment.size() != corpus.records.size()) {
    throw SchemaError("assignment size does not match the corpus");
  }
  CellIndex cells(corpus.writers.size(), std::vector<std::vector<int>>(corpus.alphabet.size()));
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    const PreparedRecord& r = corpus.records[i];
    if (r.letter < 0) continue;
    if (!assignment.empty() && assignment[i] != part) continue;
    cells[static_cast<std::size_t>(r.writer)][static_cast<std::size_t>(r.letter)].push_back(static_cast<int>(i));
  }
  return cells;
}

std::vector<int> complete_writers(const CellIndex& cells) {
  std::vector<int> out;
  for (std::size_t w = 0; w < cells.size(); ++w) {
    bool ok = !cells[w].empty();
    for (const auto& cell : cells[w]) ok = ok && !cell.empty();
    if (ok) out.push_back(static_cast<int>(w));
  }
  return out;
}

}  // namespace scribeid
