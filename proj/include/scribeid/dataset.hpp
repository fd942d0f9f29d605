#pragma once

// Corpus bookkeeping: the manifest document, writer/letter selection, the
// closed- and open-set splits, and a preprocessed in-memory corpus.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "scribeid/trajectory.hpp"

namespace scribeid {

enum class SplitMode { None, Closed, Open };
enum class Partition : std::uint8_t { Train, Test };

std::string to_string(SplitMode mode);
SplitMode split_mode_from_string(const std::string& s);

// N(p, l): writer -> letter -> number of trajectories.
using CountTable = std::map<std::string, std::map<char, int>>;

struct DatasetManifest {
  std::uint64_t master_seed = 0;
  std::string alphabet;
  std::vector<std::string> files;    // JSONL files, relative to the manifest
  std::vector<std::string> writers;  // order of first appearance
  CountTable counts;
  SplitMode split_mode = SplitMode::None;
  std::uint64_t split_seed = 0;
  std::vector<Partition> assignment;  // one entry per record, in file order
};

DatasetManifest build_manifest(const std::vector<RawTrajectory>& records, const std::string& alphabet,
                               std::uint64_t master_seed);

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct Dataset {
  DatasetManifest manifest;
  std::vector<RawTrajectory> records;
};

// Loads the manifest and every file it lists. Throws SchemaError when the
// split assignment does not match the record count.
Dataset load_dataset(const std::filesystem::path& manifest_path);

struct Selection {
  std::string letters;               // V^let, in sorted order
  std::vector<std::string> writers;  // V^wri, in sorted order
};

// B(l, m) = {p : N(p, l) >= m}; V^let = {l : |B(l, m)| > n};
// V^wri = intersection of B(l, m) over V^let, empty when V^let is empty.
// Missing table entries count as zero.
Selection select_writers(const CountTable& counts, int m, int n);

// Stratified per (writer, letter) cell: round(count * train / (train + test))
// training records, clamped so both sides are nonempty. Throws ProtocolError
// for a cell with fewer than two records.
void split_closed(DatasetManifest& manifest, const std::vector<RawTrajectory>& records, int train_parts,
                  int test_parts, std::uint64_t seed);

// Seeded writer-level partition; throws ProtocolError unless
// 0 < train_writers < number of writers.
void split_open(DatasetManifest& manifest, const std::vector<RawTrajectory>& records, int train_writers,
                std::uint64_t seed);

// Normalized coordinates and rasters cached once per record.
struct PreparedRecord {
  std::vector<double> xy;      // T x 2, row-major
  std::vector<double> raster;  // size x size
  int letter = -1;             // index into the alphabet, -1 when not registered
  int writer = -1;             // index into PreparedCorpus::writers
};

struct PreparedCorpus {
  std::string alphabet;
  std::vector<std::string> writers;
  int timesteps = kDefaultTimesteps;
  int raster_size = kDefaultRasterSize;
  std::vector<PreparedRecord> records;

  int letter_index(char letter) const;
  int writer_index(const std::string& id) const;
};

PreparedCorpus prepare_corpus(const std::vector<RawTrajectory>& records, const std::string& alphabet,
                              int timesteps = kDefaultTimesteps, int raster_size = kDefaultRasterSize);

// cells[w][l] lists the record indices of writer w and letter l that fall in
// `part`. An empty assignment places every record in every partition.
using CellIndex = std::vector<std::vector<std::vector<int>>>;
CellIndex index_cells(const PreparedCorpus& corpus, const std::vector<Partition>& assignment, Partition part);

// Writers having at least one record of every letter in the given cells.
std::vector<int> complete_writers(const CellIndex& cells);

}  // namespace scribeid
