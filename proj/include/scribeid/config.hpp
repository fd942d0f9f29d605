#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace scribeid {

// Adapter variants: full per-(letter, branch) adapters, normalization only,
// no adapter, or adapters keyed on a reduced key.
enum class LsaMode { Full, WithoutSelection, WithoutLsa, AllSharing, LetterSharing, StyleSharing };

// Pooling variants. WithStyle keeps style attention and mean-pools time and
// letters; WithStyleTemporal mean-pools letters only; OrderChanged runs one
// temporal head per branch before style attention.
enum class HapMode { Full, MeanPooling, MaxPooling, WithStyle, WithStyleTemporal, OrderChanged };

std::string to_string(LsaMode m);
std::string to_string(HapMode m);
LsaMode lsa_mode_from_string(const std::string& s);
HapMode hap_mode_from_string(const std::string& s);

struct ModelConfig {
  std::string alphabet = "abcdeg";
  int branches = 3;
  int timesteps = 64;
  int kernel = 7;
  int segment_channels = 64;
  int stroke_hidden = 256;  // per direction; H = 2 * stroke_hidden
  int temporal_hidden = 128;
  int raster = 32;
  std::vector<int> image_widths = {16, 32, 32, 64, 64};
  int num_writers = 0;  // classifier rows; 0 builds no classifier
  double lsa_eps = 1e-5;
  double lsa_momentum = 0.9;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
  double initial_scale = 10.0;
  LsaMode lsa_mode = LsaMode::Full;
  HapMode hap_mode = HapMode::Full;
  std::uint64_t seed = 1;

  int feature_dim() const { return 2 * stroke_hidden; }
  int image_dim() const { return image_widths.back(); }
  int letters() const { return static_cast<int>(alphabet.size()); }
  // Throws ConfigurationError for inconsistent values.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace scribeid
