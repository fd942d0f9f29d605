#include "scribeid/config.hpp"

#include <array>
#include <utility>

#include "scribeid/errors.hpp"

namespace scribeid {
namespace {

constexpr std::array<std::pair<LsaMode, const char*>, 6> kLsaNames = {{
    {LsaMode::Full, "full"},
    {LsaMode::WithoutSelection, "without-selection"},
    {LsaMode::WithoutLsa, "without-lsa"},
    {LsaMode::AllSharing, "all-sharing"},
    {LsaMode::LetterSharing, "letter-sharing"},
    {LsaMode::StyleSharing, "style-sharing"},
}};

constexpr std::array<std::pair<HapMode, const char*>, 6> kHapNames = {{
    {HapMode::Full, "full"},
    {HapMode::MeanPooling, "mean-pooling"},
    {HapMode::MaxPooling, "max-pooling"},
    {HapMode::WithStyle, "with-style"},
    {HapMode::WithStyleTemporal, "with-style-temporal"},
    {HapMode::OrderChanged, "order-changed"},
}};

}  // namespace

std::string to_string(LsaMode m) {
  for (const auto& [mode, name] : kLsaNames) {
    if (mode == m) return name;
  }
  return "full";
}

std::string to_string(HapMode m) {
  for (const auto& [mode, name] : kHapNames) {
    if (mode == m) return name;
  }
  return "full";
}

LsaMode lsa_mode_from_string(const std::string& s) {
  for (const auto& [mode, name] : kLsaNames) {
    if (s == name) return mode;
  }
  throw ConfigurationError("unknown LSA mode '" + s + "'");
}

HapMode hap_mode_from_string(const std::string& s) {
  for (const auto& [mode, name] : kHapNames) {
    if (s == name) return mode;
  }
  throw ConfigurationError("unknown HAP mode '" + s + "'");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigurationError(what);
  };
  require(!alphabet.empty(), "alphabet is empty");
  for (std::size_t i = 0; i < alphabet.size(); ++i) {
    require(alphabet.find(alphabet[i]) == i, std::string("letter '") + alphabet[i] + "' repeats in the alphabet");
  }
  require(branches >= 1, "branches must be at least 1");
  require(timesteps >= 1, "timesteps must be at least 1");
  require(kernel >= 1 && kernel % 2 == 1, "kernel must be odd and positive");
  require(segment_channels >= 1 && stroke_hidden >= 1 && temporal_hidden >= 1, "layer widths must be positive");
  require(image_widths.size() == 5, "the image encoder has exactly 5 layers");
  for (int w : image_widths) require(w >= 1, "image widths must be positive");
  require(raster >= 16 && raster % 16 == 0, "raster size must be a positive multiple of 16");
  require(num_writers >= 0, "num_writers must be non-negative");
  require(lsa_eps > 0.0 && bn_eps > 0.0, "eps must be positive");
  require(lsa_momentum >= 0.0 && lsa_momentum < 1.0, "lsa momentum must be in [0, 1)");
  require(bn_momentum >= 0.0 && bn_momentum < 1.0, "bn momentum must be in [0, 1)");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"alphabet", c.alphabet},
          {"N", c.branches},
          {"T", c.timesteps},
          {"S", c.kernel},
          {"H", c.feature_dim()},
          {"L", c.letters()},
          {"segment_channels", c.segment_channels},
          {"stroke_hidden", c.stroke_hidden},
          {"temporal_hidden", c.temporal_hidden},
          {"raster", c.raster},
          {"image_widths", c.image_widths},
          {"num_writers", c.num_writers},
          {"lsa_eps", c.lsa_eps},
          {"lsa_momentum", c.lsa_momentum},
          {"bn_eps", c.bn_eps},
          {"bn_momentum", c.bn_momentum},
          {"initial_scale", c.initial_scale},
          {"lsa_mode", to_string(c.lsa_mode)},
          {"hap_mode", to_string(c.hap_mode)},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.alphabet = j.value("alphabet", c.alphabet);
    c.branches = j.value("N", c.branches);
    c.timesteps = j.value("T", c.timesteps);
    c.kernel = j.value("S", c.kernel);
    c.segment_channels = j.value("segment_channels", c.segment_channels);
    c.stroke_hidden = j.value("stroke_hidden", c.stroke_hidden);
    c.temporal_hidden = j.value("temporal_hidden", c.temporal_hidden);
    c.raster = j.value("raster", c.raster);
    c.image_widths = j.value("image_widths", c.image_widths);
    c.num_writers = j.value("num_writers", c.num_writers);
    c.lsa_eps = j.value("lsa_eps", c.lsa_eps);
    c.lsa_momentum = j.value("lsa_momentum", c.lsa_momentum);
    c.bn_eps = j.value("bn_eps", c.bn_eps);
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    c.initial_scale = j.value("initial_scale", c.initial_scale);
    c.lsa_mode = lsa_mode_from_string(j.value("lsa_mode", std::string("full")));
    c.hap_mode = hap_mode_from_string(j.value("hap_mode", std::string("full")));
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(std::string("model config: ") + e.what());
  }
  if (j.contains("H") && j.at("H").get<int>() != c.feature_dim()) {
    throw ConfigurationError("model config: H does not equal 2 * stroke_hidden");
  }
  c.validate();
  return c;
}

}  // namespace scribeid
