#pragma once

// Deterministic synthetic writers.
//
// A letter is a fixed set of spline control points per stroke. A writer owns,
// for every letter, a small mixture of style modes; each mode bends the
// template (persistent control-point offsets, shear, anisotropic scale,
// rotation) and fixes a speed profile. An instance picks a mode, adds
// per-instance noise scaled by the mode's jitter and samples the spline at a
// fixed device rate with timestamps.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "scribeid/trajectory.hpp"

namespace scribeid {

// Letters with templates: the registrable a..g plus held-out extras.
inline constexpr const char* kTemplateLetters = "abcdefghilno";
inline constexpr const char* kDefaultAlphabet = "abcdeg";

bool has_template(char letter);

// Monotone warp of [0, 1]: u + a / (2 pi c) * (sin(2 pi c u + phase) - sin(phase)),
// integer c, |a| < 1.
struct SpeedProfile {
  double amplitude = 0.0;
  int cycles = 1;
  double phase = 0.0;

  double warp(double u) const;
};

struct StyleMode {
  double weight = 1.0;
  double shear = 0.0;
  double scale_x = 1.0;
  double scale_y = 1.0;
  double rotation = 0.0;
  // Per-instance control-point noise (letter-height units); also scales the
  // per-instance affine and tempo noise. Zero makes instances identical.
  double jitter = 0.0;
  // Persistent per-control-point offsets, flattened over strokes; empty = none.
  std::vector<std::array<double, 2>> control_offsets;
  SpeedProfile speed;
  double tempo_ms = 600.0;  // milliseconds per unit of path length
};

struct WriterStyleModel {
  std::uint64_t writer_seed = 0;
  std::map<char, std::vector<StyleMode>> letters;
  double device_scale = 1.0;      // device units per letter-height unit
  double position_jitter = 0.0;   // range of the random device offset
};

// Builds the style model of one writer for every template letter.
WriterStyleModel synth_writer(std::uint64_t writer_seed);

// Pure function of (style.writer_seed, letter, instance_seed). Throws
// UnsupportedLetterError for letters without a template or without modes.
RawTrajectory synth_trajectory(const WriterStyleModel& style, char letter, std::uint64_t instance_seed,
                               const std::string& writer_id = "");

// The template sampled with the identity style and the given tempo.
RawTrajectory sample_base_template(char letter, double tempo_ms = 600.0);

struct CorpusSpec {
  int writers = 40;
  int instances = 40;
  std::string alphabet = kDefaultAlphabet;
  std::uint64_t seed = 20210501;
};

std::string synthetic_writer_id(int index);
// Records ordered writer-major, then alphabet order, then instance.
std::vector<RawTrajectory> generate_corpus(const CorpusSpec& spec);

}  // namespace scribeid
