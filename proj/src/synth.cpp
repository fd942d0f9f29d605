#include "scribeid/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>

#include "scribeid/errors.hpp"
#include "scribeid/rng.hpp"

namespace scribeid {
namespace {

using Vec2 = std::array<double, 2>;
using Stroke = std::vector<Vec2>;

constexpr double kSampleIntervalMs = 10.0;
constexpr double kPenUpMs = 150.0;
constexpr int kSplineSubsteps = 32;

const std::vector<Stroke>& letter_template(char letter) {
  static const std::map<char, std::vector<Stroke>> templates = {
      {'a', {{{0.45, 0.40}, {0.30, 0.50}, {0.10, 0.42}, {0.02, 0.22}, {0.10, 0.04}, {0.30, 0.00},
              {0.45, 0.12}, {0.48, 0.45}, {0.48, 0.15}, {0.52, 0.00}}}},
      {'b', {{{0.05, 1.00}, {0.04, 0.50}, {0.05, 0.02}, {0.10, 0.30}, {0.30, 0.48}, {0.48, 0.30},
              {0.42, 0.05}, {0.20, 0.00}, {0.05, 0.08}}}},
      {'c', {{{0.45, 0.42}, {0.30, 0.50}, {0.10, 0.42}, {0.02, 0.22}, {0.10, 0.05}, {0.30, 0.00}, {0.47, 0.08}}}},
      {'d', {{{0.45, 0.40}, {0.28, 0.50}, {0.08, 0.40}, {0.02, 0.20}, {0.12, 0.02}, {0.32, 0.02},
              {0.45, 0.20}, {0.47, 0.60}, {0.48, 1.00}, {0.48, 0.40}, {0.50, 0.00}}}},
      {'e', {{{0.05, 0.25}, {0.45, 0.28}, {0.40, 0.45}, {0.22, 0.50}, {0.05, 0.38}, {0.03, 0.15},
              {0.20, 0.00}, {0.45, 0.08}}}},
      {'f', {{{0.45, 0.92}, {0.32, 1.00}, {0.20, 0.90}, {0.18, 0.50}, {0.18, 0.00}}, {{0.02, 0.50}, {0.40, 0.50}}}},
      {'g', {{{0.45, 0.40}, {0.28, 0.50}, {0.08, 0.40}, {0.04, 0.22}, {0.20, 0.08}, {0.40, 0.15},
              {0.47, 0.45}, {0.46, 0.00}, {0.40, -0.40}, {0.20, -0.50}, {0.03, -0.38}}}},
      {'h', {{{0.05, 1.00}, {0.05, 0.50}, {0.05, 0.00}, {0.08, 0.30}, {0.25, 0.48}, {0.42, 0.40},
              {0.45, 0.20}, {0.46, 0.00}}}},
      {'i', {{{0.20, 0.50}, {0.20, 0.25}, {0.22, 0.00}}, {{0.20, 0.72}, {0.21, 0.69}}}},
      {'l', {{{0.15, 1.00}, {0.14, 0.50}, {0.15, 0.08}, {0.25, 0.00}}}},
      {'n', {{{0.05, 0.50}, {0.05, 0.25}, {0.05, 0.00}, {0.08, 0.30}, {0.25, 0.50}, {0.42, 0.40},
              {0.45, 0.20}, {0.46, 0.00}}}},
      {'o', {{{0.28, 0.50}, {0.08, 0.42}, {0.02, 0.22}, {0.12, 0.03}, {0.32, 0.00}, {0.47, 0.20},
              {0.42, 0.42}, {0.28, 0.50}}}},
  };
  auto it = templates.find(letter);
  if (it == templates.end()) throw UnsupportedLetterError(std::string("no template for letter '") + letter + "'");
  return it->second;
}

std::size_t control_point_count(char letter) {
  std::size_t n = 0;
  for (const Stroke& s : letter_template(letter)) n += s.size();
  return n;
}

Vec2 catmull_rom(const Vec2& p0, const Vec2& p1, const Vec2& p2, const Vec2& p3, double t) {
  const double t2 = t * t, t3 = t2 * t;
  Vec2 out;
  for (int k = 0; k < 2; ++k) {
    out[k] = 0.5 * (2.0 * p1[k] + (-p0[k] + p2[k]) * t + (2.0 * p0[k] - 5.0 * p1[k] + 4.0 * p2[k] - p3[k]) * t2 +
                    (-p0[k] + 3.0 * p1[k] - 3.0 * p2[k] + p3[k]) * t3);
  }
  return out;
}

// Dense polyline through the control points with cumulative arc length.
struct ArcTable {
  std::vector<Vec2> pts;
  std::vector<double> cum;

  double length() const { return cum.back(); }

  Vec2 at_fraction(double f) const {
    const double target = std::clamp(f, 0.0, 1.0) * length();
    auto it = std::lower_bound(cum.begin(), cum.end(), target);
    if (it == cum.begin()) return pts.front();
    if (it == cum.end()) return pts.back();
    const std::size_t i = static_cast<std::size_t>(it - cum.begin());
    const double len = cum[i] - cum[i - 1];
    const double a = len > 0.0 ? (target - cum[i - 1]) / len : 1.0;
    return {pts[i - 1][0] + a * (pts[i][0] - pts[i - 1][0]), pts[i - 1][1] + a * (pts[i][1] - pts[i - 1][1])};
  }
};

ArcTable build_arc_table(const Stroke& ctrl) {
  ArcTable table;
  const std::size_t n = ctrl.size();
  table.pts.push_back(ctrl.front());
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const Vec2& p0 = ctrl[i == 0 ? 0 : i - 1];
    const Vec2& p3 = ctrl[std::min(i + 2, n - 1)];
    for (int s = 1; s <= kSplineSubsteps; ++s) {
      table.pts.push_back(catmull_rom(p0, ctrl[i], ctrl[i + 1], p3, static_cast<double>(s) / kSplineSubsteps));
    }
  }
  table.cum.resize(table.pts.size(), 0.0);
  for (std::size_t i = 1; i < table.pts.size(); ++i) {
    table.cum[i] = table.cum[i - 1] + std::hypot(table.pts[i][0] - table.pts[i - 1][0], table.pts[i][1] - table.pts[i - 1][1]);
  }
  return table;
}

struct InstanceAffine {
  double shear, scale_x, scale_y, rotation;
};

Vec2 apply_affine(const Vec2& p, const InstanceAffine& a) {
  const double x1 = p[0] + a.shear * p[1];
  const double y1 = p[1];
  const double x2 = a.scale_x * x1;
  const double y2 = a.scale_y * y1;
  const double c = std::cos(a.rotation), s = std::sin(a.rotation);
  return {c * x2 - s * y2, s * x2 + c * y2};
}

// Shared rendering path: `rng` supplies per-instance noise when non-null.
RawTrajectory render(char letter, const StyleMode& mode, double device_scale, double position_jitter, Rng* rng) {
  const std::vector<Stroke>& tpl = letter_template(letter);
  InstanceAffine affine{mode.shear, mode.scale_x, mode.scale_y, mode.rotation};
  double tempo = mode.tempo_ms;
  const bool noisy = rng != nullptr && mode.jitter > 0.0;
  if (noisy) {
    affine.shear += rng->normal(0.0, 2.0 * mode.jitter);
    affine.scale_x *= std::exp(rng->normal(0.0, mode.jitter));
    affine.scale_y *= std::exp(rng->normal(0.0, mode.jitter));
    affine.rotation += rng->normal(0.0, mode.jitter);
    tempo *= std::exp(rng->normal(0.0, 2.0 * mode.jitter));
  }
  double off_x = 0.0, off_y = 0.0;
  if (rng != nullptr && position_jitter > 0.0) {
    off_x = rng->uniform(0.0, position_jitter);
    off_y = rng->uniform(0.0, position_jitter);
  }

  RawTrajectory raw;
  raw.letter = letter;
  std::size_t ctrl_index = 0;
  double t0 = 0.0;
  for (const Stroke& stroke : tpl) {
    Stroke ctrl;
    ctrl.reserve(stroke.size());
    for (const Vec2& p : stroke) {
      Vec2 q = p;
      if (ctrl_index < mode.control_offsets.size()) {
        q[0] += mode.control_offsets[ctrl_index][0];
        q[1] += mode.control_offsets[ctrl_index][1];
      }
      if (noisy) {
        q[0] += rng->normal(0.0, mode.jitter);
        q[1] += rng->normal(0.0, mode.jitter);
      }
      ctrl.push_back(apply_affine(q, affine));
      ++ctrl_index;
    }
    const ArcTable table = build_arc_table(ctrl);
    const double duration = std::max(tempo * table.length(), 2.0 * kSampleIntervalMs);
    const int n = std::max(2, static_cast<int>(std::floor(duration / kSampleIntervalMs)) + 1);
    const int start = static_cast<int>(raw.points.size());
    for (int k = 0; k < n; ++k) {
      const double u = static_cast<double>(k) / (n - 1);
      const Vec2 p = table.at_fraction(mode.speed.warp(u));
      raw.points.push_back({device_scale * p[0] + off_x, device_scale * p[1] + off_y, t0 + u * duration});
    }
    raw.strokes.push_back({start, static_cast<int>(raw.points.size())});
    t0 += duration + kPenUpMs;
  }
  return raw;
}

}  // namespace

bool has_template(char letter) { return letter != 0 && std::strchr(kTemplateLetters, letter) != nullptr; }

double SpeedProfile::warp(double u) const {
  if (amplitude == 0.0) return u;
  const double w = 2.0 * std::numbers::pi * cycles;
  return u + amplitude / w * (std::sin(w * u + phase) - std::sin(phase));
}

WriterStyleModel synth_writer(std::uint64_t writer_seed) {
  WriterStyleModel style;
  style.writer_seed = writer_seed;
  Rng g(derive_seed(writer_seed, {0x57524954ULL}));
  const double slant = g.normal(0.0, 0.30);
  const double aspect = g.normal(0.0, 0.15);
  const double rotation = g.normal(0.0, 0.08);
  const double tempo = 500.0 * std::exp(g.normal(0.0, 0.30));
  const double amplitude = g.uniform(0.0, 0.5);
  const int cycles = 1 + static_cast<int>(g.below(2));
  const double phase = g.uniform(0.0, 2.0 * std::numbers::pi);
  const double jitter = g.uniform(0.010, 0.025);
  style.device_scale = g.uniform(80.0, 250.0);
  style.position_jitter = 1000.0;

  for (const char* p = kTemplateLetters; *p; ++p) {
    const char letter = *p;
    Rng r(derive_seed(writer_seed, {static_cast<std::uint64_t>(letter)}));
    std::vector<StyleMode> modes(3);
    double total = 0.0;
    for (StyleMode& m : modes) {
      m.weight = 0.3 + r.uniform();
      total += m.weight;
      m.shear = slant + r.normal(0.0, 0.12);
      m.scale_x = std::exp(0.5 * aspect + r.normal(0.0, 0.08));
      m.scale_y = std::exp(-0.5 * aspect + r.normal(0.0, 0.08));
      m.rotation = rotation + r.normal(0.0, 0.05);
      m.jitter = jitter;
      m.control_offsets.resize(control_point_count(letter));
      for (auto& o : m.control_offsets) o = {r.normal(0.0, 0.035), r.normal(0.0, 0.035)};
      m.speed.amplitude = std::clamp(amplitude + r.normal(0.0, 0.15), 0.0, 0.7);
      m.speed.cycles = r.uniform() < 0.8 ? cycles : 3 - cycles;
      m.speed.phase = phase + r.normal(0.0, 0.8);
      m.tempo_ms = tempo * std::exp(r.normal(0.0, 0.15));
    }
    for (StyleMode& m : modes) m.weight /= total;
    style.letters.emplace(letter, std::move(modes));
  }
  return style;
}

RawTrajectory synth_trajectory(const WriterStyleModel& style, char letter, std::uint64_t instance_seed,
                               const std::string& writer_id) {
  if (!has_template(letter)) throw UnsupportedLetterError(std::string("no template for letter '") + letter + "'");
  auto it = style.letters.find(letter);
  if (it == style.letters.end() || it->second.empty()) {
    throw UnsupportedLetterError(std::string("writer style has no modes for letter '") + letter + "'");
  }
  Rng rng(derive_seed(style.writer_seed, {static_cast<std::uint64_t>(letter), instance_seed, 0x494e5354ULL}));
  const std::vector<StyleMode>& modes = it->second;
  const double pick = rng.uniform();
  std::size_t chosen = modes.size() - 1;
  double acc = 0.0;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    acc += modes[i].weight;
    if (pick < acc) {
      chosen = i;
      break;
    }
  }
  RawTrajectory raw = render(letter, modes[chosen], style.device_scale, style.position_jitter, &rng);
  raw.writer_id = writer_id;
  raw.device = "synthetic";
  return raw;
}

RawTrajectory sample_base_template(char letter, double tempo_ms) {
  StyleMode identity;
  identity.tempo_ms = tempo_ms;
  return render(letter, identity, 1.0, 0.0, nullptr);
}

std::string synthetic_writer_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "w%03d", index);
  return buf;
}

std::vector<RawTrajectory> generate_corpus(const CorpusSpec& spec) {
  for (char l : spec.alphabet) {
    if (!has_template(l)) throw UnsupportedLetterError(std::string("no template for letter '") + l + "'");
  }
  std::vector<RawTrajectory> out;
  out.reserve(static_cast<std::size_t>(spec.writers) * spec.alphabet.size() * spec.instances);
  for (int w = 0; w < spec.writers; ++w) {
    const WriterStyleModel style = synth_writer(derive_seed(spec.seed, {static_cast<std::uint64_t>(w)}));
    const std::string id = synthetic_writer_id(w);
    for (char l : spec.alphabet) {
      for (int k = 0; k < spec.instances; ++k) out.push_back(synth_trajectory(style, l, static_cast<std::uint64_t>(k), id));
    }
  }
  return out;
}

}  // namespace scribeid
