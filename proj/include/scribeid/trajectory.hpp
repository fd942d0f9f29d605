#pragma once

#include <optional>
#include <string>
#include <vector>

#include "scribeid/tensor.hpp"

namespace scribeid {

inline constexpr int kDefaultTimesteps = 64;
inline constexpr int kDefaultRasterSize = 32;

struct Point {
  double x = 0.0;
  double y = 0.0;
  std::optional<double> t;  // milliseconds

  bool operator==(const Point&) const = default;
};

// Half-open point index range [start, end) of one pen-down span.
struct StrokeRange {
  int start = 0;
  int end = 0;

  bool operator==(const StrokeRange&) const = default;
};

// One written letter in device units, as captured.
struct RawTrajectory {
  std::vector<Point> points;
  std::vector<StrokeRange> strokes;  // empty means a single stroke over all points
  char letter = 0;
  std::string writer_id;
  std::optional<std::string> device;

  bool operator==(const RawTrajectory&) const = default;
};

// Throws SchemaError when strokes overlap, leave gaps or run out of range,
// or timestamps decrease; TooShortError below two points.
void validate(const RawTrajectory& raw);

// Fixed-length trajectory in [-1, 1]^2: `xy` holds T rows of (x, y).
struct NormalizedTrajectory {
  std::vector<double> xy;
  char letter = 0;
  std::string writer_id;

  int timesteps() const { return static_cast<int>(xy.size() / 2); }
  double x(int t) const { return xy[2 * static_cast<std::size_t>(t)]; }
  double y(int t) const { return xy[2 * static_cast<std::size_t>(t) + 1]; }
};

// Concatenates strokes, resamples to `timesteps` points (uniform in time when
// every point has a timestamp and time advances, otherwise uniform in arc
// length) and maps the bounding box of the result to [-1, 1] isotropically
// about its center.
NormalizedTrajectory normalize(const RawTrajectory& raw, int timesteps = kDefaultTimesteps);

// Anti-aliased polyline rendering into a [size, size] image with values in
// [0, 1]. A pixel's value is max(0, 1 - d) where d is the distance in pixels
// from its center to the nearest segment, so only pixels whose centers lie
// within one pixel of the path light up.
Tensor rasterize(const NormalizedTrajectory& traj, int size = kDefaultRasterSize);

// Pixel-space position of a normalized coordinate on a `size` canvas.
double to_pixel(double v, int size);

}  // namespace scribeid
