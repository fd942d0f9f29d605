#include "scribeid/trajectory.hpp"

#include <algorithm>
#include <cmath>

#include "scribeid/errors.hpp"

namespace scribeid {

void validate(const RawTrajectory& raw) {
  const int n = static_cast<int>(raw.points.size());
  if (n < 2) throw TooShortError("trajectory has " + std::to_string(n) + " point(s), need at least 2");
  if (!raw.strokes.empty()) {
    int expect = 0;
    for (const StrokeRange& s : raw.strokes) {
      if (s.start != expect || s.end <= s.start || s.end > n) {
        throw SchemaError("stroke ranges must be ordered, disjoint, non-empty and cover all points");
      }
      expect = s.end;
    }
    if (expect != n) throw SchemaError("stroke ranges do not cover all points");
  }
  std::optional<double> last;
  for (const Point& p : raw.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || (p.t && !std::isfinite(*p.t))) {
      throw SchemaError("non-finite coordinate");
    }
    if (p.t) {
      if (last && *p.t < *last) throw SchemaError("timestamps decrease");
      last = p.t;
    }
  }
}

NormalizedTrajectory normalize(const RawTrajectory& raw, int timesteps) {
  validate(raw);
  if (timesteps < 2) throw UsageError("normalize needs at least 2 timesteps");
  // Strokes are ordered and cover every point, so concatenation is the point list itself.
  const std::vector<Point>& pts = raw.points;
  const std::size_t n = pts.size();

  const bool timed = std::all_of(pts.begin(), pts.end(), [](const Point& p) { return p.t.has_value(); }) &&
                     *pts.back().t > *pts.front().t;
  std::vector<double> param(n, 0.0);
  if (timed) {
    for (std::size_t i = 0; i < n; ++i) param[i] = *pts[i].t - *pts.front().t;
  } else {
    for (std::size_t i = 1; i < n; ++i) param[i] = param[i - 1] + std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
  }
  const double span = param.back();
  if (span <= 0.0) throw DegenerateInputError("all points are identical");

  NormalizedTrajectory out;
  out.letter = raw.letter;
  out.writer_id = raw.writer_id;
  out.xy.resize(2 * static_cast<std::size_t>(timesteps));
  std::size_t seg = 0;
  for (int k = 0; k < timesteps; ++k) {
    const double u = k == timesteps - 1 ? span : span * k / (timesteps - 1);
    while (seg + 2 < n && param[seg + 1] < u) ++seg;
    // Equal parameters (repeated timestamps, zero-length steps) take the later point.
    const double len = param[seg + 1] - param[seg];
    const double a = len > 0.0 ? std::clamp((u - param[seg]) / len, 0.0, 1.0) : 1.0;
    out.xy[2 * k] = pts[seg].x + a * (pts[seg + 1].x - pts[seg].x);
    out.xy[2 * k + 1] = pts[seg].y + a * (pts[seg + 1].y - pts[seg].y);
  }

  double min_x = out.xy[0], max_x = out.xy[0], min_y = out.xy[1], max_y = out.xy[1];
  for (int k = 1; k < timesteps; ++k) {
    min_x = std::min(min_x, out.xy[2 * k]);
    max_x = std::max(max_x, out.xy[2 * k]);
    min_y = std::min(min_y, out.xy[2 * k + 1]);
    max_y = std::max(max_y, out.xy[2 * k + 1]);
  }
  const double half = 0.5 * std::max(max_x - min_x, max_y - min_y);
  if (half <= 0.0) throw DegenerateInputError("resampled trajectory collapses to a point");
  const double cx = 0.5 * (min_x + max_x), cy = 0.5 * (min_y + max_y);
  for (int k = 0; k < timesteps; ++k) {
    out.xy[2 * k] = std::clamp((out.xy[2 * k] - cx) / half, -1.0, 1.0);
    out.xy[2 * k + 1] = std::clamp((out.xy[2 * k + 1] - cy) / half, -1.0, 1.0);
  }
  return out;
}

double to_pixel(double v, int size) {
  // [-1, 1] maps to [1, size - 1] so strokes on the border keep their falloff.
  return 1.0 + 0.5 * (v + 1.0) * (size - 2);
}

namespace {

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

}  // namespace

Tensor rasterize(const NormalizedTrajectory& traj, int size) {
  if (size < 4) throw UsageError("raster size must be at least 4");
  Tensor img({size, size});
  const int n = traj.timesteps();
  for (int k = 0; k + 1 < n || (n == 1 && k == 0); ++k) {
    const double ax = to_pixel(traj.x(k), size), ay = to_pixel(traj.y(k), size);
    const double bx = n == 1 ? ax : to_pixel(traj.x(k + 1), size);
    const double by = n == 1 ? ay : to_pixel(traj.y(k + 1), size);
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - 1.0)));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(std::max(ax, bx) + 1.0)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - 1.0)));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(std::max(ay, by) + 1.0)));
    for (int py = y0; py <= y1; ++py) {
      for (int px = x0; px <= x1; ++px) {
        const double d = segment_distance(px + 0.5, py + 0.5, ax, ay, bx, by);
        const double v = 1.0 - d;
        // Row 0 is the top of the image; y grows upward in trajectory space.
        double& dst = img[static_cast<std::size_t>(size - 1 - py) * size + px];
        if (v > dst) dst = v;
      }
    }
    if (n == 1) break;
  }
  return img;
}

}  // namespace scribeid
