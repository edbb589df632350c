#include "satmap/geometry.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace satmap {

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = ab.x * ab.x + ab.y * ab.y;
  if (len2 == 0.0) return dist(p, a);
  const double t = std::clamp(((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2, 0.0, 1.0);
  return dist(p, a + t * ab);
}

double point_polyline_distance(Vec2 p, const Polyline& line) {
  if (line.size() == 1) return dist(p, line[0]);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < line.size(); ++i) best = std::min(best, point_segment_distance(p, line[i], line[i + 1]));
  return best;
}

double polyline_length(const Polyline& line) {
  double len = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) len += dist(line[i], line[i + 1]);
  return len;
}

Polyline resample(const Polyline& line, std::size_t n) {
  if (line.size() < 2 || n < 2) throw std::invalid_argument("resample: need at least two points in and out");
  const double total = polyline_length(line);
  if (total <= 0.0) throw std::invalid_argument("resample: zero-length polyline");
  Polyline out;
  out.reserve(n);
  std::size_t seg = 0;
  double seg_start = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k == n - 1) {
      out.push_back(line.back());
      break;
    }
    const double target = total * static_cast<double>(k) / static_cast<double>(n - 1);
    while (seg + 1 < line.size() - 1 && seg_start + dist(line[seg], line[seg + 1]) < target) {
      seg_start += dist(line[seg], line[seg + 1]);
      ++seg;
    }
    const double len = dist(line[seg], line[seg + 1]);
    const double t = len > 0.0 ? std::clamp((target - seg_start) / len, 0.0, 1.0) : 0.0;
    out.push_back(line[seg] + t * (line[seg + 1] - line[seg]));
  }
  return out;
}

namespace {
void rdp(const Polyline& line, std::size_t first, std::size_t last, double tol, std::vector<bool>& keep) {
  if (last <= first + 1) return;
  double worst = -1.0;
  std::size_t idx = first;
  for (std::size_t i = first + 1; i < last; ++i) {
    const double d = point_segment_distance(line[i], line[first], line[last]);
    if (d > worst) {
      worst = d;
      idx = i;
    }
  }
  if (worst > tol) {
    keep[idx] = true;
    rdp(line, first, idx, tol, keep);
    rdp(line, idx, last, tol, keep);
  }
}
}  // namespace

Polyline simplify(const Polyline& line, double tolerance) {
  if (line.size() <= 2) return line;
  std::vector<bool> keep(line.size(), false);
  keep.front() = keep.back() = true;
  rdp(line, 0, line.size() - 1, tolerance, keep);
  Polyline out;
  for (std::size_t i = 0; i < line.size(); ++i)
    if (keep[i]) out.push_back(line[i]);
  return out;
}

bool point_in_polygon(Vec2 p, const Polyline& polygon) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = polygon[i], b = polygon[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) inside = !inside;
  }
  return inside;
}

double polygon_edge_distance(Vec2 p, const Polyline& polygon) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = polygon.size();
  for (std::size_t i = 0; i < n; ++i) best = std::min(best, point_segment_distance(p, polygon[i], polygon[(i + 1) % n]));
  return best;
}

std::vector<Polyline> clip_polyline(const Polyline& line, Vec2 lo, Vec2 hi) {
  std::vector<Polyline> pieces;
  Polyline current;
  auto flush = [&] {
    if (current.size() >= 2 && polyline_length(current) > 1e-9) pieces.push_back(current);
    current.clear();
  };
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Vec2 a = line[i], b = line[i + 1];
    // Liang-Barsky
    double t0 = 0.0, t1 = 1.0;
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double p[4] = {-dx, dx, -dy, dy};
    const double q[4] = {a.x - lo.x, hi.x - a.x, a.y - lo.y, hi.y - a.y};
    bool visible = true;
    for (int k = 0; k < 4 && visible; ++k) {
      if (p[k] == 0.0) {
        if (q[k] < 0.0) visible = false;
      } else {
        const double r = q[k] / p[k];
        if (p[k] < 0.0) t0 = std::max(t0, r);
        else t1 = std::min(t1, r);
        if (t0 > t1) visible = false;
      }
    }
    if (!visible) {
      flush();
      continue;
    }
    const Vec2 ca = t0 > 0.0 ? a + t0 * (b - a) : a;
    const Vec2 cb = t1 < 1.0 ? a + t1 * (b - a) : b;
    if (current.empty() || !(current.back() == ca) || t0 > 0.0) {
      flush();
      current.push_back(ca);
    }
    current.push_back(cb);
    if (t1 < 1.0) flush();
  }
  flush();
  return pieces;
}

}  // namespace satmap
