#pragma once

#include <cmath>
#include <vector>

namespace satmap {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

using Polyline = std::vector<Vec2>;

inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double dist(Vec2 a, Vec2 b) { return norm(a - b); }

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b);
double point_polyline_distance(Vec2 p, const Polyline& line);
double polyline_length(const Polyline& line);

/// `n` points equally spaced by arc length, first and last included.
Polyline resample(const Polyline& line, std::size_t n);

/// Ramer-Douglas-Peucker simplification; endpoints always kept.
Polyline simplify(const Polyline& line, double tolerance);

/// Even-odd rule.
bool point_in_polygon(Vec2 p, const Polyline& polygon);

/// Distance from p to the polygon outline (closing edge included).
double polygon_edge_distance(Vec2 p, const Polyline& polygon);

/// Pieces of the polyline inside the axis-aligned box; consecutive in-box
/// segments are joined, degenerate pieces dropped.
std::vector<Polyline> clip_polyline(const Polyline& line, Vec2 lo, Vec2 hi);

}  // namespace satmap
