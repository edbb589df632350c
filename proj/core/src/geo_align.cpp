#include "satmap/geo_align.hpp"

#include <cmath>
#include <numbers>
#include <spdlog/spdlog.h>
#include <string>

namespace satmap {

double normalize_angle(double radians) {
  constexpr double pi = std::numbers::pi;
  if (radians >= -pi && radians < pi) return radians;
  double r = std::fmod(radians + pi, 2.0 * pi);
  if (r < 0.0) r += 2.0 * pi;
  r -= pi;
  return r >= pi ? -pi : r;
}

Vec2 EgoPose::ego_to_world(Vec2 ego) const {
  const double c = std::cos(heading), s = std::sin(heading);
  return {x + c * ego.x - s * ego.y, y + s * ego.x + c * ego.y};
}

Vec2 EgoPose::world_to_ego(Vec2 world) const {
  const double c = std::cos(heading), s = std::sin(heading);
  const double dx = world.x - x, dy = world.y - y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Vec2 SatTile::world_to_pixel(Vec2 world) const {
  return {(world.x - origin.x) / resolution, (origin.y - world.y) / resolution};
}

Vec2 SatTile::pixel_to_world(Vec2 pixel) const {
  return {origin.x + pixel.x * resolution, origin.y - pixel.y * resolution};
}

PatchSpec PatchSpec::at_resolution(double range_forward, double range_lateral, double metres_per_px) {
  PatchSpec s;
  s.range_forward = range_forward;
  s.range_lateral = range_lateral;
  s.forward_px = static_cast<std::size_t>(std::lround(range_forward / metres_per_px));
  s.lateral_px = static_cast<std::size_t>(std::lround(range_lateral / metres_per_px));
  s.validate();
  return s;
}

void PatchSpec::validate() const {
  if (!(range_forward > 0.0) || !(range_lateral > 0.0)) throw std::invalid_argument("PatchSpec: ranges must be positive");
  if (forward_px == 0 || lateral_px == 0) throw std::invalid_argument("PatchSpec: output extents must be positive");
}

Tensor crop_patch(const SatTile& tile, const EgoPose& pose, const PatchSpec& spec, CropStats* stats) {
  spec.validate();
  const std::size_t th = tile.height(), tw = tile.width();
  const std::size_t rows = spec.lateral_px, cols = spec.forward_px;
  Tensor out = Tensor::zeros({3, rows, cols});
  auto dst = out.mutable_data();
  const auto src = tile.raster.data();
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  // pose relative to the tile origin, so translating both by the same offset
  // leaves every sample position unchanged
  const double rel_x = pose.x - tile.origin.x, rel_y = pose.y - tile.origin.y;
  const double res_f = spec.forward_resolution(), res_l = spec.lateral_resolution();

  CropStats local;
  for (std::size_t r = 0; r < rows; ++r) {
    const double lat = spec.range_lateral / 2.0 - (static_cast<double>(r) + 0.5) * res_l;
    for (std::size_t k = 0; k < cols; ++k) {
      const double fwd = -spec.range_forward / 2.0 + (static_cast<double>(k) + 0.5) * res_f;
      const double px = (rel_x + c * fwd - s * lat) / tile.resolution;
      const double py = -(rel_y + s * fwd + c * lat) / tile.resolution;
      ++local.samples;
      const double fx = std::floor(px), fy = std::floor(py);
      const double tx = px - fx, ty = py - fy;
      const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
      bool touched = false;
      double acc[3] = {0.0, 0.0, 0.0};
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const std::ptrdiff_t yy = y0 + dy, xx = x0 + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(th) || xx >= static_cast<std::ptrdiff_t>(tw)) continue;
          const double w = (dy ? ty : 1.0 - ty) * (dx ? tx : 1.0 - tx);
          if (w == 0.0) continue;
          touched = true;
          for (std::size_t ch = 0; ch < 3; ++ch)
            acc[ch] += w * src[(ch * th + static_cast<std::size_t>(yy)) * tw + static_cast<std::size_t>(xx)];
        }
      }
      if (!touched) {
        ++local.outside;
        continue;
      }
      for (std::size_t ch = 0; ch < 3; ++ch) dst[(ch * rows + r) * cols + k] = acc[ch];
    }
  }
  if (local.outside == local.samples) {
    throw NoTileIntersection("crop_patch: patch at pose (x=" + std::to_string(pose.x) + ", y=" + std::to_string(pose.y) +
                             ", heading=" + std::to_string(pose.heading) + ") does not intersect the tile");
  }
  if (local.outside > 0) {
    spdlog::debug("crop_patch: {} of {} samples fell outside the tile and were zero-filled", local.outside,
                  local.samples);
  }
  if (stats) *stats = local;
  return out;
}

namespace {

void require_patch(const Tensor& t, const char* op) {
  if (!t.defined() || t.rank() != 3) throw ShapeError(std::string(op) + ": expected a [C,H,W] patch");
}

// B[r][k] = A[H-1-r][k]
Tensor flip_vertical(const Tensor& a) {
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  Tensor b = Tensor::zeros({c, h, w});
  auto out = b.mutable_data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t k = 0; k < w; ++k) out[(ch * h + r) * w + k] = a[(ch * h + (h - 1 - r)) * w + k];
  return b;
}

// clockwise: C[i][j] = B[H-1-j][i], output [W, H]
Tensor rotate_cw(const Tensor& b) {
  const std::size_t c = b.dim(0), h = b.dim(1), w = b.dim(2);
  Tensor out = Tensor::zeros({c, w, h});
  auto o = out.mutable_data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t j = 0; j < h; ++j) o[(ch * w + i) * h + j] = b[(ch * h + (h - 1 - j)) * w + i];
  return out;
}

// counter-clockwise: D[i][j] = C[j][W-1-i], output [W, H] of a [H, W] input
Tensor rotate_ccw(const Tensor& cimg) {
  const std::size_t c = cimg.dim(0), h = cimg.dim(1), w = cimg.dim(2);
  Tensor out = Tensor::zeros({c, w, h});
  auto o = out.mutable_data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t j = 0; j < h; ++j) o[(ch * w + i) * h + j] = cimg[(ch * h + j) * w + (w - 1 - i)];
  return out;
}

}  // namespace

Tensor align_to_ego(const Tensor& patch, EgoAlignment kind) {
  require_patch(patch, "align_to_ego");
  switch (kind) {
    case EgoAlignment::flip_vertical_then_rotate_cw:
      return rotate_cw(flip_vertical(patch));
  }
  throw std::invalid_argument("align_to_ego: unsupported alignment");
}

Tensor align_from_ego(const Tensor& aligned, EgoAlignment kind) {
  require_patch(aligned, "align_from_ego");
  switch (kind) {
    case EgoAlignment::flip_vertical_then_rotate_cw:
      return flip_vertical(rotate_ccw(aligned));
  }
  throw std::invalid_argument("align_from_ego: unsupported alignment");
}

EgoPose perturb_pose(const EgoPose& pose, double sigma_t, double sigma_r, Rng& rng) {
  if (!(sigma_t >= 0.0) || !(sigma_r >= 0.0)) throw std::invalid_argument("perturb_pose: sigmas must be non-negative");
  const double nx = rng.normal(), ny = rng.normal(), nh = rng.normal();
  if (sigma_t == 0.0 && sigma_r == 0.0) return pose;
  return EgoPose::make(pose.x + sigma_t * nx, pose.y + sigma_t * ny, pose.heading + sigma_r * nh);
}

}  // namespace satmap
