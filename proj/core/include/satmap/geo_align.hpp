#pragma once

#include <cstddef>
#include <stdexcept>

#include "satmap/geometry.hpp"
#include "satmap/rng.hpp"
#include "satmap/tensor.hpp"

/// Ego-pose-centred satellite cropping and ego-frame alignment.
///
/// Frames:
///  * world: planar metres, X east, Y north.
///  * ego: x forward along the heading, y to the left.
///  * tile raster: row r, column c has its centre at
///    (origin.x + c * res, origin.y - r * res) -- north-up.
///  * cropped patch [3, lateral_px, forward_px]: north-up-like rendering of
///    the heading-rotated rectangle; row 0 is the left edge, column 0 the rear
///    edge.
///  * aligned patch [3, forward_px, lateral_px]: ego grid convention, row i
///    at forward offset -R_f/2 + (i + 0.5) * res_f, column j at lateral offset
///    R_l/2 - (j + 0.5) * res_l.
namespace satmap {

double normalize_angle(double radians);  // into [-pi, pi)

struct EgoPose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians, counter-clockwise from +X

  static EgoPose make(double x, double y, double heading) { return {x, y, normalize_angle(heading)}; }

  Vec2 ego_to_world(Vec2 ego) const;
  Vec2 world_to_ego(Vec2 world) const;
  friend bool operator==(const EgoPose&, const EgoPose&) = default;
};

struct SatTile {
  Tensor raster;  // [3, H_t, W_t], values in [0, 1]
  Vec2 origin;    // world position of pixel (0, 0) centre
  double resolution = 0.3125;

  std::size_t height() const { return raster.dim(1); }
  std::size_t width() const { return raster.dim(2); }
  /// (column, row) in continuous pixel units.
  Vec2 world_to_pixel(Vec2 world) const;
  Vec2 pixel_to_world(Vec2 pixel) const;
};

struct PatchSpec {
  double range_forward = 60.0;
  double range_lateral = 30.0;
  std::size_t forward_px = 192;
  std::size_t lateral_px = 96;

  static PatchSpec at_resolution(double range_forward, double range_lateral, double metres_per_px);
  double forward_resolution() const { return range_forward / static_cast<double>(forward_px); }
  double lateral_resolution() const { return range_lateral / static_cast<double>(lateral_px); }
  void validate() const;
};

class NoTileIntersection : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CropStats {
  std::size_t samples = 0;
  std::size_t outside = 0;  // samples with no in-tile neighbour
};

/// Bilinear crop of the pose-centred rectangle; samples outside the tile read
/// zero. Throws NoTileIntersection if no sample touches the tile.
Tensor crop_patch(const SatTile& tile, const EgoPose& pose, const PatchSpec& spec, CropStats* stats = nullptr);

/// Affine that takes a cropped patch into the ego grid convention. Only the
/// nuScenes-style composition is implemented; other datasets would add members.
enum class EgoAlignment { flip_vertical_then_rotate_cw };

/// [C, H, W] -> [C, W, H]: vertical flip followed by a 90 degree clockwise
/// rotation of every channel.
Tensor align_to_ego(const Tensor& patch, EgoAlignment kind = EgoAlignment::flip_vertical_then_rotate_cw);
/// Exact inverse of align_to_ego.
Tensor align_from_ego(const Tensor& aligned, EgoAlignment kind = EgoAlignment::flip_vertical_then_rotate_cw);

/// Adds N(0, sigma_t^2) to x and y and N(0, sigma_r^2) to the heading.
EgoPose perturb_pose(const EgoPose& pose, double sigma_t, double sigma_r, Rng& rng);

}  // namespace satmap
