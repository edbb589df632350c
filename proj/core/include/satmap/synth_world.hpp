#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "satmap/geo_align.hpp"
#include "satmap/geometry.hpp"
#include "satmap/tensor.hpp"

/// Procedural driving scenes: vector ground truth, satellite renders with
/// map-irrelevant clutter, degraded ego observations, and label rasters.
namespace satmap {

enum class MapClass : std::uint8_t { background = 0, divider = 1, ped_crossing = 2, boundary = 3 };
inline constexpr std::size_t kNumClasses = 4;
inline constexpr MapClass kMapClasses[] = {MapClass::divider, MapClass::ped_crossing, MapClass::boundary};
const char* class_name(MapClass cls);

struct MapInstance {
  MapClass cls = MapClass::divider;
  Polyline points;     // world metres
  double width = 0.5;  // render stroke, metres
};

enum class NuisanceKind { shadow, vegetation, building, cloud };

struct Nuisance {
  NuisanceKind kind = NuisanceKind::shadow;
  Polyline polygon;  // world metres, implicitly closed
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<MapInstance> instances;
  std::vector<Nuisance> nuisances;
  std::vector<EgoPose> ego_track;
};

enum class SceneTemplate { random, straight, intersection };

/// Deterministic in `seed`. `straight` pins the reference layout: road along
/// +X through the origin, boundaries at lateral +-7 m, one divider at 0 m.
SceneSpec gen_scene(std::uint64_t seed, SceneTemplate layout = SceneTemplate::random);

/// BEV raster geometry. Rows span the forward axis, columns the lateral axis:
/// cell (i, j) is centred at forward -R_f/2 + (i + 0.5) * cell_f and lateral
/// R_l/2 - (j + 0.5) * cell_l (left positive).
struct GridConfig {
  double range_forward = 60.0;
  double range_lateral = 30.0;
  double cell = 0.6;

  std::size_t rows() const;
  std::size_t cols() const;
  double cell_forward() const { return range_forward / static_cast<double>(rows()); }
  double cell_lateral() const { return range_lateral / static_cast<double>(cols()); }
  Vec2 cell_center(std::size_t row, std::size_t col) const;
  /// Continuous (row, col) of an ego-frame point, cell centres at integers.
  Vec2 ego_to_cell(Vec2 ego) const;
  double max_range() const;  // half diagonal
  void validate() const;
  friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

struct TileConfig {
  double resolution = 0.3125;
  double half_extent = 45.0;  // metres around the first ego pose
};

/// Asphalt base, instance strokes in class albedos, then nuisance compositing.
SatTile render_satellite(const SceneSpec& scene, const TileConfig& cfg);

/// Per-class albedo used by render_satellite (RGB).
std::array<double, 3> class_albedo(MapClass cls);
inline constexpr double kShadowFactor = 0.4;

struct OcclusionWedge {
  double bearing = 0.0;     // radians in the ego frame, 0 = forward
  double half_angle = 0.1;  // radians
  double distance = 8.0;    // metres from the ego to the occluder
};

struct ObservationConfig {
  double full_visibility_range = 20.0;
  /// Range where visibility reaches min_visibility; defaults to the grid's
  /// forward edge (R_f / 2).
  std::optional<double> falloff_end;
  double min_visibility = 0.2;
  std::size_t max_wedges = 3;
  double noise_sigma = 0.02;
  /// Replaces the random wedges when set.
  std::optional<std::vector<OcclusionWedge>> wedges;
};

/// Visibility before occlusion: 1 up to the full range, then linear down to
/// min_visibility at the falloff end, constant beyond.
double range_visibility(double range, const ObservationConfig& cfg, const GridConfig& grid);

struct EgoObservation {
  Tensor raster;  // [3, H, W] per-class occupancy, dropped and noised
  Tensor mask;    // [1, H, W] visibility in [0, 1]
};

/// Each cell is observed with probability equal to its visibility.
EgoObservation render_ego_observation(const SceneSpec& scene, const EgoPose& pose, const GridConfig& grid,
                                      const ObservationConfig& cfg, std::uint64_t seed);

enum class DegradationKind { none, fog, snow, frame_lost, camera_crash, low_light };
const char* degradation_name(DegradationKind kind);
DegradationKind parse_degradation(const std::string& name);
inline constexpr DegradationKind kAdverseScenarios[] = {DegradationKind::fog, DegradationKind::snow,
                                                        DegradationKind::frame_lost, DegradationKind::camera_crash,
                                                        DegradationKind::low_light};

struct DegradationSpec {
  DegradationKind kind = DegradationKind::none;
  double severity = 0.0;
  std::uint64_t rng_seed = 0;
  void validate() const;
};

/// Camera sectors (centre bearing, half width) that fail in order under
/// camera_crash.
struct CameraSector {
  double bearing;
  double half_width;
};
inline constexpr CameraSector kCrashSectors[] = {{1.0471975511965976, 0.5235987755982988},
                                                 {3.141592653589793, 0.5235987755982988},
                                                 {-1.0471975511965976, 0.5235987755982988}};

/// Degrades an observation raster laid out on `grid`. Never touches labels.
Tensor apply_degradation(const Tensor& raster, const GridConfig& grid, const DegradationSpec& spec);

struct VectorInstance {
  MapClass cls = MapClass::divider;
  Polyline points;  // ego metres
  friend bool operator==(const VectorInstance&, const VectorInstance&) = default;
};

struct GroundTruth {
  std::vector<std::uint8_t> labels;  // [H * W], MapClass values
  std::vector<VectorInstance> instances;
};

/// Label grid with priority boundary > crossing > divider, plus clipped
/// ego-frame polylines.
GroundTruth rasterize_gt(const SceneSpec& scene, const EgoPose& pose, const GridConfig& grid);

/// Half stroke width used when rasterising an instance onto a grid.
double grid_half_width(double instance_width, const GridConfig& grid);

}  // namespace satmap
