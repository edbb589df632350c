#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

#include "satmap/geo_align.hpp"
#include "satmap/synth_world.hpp"

namespace satmap {

/// Everything needed to turn a scene seed into one training record.
struct WorldConfig {
  GridConfig grid;
  PatchSpec patch;
  double tile_resolution = 0.3125;
  ObservationConfig observation;
  SceneTemplate layout = SceneTemplate::random;

  /// Tile half extent large enough to hold any crop around any track pose.
  TileConfig tile() const;
  void validate() const;
};

struct Sample {
  std::uint64_t seed = 0;
  double range_forward = 0.0;
  double range_lateral = 0.0;
  std::uint32_t grid_h = 0, grid_w = 0;
  std::uint32_t sat_lat = 0, sat_fwd = 0;
  EgoPose pose;
  std::vector<float> sat;     // [3, sat_lat, sat_fwd] crop, before ego alignment
  std::vector<float> obs;     // [3, grid_h, grid_w]
  std::vector<float> mask;    // [1, grid_h, grid_w]
  std::vector<float> labels;  // [grid_h, grid_w], class ids
  std::vector<VectorInstance> gt;  // ego metres, coordinates representable in f32

  Tensor sat_tensor() const;
  Tensor obs_tensor() const;
  Tensor mask_tensor() const;
  std::vector<std::uint8_t> label_ids() const;
  GridConfig grid() const;
  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Deterministic in (seed, cfg). The ego pose is one of the scene's track poses.
Sample make_sample(std::uint64_t seed, const WorldConfig& cfg);

/// Regenerates the scene of `sample` and crops the satellite patch at `pose`.
Tensor recrop_satellite(const Sample& sample, const WorldConfig& cfg, const EgoPose& pose);

/// Per-split sample seeds.
std::uint64_t sample_seed(std::uint64_t data_seed, bool eval_split, std::size_t index);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kDatasetVersion = 1;

void dataset_write(const std::vector<Sample>& samples, const std::filesystem::path& path);
std::vector<Sample> dataset_read(const std::filesystem::path& path);

}  // namespace satmap
