#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "satmap/bev_branch.hpp"
#include "satmap/fusion.hpp"
#include "satmap/map_head.hpp"
#include "satmap/sat_branch.hpp"

namespace satmap {

/// bev_only skips the satellite branch and feeds F_bev straight to the head;
/// no_refine lifts the stem level r0 without refinement.
enum class ModelVariant { bev_only, no_refine, gfr_star, gfr_full };
const char* variant_name(ModelVariant v);
ModelVariant parse_variant(const std::string& name);

struct ModelConfig {
  ModelVariant variant = ModelVariant::gfr_full;
  ChannelPlan plan;
  GatedCnnConfig gated;
  FusionConfig fusion;
};

class MapModel {
 public:
  /// Parameters are created in a fixed order from `init_seed`.
  static MapModel create(nn::ParamStore& store, const ModelConfig& cfg, std::uint64_t init_seed);

  struct Features {
    Tensor bev, sat, fused;  // sat undefined for bev_only
  };

  /// `sat_patch` is the ego-aligned satellite patch; ignored for bev_only.
  Tensor logits(const Tensor& sat_patch, const Tensor& observation, const Tensor& mask, const GridConfig& grid,
                Features* features = nullptr) const;

  const ModelConfig& config() const { return cfg_; }
  bool uses_satellite() const { return cfg_.variant != ModelVariant::bev_only; }

 private:
  ModelConfig cfg_;
  BevEncoder bev_;
  std::optional<SatBranch> sat_;
  std::optional<Fusion> fusion_;
  SegHead head_;
};

}  // namespace satmap
