#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "satmap/nn.hpp"

/// Satellite feature pyramid and the gated top-down refinement that turns it
/// into a BEV-resolution satellite feature.
namespace satmap {

class ChannelArithmeticError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Expansion ratio gamma and convolution ratio alpha, kept as exact fractions.
struct GatedCnnConfig {
  std::size_t gamma_num = 8, gamma_den = 3;
  std::size_t alpha_num = 1, alpha_den = 1;
  std::size_t local_kernel = 3;

  struct Split {
    std::size_t gate;      // gamma * d
    std::size_t identity;  // (gamma - alpha) * d
    std::size_t conv;      // alpha * d
    std::size_t expanded;  // 2 * gamma * d
  };
  /// Throws ChannelArithmeticError unless every part is a positive integer.
  Split split(std::size_t d) const;
};

struct ChannelPlan {
  std::array<std::size_t, 5> widths{12, 12, 24, 48, 96};  // r0 .. r4
  std::size_t out_channels = 24;

  /// Concat width entering the gated block that produces level `level`.
  std::size_t concat_width(std::size_t level) const { return widths[level] + widths[level + 1]; }
  void validate(const GatedCnnConfig& cfg) const;
};

/// r0 at BEV resolution, r1..r4 at strides 4, 8, 16, 32 of the patch.
struct PyramidFeatures {
  std::array<Tensor, 5> levels;
  const Tensor& operator[](std::size_t i) const { return levels[i]; }
};

enum class RefineVariant { none, gfr_star, full };

/// Stem (7x7 stride 2) and four residual stages with stride-2 entry.
class Backbone {
 public:
  static Backbone create(nn::ParamStore& store, const std::string& prefix, const ChannelPlan& plan, Rng& rng);

  /// `patch` is the ego-aligned satellite patch [3, H_sat, W_sat]; r0 is
  /// resampled to bev_h x bev_w.
  PyramidFeatures operator()(const Tensor& patch, std::size_t bev_h, std::size_t bev_w) const;

 private:
  struct Stage {
    nn::Conv2d entry, body, skip;
  };
  nn::Conv2d stem_;
  std::array<Stage, 4> stages_;
};

/// Normalise, expand, split into gate / identity / local paths, GELU-gate,
/// project back with a residual, then a 1x1 map to the lower level's width.
struct GatedBlock {
  GatedCnnConfig cfg;
  GatedCnnConfig::Split split;
  nn::LayerNorm norm;
  nn::Linear expand;
  nn::Conv2d local;
  nn::Linear project;
  nn::Linear out;

  static GatedBlock create(nn::ParamStore& store, const std::string& prefix, std::size_t d, std::size_t d_next,
                           const GatedCnnConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  static std::size_t parameter_count(std::size_t d, std::size_t d_next, const GatedCnnConfig& cfg);
};

/// One top-down step: upsample the upper level, concat with the pre-aligned
/// lower level, then a gated block (or a plain 3x3 conv for gfr_star).
struct GfrStep {
  nn::Conv2d prealign;
  std::optional<GatedBlock> gated;
  std::optional<nn::Conv2d> plain;

  static GfrStep create(nn::ParamStore& store, const std::string& prefix, std::size_t d_upper, std::size_t d_lower,
                        RefineVariant variant, const GatedCnnConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& upper, const Tensor& lower) const;
};

struct SatBranchConfig {
  ChannelPlan plan;
  GatedCnnConfig gated;
  RefineVariant variant = RefineVariant::full;
};

class SatBranch {
 public:
  static SatBranch create(nn::ParamStore& store, const SatBranchConfig& cfg, Rng& rng);

  PyramidFeatures extract_pyramid(const Tensor& patch, std::size_t bev_h, std::size_t bev_w) const;
  /// Runs r4 -> r3 -> r2 -> r1 -> r0; returns r0 unchanged for variant none.
  Tensor refine(const PyramidFeatures& pyramid) const;
  /// 1x1 lift d0 -> C.
  Tensor to_sat_feature(const Tensor& r0_out) const;
  Tensor operator()(const Tensor& patch, std::size_t bev_h, std::size_t bev_w) const;

  const SatBranchConfig& config() const { return cfg_; }
  const std::vector<GfrStep>& steps() const { return steps_; }  // steps_[i] produces level i

 private:
  SatBranchConfig cfg_;
  Backbone backbone_;
  std::vector<GfrStep> steps_;
  nn::Linear lift_;
};

}  // namespace satmap
