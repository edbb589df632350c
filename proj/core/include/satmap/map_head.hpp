#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "satmap/nn.hpp"
#include "satmap/synth_world.hpp"

/// Raster segmentation head, raster-to-vector conversion and Chamfer AP.
namespace satmap {

/// Two 3x3 convs C -> C with GELU, then a 1x1 map to per-class logits.
class SegHead {
 public:
  static SegHead create(nn::ParamStore& store, std::size_t channels, Rng& rng);
  Tensor logits(const Tensor& features) const;
  Tensor operator()(const Tensor& features) const { return ops::softmax_channels(logits(features)); }

 private:
  nn::Conv2d c1_, c2_;
  nn::Linear classifier_;
};

struct PredInstance {
  MapClass cls = MapClass::divider;
  Polyline points;  // ego metres
  double confidence = 0.0;
};

struct VectorizeConfig {
  double min_prob = 0.5;
  std::size_t min_cells = 4;
};

/// Per class: threshold, 8-connected components, drop small ones, chain the
/// cells by nearest neighbour from the cell farthest from the centroid,
/// simplify with half-cell tolerance. Confidences descend within a class.
std::vector<PredInstance> vectorize(const Tensor& probs, const GridConfig& grid, const VectorizeConfig& cfg = {});

/// Mean of the two directed mean nearest-point distances between the
/// arc-length resamplings of both polylines.
double chamfer_distance(const Polyline& a, const Polyline& b, std::size_t resample_n = 20);

struct ApConfig {
  std::vector<double> thresholds{0.5, 1.0, 1.5};
  std::size_t resample_n = 20;
  void validate() const;
};

/// Predictions and ground truth of one evaluation frame. Matching happens
/// within a frame; ranking is global across frames.
struct FrameResult {
  std::vector<PredInstance> preds;
  std::vector<VectorInstance> gts;
};

/// All-point interpolated AP for one class at one threshold. No GT and no
/// predictions scores 1.
double ap_at_threshold(std::span<const FrameResult> frames, MapClass cls, double tau, std::size_t resample_n = 20);

struct MetricReport {
  std::array<double, 3> per_class{};  // divider, ped_crossing, boundary; in [0, 1]
  double map = 0.0;
  double ap_div() const { return per_class[0]; }
  double ap_ped() const { return per_class[1]; }
  double ap_bou() const { return per_class[2]; }
};

MetricReport map_metric(std::span<const FrameResult> frames, const ApConfig& cfg = {});

/// clamp(f_background / f_class, 1, 20) from label frequencies; absent
/// classes get the upper clamp.
std::array<double, kNumClasses> class_weights(std::span<const std::uint8_t> labels);

}  // namespace satmap
