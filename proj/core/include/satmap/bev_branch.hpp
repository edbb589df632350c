#pragma once

#include <cstddef>
#include <string>

#include "satmap/nn.hpp"
#include "satmap/synth_world.hpp"

namespace satmap {

struct BevFeature {
  Tensor data;  // [C, H, W]
  GridConfig grid;
};

/// Observation (3 channels) and visibility mask stacked as input, then three
/// 3x3 convs of widths 16, 24, C with GELU between.
class BevEncoder {
 public:
  static BevEncoder create(nn::ParamStore& store, std::size_t out_channels, Rng& rng);

  BevFeature operator()(const Tensor& observation, const Tensor& mask, const GridConfig& grid) const;
  std::size_t out_channels() const { return out_channels_; }

 private:
  nn::Conv2d c1_, c2_, c3_;
  std::size_t out_channels_ = 0;
};

}  // namespace satmap
