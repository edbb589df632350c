#include "satmap/bev_branch.hpp"

namespace satmap {

BevEncoder BevEncoder::create(nn::ParamStore& store, std::size_t out_channels, Rng& rng) {
  BevEncoder e;
  e.c1_ = nn::Conv2d::create(store, "bev.conv1", 4, 16, 3, 1, 1, rng);
  e.c2_ = nn::Conv2d::create(store, "bev.conv2", 16, 24, 3, 1, 1, rng);
  e.c3_ = nn::Conv2d::create(store, "bev.conv3", 24, out_channels, 3, 1, 1, rng);
  e.out_channels_ = out_channels;
  return e;
}

BevFeature BevEncoder::operator()(const Tensor& observation, const Tensor& mask, const GridConfig& grid) const {
  const Shape expect_obs{3, grid.rows(), grid.cols()}, expect_mask{1, grid.rows(), grid.cols()};
  if (observation.shape() != expect_obs || mask.shape() != expect_mask)
    throw ShapeError("encode_bev: observation " + shape_str(observation.shape()) + " / mask " +
                     shape_str(mask.shape()) + " do not match the grid " + shape_str(expect_obs));
  const Tensor x = ops::concat_channels(observation, mask);
  return {c3_(ops::gelu(c2_(ops::gelu(c1_(x))))), grid};
}

}  // namespace satmap
