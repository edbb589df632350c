#include "satmap/model.hpp"

#include <stdexcept>

#include "satmap/rng.hpp"

namespace satmap {

const char* variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::bev_only: return "bev_only";
    case ModelVariant::no_refine: return "no_refine";
    case ModelVariant::gfr_star: return "gfr_star";
    case ModelVariant::gfr_full: return "gfr_full";
  }
  return "?";
}

ModelVariant parse_variant(const std::string& name) {
  for (auto v : {ModelVariant::bev_only, ModelVariant::no_refine, ModelVariant::gfr_star, ModelVariant::gfr_full})
    if (name == variant_name(v)) return v;
  throw std::invalid_argument("unknown model variant: " + name);
}

MapModel MapModel::create(nn::ParamStore& store, const ModelConfig& cfg, std::uint64_t init_seed) {
  MapModel m;
  m.cfg_ = cfg;
  Rng rng(mix_seed(init_seed, 0x1417));
  m.bev_ = BevEncoder::create(store, cfg.plan.out_channels, rng);
  if (cfg.variant != ModelVariant::bev_only) {
    SatBranchConfig sc{cfg.plan, cfg.gated, RefineVariant::full};
    if (cfg.variant == ModelVariant::no_refine) sc.variant = RefineVariant::none;
    if (cfg.variant == ModelVariant::gfr_star) sc.variant = RefineVariant::gfr_star;
    m.sat_ = SatBranch::create(store, sc, rng);
    m.fusion_ = Fusion::create(store, cfg.plan.out_channels, cfg.fusion, rng);
  }
  m.head_ = SegHead::create(store, cfg.plan.out_channels, rng);
  return m;
}

Tensor MapModel::logits(const Tensor& sat_patch, const Tensor& observation, const Tensor& mask, const GridConfig& grid,
                        Features* features) const {
  Features f;
  f.bev = bev_(observation, mask, grid).data;
  if (sat_) {
    f.sat = (*sat_)(sat_patch, grid.rows(), grid.cols());
    f.fused = (*fusion_)(f.bev, f.sat);
  } else {
    f.fused = f.bev;
  }
  Tensor out = head_.logits(f.fused);
  if (features) *features = std::move(f);
  return out;
}

}  // namespace satmap
