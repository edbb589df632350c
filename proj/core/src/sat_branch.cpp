#include "satmap/sat_branch.hpp"

#include <string>

namespace satmap {

namespace {

constexpr double kGateBiasInit = 0.5;

std::string split_message(std::size_t d, const GatedCnnConfig& cfg, const char* what) {
  return "gated block channel split: " + std::string(what) + " (d=" + std::to_string(d) +
         ", gamma=" + std::to_string(cfg.gamma_num) + "/" + std::to_string(cfg.gamma_den) +
         ", alpha=" + std::to_string(cfg.alpha_num) + "/" + std::to_string(cfg.alpha_den) + ")";
}

}  // namespace

GatedCnnConfig::Split GatedCnnConfig::split(std::size_t d) const {
  if (gamma_den == 0 || alpha_den == 0) throw ChannelArithmeticError(split_message(d, *this, "zero denominator"));
  if (d == 0) throw ChannelArithmeticError(split_message(d, *this, "empty input"));
  if ((d * gamma_num) % gamma_den != 0) throw ChannelArithmeticError(split_message(d, *this, "gamma*d is not integral"));
  if ((d * alpha_num) % alpha_den != 0) throw ChannelArithmeticError(split_message(d, *this, "alpha*d is not integral"));
  if (local_kernel % 2 == 0) throw ChannelArithmeticError(split_message(d, *this, "local kernel must be odd"));
  Split s{};
  s.gate = d * gamma_num / gamma_den;
  s.conv = d * alpha_num / alpha_den;
  if (s.conv == 0 || s.gate <= s.conv)
    throw ChannelArithmeticError(split_message(d, *this, "need 0 < alpha*d < gamma*d"));
  s.identity = s.gate - s.conv;
  s.expanded = 2 * s.gate;
  return s;
}

void ChannelPlan::validate(const GatedCnnConfig& cfg) const {
  for (std::size_t w : widths)
    if (w == 0) throw ChannelArithmeticError("channel plan: level widths must be positive");
  if (out_channels == 0) throw ChannelArithmeticError("channel plan: output channels must be positive");
  for (std::size_t level = 0; level < 4; ++level) cfg.split(concat_width(level));
}

Backbone Backbone::create(nn::ParamStore& store, const std::string& prefix, const ChannelPlan& plan, Rng& rng) {
  Backbone b;
  b.stem_ = nn::Conv2d::create(store, prefix + ".stem", 3, plan.widths[0], 7, 2, 3, rng);
  std::size_t in = plan.widths[0];
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t out = plan.widths[s + 1];
    const std::string p = prefix + ".stage" + std::to_string(s + 1);
    b.stages_[s].entry = nn::Conv2d::create(store, p + ".entry", in, out, 3, 2, 1, rng);
    b.stages_[s].body = nn::Conv2d::create(store, p + ".body", out, out, 3, 1, 1, rng);
    b.stages_[s].skip = nn::Conv2d::create(store, p + ".skip", in, out, 1, 2, 0, rng);
    in = out;
  }
  return b;
}

PyramidFeatures Backbone::operator()(const Tensor& patch, std::size_t bev_h, std::size_t bev_w) const {
  if (patch.rank() != 3 || patch.dim(0) != 3)
    throw ShapeError("extract_pyramid: expected a [3,H,W] patch, got " + shape_str(patch.shape()));
  if (patch.dim(1) % 32 != 0 || patch.dim(2) % 32 != 0)
    throw ShapeError("extract_pyramid: patch extents " + shape_str(patch.shape()) + " must be divisible by 32");
  PyramidFeatures p;
  const Tensor stem = stem_(patch);
  p.levels[0] = ops::bilinear_interp(ops::maxpool2d(stem, 3, 2), bev_h, bev_w);
  Tensor x = ops::gelu(stem);
  for (std::size_t s = 0; s < 4; ++s) {
    const Stage& st = stages_[s];
    const Tensor body = st.body(ops::gelu(st.entry(x)));
    x = ops::gelu(ops::add(body, st.skip(x)));
    p.levels[s + 1] = x;
  }
  return p;
}

GatedBlock GatedBlock::create(nn::ParamStore& store, const std::string& prefix, std::size_t d, std::size_t d_next,
                              const GatedCnnConfig& cfg, Rng& rng) {
  GatedBlock b;
  b.cfg = cfg;
  b.split = cfg.split(d);
  b.norm = nn::LayerNorm::create(store, prefix + ".norm", d);
  b.expand = nn::Linear::create(store, prefix + ".expand", d, b.split.expanded, rng, false);
  auto bias = b.expand.bias.mutable_data();
  for (std::size_t i = 0; i < b.split.gate; ++i) bias[i] = kGateBiasInit;
  b.local = nn::Conv2d::create(store, prefix + ".local", b.split.conv, b.split.conv, cfg.local_kernel, 1,
                               cfg.local_kernel / 2, rng);
  b.project = nn::Linear::create(store, prefix + ".project", b.split.gate, d, rng, false);
  b.out = nn::Linear::create(store, prefix + ".out", d, d_next, rng, false);
  return b;
}

Tensor GatedBlock::operator()(const Tensor& x) const {
  const std::size_t sizes[] = {split.gate, split.identity, split.conv};
  const auto parts = ops::split_channels(expand.cells(norm(x)), sizes);
  const Tensor modulated = ops::mul(ops::gelu(parts[0]), ops::concat_channels(parts[1], local(parts[2])));
  return out.cells(ops::add(x, project.cells(modulated)));
}

std::size_t GatedBlock::parameter_count(std::size_t d, std::size_t d_next, const GatedCnnConfig& cfg) {
  const auto s = cfg.split(d);
  const std::size_t k2 = cfg.local_kernel * cfg.local_kernel;
  return 2 * d + (d + 1) * s.expanded + (s.conv * k2 + 1) * s.conv + (s.gate + 1) * d + (d + 1) * d_next;
}

GfrStep GfrStep::create(nn::ParamStore& store, const std::string& prefix, std::size_t d_upper, std::size_t d_lower,
                        RefineVariant variant, const GatedCnnConfig& cfg, Rng& rng) {
  GfrStep step;
  step.prealign = nn::Conv2d::create(store, prefix + ".prealign", d_lower, d_lower, 3, 1, 1, rng);
  const std::size_t d = d_upper + d_lower;
  if (variant == RefineVariant::full)
    step.gated = GatedBlock::create(store, prefix + ".gated", d, d_lower, cfg, rng);
  else
    step.plain = nn::Conv2d::create(store, prefix + ".plain", d, d_lower, 3, 1, 1, rng);
  return step;
}

Tensor GfrStep::operator()(const Tensor& upper, const Tensor& lower) const {
  if (upper.rank() != 3 || lower.rank() != 3 || lower.dim(1) < upper.dim(1) || lower.dim(2) < upper.dim(2))
    throw ShapeError("gfr_step: lower level " + shape_str(lower.shape()) + " must not be smaller than upper level " +
                     shape_str(upper.shape()));
  const Tensor up = ops::bilinear_interp(upper, lower.dim(1), lower.dim(2));
  const Tensor x = ops::concat_channels(up, prealign(lower));
  return gated ? (*gated)(x) : (*plain)(x);
}

SatBranch SatBranch::create(nn::ParamStore& store, const SatBranchConfig& cfg, Rng& rng) {
  cfg.plan.validate(cfg.gated);
  SatBranch b;
  b.cfg_ = cfg;
  b.backbone_ = Backbone::create(store, "sat.backbone", cfg.plan, rng);
  if (cfg.variant != RefineVariant::none) {
    for (std::size_t level = 0; level < 4; ++level)
      b.steps_.push_back(GfrStep::create(store, "sat.gfr.level" + std::to_string(level), cfg.plan.widths[level + 1],
                                         cfg.plan.widths[level], cfg.variant, cfg.gated, rng));
  }
  b.lift_ = nn::Linear::create(store, "sat.lift", cfg.plan.widths[0], cfg.plan.out_channels, rng, false);
  return b;
}

PyramidFeatures SatBranch::extract_pyramid(const Tensor& patch, std::size_t bev_h, std::size_t bev_w) const {
  return backbone_(patch, bev_h, bev_w);
}

Tensor SatBranch::refine(const PyramidFeatures& pyramid) const {
  if (steps_.empty()) return pyramid[0];
  Tensor upper = pyramid[4];
  for (std::size_t level = 4; level-- > 0;) upper = steps_[level](upper, pyramid[level]);
  return upper;
}

Tensor SatBranch::to_sat_feature(const Tensor& r0_out) const { return lift_.cells(r0_out); }

Tensor SatBranch::operator()(const Tensor& patch, std::size_t bev_h, std::size_t bev_w) const {
  return to_sat_feature(refine(extract_pyramid(patch, bev_h, bev_w)));
}

}  // namespace satmap
