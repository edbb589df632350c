#include "satmap/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace satmap {

const char* fusion_name(FusionKind kind) {
  switch (kind) {
    case FusionKind::sum_mlp: return "sum_mlp";
    case FusionKind::concat_mlp: return "concat_mlp";
    case FusionKind::patch_cross_attention: return "patch_cross_attention";
  }
  return "?";
}

FusionKind parse_fusion(const std::string& name) {
  for (auto k : {FusionKind::sum_mlp, FusionKind::concat_mlp, FusionKind::patch_cross_attention})
    if (name == fusion_name(k)) return k;
  throw std::invalid_argument("unknown fusion kind: " + name);
}

Fusion Fusion::create(nn::ParamStore& store, std::size_t channels, const FusionConfig& cfg, Rng& rng) {
  Fusion f;
  f.cfg_ = cfg;
  f.channels_ = channels;
  switch (cfg.kind) {
    case FusionKind::sum_mlp:
      f.hidden_ = nn::Linear::create(store, "fusion.hidden", channels, 2 * channels, rng);
      f.output_ = nn::Linear::create(store, "fusion.output", 2 * channels, channels, rng, false);
      break;
    case FusionKind::concat_mlp:
      f.hidden_ = nn::Linear::create(store, "fusion.hidden", 2 * channels, 2 * channels, rng);
      f.output_ = nn::Linear::create(store, "fusion.output", 2 * channels, channels, rng, false);
      break;
    case FusionKind::patch_cross_attention: {
      if (cfg.patch_size == 0) throw std::invalid_argument("fusion: patch size must be positive");
      const std::size_t token = channels * cfg.patch_size * cfg.patch_size, embed = 2 * channels;
      f.query_ = nn::Linear::create(store, "fusion.query", token, embed, rng, false);
      f.key_ = nn::Linear::create(store, "fusion.key", token, embed, rng, false);
      f.value_ = nn::Linear::create(store, "fusion.value", token, embed, rng, false);
      f.attn_out_ = nn::Linear::create(store, "fusion.attn_out", embed, token, rng, false);
      break;
    }
  }
  return f;
}

Tensor Fusion::operator()(const Tensor& bev, const Tensor& sat, Tensor* attention) const {
  if (bev.shape() != sat.shape() || bev.rank() != 3 || bev.dim(0) != channels_)
    throw ShapeError("fusion: F_bev " + shape_str(bev.shape()) + " and F_sat " + shape_str(sat.shape()) +
                     " must both be [" + std::to_string(channels_) + ",H,W]");
  switch (cfg_.kind) {
    case FusionKind::sum_mlp:
      return output_.cells(ops::gelu(hidden_.cells(ops::add(bev, sat))));
    case FusionKind::concat_mlp:
      return output_.cells(ops::gelu(hidden_.cells(ops::concat_channels(bev, sat))));
    case FusionKind::patch_cross_attention:
      return cross_attention(bev, sat, attention);
  }
  throw std::logic_error("fusion: unhandled kind");
}

Tensor Fusion::cross_attention(const Tensor& bev, const Tensor& sat, Tensor* attention) const {
  const std::size_t p = cfg_.patch_size, h = bev.dim(1), w = bev.dim(2);
  if (h % p != 0 || w % p != 0)
    throw ShapeError("fusion: patch size " + std::to_string(p) + " does not divide the grid " + shape_str(bev.shape()));
  const Tensor bev_tokens = ops::patchify(bev, p), sat_tokens = ops::patchify(sat, p);
  const Tensor q = query_.rows(bev_tokens), k = key_.rows(sat_tokens), v = value_.rows(sat_tokens);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  const Tensor weights = ops::softmax_lastdim(ops::scale(ops::matmul(q, ops::transpose(k)), scale));
  if (attention) *attention = weights;
  const Tensor mixed = attn_out_.rows(ops::matmul(weights, v));
  return ops::add(bev, ops::unpatchify(mixed, channels_, h, w, p));
}

void Fusion::init_identity() {
  if (cfg_.kind != FusionKind::sum_mlp) throw std::logic_error("init_identity: only defined for sum_mlp");
  const std::size_t c = channels_;
  auto w1 = hidden_.weight.mutable_data();
  auto w2 = output_.weight.mutable_data();
  std::fill(w1.begin(), w1.end(), 0.0);
  std::fill(w2.begin(), w2.end(), 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    w1[i * c + i] = 1.0;             // row i: +x_i
    w1[(c + i) * c + i] = -1.0;      // row c+i: -x_i
    w2[i * 2 * c + i] = 1.0;         // +gelu(x_i)
    w2[i * 2 * c + c + i] = -1.0;    // -gelu(-x_i)
  }
  for (double& b : hidden_.bias.mutable_data()) b = 0.0;
  for (double& b : output_.bias.mutable_data()) b = 0.0;
}

}  // namespace satmap
