#pragma once

#include <cstddef>
#include <string>

#include "satmap/nn.hpp"

/// Grid-to-grid fusion of F_bev and F_sat, plus the concat and patch
/// cross-attention baselines.
namespace satmap {

enum class FusionKind { sum_mlp, concat_mlp, patch_cross_attention };
const char* fusion_name(FusionKind kind);
FusionKind parse_fusion(const std::string& name);

struct FusionConfig {
  FusionKind kind = FusionKind::sum_mlp;
  std::size_t patch_size = 5;  // patch_cross_attention only
};

class Fusion {
 public:
  static Fusion create(nn::ParamStore& store, std::size_t channels, const FusionConfig& cfg, Rng& rng);

  /// When `attention` is given and the kind is patch_cross_attention, it
  /// receives the [queries, keys] attention matrix.
  Tensor operator()(const Tensor& bev, const Tensor& sat, Tensor* attention = nullptr) const;

  /// sum_mlp only: weights such that the MLP computes the identity, using
  /// gelu(x) - gelu(-x) = x. First layer [I; -I], second [I, -I], zero biases.
  void init_identity();

  const FusionConfig& config() const { return cfg_; }
  /// Attention value projection, exposed for probes.
  nn::Linear& value_projection() { return value_; }

 private:
  Tensor cross_attention(const Tensor& bev, const Tensor& sat, Tensor* attention) const;

  FusionConfig cfg_;
  std::size_t channels_ = 0;
  nn::Linear hidden_, output_;        // per-cell MLP
  nn::Linear query_, key_, value_;    // patch embeddings
  nn::Linear attn_out_;
};

}  // namespace satmap
