#pragma once

#include <string>
#include <utility>
#include <vector>

#include "satmap/ops.hpp"
#include "satmap/rng.hpp"
#include "satmap/tensor.hpp"

namespace satmap::nn {

/// Ordered, named collection of trainable leaves.
///
/// Values are kept representable in binary32 (initialisation and every
/// optimizer update round to float) so that checkpoints are lossless.
class ParamStore {
 public:
  Tensor create(const std::string& name, Shape shape);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t scalar_count() const;
  std::size_t scalar_count_with_prefix(const std::string& prefix) const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

double round_to_float(double v);

/// Fills with U(-b, b), b = sqrt(3 * gain2 / fan_in), rounded to binary32.
void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng, double gain2 = 2.0);

struct Conv2d {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  static Conv2d create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                       std::size_t stride, std::size_t padding, Rng& rng);
  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, padding); }
};

/// Affine map over channels (per cell) or over the trailing axis.
struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  /// He-uniform weights for layers feeding a GELU; `gelu_follows = false`
  /// halves the variance for plain projections.
  static Linear create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       bool gelu_follows = true);
  Tensor cells(const Tensor& x) const { return ops::linear_cells(x, weight, bias); }
  Tensor rows(const Tensor& x) const { return ops::linear(x, weight, bias); }
};

/// Channel normalisation per cell with a learned affine (ones / zeros at init).
struct LayerNorm {
  Tensor weight;  // [C]
  Tensor bias;    // [C]

  static LayerNorm create(ParamStore& store, const std::string& name, std::size_t channels);
  Tensor operator()(const Tensor& x) const { return ops::layer_norm_channels(x, weight, bias); }
};

}  // namespace satmap::nn
