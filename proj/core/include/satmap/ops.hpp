#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "satmap/tensor.hpp"

/// Differentiable operations over channel-first feature maps.
///
/// Spatial tensors are [C, H, W]. Every op validates shapes (ShapeError),
/// rejects non-finite results (NumericError) and records a backward rule on
/// the active tape when any operand requires grad.
namespace satmap::ops {

/// Zero-padded cross-correlation. Output extent is
/// floor((H + 2*padding - k) / stride) + 1 per axis; the kernel must be odd
/// and fit inside the padded input.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Window maximum without padding. Gradient goes to the first maximal cell in
/// row-major order of each window.
Tensor maxpool2d(const Tensor& input, std::size_t k, std::size_t stride);

/// Bilinear resampling, half-pixel centres, source coordinates clamped to the
/// input extent (align_corners = false).
Tensor bilinear_interp(const Tensor& input, std::size_t out_h, std::size_t out_w);

/// Affine map over the trailing axis: y[..., o] = sum_i w[o, i] x[..., i] + b[o].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Per-cell affine map over the channel axis of a [C, H, W] map (1x1 projection).
Tensor linear_cells(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Per-cell normalisation over the channel axis of a [C, H, W] map, then a
/// per-channel affine: y = (x - mean) / sqrt(var + eps) * weight + bias.
Tensor layer_norm_channels(const Tensor& x, const Tensor& weight, const Tensor& bias, double eps = 1e-6);

/// Exact GELU, x * Phi(x) with Phi from erf.
Tensor gelu(const Tensor& x);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor concat_channels(std::span<const Tensor> parts);
std::vector<Tensor> split_channels(const Tensor& x, std::span<const std::size_t> sizes);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Max-subtracted softmax over the trailing axis.
Tensor softmax_lastdim(const Tensor& x);
/// Softmax over the channel axis of a [C, H, W] map.
Tensor softmax_channels(const Tensor& x);

/// [C, H, W] -> [(H/p)*(W/p), C*p*p]; patches in row-major patch order,
/// features ordered (c, dy, dx).
Tensor patchify(const Tensor& x, std::size_t patch);
/// Inverse of patchify.
Tensor unpatchify(const Tensor& patches, std::size_t channels, std::size_t height, std::size_t width,
                  std::size_t patch);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Per-cell negative log-likelihood of softmax(logits) over the channel axis,
/// scaled by the weight of the cell's label, averaged over cells.
Tensor weighted_cross_entropy(const Tensor& logits, std::span<const std::uint8_t> labels,
                              std::span<const double> class_weights);

}  // namespace satmap::ops
