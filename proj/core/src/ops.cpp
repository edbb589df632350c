#include "satmap/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace satmap::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using Node = std::shared_ptr<TensorNode>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void require_spatial(const Tensor& t, const char* op) {
  require(t.defined() && t.rank() == 3, std::string(op) + ": expected a [C,H,W] tensor, got " +
                                            (t.defined() ? shape_str(t.shape()) : "undefined"));
}

struct ConvGeom {
  std::size_t c, h, w, k, stride, pad, oh, ow;
  std::size_t rows() const { return c * k * k; }
  std::size_t cols() const { return oh * ow; }
  bool trivial() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* x, const ConvGeom& g, double* out) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = out + ((ci * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, double* dx) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((ci * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = dx + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Shared forward/backward of a row-major [rows, d_in] x W^T + b product.
Tensor affine_rows(const char* op, const Tensor& input, const Tensor& weight, const Tensor& bias,
                   std::size_t rows, std::size_t d_in, Shape out_shape) {
  const std::size_t d_out = weight.dim(0);
  auto out = detail::make_output(std::move(out_shape), {&input, &weight, &bias});
  MapMat y(out->data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d_out));
  ConstMapMat x(input.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d_in));
  ConstMapMat w(weight.data().data(), static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d_in));
  y.noalias() = x * w.transpose();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < d_out; ++o) out->data[r * d_out + o] += bias[o];

  Node xn = input.node(), wn = weight.node(), bn = bias.node();
  return detail::finish(op, out, [xn, wn, bn, rows, d_in, d_out](const TensorNode& o) {
    const auto R = static_cast<Eigen::Index>(rows), I = static_cast<Eigen::Index>(d_in),
               O = static_cast<Eigen::Index>(d_out);
    ConstMapMat dy(o.grad.data(), R, O);
    if (xn->requires_grad) {
      xn->ensure_grad();
      MapMat dx(xn->grad.data(), R, I);
      dx.noalias() += dy * ConstMapMat(wn->data.data(), O, I);
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      MapMat dw(wn->grad.data(), O, I);
      dw.noalias() += dy.transpose() * ConstMapMat(xn->data.data(), R, I);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < d_out; ++k) bn->grad[k] += o.grad[r * d_out + k];
    }
  });
}

/// Shared forward/backward of a channel-axis softmax applied independently to
/// each of `groups` blocks of [n, stride] values (normalising over n).
template <typename Index>
Tensor softmax_impl(const char* op, const Tensor& x, std::size_t groups, std::size_t n, Index index) {
  auto out = detail::make_output(x.shape(), {&x});
  const auto& in = x.data();
  for (std::size_t g = 0; g < groups; ++g) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, in[index(g, k)]);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double e = std::exp(in[index(g, k)] - mx);
      out->data[index(g, k)] = e;
      z += e;
    }
    for (std::size_t k = 0; k < n; ++k) out->data[index(g, k)] /= z;
  }
  Node xn = x.node();
  return detail::finish(op, out, [xn, groups, n, index](const TensorNode& o) {
    xn->ensure_grad();
    for (std::size_t g = 0; g < groups; ++g) {
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += o.grad[index(g, k)] * o.data[index(g, k)];
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = index(g, k);
        xn->grad[i] += o.data[i] * (o.grad[i] - dot);
      }
    }
  });
}

/// Flat index map from patch-matrix position to [C,H,W] position.
std::vector<std::size_t> patch_index(std::size_t c, std::size_t h, std::size_t w, std::size_t p) {
  const std::size_t ph = h / p, pw = w / p, feat = c * p * p;
  std::vector<std::size_t> idx(ph * pw * feat);
  for (std::size_t py = 0; py < ph; ++py)
    for (std::size_t px = 0; px < pw; ++px)
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) {
            const std::size_t row = py * pw + px;
            const std::size_t col = (ci * p + dy) * p + dx;
            idx[row * feat + col] = (ci * h + py * p + dy) * w + px * p + dx;
          }
  return idx;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_spatial(input, "conv2d");
  require(weight.defined() && weight.rank() == 4, "conv2d: weight must be [C_out,C_in,k,k]");
  const std::size_t c_out = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == input.dim(0),
          "conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, input has " +
              std::to_string(input.dim(0)));
  require(weight.dim(3) == k && k % 2 == 1, "conv2d: kernel must be square with odd extent");
  require(bias.defined() && bias.rank() == 1 && bias.dim(0) == c_out, "conv2d: bias must be [C_out]");
  require(stride >= 1, "conv2d: stride must be positive");
  const std::size_t ph = input.dim(1) + 2 * padding, pw = input.dim(2) + 2 * padding;
  require(ph >= k && pw >= k, "conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                                  shape_str(input.shape()));
  const ConvGeom g{input.dim(0), input.dim(1), input.dim(2), k, stride, padding,
                   (ph - k) / stride + 1, (pw - k) / stride + 1};

  auto out = detail::make_output({c_out, g.oh, g.ow}, {&input, &weight, &bias});
  std::vector<double> scratch;
  const double* cols = input.data().data();
  if (!g.trivial()) {
    scratch.resize(g.rows() * g.cols());
    im2col(input.data().data(), g, scratch.data());
    cols = scratch.data();
  }
  const auto O = static_cast<Eigen::Index>(c_out), K = static_cast<Eigen::Index>(g.rows()),
             P = static_cast<Eigen::Index>(g.cols());
  MapMat y(out->data.data(), O, P);
  y.noalias() = ConstMapMat(weight.data().data(), O, K) * ConstMapMat(cols, K, P);
  for (std::size_t o = 0; o < c_out; ++o) y.row(static_cast<Eigen::Index>(o)).array() += bias[o];

  Node xn = input.node(), wn = weight.node(), bn = bias.node();
  return detail::finish("conv2d", out, [xn, wn, bn, g, O, K, P](const TensorNode& o) {
    ConstMapMat dy(o.grad.data(), O, P);
    if (wn->requires_grad) {
      std::vector<double> scratch;
      const double* cols = xn->data.data();
      if (!g.trivial()) {
        scratch.resize(g.rows() * g.cols());
        im2col(xn->data.data(), g, scratch.data());
        cols = scratch.data();
      }
      wn->ensure_grad();
      MapMat dw(wn->grad.data(), O, K);
      dw.noalias() += dy * ConstMapMat(cols, K, P).transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (Eigen::Index r = 0; r < O; ++r) bn->grad[static_cast<std::size_t>(r)] += dy.row(r).sum();
    }
    if (xn->requires_grad) {
      xn->ensure_grad();
      ConstMapMat w(wn->data.data(), O, K);
      if (g.trivial()) {
        MapMat dx(xn->grad.data(), K, P);
        dx.noalias() += w.transpose() * dy;
      } else {
        RowMat dcols = w.transpose() * dy;
        col2im_add(dcols.data(), g, xn->grad.data());
      }
    }
  });
}

Tensor maxpool2d(const Tensor& input, std::size_t k, std::size_t stride) {
  require_spatial(input, "maxpool2d");
  require(k >= 1 && stride >= 1, "maxpool2d: window and stride must be positive");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(h >= k && w >= k, "maxpool2d: window " + std::to_string(k) + " larger than input " +
                                shape_str(input.shape()));
  const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  auto out = detail::make_output({c, oh, ow}, {&input});
  std::vector<std::size_t> argmax(c * oh * ow);
  const auto& x = input.data();
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (ci * h + oy * stride) * w + ox * stride;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t i = (ci * h + oy * stride + dy) * w + ox * stride + dx;
            if (x[i] > x[best]) best = i;
          }
        const std::size_t o = (ci * oh + oy) * ow + ox;
        argmax[o] = best;
        out->data[o] = x[best];
      }
  Node xn = input.node();
  return detail::finish("maxpool2d", out, [xn, argmax = std::move(argmax)](const TensorNode& o) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) xn->grad[argmax[i]] += o.grad[i];
  });
}

Tensor bilinear_interp(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_spatial(input, "bilinear_interp");
  require(out_h > 0 && out_w > 0, "bilinear_interp: output extents must be positive");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(h > 0 && w > 0, "bilinear_interp: empty input");

  struct Tap {
    std::size_t i0, i1;
    double t;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> v(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
      double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      v[d] = Tap{i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
    }
    return v;
  };
  auto ty = taps(h, out_h);
  auto tx = taps(w, out_w);

  auto out = detail::make_output({c, out_h, out_w}, {&input});
  const auto& x = input.data();
  for (std::size_t ci = 0; ci < c; ++ci) {
    const double* plane = x.data() + ci * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[ox];
        const double top = plane[a.i0 * w + b.i0] * (1 - b.t) + plane[a.i0 * w + b.i1] * b.t;
        const double bot = plane[a.i1 * w + b.i0] * (1 - b.t) + plane[a.i1 * w + b.i1] * b.t;
        out->data[(ci * out_h + oy) * out_w + ox] = top * (1 - a.t) + bot * a.t;
      }
    }
  }
  Node xn = input.node();
  return detail::finish("bilinear_interp", out,
                        [xn, ty = std::move(ty), tx = std::move(tx), c, h, w, out_h, out_w](const TensorNode& o) {
                          xn->ensure_grad();
                          for (std::size_t ci = 0; ci < c; ++ci) {
                            double* plane = xn->grad.data() + ci * h * w;
                            for (std::size_t oy = 0; oy < out_h; ++oy) {
                              const Tap& a = ty[oy];
                              for (std::size_t ox = 0; ox < out_w; ++ox) {
                                const Tap& b = tx[ox];
                                const double g = o.grad[(ci * out_h + oy) * out_w + ox];
                                plane[a.i0 * w + b.i0] += g * (1 - a.t) * (1 - b.t);
                                plane[a.i0 * w + b.i1] += g * (1 - a.t) * b.t;
                                plane[a.i1 * w + b.i0] += g * a.t * (1 - b.t);
                                plane[a.i1 * w + b.i1] += g * a.t * b.t;
                              }
                            }
                          }
                        });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(input.defined() && input.rank() >= 1, "linear: input must have at least one axis");
  require(weight.defined() && weight.rank() == 2, "linear: weight must be [d_out,d_in]");
  const std::size_t d_in = input.shape().back();
  require(weight.dim(1) == d_in, "linear: trailing extent " + std::to_string(d_in) + " does not match d_in " +
                                     std::to_string(weight.dim(1)));
  require(bias.defined() && bias.rank() == 1 && bias.dim(0) == weight.dim(0), "linear: bias must be [d_out]");
  Shape out_shape = input.shape();
  out_shape.back() = weight.dim(0);
  return affine_rows("linear", input, weight, bias, input.numel() / d_in, d_in, std::move(out_shape));
}

Tensor linear_cells(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_spatial(input, "linear_cells");
  require(weight.defined() && weight.rank() == 2 && weight.dim(1) == input.dim(0),
          "linear_cells: weight must be [d_out," + std::to_string(input.dim(0)) + "], got " +
              (weight.defined() ? shape_str(weight.shape()) : "undefined"));
  require(bias.defined() && bias.rank() == 1 && bias.dim(0) == weight.dim(0), "linear_cells: bias must be [d_out]");
  const auto O = static_cast<Eigen::Index>(weight.dim(0)), I = static_cast<Eigen::Index>(weight.dim(1)),
             P = static_cast<Eigen::Index>(input.dim(1) * input.dim(2));
  auto out = detail::make_output({weight.dim(0), input.dim(1), input.dim(2)}, {&input, &weight, &bias});
  MapMat y(out->data.data(), O, P);
  y.noalias() = ConstMapMat(weight.data().data(), O, I) * ConstMapMat(input.data().data(), I, P);
  for (Eigen::Index o = 0; o < O; ++o) y.row(o).array() += bias[static_cast<std::size_t>(o)];

  Node xn = input.node(), wn = weight.node(), bn = bias.node();
  return detail::finish("linear_cells", out, [xn, wn, bn, O, I, P](const TensorNode& o) {
    ConstMapMat dy(o.grad.data(), O, P);
    if (xn->requires_grad) {
      xn->ensure_grad();
      MapMat(xn->grad.data(), I, P).noalias() += ConstMapMat(wn->data.data(), O, I).transpose() * dy;
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      MapMat(wn->grad.data(), O, I).noalias() += dy * ConstMapMat(xn->data.data(), I, P).transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (Eigen::Index r = 0; r < O; ++r) bn->grad[static_cast<std::size_t>(r)] += dy.row(r).sum();
    }
  });
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& weight, const Tensor& bias, double eps) {
  require_spatial(x, "layer_norm_channels");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  require(weight.defined() && weight.shape() == Shape{c} && bias.defined() && bias.shape() == Shape{c},
          "layer_norm_channels: weight and bias must be [" + std::to_string(c) + "]");
  auto out = detail::make_output(x.shape(), {&x, &weight, &bias});
  std::vector<double> xhat(c * plane), rstd(plane);
  const auto& in = x.data();
  for (std::size_t p = 0; p < plane; ++p) {
    double mu = 0.0;
    for (std::size_t k = 0; k < c; ++k) mu += in[k * plane + p];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t k = 0; k < c; ++k) var += (in[k * plane + p] - mu) * (in[k * plane + p] - mu);
    rstd[p] = 1.0 / std::sqrt(var / static_cast<double>(c) + eps);
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = k * plane + p;
      xhat[i] = (in[i] - mu) * rstd[p];
      out->data[i] = xhat[i] * weight[k] + bias[k];
    }
  }
  Node xn = x.node(), wn = weight.node(), bn = bias.node();
  return detail::finish("layer_norm_channels", out,
                        [xn, wn, bn, xhat = std::move(xhat), rstd = std::move(rstd), c, plane](const TensorNode& o) {
                          if (wn->requires_grad) {
                            wn->ensure_grad();
                            for (std::size_t k = 0; k < c; ++k)
                              for (std::size_t p = 0; p < plane; ++p)
                                wn->grad[k] += o.grad[k * plane + p] * xhat[k * plane + p];
                          }
                          if (bn->requires_grad) {
                            bn->ensure_grad();
                            for (std::size_t k = 0; k < c; ++k)
                              for (std::size_t p = 0; p < plane; ++p) bn->grad[k] += o.grad[k * plane + p];
                          }
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          for (std::size_t p = 0; p < plane; ++p) {
                            double m1 = 0.0, m2 = 0.0;
                            for (std::size_t k = 0; k < c; ++k) {
                              const double d = o.grad[k * plane + p] * wn->data[k];
                              m1 += d;
                              m2 += d * xhat[k * plane + p];
                            }
                            m1 /= static_cast<double>(c);
                            m2 /= static_cast<double>(c);
                            for (std::size_t k = 0; k < c; ++k) {
                              const std::size_t i = k * plane + p;
                              xn->grad[i] += rstd[p] * (o.grad[i] * wn->data[k] - m1 - xhat[i] * m2);
                            }
                          }
                        });
}

Tensor gelu(const Tensor& x) {
  auto out = detail::make_output(x.shape(), {&x});
  const auto& in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) out->data[i] = in[i] * normal_cdf(in[i]);
  Node xn = x.node();
  return detail::finish("gelu", out, [xn](const TensorNode& o) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const double v = xn->data[i];
      xn->grad[i] += o.grad[i] * (normal_cdf(v) + v * normal_pdf(v));
    }
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat_channels(parts);
}

Tensor concat_channels(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_channels: nothing to concatenate");
  std::size_t channels = 0;
  for (const Tensor& p : parts) {
    require_spatial(p, "concat_channels");
    require(p.dim(1) == parts[0].dim(1) && p.dim(2) == parts[0].dim(2),
            "concat_channels: spatial mismatch " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    channels += p.dim(0);
  }
  auto out = detail::make_output({channels, parts[0].dim(1), parts[0].dim(2)}, parts);
  std::vector<Node> nodes;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out->data.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.numel();
    nodes.push_back(p.node());
  }
  return detail::finish("concat_channels", out, [nodes = std::move(nodes)](const TensorNode& o) {
    std::size_t off = 0;
    for (const Node& n : nodes) {
      if (n->requires_grad) {
        n->ensure_grad();
        for (std::size_t i = 0; i < n->data.size(); ++i) n->grad[i] += o.grad[off + i];
      }
      off += n->data.size();
    }
  });
}

std::vector<Tensor> split_channels(const Tensor& x, std::span<const std::size_t> sizes) {
  require_spatial(x, "split_channels");
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  require(total == x.dim(0), "split_channels: sizes sum to " + std::to_string(total) + " but tensor has " +
                                 std::to_string(x.dim(0)) + " channels");
  const std::size_t plane = x.dim(1) * x.dim(2);
  std::vector<Tensor> parts;
  std::size_t start = 0;
  Node xn = x.node();
  for (std::size_t s : sizes) {
    auto out = detail::make_output({s, x.dim(1), x.dim(2)}, {&x});
    const std::size_t off = start * plane;
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(off), s * plane, out->data.begin());
    parts.push_back(detail::finish("split_channels", out, [xn, off](const TensorNode& o) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[off + i] += o.grad[i];
    }));
    start += s;
  }
  return parts;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::make_output(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a[i] + b[i];
  Node an = a.node(), bn = b.node();
  return detail::finish("add", out, [an, bn](const TensorNode& o) {
    for (const Node& n : {an, bn}) {
      if (!n->requires_grad) continue;
      n->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) n->grad[i] += o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::make_output(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a[i] * b[i];
  Node an = a.node(), bn = b.node();
  return detail::finish("mul", out, [an, bn](const TensorNode& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->data[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  auto out = detail::make_output(x.shape(), {&x});
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = x[i] * factor;
  Node xn = x.node();
  return detail::finish("scale", out, [xn, factor](const TensorNode& o) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i] * factor;
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto M = static_cast<Eigen::Index>(a.dim(0)), K = static_cast<Eigen::Index>(a.dim(1)),
             N = static_cast<Eigen::Index>(b.dim(1));
  auto out = detail::make_output({a.dim(0), b.dim(1)}, {&a, &b});
  MapMat(out->data.data(), M, N).noalias() =
      ConstMapMat(a.data().data(), M, K) * ConstMapMat(b.data().data(), K, N);
  Node an = a.node(), bn = b.node();
  return detail::finish("matmul", out, [an, bn, M, K, N](const TensorNode& o) {
    ConstMapMat dy(o.grad.data(), M, N);
    if (an->requires_grad) {
      an->ensure_grad();
      MapMat(an->grad.data(), M, K).noalias() += dy * ConstMapMat(bn->data.data(), K, N).transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      MapMat(bn->grad.data(), K, N).noalias() += ConstMapMat(an->data.data(), M, K).transpose() * dy;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: expected a matrix, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto out = detail::make_output({n, m}, {&a});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->data[j * m + i] = a[i * n + j];
  Node an = a.node();
  return detail::finish("transpose", out, [an, m, n](const TensorNode& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += o.grad[j * m + i];
  });
}

Tensor softmax_lastdim(const Tensor& x) {
  require(x.defined() && x.rank() >= 1 && x.shape().back() > 0, "softmax_lastdim: empty trailing axis");
  const std::size_t n = x.shape().back();
  return softmax_impl("softmax_lastdim", x, x.numel() / n, n,
                      [n](std::size_t g, std::size_t k) { return g * n + k; });
}

Tensor softmax_channels(const Tensor& x) {
  require_spatial(x, "softmax_channels");
  const std::size_t plane = x.dim(1) * x.dim(2);
  return softmax_impl("softmax_channels", x, plane, x.dim(0),
                      [plane](std::size_t g, std::size_t k) { return k * plane + g; });
}

Tensor patchify(const Tensor& x, std::size_t patch) {
  require_spatial(x, "patchify");
  require(patch > 0 && x.dim(1) % patch == 0 && x.dim(2) % patch == 0,
          "patchify: patch size " + std::to_string(patch) + " does not divide " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto idx = patch_index(c, h, w, patch);
  auto out = detail::make_output({(h / patch) * (w / patch), c * patch * patch}, {&x});
  for (std::size_t i = 0; i < idx.size(); ++i) out->data[i] = x[idx[i]];
  Node xn = x.node();
  return detail::finish("patchify", out, [xn, idx = std::move(idx)](const TensorNode& o) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) xn->grad[idx[i]] += o.grad[i];
  });
}

Tensor unpatchify(const Tensor& patches, std::size_t channels, std::size_t height, std::size_t width,
                  std::size_t patch) {
  require(patch > 0 && height % patch == 0 && width % patch == 0, "unpatchify: patch size does not divide grid");
  require(patches.rank() == 2 && patches.dim(0) == (height / patch) * (width / patch) &&
              patches.dim(1) == channels * patch * patch,
          "unpatchify: patch matrix " + shape_str(patches.shape()) + " does not match grid");
  auto idx = patch_index(channels, height, width, patch);
  auto out = detail::make_output({channels, height, width}, {&patches});
  for (std::size_t i = 0; i < idx.size(); ++i) out->data[idx[i]] = patches[i];
  Node pn = patches.node();
  return detail::finish("unpatchify", out, [pn, idx = std::move(idx)](const TensorNode& o) {
    pn->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) pn->grad[i] += o.grad[idx[i]];
  });
}

Tensor sum(const Tensor& x) {
  auto out = detail::make_output({}, {&x});
  double s = 0.0;
  for (double v : x.data()) s += v;
  out->data[0] = s;
  Node xn = x.node();
  return detail::finish("sum", out, [xn](const TensorNode& o) {
    xn->ensure_grad();
    for (double& g : xn->grad) g += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor weighted_cross_entropy(const Tensor& logits, std::span<const std::uint8_t> labels,
                              std::span<const double> class_weights) {
  require_spatial(logits, "weighted_cross_entropy");
  const std::size_t k = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
  require(labels.size() == plane, "weighted_cross_entropy: label grid size mismatch");
  require(class_weights.size() == k, "weighted_cross_entropy: one weight per class required");
  std::vector<double> prob(k * plane);
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  std::vector<double> wts(class_weights.begin(), class_weights.end());
  const auto& z = logits.data();
  double total = 0.0;
  for (std::size_t cell = 0; cell < plane; ++cell) {
    require(lab[cell] < k, "weighted_cross_entropy: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, z[c * plane + cell]);
    double norm = 0.0;
    for (std::size_t c = 0; c < k; ++c) norm += std::exp(z[c * plane + cell] - mx);
    for (std::size_t c = 0; c < k; ++c) prob[c * plane + cell] = std::exp(z[c * plane + cell] - mx) / norm;
    const double log_p = z[lab[cell] * plane + cell] - mx - std::log(norm);
    total += -wts[lab[cell]] * log_p;
  }
  auto out = detail::make_output({}, {&logits});
  out->data[0] = total / static_cast<double>(plane);
  Node ln = logits.node();
  return detail::finish("weighted_cross_entropy", out,
                        [ln, prob = std::move(prob), lab = std::move(lab), wts = std::move(wts), k,
                         plane](const TensorNode& o) {
                          ln->ensure_grad();
                          const double g = o.grad[0] / static_cast<double>(plane);
                          for (std::size_t cell = 0; cell < plane; ++cell) {
                            const double w = wts[lab[cell]] * g;
                            for (std::size_t c = 0; c < k; ++c) {
                              const double target = (c == lab[cell]) ? 1.0 : 0.0;
                              ln->grad[c * plane + cell] += w * (prob[c * plane + cell] - target);
                            }
                          }
                        });
}

}  // namespace satmap::ops
