#include <doctest.h>

#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "satmap/ops.hpp"

using namespace satmap;
using satmap::testing::gradcheck;
using satmap::testing::random_tensor;
using satmap::testing::weighted_sum;

namespace {

constexpr double kOpTolerance = 1e-4;

// Nested-loop cross-correlation over the zero-padded window.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2), co = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(co * oh * ow);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        double acc = b[o];
        for (std::size_t i = 0; i < ci; ++i)
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) {
              const long yy = static_cast<long>(r * stride + dy) - static_cast<long>(pad);
              const long xx = static_cast<long>(c * stride + dx) - static_cast<long>(pad);
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
              acc += w[((o * ci + i) * k + dy) * k + dx] * x.at(i, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            }
        out[(o * oh + r) * ow + c] = acc;
      }
  return out;
}

// Half-pixel bilinear sample with edge clamping, one output pixel at a time.
double bilinear_oracle(const std::vector<std::vector<double>>& img, std::size_t oy, std::size_t ox, std::size_t out_h,
                       std::size_t out_w) {
  const double h = static_cast<double>(img.size()), w = static_cast<double>(img[0].size());
  auto src = [](double dst, double in, double out) {
    const double s = (dst + 0.5) * (in / out) - 0.5;
    return std::clamp(s, 0.0, in - 1.0);
  };
  const double sy = src(static_cast<double>(oy), h, static_cast<double>(out_h));
  const double sx = src(static_cast<double>(ox), w, static_cast<double>(out_w));
  const auto y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min(y0 + 1, img.size() - 1), x1 = std::min(x0 + 1, img[0].size() - 1);
  const double ty = sy - static_cast<double>(y0), tx = sx - static_cast<double>(x0);
  return (1 - ty) * ((1 - tx) * img[y0][x0] + tx * img[y0][x1]) + ty * ((1 - tx) * img[y1][x0] + tx * img[y1][x1]);
}

}  // namespace

TEST_CASE("conv2d matches the padded-window oracle") {
  SUBCASE("identity 1x1 kernel") {
    Rng rng(3);
    const Tensor x = random_tensor({1, 4, 5}, rng);
    const Tensor y = ops::conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}), 1, 0);
    CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  }
  SUBCASE("all-ones 3x3 over twos") {
    const Tensor y = ops::conv2d(Tensor::full({1, 3, 3}, 2.0), Tensor::full({1, 1, 3, 3}, 1.0), Tensor::zeros({1}), 1, 1);
    CHECK(y.at(0, 1, 1) == 18.0);
    CHECK(y.at(0, 0, 0) == 8.0);
    CHECK(y.at(0, 0, 1) == 12.0);
  }
  SUBCASE("random strided") {
    Rng rng(4);
    const Tensor x = random_tensor({3, 9, 7}, rng), w = random_tensor({2, 3, 3, 3}, rng), b = random_tensor({2}, rng);
    for (std::size_t stride : {1u, 2u})
      for (std::size_t pad : {0u, 1u}) {
        const Tensor y = ops::conv2d(x, w, b, stride, pad);
        const auto ref = conv_oracle(x, w, b, stride, pad);
        REQUIRE(y.numel() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      }
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1}), 1, 1),
                    ShapeError);
    CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1}), 1, 0),
                    ShapeError);
    CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), Tensor::zeros({1}), 1, 0),
                    ShapeError);
  }
}

TEST_CASE("conv2d gradients on a 2x3x4x4 case") {
  Rng rng(5);
  const Tensor x = random_tensor({3, 6, 5}, rng, true), w = random_tensor({2, 3, 3, 3}, rng, true),
               b = random_tensor({2}, rng, true);
  for (std::size_t stride : {1u, 2u}) {
    const auto r = gradcheck([&] { return weighted_sum(ops::conv2d(x, w, b, stride, 1), 11); },
                             {{"x", x}, {"w", w}, {"b", b}}, 1000);
    INFO(r.worst);
    CHECK(r.max_rel_error < kOpTolerance);
  }
  const Tensor x4 = random_tensor({3, 4, 4}, rng), w4 = random_tensor({2, 3, 3, 3}, rng, true);
  const auto r = gradcheck([&] { return ops::sum(ops::conv2d(x4, w4, Tensor::zeros({2}), 1, 1)); }, {{"w", w4}}, 1000);
  CHECK(r.max_rel_error < kOpTolerance);
}

TEST_CASE("maxpool2d forward, tie rule and gradient") {
  const Tensor x = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
  CHECK(ops::maxpool2d(x, 2, 2).item() == 4.0);

  const Tensor id = Tensor::from({1, 2, 3}, {1, 5, 2, 7, 3, 0});
  const Tensor same = ops::maxpool2d(id, 1, 1);
  CHECK(std::equal(id.data().begin(), id.data().end(), same.data().begin()));

  Tensor flat = Tensor::full({1, 4, 4}, 3.0, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = ops::sum(ops::maxpool2d(flat, 2, 2));
  }
  tape.backward(loss);
  const auto g = flat.grad();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(g[r * 4 + c] == ((r % 2 == 0 && c % 2 == 0) ? 1.0 : 0.0));

  Rng rng(6);
  const Tensor xr = random_tensor({2, 7, 7}, rng, true);
  const auto r = gradcheck([&] { return weighted_sum(ops::maxpool2d(xr, 3, 2), 3); }, {{"x", xr}}, 1000);
  CHECK(r.max_rel_error < kOpTolerance);
  CHECK_THROWS_AS(ops::maxpool2d(Tensor::zeros({1, 2, 2}), 3, 1), ShapeError);
}

TEST_CASE("bilinear_interp convention") {
  Rng rng(7);
  const Tensor x = random_tensor({2, 3, 4}, rng);
  const Tensor same = ops::bilinear_interp(x, 3, 4);
  CHECK(std::equal(x.data().begin(), x.data().end(), same.data().begin()));

  const Tensor one = ops::bilinear_interp(Tensor::from({1, 1, 1}, {0.7}), 4, 4);
  for (double v : one.data()) CHECK(v == 0.7);

  const Tensor small = Tensor::from({1, 2, 2}, {0, 1, 2, 3});
  const Tensor up = ops::bilinear_interp(small, 4, 4);
  const std::vector<std::vector<double>> img{{0, 1}, {2, 3}};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(up.at(0, r, c) == doctest::Approx(bilinear_oracle(img, r, c, 4, 4)));
  CHECK(up.at(0, 0, 0) == 0.0);
  CHECK(up.at(0, 0, 1) == doctest::Approx(0.25));
  CHECK(up.at(0, 1, 1) == doctest::Approx(0.75));
  CHECK(up.at(0, 3, 3) == 3.0);

  const Tensor xg = random_tensor({2, 3, 5}, rng, true);
  for (auto [oh, ow] : {std::pair<std::size_t, std::size_t>{7, 9}, {2, 2}, {12, 4}}) {
    const auto r = gradcheck([&] { return weighted_sum(ops::bilinear_interp(xg, oh, ow), 5); }, {{"x", xg}}, 1000);
    CHECK(r.max_rel_error < kOpTolerance);
  }
  CHECK_THROWS_AS(ops::bilinear_interp(x, 0, 3), ShapeError);
}

TEST_CASE("linear and per-cell linear") {
  Rng rng(8);
  const Tensor x = random_tensor({3, 5}, rng);
  std::vector<double> eye(25, 0.0);
  for (std::size_t i = 0; i < 5; ++i) eye[i * 5 + i] = 1.0;
  const Tensor y = ops::linear(x, Tensor::from({5, 5}, eye), Tensor::zeros({5}));
  CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  const Tensor c = ops::linear(x, Tensor::zeros({2, 5}), Tensor::from({2}, {1.5, -2}));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(c[i * 2] == 1.5);
    CHECK(c[i * 2 + 1] == -2.0);
  }

  const Tensor xi = random_tensor({4, 5}, rng, true), w = random_tensor({7, 5}, rng, true), b = random_tensor({7}, rng, true);
  auto r = gradcheck([&] { return weighted_sum(ops::linear(xi, w, b), 2); }, {{"x", xi}, {"w", w}, {"b", b}}, 1000);
  CHECK(r.max_rel_error < kOpTolerance);

  const Tensor xc = random_tensor({5, 3, 2}, rng, true);
  r = gradcheck([&] { return weighted_sum(ops::linear_cells(xc, w, b), 2); }, {{"x", xc}, {"w", w}, {"b", b}}, 1000);
  CHECK(r.max_rel_error < kOpTolerance);

  // per-cell linear equals the trailing-axis form on the transposed layout
  const Tensor yc = ops::linear_cells(xc, w, b);
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t o = 0; o < 7; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < 5; ++i) acc += w[o * 5 + i] * xc[i * 6 + p];
      CHECK(yc[o * 6 + p] == doctest::Approx(acc).epsilon(1e-12));
    }
  CHECK_THROWS_AS(ops::linear(x, Tensor::zeros({2, 4}), Tensor::zeros({2})), ShapeError);
}

TEST_CASE("layer_norm_channels") {
  Rng rng(21);
  const Tensor x = random_tensor({6, 3, 4}, rng, true, -2.0, 3.0);
  const Tensor y = ops::layer_norm_channels(x, Tensor::full({6}, 1.0), Tensor::zeros({6}));
  for (std::size_t p = 0; p < 12; ++p) {
    double mu = 0, m2 = 0;
    for (std::size_t k = 0; k < 6; ++k) mu += y[k * 12 + p] / 6.0;
    for (std::size_t k = 0; k < 6; ++k) m2 += y[k * 12 + p] * y[k * 12 + p] / 6.0;
    CHECK(std::abs(mu) < 1e-12);
    CHECK(m2 == doctest::Approx(1.0).epsilon(1e-5));
  }
  const Tensor w = random_tensor({6}, rng, true), b = random_tensor({6}, rng, true);
  const auto r = gradcheck([&] { return weighted_sum(ops::layer_norm_channels(x, w, b), 4); },
                           {{"x", x}, {"w", w}, {"b", b}}, 1000);
  INFO(r.worst);
  CHECK(r.max_rel_error < kOpTolerance);
}

TEST_CASE("gelu") {
  CHECK(ops::gelu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(std::abs(ops::gelu(Tensor::scalar(10.0)).item() - 10.0) < 1e-6);
  const double one = 0.5 * (1.0 + std::erf(1.0 / std::numbers::sqrt2));
  CHECK(ops::gelu(Tensor::scalar(1.0)).item() == doctest::Approx(one).epsilon(1e-15));
  CHECK(ops::gelu(Tensor::scalar(1.0)).item() == doctest::Approx(0.8413447).epsilon(1e-7));
  Rng rng(9);
  const Tensor x = random_tensor({3, 4, 4}, rng, true, -4.0, 4.0);
  const auto r = gradcheck([&] { return weighted_sum(ops::gelu(x), 6); }, {{"x", x}}, 1000);
  CHECK(r.max_rel_error < kOpTolerance);
}

TEST_CASE("concat and split") {
  Rng rng(10);
  const Tensor a = random_tensor({2, 4, 4}, rng, true), b = random_tensor({3, 4, 4}, rng, true);
  const Tensor ab = ops::concat_channels(a, b);
  CHECK(ab.shape() == Shape{5, 4, 4});
  const std::size_t sizes[] = {2, 3};
  const auto parts = ops::split_channels(ab, sizes);
  CHECK(std::equal(a.data().begin(), a.data().end(), parts[0].data().begin()));
  CHECK(std::equal(b.data().begin(), b.data().end(), parts[1].data().begin()));

  // gradient of a slice sum reaches only its source
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = ops::sum(ops::split_channels(ops::concat_channels(a, b), sizes)[1]);
  }
  tape.backward(loss);
  for (double g : a.grad()) CHECK(g == 0.0);
  for (double g : b.grad()) CHECK(g == 1.0);

  const auto r = gradcheck(
      [&] {
        const std::size_t s3[] = {1, 3, 1};
        const auto p = ops::split_channels(ops::concat_channels(a, b), s3);
        return ops::add(weighted_sum(p[1], 1), weighted_sum(p[2], 2));
      },
      {{"a", a}, {"b", b}}, 1000);
  CHECK(r.max_rel_error < kOpTolerance);
  const std::size_t bad[] = {2, 2};
  CHECK_THROWS_AS(ops::split_channels(ab, bad), ShapeError);
  CHECK_THROWS_AS(ops::concat_channels(a, Tensor::zeros({1, 4, 5})), ShapeError);
}

TEST_CASE("elementwise add, mul and scale") {
  Rng rng(11);
  const Tensor x = random_tensor({2, 3}, rng, true), y = random_tensor({2, 3}, rng, true);
  const Tensor z = ops::add(x, Tensor::zeros({2, 3}));
  const Tensor o = ops::mul(x, Tensor::full({2, 3}, 1.0));
  CHECK(std::equal(x.data().begin(), x.data().end(), z.data().begin()));
  CHECK(std::equal(x.data().begin(), x.data().end(), o.data().begin()));
  const Tensor twos = ops::add(Tensor::full({2, 2}, 1.0), Tensor::full({2, 2}, 1.0));
  for (double v : twos.data()) CHECK(v == 2.0);

  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = ops::sum(ops::mul(x, y));
  }
  tape.backward(loss);
  for (std::size_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == y[i]);

  const auto r = gradcheck([&] { return weighted_sum(ops::scale(ops::add(ops::mul(x, y), x), -1.7), 3); },
                           {{"x", x}, {"y", y}}, 1000);
  CHECK(r.max_rel_error < kOpTolerance);
  CHECK_THROWS_AS(ops::add(x, Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("attention primitives") {
  const Tensor s = ops::softmax_lastdim(Tensor::from({1, 2}, {0.0, std::log(3.0)}));
  CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-15));
  const Tensor uniform = ops::softmax_lastdim(Tensor::full({2, 5}, 3.0));
  for (double v : uniform.data()) CHECK(v == doctest::Approx(0.2));
  // large logits stay finite through max subtraction
  const Tensor big = ops::softmax_lastdim(Tensor::from({1, 3}, {1000.0, 999.0, -1000.0}));
  CHECK(big[0] + big[1] + big[2] == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(12);
  const Tensor a = random_tensor({4, 3}, rng, true), b = random_tensor({3, 5}, rng, true);
  std::vector<double> eye(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  const Tensor ia = ops::matmul(Tensor::from({4, 4}, eye), a);
  CHECK(std::equal(a.data().begin(), a.data().end(), ia.data().begin()));
  const Tensor rows = ops::softmax_lastdim(random_tensor({6, 7}, rng, false, -5, 5));
  for (std::size_t r = 0; r < 6; ++r) {
    double acc = 0;
    for (std::size_t c = 0; c < 7; ++c) acc += rows[r * 7 + c];
    CHECK(std::abs(acc - 1.0) < 1e-9);
  }
  auto r = gradcheck([&] { return weighted_sum(ops::softmax_lastdim(ops::matmul(a, b)), 7); }, {{"a", a}, {"b", b}},
                     1000);
  CHECK(r.max_rel_error < kOpTolerance);
  r = gradcheck([&] { return weighted_sum(ops::transpose(a), 8); }, {{"a", a}}, 1000);
  CHECK(r.max_rel_error < kOpTolerance);
  const Tensor m = random_tensor({4, 3, 2}, rng, true);
  r = gradcheck([&] { return weighted_sum(ops::softmax_channels(m), 9); }, {{"m", m}}, 1000);
  CHECK(r.max_rel_error < kOpTolerance);
  CHECK_THROWS_AS(ops::matmul(a, a), ShapeError);
}

TEST_CASE("patchify round trip and gradient") {
  Rng rng(13);
  const Tensor x = random_tensor({3, 4, 6}, rng, true);
  const Tensor p = ops::patchify(x, 2);
  CHECK(p.shape() == Shape{6, 12});
  // patch 1 is rows 0-1, cols 2-3; feature (c=1, dy=1, dx=0)
  CHECK(p[1 * 12 + 1 * 4 + 1 * 2 + 0] == x.at(1, 1, 2));
  const Tensor back = ops::unpatchify(p, 3, 4, 6, 2);
  CHECK(std::equal(x.data().begin(), x.data().end(), back.data().begin()));
  const auto r = gradcheck([&] { return weighted_sum(ops::unpatchify(ops::scale(ops::patchify(x, 2), 2.0), 3, 4, 6, 2), 1); },
                           {{"x", x}}, 1000);
  CHECK(r.max_rel_error < kOpTolerance);
  CHECK_THROWS_AS(ops::patchify(x, 4), ShapeError);
}

TEST_CASE("reductions and weighted cross-entropy") {
  Rng rng(14);
  const Tensor x = random_tensor({2, 3}, rng, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = ops::sum(x);
  }
  tape.backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor y = random_tensor({5}, rng, true);
  Tape t2;
  {
    TapeScope scope(t2);
    loss = ops::sum(ops::mul(y, y));
  }
  t2.backward(loss);
  for (std::size_t i = 0; i < 5; ++i) CHECK(y.grad()[i] == 2.0 * y[i]);

  // per-cell NLL scaled by the label's weight, averaged over cells
  const Tensor logits = random_tensor({4, 3, 2}, rng, true, -2, 2);
  const std::vector<std::uint8_t> labels{0, 1, 2, 3, 1, 0};
  const std::vector<double> weights{1.0, 3.0, 5.0, 2.0};
  double num = 0;
  for (std::size_t p = 0; p < 6; ++p) {
    double z = 0;
    for (std::size_t k = 0; k < 4; ++k) z += std::exp(logits[k * 6 + p]);
    const double nll = std::log(z) - logits[labels[p] * 6 + p];
    num += weights[labels[p]] * nll;
  }
  CHECK(ops::weighted_cross_entropy(logits, labels, weights).item() == doctest::Approx(num / 6.0).epsilon(1e-12));
  const auto r = gradcheck([&] { return ops::weighted_cross_entropy(logits, labels, weights); }, {{"l", logits}}, 1000);
  CHECK(r.max_rel_error < kOpTolerance);
  CHECK(ops::mean(Tensor::from({4}, {1, 2, 3, 6})).item() == 3.0);
}

TEST_CASE("tape contract") {
  Tensor x = Tensor::full({2}, 1.0, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = ops::sum(ops::mul(x, x));
    CHECK(tape.size() == 2);
  }
  tape.backward(loss);
  CHECK(tape.consumed());
  CHECK_THROWS(tape.backward(loss));

  Tape t2;
  Tensor v;
  {
    TapeScope scope(t2);
    v = ops::mul(x, x);
  }
  CHECK_THROWS_AS(t2.backward(v), ShapeError);

  // nothing records without an active tape
  CHECK(active_tape() == nullptr);
  CHECK_FALSE(ops::mul(x, x).requires_grad());

  // gradients accumulate across passes into leaves
  x.zero_grad();
  for (int pass = 0; pass < 2; ++pass) {
    Tape t;
    {
      TapeScope scope(t);
      loss = ops::sum(x);
    }
    t.backward(loss);
  }
  for (double g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("non-finite results name the op") {
  const Tensor big = Tensor::full({1, 2}, 1e300);
  try {
    ops::mul(big, big);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("mul") != std::string::npos);
  }
}
