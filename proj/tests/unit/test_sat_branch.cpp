#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "satmap/sat_branch.hpp"

using namespace satmap;
using satmap::testing::gradcheck;
using satmap::testing::random_tensor;
using satmap::testing::weighted_sum;

namespace {

void fill(Tensor t, double v) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), v);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Close every gate: zero expansion weights and biases make g = 0 and GELU(0) = 0.
void close_gates(const GatedBlock& block) {
  fill(block.expand.weight, 0.0);
  fill(block.expand.bias, 0.0);
}

}  // namespace

TEST_CASE("channel split arithmetic") {
  const GatedCnnConfig cfg;
  const auto s = cfg.split(96);
  CHECK(s.gate == 256);
  CHECK(s.identity == 160);
  CHECK(s.conv == 96);
  CHECK(s.expanded == 512);
  CHECK(s.identity + s.conv == s.gate);
  CHECK(cfg.split(144).gate == 384);

  CHECK_THROWS_AS(cfg.split(97), ChannelArithmeticError);
  try {
    (void)cfg.split(20);
    FAIL("expected a split error");
  } catch (const ChannelArithmeticError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("d=20") != std::string::npos);
    CHECK(msg.find("8/3") != std::string::npos);
    CHECK(msg.find("1/1") != std::string::npos);
  }
  GatedCnnConfig wide;
  wide.alpha_num = 3;
  CHECK_THROWS_AS(wide.split(96), ChannelArithmeticError);

  ChannelPlan plan;
  CHECK_NOTHROW(plan.validate(cfg));
  plan.widths = {12, 12, 24, 48, 95};
  CHECK_THROWS_AS(plan.validate(cfg), ChannelArithmeticError);
}

TEST_CASE("pyramid shapes follow the stride arithmetic") {
  nn::ParamStore store;
  Rng rng(1);
  const SatBranch branch = SatBranch::create(store, {}, rng);
  Rng data(2);
  const PyramidFeatures p = branch.extract_pyramid(random_tensor({3, 224, 96}, data), 100, 50);
  CHECK(p[0].shape() == Shape{12, 100, 50});
  CHECK(p[1].shape() == Shape{12, 56, 24});
  CHECK(p[2].shape() == Shape{24, 28, 12});
  CHECK(p[3].shape() == Shape{48, 14, 6});
  CHECK(p[4].shape() == Shape{96, 7, 3});
  CHECK_THROWS_AS(branch.extract_pyramid(random_tensor({3, 200, 96}, data), 100, 50), ShapeError);

  const Tensor out = branch(random_tensor({3, 224, 96}, data), 100, 50);
  CHECK(out.shape() == Shape{24, 100, 50});
}

TEST_CASE("zero patch through a zero-bias backbone gives a zero pyramid") {
  nn::ParamStore store;
  Rng rng(3);
  const Backbone bb = Backbone::create(store, "bb", ChannelPlan{}, rng);
  for (const auto& [name, t] : store.entries())
    if (name.ends_with(".bias")) CHECK(std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; }));
  const PyramidFeatures p = bb(Tensor::zeros({3, 64, 32}), 16, 8);
  for (const Tensor& level : p.levels)
    CHECK(std::all_of(level.data().begin(), level.data().end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("pre-align conv: identity kernel, impulse footprint, gradient") {
  nn::ParamStore store;
  Rng rng(4);
  const GfrStep step = GfrStep::create(store, "s", 8, 4, RefineVariant::full, GatedCnnConfig{}, rng);

  Rng data(5);
  const Tensor x = random_tensor({4, 6, 5}, data);
  Tensor identity = Tensor::zeros({4, 4, 3, 3});
  for (std::size_t c = 0; c < 4; ++c) identity.mutable_data()[((c * 4 + c) * 3 + 1) * 3 + 1] = 1.0;
  CHECK(bitwise_equal(ops::conv2d(x, identity, Tensor::zeros({4}), 1, 1), x));

  // impulse at (3, 2): output is non-zero only inside the 3x3 neighbourhood
  Tensor impulse = Tensor::zeros({4, 8, 7});
  impulse.mutable_data()[(1 * 8 + 3) * 7 + 2] = 1.0;
  const Tensor y = step.prealign(impulse);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t k = 0; k < 7; ++k) {
        const bool inside = r >= 2 && r <= 4 && k >= 1 && k <= 3;
        if (inside)
          CHECK(y.at(c, r, k) != 0.0);
        else
          CHECK(y.at(c, r, k) == 0.0);
      }

  const Tensor xin = random_tensor({4, 5, 4}, data, true);
  const auto res = gradcheck([&] { return weighted_sum(step.prealign(xin), 11); },
                             {{"x", xin}, {"w", step.prealign.weight}, {"b", step.prealign.bias}});
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("closed gates reduce the block to its output projection") {
  nn::ParamStore store;
  Rng rng(6);
  const GatedBlock block = GatedBlock::create(store, "g", 36, 12, GatedCnnConfig{}, rng);
  close_gates(block);
  Rng data(7);
  const Tensor x = random_tensor({36, 5, 4}, data);
  CHECK(bitwise_equal(block(x), block.out.cells(x)));
}

TEST_CASE("gate saturation closes the modulated path") {
  nn::ParamStore store;
  Rng rng(8);
  const GatedBlock block = GatedBlock::create(store, "g", 36, 12, GatedCnnConfig{}, rng);
  Tensor bias = block.expand.bias;
  for (std::size_t i = 0; i < block.split.gate; ++i) bias.mutable_data()[i] = -40.0;
  Rng data(9);
  const Tensor x = random_tensor({36, 6, 5}, data, false, -3.0, 3.0);

  const std::size_t sizes[] = {block.split.gate, block.split.identity, block.split.conv};
  const auto parts = ops::split_channels(block.expand.cells(block.norm(x)), sizes);
  const Tensor s = ops::mul(ops::gelu(parts[0]), ops::concat_channels(parts[1], block.local(parts[2])));
  const Tensor contribution = ops::linear_cells(s, block.project.weight, Tensor::zeros({36}));
  // the manual pipeline reproduces the block
  const Tensor rebuilt = block.out.cells(ops::add(x, block.project.cells(s)));
  const Tensor direct = block(x);
  for (std::size_t i = 0; i < direct.numel(); ++i) CHECK(direct[i] == doctest::Approx(rebuilt[i]).epsilon(1e-12));

  const std::size_t plane = 30;
  std::size_t closed = 0;
  for (std::size_t cell = 0; cell < plane; ++cell) {
    bool all_low = true;
    for (std::size_t g = 0; g < block.split.gate; ++g) all_low = all_low && parts[0][g * plane + cell] <= -10.0;
    if (!all_low) continue;
    ++closed;
    double mod = 0.0, res = 0.0;
    for (std::size_t c = 0; c < 36; ++c) {
      mod += contribution[c * plane + cell] * contribution[c * plane + cell];
      res += x[c * plane + cell] * x[c * plane + cell];
    }
    CHECK(std::sqrt(mod) < 1e-6 * std::sqrt(res));
  }
  CHECK(closed == plane);
}

TEST_CASE("gated block gradient") {
  nn::ParamStore store;
  Rng rng(10);
  const GatedBlock block = GatedBlock::create(store, "g", 18, 6, GatedCnnConfig{}, rng);
  Rng data(11);
  const Tensor x = random_tensor({18, 4, 3}, data, true);
  std::vector<std::pair<std::string, Tensor>> leaves{{"x", x}};
  for (const auto& e : store.entries()) leaves.push_back(e);
  const auto res = gradcheck([&] { return weighted_sum(block(x), 12); }, leaves, 24);
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("gfr step shape contract and determinism") {
  nn::ParamStore store;
  Rng rng(12);
  const GfrStep step = GfrStep::create(store, "s", 96, 48, RefineVariant::full, GatedCnnConfig{}, rng);
  CHECK(step.gated->split.gate == 384);
  Rng data(13);
  const Tensor upper = random_tensor({96, 7, 3}, data), lower = random_tensor({48, 14, 6}, data);
  const Tensor a = step(upper, lower), b = step(upper, lower);
  CHECK(a.shape() == Shape{48, 14, 6});
  CHECK(bitwise_equal(a, b));
  CHECK_THROWS_AS(step(lower.detach(), random_tensor({96, 7, 3}, data)), ShapeError);
}

TEST_CASE("full and gfr_star differ only inside the gated blocks") {
  const GatedCnnConfig cfg;
  const ChannelPlan plan;
  nn::ParamStore full_store, star_store;
  Rng r1(14), r2(14);
  SatBranchConfig full_cfg, star_cfg;
  star_cfg.variant = RefineVariant::gfr_star;
  const SatBranch full = SatBranch::create(full_store, full_cfg, r1);
  const SatBranch star = SatBranch::create(star_store, star_cfg, r2);

  std::size_t expected_gap = 0;
  for (std::size_t level = 0; level < 4; ++level) {
    const std::size_t d = plan.concat_width(level), d_next = plan.widths[level];
    // hand count: norm 2d, expand (d+1)*2g, local (c*9+1)*c, project (g+1)*d, out (d+1)*d_next
    const std::size_t g = d * 8 / 3, c = d;
    const std::size_t hand = 2 * d + (d + 1) * 2 * g + (c * 9 + 1) * c + (g + 1) * d + (d + 1) * d_next;
    CHECK(GatedBlock::parameter_count(d, d_next, cfg) == hand);
    const std::string prefix = "sat.gfr.level" + std::to_string(level);
    CHECK(full_store.scalar_count_with_prefix(prefix + ".gated") == hand);
    const std::size_t plain = (d * 9 + 1) * d_next;
    CHECK(star_store.scalar_count_with_prefix(prefix + ".plain") == plain);
    CHECK(full_store.scalar_count_with_prefix(prefix + ".prealign") ==
          star_store.scalar_count_with_prefix(prefix + ".prealign"));
    expected_gap += hand - plain;
  }
  CHECK(full_store.scalar_count() - star_store.scalar_count() == expected_gap);
  CHECK(full_store.scalar_count_with_prefix("sat.backbone") == star_store.scalar_count_with_prefix("sat.backbone"));

  Rng data(15);
  const PyramidFeatures p = full.extract_pyramid(random_tensor({3, 64, 32}, data), 16, 8);
  CHECK(full.refine(p).shape() == star.refine(p).shape());
  CHECK(full.refine(p).shape() == Shape{12, 16, 8});
}

TEST_CASE("refinement with closed gates is a fixed linear image of the pyramid") {
  nn::ParamStore store;
  Rng rng(16);
  const SatBranch branch = SatBranch::create(store, {}, rng);
  for (const GfrStep& s : branch.steps()) close_gates(*s.gated);
  for (const auto& [name, t] : store.entries())
    if (name.ends_with(".bias")) CHECK(std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; }));

  Rng data(17);
  auto random_pyramid = [&] {
    PyramidFeatures p;
    const ChannelPlan plan;
    const std::size_t h[] = {16, 16, 8, 4, 2}, w[] = {8, 8, 4, 2, 1};
    for (std::size_t i = 0; i < 5; ++i) p.levels[i] = random_tensor({plan.widths[i], h[i], w[i]}, data);
    return p;
  };
  const PyramidFeatures p = random_pyramid(), q = random_pyramid();

  // reference forward: upsample, pre-align, concat, 1x1 projection, level by level
  Tensor upper = p[4];
  for (std::size_t level = 4; level-- > 0;) {
    const GfrStep& s = branch.steps()[level];
    const Tensor lower = ops::conv2d(p[level], s.prealign.weight, s.prealign.bias, 1, 1);
    const Tensor up = ops::bilinear_interp(upper, lower.dim(1), lower.dim(2));
    upper = ops::linear_cells(ops::concat_channels(up, lower), s.gated->out.weight, s.gated->out.bias);
  }
  const Tensor got = branch.refine(p);
  for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got[i] == doctest::Approx(upper[i]).epsilon(1e-12));

  PyramidFeatures mix;
  for (std::size_t i = 0; i < 5; ++i) mix.levels[i] = ops::add(ops::scale(p[i], 2.0), ops::scale(q[i], -0.5));
  const Tensor lhs = branch.refine(mix), fp = branch.refine(p), fq = branch.refine(q);
  for (std::size_t i = 0; i < lhs.numel(); ++i) CHECK(lhs[i] == doctest::Approx(2.0 * fp[i] - 0.5 * fq[i]).epsilon(1e-10));
}

TEST_CASE("lift to the satellite feature") {
  nn::ParamStore store;
  Rng rng(18);
  const SatBranch branch = SatBranch::create(store, {}, rng);
  Rng data(19);
  const Tensor r0 = random_tensor({12, 5, 4}, data, true);
  const Tensor f = branch.to_sat_feature(r0);
  CHECK(f.shape() == Shape{24, 5, 4});
  const Tensor w = store.get("sat.lift.weight"), b = store.get("sat.lift.bias");
  const auto res = gradcheck([&] { return weighted_sum(branch.to_sat_feature(r0), 20); }, {{"r0", r0}, {"w", w}, {"b", b}});
  CHECK(res.max_rel_error < 1e-4);
  fill(w, 0.0);
  const Tensor zero = branch.to_sat_feature(r0);
  CHECK(std::all_of(zero.data().begin(), zero.data().end(), [](double v) { return v == 0.0; }));
}
