#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "satmap/fusion.hpp"

using namespace satmap;
using satmap::testing::gradcheck;
using satmap::testing::random_tensor;
using satmap::testing::weighted_sum;

namespace {

Fusion make(nn::ParamStore& store, FusionKind kind, std::size_t channels, std::uint64_t seed) {
  Rng rng(seed);
  FusionConfig cfg;
  cfg.kind = kind;
  return Fusion::create(store, channels, cfg, rng);
}

// Cells (r, k) whose output moved after perturbing one F_sat cell.
std::vector<std::pair<std::size_t, std::size_t>> moved_cells(const Fusion& f, const Tensor& bev, const Tensor& sat,
                                                             std::size_t pr, std::size_t pc) {
  const Tensor base = f(bev, sat);
  Tensor s = sat.detach();
  const std::size_t h = sat.dim(1), w = sat.dim(2);
  for (std::size_t c = 0; c < sat.dim(0); ++c) s.mutable_data()[(c * h + pr) * w + pc] += 0.7;
  const Tensor out = f(bev, s);
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t k = 0; k < w; ++k) {
      bool diff = false;
      for (std::size_t c = 0; c < out.dim(0); ++c) diff = diff || out.at(c, r, k) != base.at(c, r, k);
      if (diff) cells.emplace_back(r, k);
    }
  return cells;
}

}  // namespace

TEST_CASE("sum fusion with zero satellite feature is the MLP of F_bev") {
  nn::ParamStore store;
  const Fusion f = make(store, FusionKind::sum_mlp, 6, 1);
  Rng data(2);
  const Tensor bev = random_tensor({6, 5, 4}, data);
  const Tensor out = f(bev, Tensor::zeros(bev.shape()));
  const Tensor mlp = ops::linear_cells(ops::gelu(ops::linear_cells(bev, store.get("fusion.hidden.weight"),
                                                                   store.get("fusion.hidden.bias"))),
                                       store.get("fusion.output.weight"), store.get("fusion.output.bias"));
  CHECK(std::equal(out.data().begin(), out.data().end(), mlp.data().begin()));
}

TEST_CASE("identity recipe makes sum fusion return F_bev + F_sat") {
  nn::ParamStore store;
  Fusion f = make(store, FusionKind::sum_mlp, 5, 3);
  f.init_identity();
  Rng data(4);
  for (const auto [lo, hi] : {std::pair{0.0, 2.0}, std::pair{-2.0, 2.0}}) {
    const Tensor bev = random_tensor({5, 6, 3}, data, false, lo, hi), sat = random_tensor({5, 6, 3}, data, false, lo, hi);
    const Tensor out = f(bev, sat);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(bev[i] + sat[i]).epsilon(1e-12));
  }
  nn::ParamStore other;
  Fusion concat = make(other, FusionKind::concat_mlp, 5, 3);
  CHECK_THROWS_AS(concat.init_identity(), std::logic_error);
}

TEST_CASE("per-cell fusions are local in F_sat") {
  for (FusionKind kind : {FusionKind::sum_mlp, FusionKind::concat_mlp}) {
    CAPTURE(fusion_name(kind));
    nn::ParamStore store;
    const Fusion f = make(store, kind, 4, 5);
    Rng data(6);
    const Tensor bev = random_tensor({4, 10, 5}, data), sat = random_tensor({4, 10, 5}, data);
    for (const auto [r, k] : {std::pair<std::size_t, std::size_t>{0, 0}, {4, 2}, {9, 4}}) {
      const auto cells = moved_cells(f, bev, sat, r, k);
      REQUIRE(cells.size() == 1);
      CHECK(cells[0] == std::pair{r, k});
    }
  }
}

TEST_CASE("concat fusion does not reduce to an MLP of F_bev alone") {
  nn::ParamStore store;
  const Fusion f = make(store, FusionKind::concat_mlp, 4, 7);
  Rng data(8);
  const Tensor bev = random_tensor({4, 5, 5}, data);
  const Tensor out = f(bev, Tensor::zeros(bev.shape()));
  // a 2C -> 2C -> C MLP on [bev; 0] uses only the bev half of the first layer;
  // feeding bev into both halves must differ
  const Tensor both = f(bev, bev);
  double diff = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) diff = std::max(diff, std::abs(out[i] - both[i]));
  CHECK(diff > 1e-3);

  nn::ParamStore sum_store;
  const Fusion s = make(sum_store, FusionKind::sum_mlp, 4, 7);
  const Tensor sum_out = s(bev, Tensor::zeros(bev.shape()));
  diff = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) diff = std::max(diff, std::abs(out[i] - sum_out[i]));
  CHECK(diff > 1e-3);
}

TEST_CASE("fusion gradients") {
  for (FusionKind kind : {FusionKind::sum_mlp, FusionKind::concat_mlp, FusionKind::patch_cross_attention}) {
    CAPTURE(fusion_name(kind));
    nn::ParamStore store;
    const Fusion f = make(store, kind, 3, 9);
    Rng data(10);
    const Tensor bev = random_tensor({3, 10, 5}, data, true), sat = random_tensor({3, 10, 5}, data, true);
    std::vector<std::pair<std::string, Tensor>> leaves{{"bev", bev}, {"sat", sat}};
    for (const auto& e : store.entries()) leaves.push_back(e);
    const auto res = gradcheck([&] { return weighted_sum(f(bev, sat), 11); }, leaves, 24);
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("patch cross-attention is non-local and normalised") {
  nn::ParamStore store;
  Fusion f = make(store, FusionKind::patch_cross_attention, 3, 12);
  Rng data(13);
  const Tensor bev = random_tensor({3, 10, 10}, data), sat = random_tensor({3, 10, 10}, data);

  Tensor attention;
  const Tensor out = f(bev, sat, &attention);
  CHECK(out.shape() == bev.shape());
  REQUIRE(attention.shape() == Shape{4, 4});
  for (std::size_t q = 0; q < 4; ++q) {
    double row = 0.0;
    for (std::size_t k = 0; k < 4; ++k) row += attention[q * 4 + k];
    CHECK(std::abs(row - 1.0) < 1e-9);
  }

  // perturb a satellite cell in the top-left patch; cells in other patches move
  const auto cells = moved_cells(f, bev, sat, 1, 1);
  CHECK(std::any_of(cells.begin(), cells.end(), [](auto rc) { return rc.first >= 5 || rc.second >= 5; }));

  for (double& v : f.value_projection().weight.mutable_data()) v = 0.0;
  for (double& v : f.value_projection().bias.mutable_data()) v = 0.0;
  const Tensor residual = f(bev, sat);
  CHECK(std::equal(residual.data().begin(), residual.data().end(), bev.data().begin()));

  CHECK_THROWS_AS(f(Tensor::zeros({3, 10, 8}), Tensor::zeros({3, 10, 8})), ShapeError);
}

TEST_CASE("fusion variants share the output shape and reject mismatches") {
  Rng data(14);
  const Tensor bev = random_tensor({4, 10, 5}, data), sat = random_tensor({4, 10, 5}, data);
  for (FusionKind kind : {FusionKind::sum_mlp, FusionKind::concat_mlp, FusionKind::patch_cross_attention}) {
    nn::ParamStore store;
    const Fusion f = make(store, kind, 4, 15);
    CHECK(f(bev, sat).shape() == bev.shape());
    CHECK_THROWS_AS(f(bev, Tensor::zeros({4, 10, 4})), ShapeError);
  }
  CHECK(parse_fusion("concat_mlp") == FusionKind::concat_mlp);
  CHECK_THROWS_AS(parse_fusion("attn"), std::invalid_argument);
}
