#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gradcheck.hpp"
#include "metric_oracle.hpp"
#include "satmap/map_head.hpp"

using namespace satmap;
using satmap::testing::gradcheck;
using satmap::testing::oracle_ap;
using satmap::testing::oracle_chamfer;
using satmap::testing::random_frames;
using satmap::testing::random_polyline;
using satmap::testing::random_tensor;
using satmap::testing::weighted_sum;

namespace {

Tensor one_hot_probs(const GridConfig& grid, const std::vector<std::uint8_t>& labels, double p = 1.0) {
  const std::size_t plane = grid.rows() * grid.cols();
  Tensor probs = Tensor::zeros({kNumClasses, grid.rows(), grid.cols()});
  auto d = probs.mutable_data();
  for (std::size_t i = 0; i < plane; ++i) {
    d[labels[i] * plane + i] = labels[i] == 0 ? 1.0 : p;
    if (labels[i] != 0) d[i] = 1.0 - p;
  }
  return probs;
}

}  // namespace

TEST_CASE("segment head probabilities and gradient") {
  nn::ParamStore store;
  Rng rng(1);
  const SegHead head = SegHead::create(store, 6, rng);
  Rng data(2);
  const Tensor f = random_tensor({6, 8, 5}, data, true);
  const Tensor p = head(f);
  REQUIRE(p.shape() == Shape{4, 8, 5});
  for (std::size_t cell = 0; cell < 40; ++cell) {
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) s += p[c * 40 + cell];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  std::vector<std::pair<std::string, Tensor>> leaves{{"f", f}};
  for (const auto& e : store.entries()) leaves.push_back(e);
  const auto res = gradcheck([&] { return weighted_sum(head(f), 3); }, leaves, 24);
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-4);

  for (double& v : store.get("head.classifier.weight").mutable_data()) v = 0.0;
  const Tensor uniform = head(f);
  CHECK(std::all_of(uniform.data().begin(), uniform.data().end(), [](double v) { return std::abs(v - 0.25) < 1e-15; }));
}

TEST_CASE("vectorize: straight one-cell divider") {
  const GridConfig grid;  // 100 x 50 at 0.6 m
  std::vector<std::uint8_t> labels(grid.rows() * grid.cols(), 0);
  for (std::size_t r = 0; r < grid.rows(); ++r) labels[r * grid.cols() + 20] = 1;
  const auto inst = vectorize(one_hot_probs(grid, labels), grid);
  REQUIRE(inst.size() == 1);
  CHECK(inst[0].cls == MapClass::divider);
  REQUIRE(inst[0].points.size() == 2);
  const double y = 15.0 - 20.5 * 0.6;
  for (Vec2 p : inst[0].points) CHECK(p.y == doctest::Approx(y));
  CHECK(std::min(inst[0].points[0].x, inst[0].points[1].x) == doctest::Approx(-29.7));
  CHECK(std::max(inst[0].points[0].x, inst[0].points[1].x) == doctest::Approx(29.7));
  CHECK(inst[0].confidence == doctest::Approx(1.0));
}

TEST_CASE("vectorize: empty grid, small components, disjoint crossings") {
  GridConfig grid;
  grid.range_forward = 20;
  grid.range_lateral = 10;
  grid.cell = 1.0;
  std::vector<std::uint8_t> labels(200, 0);
  CHECK(vectorize(one_hot_probs(grid, labels), grid).empty());

  labels[0] = labels[1] = labels[2] = 3;  // three cells: below min_cells
  CHECK(vectorize(one_hot_probs(grid, labels), grid).empty());

  std::fill(labels.begin(), labels.end(), 0);
  auto box = [&](std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    for (std::size_t r = r0; r <= r1; ++r)
      for (std::size_t c = c0; c <= c1; ++c)
        if (r == r0 || r == r1 || c == c0 || c == c1) labels[r * 10 + c] = 2;
  };
  box(2, 5, 1, 8);
  box(12, 16, 2, 7);
  Tensor probs = one_hot_probs(grid, labels, 0.9);
  // second crossing at lower confidence
  for (std::size_t r = 12; r <= 16; ++r)
    for (std::size_t c = 2; c <= 7; ++c)
      if (labels[r * 10 + c] == 2) probs.mutable_data()[2 * 200 + r * 10 + c] = 0.6, probs.mutable_data()[r * 10 + c] = 0.4;
  const auto inst = vectorize(probs, grid);
  REQUIRE(inst.size() == 2);
  for (const auto& i : inst) CHECK(i.cls == MapClass::ped_crossing);
  CHECK(inst[0].confidence == doctest::Approx(0.9));
  CHECK(inst[1].confidence == doctest::Approx(0.6));
  for (const auto& i : inst)
    for (Vec2 p : i.points) {
      CHECK(std::abs(p.x) <= 10.0);
      CHECK(std::abs(p.y) <= 5.0);
    }
  // first instance sits in the rear half of the grid (rows 2..5)
  for (Vec2 p : inst[0].points) CHECK(p.x < 0.0);
  for (Vec2 p : inst[1].points) CHECK(p.x > 0.0);
  CHECK_THROWS_AS(vectorize(Tensor::zeros({4, 20, 9}), grid), ShapeError);
}

TEST_CASE("chamfer distance cases") {
  const Polyline a{{0, 0}, {10, 0}}, b{{0, 1}, {10, 1}};
  CHECK(chamfer_distance(a, a) == 0.0);
  CHECK(chamfer_distance(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  const Polyline l{{0, 0}, {5, 0}, {5, 5}}, s{{0, 0}, {10, 0}};
  CHECK(chamfer_distance(l, s) == doctest::Approx(oracle_chamfer(l, s)).epsilon(1e-12));
  CHECK(chamfer_distance(l, s) > 0.5);
  CHECK_THROWS(chamfer_distance({{1, 1}, {1, 1}}, a));

  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Polyline p = random_polyline(rng), q = random_polyline(rng);
    const double pq = chamfer_distance(p, q);
    CHECK(pq == doctest::Approx(chamfer_distance(q, p)).epsilon(1e-12));
    CHECK(pq == doctest::Approx(oracle_chamfer(p, q)).epsilon(1e-12));
    CHECK(pq > 0.0);
  }
}

TEST_CASE("two predictions against two ground truths") {
  FrameResult frame;
  frame.gts = {{MapClass::divider, {{0, 0}, {10, 0}}}, {MapClass::divider, {{0, 20}, {10, 20}}}};
  frame.preds = {{MapClass::divider, {{0, 0.3}, {10, 0.3}}, 0.9}, {MapClass::divider, {{0, 50}, {10, 50}}, 0.8}};
  std::vector<FrameResult> frames{frame};
  CHECK(ap_at_threshold(frames, MapClass::divider, 0.5) == doctest::Approx(0.5));
  CHECK(ap_at_threshold(frames, MapClass::divider, 0.5) == doctest::Approx(oracle_ap(frames, MapClass::divider, 0.5)));
  std::swap(frames[0].preds[0].confidence, frames[0].preds[1].confidence);
  CHECK(ap_at_threshold(frames, MapClass::divider, 0.5) == doctest::Approx(0.25));
  CHECK(ap_at_threshold(frames, MapClass::divider, 0.2) == 0.0);
}

TEST_CASE("perfect predictions, empty sets") {
  FrameResult frame;
  frame.gts = {{MapClass::divider, {{0, 0}, {10, 0}}}, {MapClass::ped_crossing, {{0, 0}, {3, 0}, {3, 4}, {0, 4}, {0, 0}}},
               {MapClass::boundary, {{-5, 5}, {5, 6}}}};
  for (const auto& g : frame.gts) frame.preds.push_back({g.cls, g.points, 1.0});
  const std::vector<FrameResult> frames{frame};
  const MetricReport r = map_metric(frames);
  CHECK(r.map == 1.0);

  FrameResult none = frame;
  none.preds.clear();
  const std::vector<FrameResult> empty_preds{none};
  CHECK(map_metric(empty_preds).map == 0.0);
  const std::vector<FrameResult> nothing{FrameResult{}};
  CHECK(map_metric(nothing).map == 1.0);

  ApConfig bad;
  bad.thresholds = {1.0, 0.5};
  CHECK_THROWS_AS(map_metric(frames, bad), std::invalid_argument);
}

TEST_CASE("metric agrees with the brute-force oracle on random micro-instances") {
  Rng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const auto frames = random_frames(rng);
    const MetricReport r = map_metric(frames);
    double total = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      double per = 0.0;
      std::array<double, 3> at{};
      for (std::size_t t = 0; t < 3; ++t) {
        const double tau = 0.5 * static_cast<double>(t + 1);
        at[t] = ap_at_threshold(frames, kMapClasses[c], tau);
        CHECK(at[t] == doctest::Approx(oracle_ap(frames, kMapClasses[c], tau)).epsilon(1e-12));
        per += at[t];
      }
      CHECK(at[0] <= at[1] + 1e-12);
      CHECK(at[1] <= at[2] + 1e-12);
      CHECK(r.per_class[c] == doctest::Approx(per / 3.0).epsilon(1e-12));
      total += per / 3.0;
    }
    CHECK(r.map == doctest::Approx(total / 3.0).epsilon(1e-12));

    auto scaled = frames;
    const double k = rng.uniform(0.01, 50.0);
    for (auto& f : scaled)
      for (auto& p : f.preds) p.confidence *= k;
    const MetricReport rs = map_metric(scaled);
    for (std::size_t c = 0; c < 3; ++c) CHECK(rs.per_class[c] == r.per_class[c]);
  }
}

TEST_CASE("class weights from label frequencies") {
  std::vector<std::uint8_t> labels(100, 0);
  labels.insert(labels.end(), 10, 1);
  labels.insert(labels.end(), 1, 2);
  const auto w = class_weights(labels);
  CHECK(w[0] == 1.0);
  CHECK(w[1] == doctest::Approx(10.0));
  CHECK(w[2] == 20.0);  // 100 clamps to 20
  CHECK(w[3] == 20.0);  // absent
  std::vector<std::uint8_t> dense(10, 1);
  dense.push_back(0);
  CHECK(class_weights(dense)[1] == 1.0);  // rarer background clamps up to 1
  labels.push_back(4);
  CHECK_THROWS_AS(class_weights(labels), std::invalid_argument);
}
