#include <benchmark/benchmark.h>

#include "satmap/geo_align.hpp"
#include "satmap/map_head.hpp"
#include "satmap/trainer.hpp"

namespace satmap {
namespace {

Tensor uniform(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v));
}

void BM_Conv2d3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = uniform({c, 48, 24}, 1), w = uniform({c, c, 3, 3}, 2), b = uniform({c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, b, 1, 1));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 9 * 48 * 24));
}
BENCHMARK(BM_Conv2d3x3)->Arg(12)->Arg(24)->Arg(48);

void BM_GatedBlock(benchmark::State& state) {
  nn::ParamStore store;
  Rng rng(4);
  const ChannelPlan plan;
  const auto level = static_cast<std::size_t>(state.range(0));
  const GatedBlock block = GatedBlock::create(store, "g", plan.concat_width(level), plan.widths[level], {}, rng);
  const std::size_t side = 48 >> level;
  const Tensor x = uniform({plan.concat_width(level), side, side / 2}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(block(x));
}
BENCHMARK(BM_GatedBlock)->DenseRange(0, 3);

// One training step (forward, backward, AdamW) on a single sample at the
// default geometry.
void BM_TrainStep(benchmark::State& state) {
  ExperimentConfig cfg;
  cfg.set("model.variant", variant_name(static_cast<ModelVariant>(state.range(0))));
  cfg.set("grid.cell", "1.2");
  const Sample sample = make_sample(sample_seed(1, false, 0), cfg.world);
  Session session(cfg);
  const std::vector<double> weights(kNumClasses, 1.0);
  const Sample* batch[] = {&sample};
  for (auto _ : state) benchmark::DoNotOptimize(session.train_step(batch, weights));
  state.SetLabel(variant_name(static_cast<ModelVariant>(state.range(0))));
}
BENCHMARK(BM_TrainStep)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_Fusion(benchmark::State& state) {
  nn::ParamStore store;
  Rng rng(6);
  FusionConfig cfg;
  cfg.kind = static_cast<FusionKind>(state.range(0));
  const Fusion f = Fusion::create(store, 24, cfg, rng);
  const Tensor bev = uniform({24, 50, 25}, 7), sat = uniform({24, 50, 25}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(f(bev, sat));
  state.SetLabel(fusion_name(cfg.kind));
}
BENCHMARK(BM_Fusion)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

void BM_CropPatch(benchmark::State& state) {
  const SatTile tile{uniform({3, 512, 512}, 9), {-80.0, 80.0}, 0.3125};
  const PatchSpec spec;
  const EgoPose pose = EgoPose::make(0.0, 0.0, 0.7);
  for (auto _ : state) benchmark::DoNotOptimize(crop_patch(tile, pose, spec));
}
BENCHMARK(BM_CropPatch)->Unit(benchmark::kMicrosecond);

void BM_VectorizeAndScore(benchmark::State& state) {
  ExperimentConfig cfg;
  cfg.set("grid.cell", "1.2");
  const Sample sample = make_sample(sample_seed(1, true, 0), cfg.world);
  const GridConfig grid = sample.grid();
  const auto labels = sample.label_ids();
  const std::size_t plane = grid.rows() * grid.cols();
  Tensor probs = Tensor::zeros({kNumClasses, grid.rows(), grid.cols()});
  for (std::size_t i = 0; i < plane; ++i) probs.mutable_data()[labels[i] * plane + i] = 1.0;
  for (auto _ : state) {
    FrameResult frame;
    frame.gts = sample.gt;
    frame.preds = vectorize(probs, grid);
    const std::vector<FrameResult> frames{frame};
    benchmark::DoNotOptimize(map_metric(frames));
  }
}
BENCHMARK(BM_VectorizeAndScore)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace satmap

BENCHMARK_MAIN();
