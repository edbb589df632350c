#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "satmap/config.hpp"
#include "satmap/optim.hpp"

namespace satmap {

/// Generates the train or eval split of `cfg` in memory.
std::vector<Sample> make_split(const ExperimentConfig& cfg, bool eval_split);

/// Ego-aligned satellite patch of a sample.
Tensor aligned_satellite(const Sample& sample);

/// Model, parameters and optimizer state of one run.
class Session {
 public:
  explicit Session(const ExperimentConfig& cfg);

  /// One optimizer step over `batch`; returns the mean sample loss.
  double train_step(std::span<const Sample* const> batch, std::span<const double> class_weights);
  /// Forward pass without recording; returns per-class probabilities.
  Tensor predict(const Tensor& sat_patch, const Tensor& observation, const Tensor& mask) const;
  double sample_loss(const Sample& sample, std::span<const double> class_weights) const;

  void save(const std::filesystem::path& path) const;
  /// Restores parameters and moments; the checkpoint must carry this config's hash.
  void load(const std::filesystem::path& path);
  /// Restores parameters only, accepting any hash (evaluation).
  void load_weights(const std::filesystem::path& path);

  const ExperimentConfig& config() const { return cfg_; }
  std::size_t step() const { return step_; }
  const nn::ParamStore& params() const { return params_; }
  nn::ParamStore& params() { return params_; }
  const MapModel& model() const { return model_; }

 private:
  ExperimentConfig cfg_;
  nn::ParamStore params_;
  MapModel model_;
  AdamW optimizer_;
  std::size_t step_ = 0;
};

/// Index into the train split used at (step, slot). A pure function of the
/// run seed, so resuming only needs the step count.
std::size_t batch_index(std::uint64_t run_seed, std::size_t split_size, std::size_t batch, std::size_t step,
                        std::size_t slot);

struct TrainOptions {
  std::filesystem::path out_dir;  // checkpoint and logs; nothing written when empty
  std::optional<std::filesystem::path> resume;
  std::optional<std::size_t> stop_after;  // total completed steps at which to stop early
  const std::vector<Sample>* train_data = nullptr;
  const std::vector<Sample>* eval_data = nullptr;
};

struct TrainResult {
  std::vector<double> losses;                          // per step run in this call
  std::vector<std::pair<std::size_t, double>> eval_losses;  // (completed steps, mean eval loss)
  std::size_t steps_done = 0;
  std::filesystem::path checkpoint;
};

TrainResult train(const ExperimentConfig& cfg, const TrainOptions& opts, Session* session = nullptr);

struct EvalOptions {
  DegradationSpec degradation;
  PoseNoise pose_noise;
};

/// Forward pipeline over the eval split with observation degradations and
/// satellite pose noise; GT is hash-checked before and after.
MetricReport evaluate(const Session& session, std::span<const Sample> samples, const EvalOptions& opts,
                      std::vector<FrameResult>* frames = nullptr, std::vector<Tensor>* probs = nullptr);

/// FNV-1a over labels and vector GT of every sample.
std::uint64_t ground_truth_hash(std::span<const Sample> samples);

struct ResultRow {
  std::string scenario;
  std::string variant;
  std::uint64_t seed = 0;
  MetricReport metrics;
  std::uint64_t config_hash = 0;
  std::uint64_t data_seed = 0;
};

/// "bev_only" or "<variant>+<fusion>".
std::string variant_label(const ModelConfig& model);

struct AblationCell {
  ModelVariant variant;
  FusionKind fusion;
};
/// The 10 trained cells: bev_only once, every other variant with each fusion.
std::vector<AblationCell> ablation_cells();

struct StudyOptions {
  std::filesystem::path out_dir;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t jobs = 1;
  std::function<void(const std::string&)> progress;
};

/// Trains (or reuses a matching checkpoint) and evaluates every cell on every seed.
std::vector<ResultRow> ablate(const ExperimentConfig& base, const StudyOptions& opts);

inline constexpr std::array<double, 4> kPoseSigmaT{0.0, 0.05, 0.1, 0.2};
inline constexpr std::array<double, 4> kPoseSigmaR{0.0, 0.005, 0.01, 0.02};
inline constexpr double kStudySeverity = 0.5;

/// Pose-noise grid for gfr_full+sum_mlp and the degradation suite for it and
/// bev_only. Reuses checkpoints written by ablate under the same out_dir.
std::vector<ResultRow> perturb_study(const ExperimentConfig& base, const StudyOptions& opts);

/// Checkpoint location for one (model, seed) run under a study directory.
std::filesystem::path run_dir(const std::filesystem::path& out_dir, const ExperimentConfig& cfg);

/// Trains unless run_dir already holds a checkpoint with this config's hash.
std::filesystem::path ensure_trained(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                     const std::vector<Sample>& train_data, const std::vector<Sample>& eval_data);

}  // namespace satmap
