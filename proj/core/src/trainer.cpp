#include "satmap/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <spdlog/spdlog.h>
#include <thread>

namespace satmap {

std::vector<Sample> make_split(const ExperimentConfig& cfg, bool eval_split) {
  const std::size_t n = eval_split ? cfg.data.eval_size : cfg.data.train_size;
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_sample(sample_seed(cfg.data.seed, eval_split, i), cfg.world));
  return out;
}

Tensor aligned_satellite(const Sample& sample) { return align_to_ego(sample.sat_tensor()); }

Session::Session(const ExperimentConfig& cfg)
    : cfg_(cfg),
      model_((cfg.validate(), MapModel::create(params_, cfg.model, mix_seed(cfg.run_seed, 0x1a17)))),
      optimizer_(params_, cfg.optim) {}

namespace {

void check_geometry(const Sample& s, const ExperimentConfig& cfg) {
  const GridConfig& g = cfg.world.grid;
  if (s.grid_h != g.rows() || s.grid_w != g.cols() || s.range_forward != g.range_forward ||
      s.range_lateral != g.range_lateral || s.sat_fwd != cfg.world.patch.forward_px ||
      s.sat_lat != cfg.world.patch.lateral_px)
    throw std::invalid_argument("sample " + std::to_string(s.seed) + " geometry (" + std::to_string(s.grid_h) + "x" +
                                std::to_string(s.grid_w) + " grid) does not match the configuration (" +
                                std::to_string(g.rows()) + "x" + std::to_string(g.cols()) + ")");
}

Tensor sample_logits(const MapModel& model, const Sample& s, const GridConfig& grid) {
  const Tensor sat = model.uses_satellite() ? aligned_satellite(s) : Tensor{};
  return model.logits(sat, s.obs_tensor(), s.mask_tensor(), grid);
}

}  // namespace

double Session::train_step(std::span<const Sample* const> batch, std::span<const double> class_weights) {
  params_.zero_grad();
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const Sample* s : batch) {
    check_geometry(*s, cfg_);
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = ops::weighted_cross_entropy(sample_logits(model_, *s, cfg_.world.grid), s->label_ids(),
                                                    class_weights);
    total += loss.item();
    tape.backward(ops::scale(loss, inv));
  }
  optimizer_.step(params_, step_);
  ++step_;
  return total * inv;
}

Tensor Session::predict(const Tensor& sat_patch, const Tensor& observation, const Tensor& mask) const {
  return ops::softmax_channels(model_.logits(sat_patch, observation, mask, cfg_.world.grid));
}

double Session::sample_loss(const Sample& sample, std::span<const double> class_weights) const {
  check_geometry(sample, cfg_);
  return ops::weighted_cross_entropy(sample_logits(model_, sample, cfg_.world.grid), sample.label_ids(), class_weights)
      .item();
}

void Session::save(const std::filesystem::path& path) const {
  save_checkpoint(path, {cfg_.hash(), step_}, params_, &optimizer_);
}

void Session::load(const std::filesystem::path& path) {
  nn::ParamStore& params = params_;
  const CheckpointHeader h = load_checkpoint(path, params, &optimizer_);
  if (h.config_hash != cfg_.hash())
    throw CheckpointError("checkpoint " + path.string() + " was written for config " + hash_hex(h.config_hash) +
                          ", not " + hash_hex(cfg_.hash()));
  step_ = h.step;
}

void Session::load_weights(const std::filesystem::path& path) { step_ = load_checkpoint(path, params_, nullptr).step; }

std::size_t batch_index(std::uint64_t run_seed, std::size_t split_size, std::size_t batch, std::size_t step,
                        std::size_t slot) {
  const std::size_t position = step * batch + slot;
  const std::size_t epoch = position / split_size;
  std::vector<std::size_t> order(split_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(run_seed, 0xe90c0000ULL + epoch));
  std::shuffle(order.begin(), order.end(), rng.engine());
  return order[position % split_size];
}

namespace {

std::array<double, kNumClasses> split_class_weights(const std::vector<Sample>& samples) {
  std::vector<std::uint8_t> labels;
  for (const Sample& s : samples) {
    const auto ids = s.label_ids();
    labels.insert(labels.end(), ids.begin(), ids.end());
  }
  return class_weights(labels);
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const TrainOptions& opts, Session* session) {
  std::optional<Session> owned;
  if (!session) session = &owned.emplace(cfg);
  std::vector<Sample> generated_train, generated_eval;
  const auto& train_data = opts.train_data ? *opts.train_data : (generated_train = make_split(cfg, false));
  const auto& eval_data = opts.eval_data ? *opts.eval_data : (generated_eval = make_split(cfg, true));
  if (train_data.empty()) throw std::invalid_argument("train: empty train split");
  for (const Sample& s : train_data) check_geometry(s, cfg);
  if (opts.resume) session->load(*opts.resume);

  const auto weights = split_class_weights(train_data);
  std::ofstream log;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    log.open(opts.out_dir / "train_log.csv", session->step() == 0 ? std::ios::trunc : std::ios::app);
    if (session->step() == 0) log << "step,loss,lr,eval_loss\n";
  }
  TrainResult result;
  const std::size_t end = std::min(cfg.optim.steps, opts.stop_after.value_or(cfg.optim.steps));
  std::vector<const Sample*> batch(cfg.optim.batch);
  while (session->step() < end) {
    const std::size_t step = session->step();
    for (std::size_t b = 0; b < batch.size(); ++b)
      batch[b] = &train_data[batch_index(cfg.run_seed, train_data.size(), cfg.optim.batch, step, b)];
    const double loss = session->train_step(batch, weights);
    if (!std::isfinite(loss)) throw NumericError("train: non-finite loss at step " + std::to_string(step));
    result.losses.push_back(loss);
    std::string eval_field;
    const std::size_t done = session->step();
    if (cfg.optim.eval_every > 0 && (done % cfg.optim.eval_every == 0 || done == cfg.optim.steps) && !eval_data.empty()) {
      double total = 0.0;
      for (const Sample& s : eval_data) total += session->sample_loss(s, weights);
      result.eval_losses.emplace_back(done, total / static_cast<double>(eval_data.size()));
      eval_field = fmt::format("{}", result.eval_losses.back().second);
      spdlog::info("step {}/{} loss {:.4f} eval {:.4f}", done, cfg.optim.steps, loss, result.eval_losses.back().second);
    }
    if (log.is_open()) log << fmt::format("{},{},{},{}\n", done, loss, cosine_lr(cfg.optim, step), eval_field);
  }
  result.steps_done = session->step();
  if (!opts.out_dir.empty()) {
    result.checkpoint = opts.out_dir / "model.sfck";
    session->save(result.checkpoint);
  }
  return result;
}

std::uint64_t ground_truth_hash(std::span<const Sample> samples) {
  std::uint64_t h = fnv1a64("");
  for (const Sample& s : samples) {
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(s.labels.data()), s.labels.size() * sizeof(float)), h);
    for (const VectorInstance& inst : s.gt) {
      const auto cls = static_cast<char>(inst.cls);
      h = fnv1a64(std::string_view(&cls, 1), h);
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(inst.points.data()), inst.points.size() * sizeof(Vec2)),
                  h);
    }
  }
  return h;
}

MetricReport evaluate(const Session& session, std::span<const Sample> samples, const EvalOptions& opts,
                      std::vector<FrameResult>* frames, std::vector<Tensor>* probs) {
  const ExperimentConfig& cfg = session.config();
  opts.degradation.validate();
  const std::uint64_t before = ground_truth_hash(samples);
  std::vector<FrameResult> local;
  auto& out = frames ? *frames : local;
  out.clear();
  if (probs) probs->clear();
  const bool noisy = opts.pose_noise.sigma_t > 0.0 || opts.pose_noise.sigma_r > 0.0;
  for (const Sample& s : samples) {
    check_geometry(s, cfg);
    Tensor sat;
    if (session.model().uses_satellite()) {
      if (noisy) {
        Rng rng(mix_seed(opts.pose_noise.seed, s.seed));
        const EgoPose pose = perturb_pose(s.pose, opts.pose_noise.sigma_t, opts.pose_noise.sigma_r, rng);
        sat = align_to_ego(recrop_satellite(s, cfg.world, pose));
      } else {
        sat = aligned_satellite(s);
      }
    }
    DegradationSpec deg = opts.degradation;
    deg.rng_seed = mix_seed(opts.degradation.rng_seed, s.seed);
    const Tensor obs = apply_degradation(s.obs_tensor(), cfg.world.grid, deg);
    const Tensor p = session.predict(sat, obs, s.mask_tensor());
    out.push_back({vectorize(p, cfg.world.grid), s.gt});
    if (probs) probs->push_back(p);
  }
  if (ground_truth_hash(samples) != before) throw std::logic_error("evaluate: ground truth changed during evaluation");
  return map_metric(out, cfg.eval);
}

std::string variant_label(const ModelConfig& model) {
  if (model.variant == ModelVariant::bev_only) return "bev_only";
  return std::string(variant_name(model.variant)) + "+" + fusion_name(model.fusion.kind);
}

std::vector<AblationCell> ablation_cells() {
  std::vector<AblationCell> cells{{ModelVariant::bev_only, FusionKind::sum_mlp}};
  for (auto v : {ModelVariant::no_refine, ModelVariant::gfr_star, ModelVariant::gfr_full})
    for (auto f : {FusionKind::sum_mlp, FusionKind::concat_mlp, FusionKind::patch_cross_attention}) cells.push_back({v, f});
  return cells;
}

namespace {

/// Training config for a cell: evaluation-only perturbations reset.
ExperimentConfig cell_config(const ExperimentConfig& base, AblationCell cell, std::uint64_t seed) {
  ExperimentConfig cfg = base;
  cfg.model.variant = cell.variant;
  cfg.model.fusion.kind = cell.variant == ModelVariant::bev_only ? FusionKind::sum_mlp : cell.fusion;
  cfg.run_seed = seed;
  cfg.degradation = {};
  cfg.pose_noise = {};
  return cfg;
}

ResultRow make_row(const std::string& scenario, const ExperimentConfig& cfg, const MetricReport& m) {
  return {scenario, variant_label(cfg.model), cfg.run_seed, m, cfg.hash(), cfg.data.seed};
}

/// Runs tasks on `jobs` threads; results keep task order.
template <typename Task>
void run_parallel(std::size_t count, std::size_t jobs, Task task) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < count;) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t j = 1; j < std::max<std::size_t>(1, jobs); ++j) pool.emplace_back(worker);
  worker();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::filesystem::path run_dir(const std::filesystem::path& out_dir, const ExperimentConfig& cfg) {
  std::string label = variant_label(cfg.model);
  std::replace(label.begin(), label.end(), '+', '_');
  return out_dir / "runs" / (label + "-seed" + std::to_string(cfg.run_seed) + "-" + hash_hex(cfg.hash()));
}

std::filesystem::path ensure_trained(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                     const std::vector<Sample>& train_data, const std::vector<Sample>& eval_data) {
  const auto dir = run_dir(out_dir, cfg);
  const auto ckpt = dir / "model.sfck";
  if (std::filesystem::exists(ckpt)) {
    try {
      Session probe(cfg);
      probe.load(ckpt);
      if (probe.step() == cfg.optim.steps) return ckpt;
    } catch (const std::exception& e) {
      spdlog::warn("retraining {}: {}", dir.string(), e.what());
    }
  }
  TrainOptions opts;
  opts.out_dir = dir;
  opts.train_data = &train_data;
  opts.eval_data = &eval_data;
  std::filesystem::create_directories(dir);
  cfg.save(dir / "config.txt");
  return train(cfg, opts).checkpoint;
}

std::vector<ResultRow> ablate(const ExperimentConfig& base, const StudyOptions& opts) {
  const auto train_data = make_split(base, false), eval_data = make_split(base, true);
  const auto cells = ablation_cells();
  std::vector<ResultRow> rows(cells.size() * opts.seeds.size());
  std::mutex progress_mutex;
  run_parallel(rows.size(), opts.jobs, [&](std::size_t i) {
    const ExperimentConfig cfg = cell_config(base, cells[i / opts.seeds.size()], opts.seeds[i % opts.seeds.size()]);
    const auto ckpt = ensure_trained(cfg, opts.out_dir, train_data, eval_data);
    Session session(cfg);
    session.load_weights(ckpt);
    rows[i] = make_row("clean", cfg, evaluate(session, eval_data, {}));
    if (opts.progress) {
      std::lock_guard lock(progress_mutex);
      opts.progress(fmt::format("{} seed {}: mAP {:.2f}", rows[i].variant, cfg.run_seed, 100.0 * rows[i].metrics.map));
    }
  });
  return rows;
}

std::vector<ResultRow> perturb_study(const ExperimentConfig& base, const StudyOptions& opts) {
  const auto train_data = make_split(base, false), eval_data = make_split(base, true);
  const AblationCell fused{ModelVariant::gfr_full, FusionKind::sum_mlp}, bev{ModelVariant::bev_only, FusionKind::sum_mlp};
  struct Job {
    AblationCell cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::uint64_t seed : opts.seeds) jobs.push_back({fused, seed}), jobs.push_back({bev, seed});
  std::vector<std::vector<ResultRow>> per_job(jobs.size());
  std::mutex progress_mutex;
  run_parallel(jobs.size(), opts.jobs, [&](std::size_t j) {
    const ExperimentConfig cfg = cell_config(base, jobs[j].cell, jobs[j].seed);
    const auto ckpt = ensure_trained(cfg, opts.out_dir, train_data, eval_data);
    Session session(cfg);
    session.load_weights(ckpt);
    auto& rows = per_job[j];
    auto run = [&](const std::string& scenario, const EvalOptions& eo) {
      ExperimentConfig scenario_cfg = cfg;
      scenario_cfg.degradation = eo.degradation;
      scenario_cfg.pose_noise = eo.pose_noise;
      ResultRow row = make_row(scenario, scenario_cfg, evaluate(session, eval_data, eo));
      row.config_hash = scenario_cfg.hash();
      rows.push_back(row);
    };
    run("clean", {});
    for (DegradationKind kind : kAdverseScenarios) {
      EvalOptions eo;
      eo.degradation = {kind, kStudySeverity, base.degradation.rng_seed};
      run(fmt::format("{}@{}", degradation_name(kind), kStudySeverity), eo);
    }
    if (jobs[j].cell.variant != ModelVariant::bev_only) {
      for (double st : kPoseSigmaT)
        for (double sr : kPoseSigmaR) {
          if (st == 0.0 && sr == 0.0) continue;
          EvalOptions eo;
          eo.pose_noise = {st, sr, base.pose_noise.seed};
          run(fmt::format("pose_t{}_r{}", st, sr), eo);
        }
    }
    if (opts.progress) {
      std::lock_guard lock(progress_mutex);
      opts.progress(fmt::format("{} seed {}: {} scenarios evaluated", variant_label(cfg.model), cfg.run_seed, rows.size()));
    }
  });
  std::vector<ResultRow> out;
  for (auto& rows : per_job) out.insert(out.end(), rows.begin(), rows.end());
  return out;
}

}  // namespace satmap
