#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fmt/format.h>
#include <map>
#include <spdlog/spdlog.h>

#include "satmap/report.hpp"

namespace fs = std::filesystem;
using namespace satmap;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key = value config file");
    app->add_option("--set", sets, "override as key=value (repeatable)");
    for (const auto& key : ExperimentConfig::keys()) app->add_option("--" + key, flags[key], "config key " + key);
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = file.empty() ? ExperimentConfig{} : ExperimentConfig::load(file);
    for (const auto& [key, value] : flags)
      if (!value.empty()) cfg.set(key, value);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }
};

fs::path output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SATMAP_OUT")) return env;
  return "out";
}

std::vector<Sample> load_or_make(const ExperimentConfig& cfg, const std::string& path, bool eval_split) {
  if (path.empty()) return make_split(cfg, eval_split);
  auto samples = dataset_read(path);
  spdlog::info("loaded {} samples from {}", samples.size(), path);
  return samples;
}

void write_rows(const fs::path& dir, const std::string& stem, const std::vector<ResultRow>& rows) {
  write_text(dir / (stem + ".csv"), rows_to_csv(rows));
  write_text(dir / (stem + ".json"), rows_to_json(rows));
  const auto cells = summarize(rows);
  write_text(dir / (stem + "_summary.csv"), summary_to_csv(cells));
  for (const auto& c : cells)
    fmt::print("{:<24} {:<36} mAP {:6.2f} +- {:5.2f} (n={})\n", c.scenario, c.variant, c.mean_map, c.std_map, c.runs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Satellite-enhanced BEV map construction: data, training, evaluation and studies"};
  app.require_subcommand(1);
  std::string out_flag;
  bool verbose = false;
  app.add_option("--out", out_flag, "output root (default $SATMAP_OUT or ./out)");
  app.add_flag("-v,--verbose", verbose, "debug logging");

  ConfigArgs gen_args, train_args, eval_args, ablate_args, study_args, report_args;

  auto* gen = app.add_subcommand("gen-data", "generate train/eval splits as dataset files");
  gen_args.attach(gen);

  auto* train_cmd = app.add_subcommand("train", "train one model");
  train_args.attach(train_cmd);
  std::string resume, train_file, eval_file;
  std::size_t stop_after = 0;
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");
  train_cmd->add_option("--stop-after", stop_after, "stop after this many completed steps");
  train_cmd->add_option("--train-data", train_file, "dataset file (generated when omitted)");
  train_cmd->add_option("--eval-data", eval_file, "dataset file (generated when omitted)");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint with optional degradation and pose noise");
  eval_args.attach(eval_cmd);
  std::string ckpt, eval_data_file, scenario = "custom";
  eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--eval-data", eval_data_file, "dataset file (generated when omitted)");
  eval_cmd->add_option("--scenario", scenario, "scenario label for the report row");

  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t jobs = 1;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate the variant x fusion matrix");
  ablate_args.attach(ablate_cmd);
  ablate_cmd->add_option("--seeds", seeds, "run seeds");
  ablate_cmd->add_option("--jobs", jobs, "parallel trainings");

  auto* study_cmd = app.add_subcommand("perturb-study", "pose-noise grid and degradation suite");
  study_args.attach(study_cmd);
  study_cmd->add_option("--seeds", seeds, "run seeds");
  study_cmd->add_option("--jobs", jobs, "parallel trainings");

  auto* report_cmd = app.add_subcommand("report", "tables and GT | prediction | satellite renders");
  report_args.attach(report_cmd);
  std::string rows_file, report_ckpt;
  std::size_t renders = 4;
  report_cmd->add_option("--rows", rows_file, "JSON rows written by eval/ablate/perturb-study");
  report_cmd->add_option("--checkpoint", report_ckpt, "checkpoint used for renders");
  report_cmd->add_option("--renders", renders, "number of eval samples to render");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  const fs::path out = output_root(out_flag);

  try {
    if (gen->parsed()) {
      const auto cfg = gen_args.resolve();
      const fs::path dir = out / "data" / hash_hex(cfg.hash());
      fs::create_directories(dir);
      dataset_write(make_split(cfg, false), dir / "train.sfl");
      dataset_write(make_split(cfg, true), dir / "eval.sfl");
      cfg.save(dir / "config.txt");
      fmt::print("{}\n{}\n", (dir / "train.sfl").string(), (dir / "eval.sfl").string());
    } else if (train_cmd->parsed()) {
      const auto cfg = train_args.resolve();
      const auto train_data = load_or_make(cfg, train_file, false);
      const auto eval_data = load_or_make(cfg, eval_file, true);
      TrainOptions opts;
      opts.out_dir = run_dir(out / "train", cfg);
      opts.train_data = &train_data;
      opts.eval_data = &eval_data;
      if (!resume.empty()) opts.resume = resume;
      if (stop_after > 0) opts.stop_after = stop_after;
      fs::create_directories(opts.out_dir);
      cfg.save(opts.out_dir / "config.txt");
      const auto result = train(cfg, opts);
      fmt::print("{}\n", result.checkpoint.string());
    } else if (eval_cmd->parsed()) {
      const auto cfg = eval_args.resolve();
      Session session(cfg);
      session.load_weights(ckpt);
      const auto eval_data = load_or_make(cfg, eval_data_file, true);
      const MetricReport m = evaluate(session, eval_data, {cfg.degradation, cfg.pose_noise});
      const std::vector<ResultRow> rows{{scenario, variant_label(cfg.model), cfg.run_seed, m, cfg.hash(), cfg.data.seed}};
      write_rows(out / "eval" / hash_hex(cfg.hash()), "results", rows);
    } else if (ablate_cmd->parsed() || study_cmd->parsed()) {
      const bool is_ablate = ablate_cmd->parsed();
      const auto cfg = (is_ablate ? ablate_args : study_args).resolve();
      StudyOptions opts;
      opts.out_dir = out / "study";
      opts.seeds = seeds;
      opts.jobs = jobs;
      opts.progress = [](const std::string& line) { spdlog::info("{}", line); };
      const auto rows = is_ablate ? ablate(cfg, opts) : perturb_study(cfg, opts);
      write_rows(out / (is_ablate ? "ablate" : "perturb"), "results", rows);
    } else if (report_cmd->parsed()) {
      const auto cfg = report_args.resolve();
      const fs::path dir = out / "report";
      if (!rows_file.empty()) {
        const auto rows = rows_from_json(read_text(rows_file));
        write_rows(dir, "results", rows);
      }
      if (!report_ckpt.empty()) {
        Session session(cfg);
        session.load_weights(report_ckpt);
        auto eval_data = make_split(cfg, true);
        eval_data.resize(std::min(renders, eval_data.size()));
        std::vector<Tensor> probs;
        evaluate(session, eval_data, {cfg.degradation, cfg.pose_noise}, nullptr, &probs);
        const std::size_t rows = cfg.world.grid.rows(), cols = cfg.world.grid.cols();
        for (std::size_t i = 0; i < eval_data.size(); ++i) {
          const Image panels[] = {render_labels(eval_data[i].label_ids(), rows, cols), render_prediction(probs[i]),
                                  render_satellite_patch(aligned_satellite(eval_data[i]), rows, cols)};
          write_ppm(dir / fmt::format("render_{:03}.ppm", i), hstack(panels));
        }
      }
      fmt::print("{}\n", dir.string());
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
