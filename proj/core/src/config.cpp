#include "satmap/config.hpp"

#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace satmap {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw std::invalid_argument("config: key '" + key + "' expects " + expected + ", got '" + value + "'");
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::vector<std::string> split_list(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, sep);) out.push_back(trim(item));
  return out;
}

std::pair<std::size_t, std::size_t> to_fraction(const std::string& key, const std::string& v) {
  const auto parts = split_list(v, '/');
  if (parts.size() == 1) return {to_u64(key, parts[0]), 1};
  if (parts.size() == 2) return {to_u64(key, parts[0]), to_u64(key, parts[1])};
  bad_value(key, v, "a fraction like 8/3");
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field number_field(T ExperimentConfig::*outer, double T::*member) {
  return {[=](const ExperimentConfig& c) { return fmt_double(c.*outer.*member); },
          [=](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*outer.*member = to_double(k, v); }};
}

template <typename T, typename I>
Field integer_field(T ExperimentConfig::*outer, I T::*member) {
  return {[=](const ExperimentConfig& c) { return std::to_string(c.*outer.*member); },
          [=](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*outer.*member = static_cast<I>(to_u64(k, v));
          }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    using C = ExperimentConfig;
    t["grid.range_forward"] = {[](const C& c) { return fmt_double(c.world.grid.range_forward); },
                               [](C& c, const std::string& k, const std::string& v) {
                                 c.world.grid.range_forward = c.world.patch.range_forward = to_double(k, v);
                               }};
    t["grid.range_lateral"] = {[](const C& c) { return fmt_double(c.world.grid.range_lateral); },
                               [](C& c, const std::string& k, const std::string& v) {
                                 c.world.grid.range_lateral = c.world.patch.range_lateral = to_double(k, v);
                               }};
    t["grid.cell"] = {[](const C& c) { return fmt_double(c.world.grid.cell); },
                      [](C& c, const std::string& k, const std::string& v) { c.world.grid.cell = to_double(k, v); }};
    t["sat.forward_px"] = {[](const C& c) { return std::to_string(c.world.patch.forward_px); },
                           [](C& c, const std::string& k, const std::string& v) { c.world.patch.forward_px = to_u64(k, v); }};
    t["sat.lateral_px"] = {[](const C& c) { return std::to_string(c.world.patch.lateral_px); },
                           [](C& c, const std::string& k, const std::string& v) { c.world.patch.lateral_px = to_u64(k, v); }};
    t["sat.tile_resolution"] = {[](const C& c) { return fmt_double(c.world.tile_resolution); },
                                [](C& c, const std::string& k, const std::string& v) { c.world.tile_resolution = to_double(k, v); }};
    t["obs.full_visibility_range"] = {
        [](const C& c) { return fmt_double(c.world.observation.full_visibility_range); },
        [](C& c, const std::string& k, const std::string& v) { c.world.observation.full_visibility_range = to_double(k, v); }};
    t["obs.falloff_end"] = {[](const C& c) {
                              return c.world.observation.falloff_end ? fmt_double(*c.world.observation.falloff_end)
                                                                     : std::string("edge");
                            },
                            [](C& c, const std::string& k, const std::string& v) {
                              if (v == "edge") c.world.observation.falloff_end.reset();
                              else c.world.observation.falloff_end = to_double(k, v);
                            }};
    t["obs.min_visibility"] = {[](const C& c) { return fmt_double(c.world.observation.min_visibility); },
                               [](C& c, const std::string& k, const std::string& v) {
                                 c.world.observation.min_visibility = to_double(k, v);
                               }};
    t["obs.max_wedges"] = {[](const C& c) { return std::to_string(c.world.observation.max_wedges); },
                           [](C& c, const std::string& k, const std::string& v) { c.world.observation.max_wedges = to_u64(k, v); }};
    t["obs.noise_sigma"] = {[](const C& c) { return fmt_double(c.world.observation.noise_sigma); },
                            [](C& c, const std::string& k, const std::string& v) { c.world.observation.noise_sigma = to_double(k, v); }};
    t["model.variant"] = {[](const C& c) { return std::string(variant_name(c.model.variant)); },
                          [](C& c, const std::string&, const std::string& v) { c.model.variant = parse_variant(v); }};
    t["model.widths"] = {[](const C& c) {
                           const auto& w = c.model.plan.widths;
                           return fmt::format("{},{},{},{},{}", w[0], w[1], w[2], w[3], w[4]);
                         },
                         [](C& c, const std::string& k, const std::string& v) {
                           const auto parts = split_list(v, ',');
                           if (parts.size() != 5) bad_value(k, v, "five comma-separated widths");
                           for (std::size_t i = 0; i < 5; ++i) c.model.plan.widths[i] = to_u64(k, parts[i]);
                         }};
    t["model.channels"] = {[](const C& c) { return std::to_string(c.model.plan.out_channels); },
                           [](C& c, const std::string& k, const std::string& v) { c.model.plan.out_channels = to_u64(k, v); }};
    t["gated.gamma"] = {[](const C& c) { return fmt::format("{}/{}", c.model.gated.gamma_num, c.model.gated.gamma_den); },
                        [](C& c, const std::string& k, const std::string& v) {
                          std::tie(c.model.gated.gamma_num, c.model.gated.gamma_den) = to_fraction(k, v);
                        }};
    t["gated.alpha"] = {[](const C& c) { return fmt::format("{}/{}", c.model.gated.alpha_num, c.model.gated.alpha_den); },
                        [](C& c, const std::string& k, const std::string& v) {
                          std::tie(c.model.gated.alpha_num, c.model.gated.alpha_den) = to_fraction(k, v);
                        }};
    t["gated.local_kernel"] = {[](const C& c) { return std::to_string(c.model.gated.local_kernel); },
                               [](C& c, const std::string& k, const std::string& v) { c.model.gated.local_kernel = to_u64(k, v); }};
    t["fusion.kind"] = {[](const C& c) { return std::string(fusion_name(c.model.fusion.kind)); },
                        [](C& c, const std::string&, const std::string& v) { c.model.fusion.kind = parse_fusion(v); }};
    t["fusion.patch_size"] = {[](const C& c) { return std::to_string(c.model.fusion.patch_size); },
                              [](C& c, const std::string& k, const std::string& v) { c.model.fusion.patch_size = to_u64(k, v); }};
    t["data.seed"] = integer_field(&C::data, &DataConfig::seed);
    t["data.train_size"] = integer_field(&C::data, &DataConfig::train_size);
    t["data.eval_size"] = integer_field(&C::data, &DataConfig::eval_size);
    t["optim.lr"] = number_field(&C::optim, &OptimConfig::lr);
    t["optim.lr_floor"] = number_field(&C::optim, &OptimConfig::lr_floor);
    t["optim.weight_decay"] = number_field(&C::optim, &OptimConfig::weight_decay);
    t["optim.steps"] = integer_field(&C::optim, &OptimConfig::steps);
    t["optim.warmup"] = integer_field(&C::optim, &OptimConfig::warmup);
    t["optim.batch"] = integer_field(&C::optim, &OptimConfig::batch);
    t["optim.eval_every"] = integer_field(&C::optim, &OptimConfig::eval_every);
    t["degradation.kind"] = {[](const C& c) { return std::string(degradation_name(c.degradation.kind)); },
                             [](C& c, const std::string&, const std::string& v) { c.degradation.kind = parse_degradation(v); }};
    t["degradation.severity"] = number_field(&C::degradation, &DegradationSpec::severity);
    t["degradation.seed"] = integer_field(&C::degradation, &DegradationSpec::rng_seed);
    t["pose_noise.sigma_t"] = number_field(&C::pose_noise, &PoseNoise::sigma_t);
    t["pose_noise.sigma_r"] = number_field(&C::pose_noise, &PoseNoise::sigma_r);
    t["pose_noise.seed"] = integer_field(&C::pose_noise, &PoseNoise::seed);
    t["eval.thresholds"] = {[](const C& c) {
                              std::string out;
                              for (double t : c.eval.thresholds) out += (out.empty() ? "" : ",") + fmt_double(t);
                              return out;
                            },
                            [](C& c, const std::string& k, const std::string& v) {
                              c.eval.thresholds.clear();
                              for (const auto& part : split_list(v, ',')) c.eval.thresholds.push_back(to_double(k, part));
                            }};
    t["eval.resample_n"] = integer_field(&C::eval, &ApConfig::resample_n);
    t["run.seed"] = {[](const C& c) { return std::to_string(c.run_seed); },
                     [](C& c, const std::string& k, const std::string& v) { c.run_seed = to_u64(k, v); }};
    return t;
  }();
  return table;
}

const Field& field(const std::string& key) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  return it->second;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, key, trim(value)); }

std::string ExperimentConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

std::string ExperimentConfig::serialize() const {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a64(serialize()); }

std::string hash_hex(std::uint64_t hash) { return fmt::format("{:016x}", hash); }

void ExperimentConfig::validate() const {
  world.validate();
  model.plan.validate(model.gated);
  degradation.validate();
  eval.validate();
  if (optim.batch == 0 || optim.steps == 0) throw std::invalid_argument("config: optim.steps and optim.batch must be positive");
  if (!(optim.lr > 0.0) || optim.lr_floor < 0.0 || optim.lr_floor > optim.lr)
    throw std::invalid_argument("config: need 0 <= optim.lr_floor <= optim.lr and optim.lr > 0");
  if (data.train_size == 0 || data.eval_size == 0) throw std::invalid_argument("config: dataset sizes must be positive");
  if (pose_noise.sigma_t < 0.0 || pose_noise.sigma_r < 0.0) throw std::invalid_argument("config: pose noise must be >= 0");
  if (model.fusion.kind == FusionKind::patch_cross_attention && model.variant != ModelVariant::bev_only &&
      (world.grid.rows() % model.fusion.patch_size != 0 || world.grid.cols() % model.fusion.patch_size != 0))
    throw std::invalid_argument("config: fusion.patch_size must divide the grid extents");
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(ss, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected 'key = value'");
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path.string());
  out << serialize();
}

}  // namespace satmap
