#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "satmap/dataset.hpp"
#include "satmap/model.hpp"

namespace satmap {

struct OptimConfig {
  double lr = 2e-4;
  double lr_floor = 0.0;
  double weight_decay = 0.01;
  std::size_t steps = 3000;
  std::size_t warmup = 0;
  std::size_t batch = 4;
  std::size_t eval_every = 500;
};

struct DataConfig {
  std::uint64_t seed = 1;
  std::size_t train_size = 500;
  std::size_t eval_size = 100;
};

struct PoseNoise {
  double sigma_t = 0.0;  // metres
  double sigma_r = 0.0;  // radians
  std::uint64_t seed = 7;
};

/// A complete run description. Serialises to flat `key = value` lines with
/// dotted keys; the hash is FNV-1a 64 over that canonical text.
struct ExperimentConfig {
  WorldConfig world;
  ModelConfig model;
  DataConfig data;
  OptimConfig optim;
  DegradationSpec degradation;
  PoseNoise pose_noise;
  ApConfig eval;
  std::uint64_t run_seed = 0;

  /// Assigns one dotted key from its text form; throws on unknown keys or
  /// malformed values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  std::string serialize() const;
  std::uint64_t hash() const;
  void validate() const;

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

std::string hash_hex(std::uint64_t hash);

/// FNV-1a 64.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace satmap
