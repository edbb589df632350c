#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "satmap/config.hpp"
#include "satmap/nn.hpp"

namespace satmap {

/// lr(step) = floor + (lr0 - floor) * (1 + cos(pi * step / total)) / 2,
/// scaled by (step + 1) / warmup during warmup.
double cosine_lr(const OptimConfig& cfg, std::size_t step);

/// Adaptive-moment optimizer with decoupled weight decay. Parameters and
/// moments are rounded to binary32 after every update.
class AdamW {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  AdamW(const nn::ParamStore& params, OptimConfig cfg);

  /// Applies the update for 0-based `step` using the gradients currently held
  /// by the parameters. Throws NumericError naming the step and parameter on a
  /// non-finite gradient, before touching any value.
  void step(nn::ParamStore& params, std::size_t step);

  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;  // number of completed optimizer steps
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header, const nn::ParamStore& params,
                     const AdamW* optimizer);

/// Restores into existing parameters (names and shapes must match). Moments
/// are restored when `optimizer` is given; they must then be present.
CheckpointHeader load_checkpoint(const std::filesystem::path& path, nn::ParamStore& params, AdamW* optimizer);

}  // namespace satmap
