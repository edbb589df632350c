#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "satmap/trainer.hpp"

namespace satmap {

inline constexpr const char* kCsvHeader = "scenario,variant,seed,AP_div,AP_ped,AP_bou,mAP";

/// AP values are written in points (x100).
std::string rows_to_csv(std::span<const ResultRow> rows);
std::string rows_to_json(std::span<const ResultRow> rows);
std::vector<ResultRow> rows_from_json(const std::string& text);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

struct CellSummary {
  std::string scenario;
  std::string variant;
  std::size_t runs = 0;
  double mean_map = 0.0;  // points
  double std_map = 0.0;   // sample standard deviation, points
};

/// Mean and standard deviation of mAP per (scenario, variant), first-seen order.
std::vector<CellSummary> summarize(std::span<const ResultRow> rows);
std::string summary_to_csv(std::span<const CellSummary> cells);

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;
  friend bool operator==(const Image&, const Image&) = default;
};

/// Class-coloured label grid with forward pointing up.
Image render_labels(std::span<const std::uint8_t> labels, std::size_t rows, std::size_t cols);
/// Argmax of a [4, H, W] probability map, rendered like labels.
Image render_prediction(const Tensor& probs);
/// Aligned satellite patch [3, H_s, W_s] resampled (nearest) to rows x cols.
Image render_satellite_patch(const Tensor& aligned, std::size_t rows, std::size_t cols);
/// Panels side by side with a 2 px white gutter.
Image hstack(std::span<const Image> panels);
void write_ppm(const std::filesystem::path& path, const Image& image);

}  // namespace satmap
