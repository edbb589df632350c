#include "satmap/report.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <numeric>
#include <nlohmann/json.hpp>
#include <sstream>

namespace satmap {

namespace {

double points(double ap) { return 100.0 * ap; }

}  // namespace

std::string rows_to_csv(std::span<const ResultRow> rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const ResultRow& r : rows)
    out += fmt::format("{},{},{},{:.4f},{:.4f},{:.4f},{:.4f}\n", r.scenario, r.variant, r.seed,
                       points(r.metrics.ap_div()), points(r.metrics.ap_ped()), points(r.metrics.ap_bou()),
                       points(r.metrics.map));
  return out;
}

std::string rows_to_json(std::span<const ResultRow> rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const ResultRow& r : rows) {
    arr.push_back({{"scenario", r.scenario},
                   {"variant", r.variant},
                   {"seed", r.seed},
                   {"data_seed", r.data_seed},
                   {"config_hash", hash_hex(r.config_hash)},
                   {"AP_div", r.metrics.ap_div()},
                   {"AP_ped", r.metrics.ap_ped()},
                   {"AP_bou", r.metrics.ap_bou()},
                   {"mAP", r.metrics.map}});
  }
  return arr.dump(2) + "\n";
}

std::vector<ResultRow> rows_from_json(const std::string& text) {
  const auto arr = nlohmann::json::parse(text);
  std::vector<ResultRow> rows;
  for (const auto& j : arr) {
    ResultRow r;
    r.scenario = j.at("scenario").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.data_seed = j.at("data_seed").get<std::uint64_t>();
    r.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    r.metrics.per_class = {j.at("AP_div").get<double>(), j.at("AP_ped").get<double>(), j.at("AP_bou").get<double>()};
    r.metrics.map = j.at("mAP").get<double>();
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("report: cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("report: write to " + path.string() + " failed");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("report: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<CellSummary> summarize(std::span<const ResultRow> rows) {
  std::vector<CellSummary> cells;
  std::vector<std::vector<double>> values;
  for (const ResultRow& r : rows) {
    auto it = std::find_if(cells.begin(), cells.end(),
                           [&](const CellSummary& c) { return c.scenario == r.scenario && c.variant == r.variant; });
    if (it == cells.end()) {
      cells.push_back({r.scenario, r.variant});
      values.emplace_back();
      it = cells.end() - 1;
    }
    values[static_cast<std::size_t>(it - cells.begin())].push_back(points(r.metrics.map));
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& v = values[i];
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    cells[i].runs = v.size();
    cells[i].mean_map = mean;
    cells[i].std_map = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  return cells;
}

std::string summary_to_csv(std::span<const CellSummary> cells) {
  std::string out = "scenario,variant,runs,mAP_mean,mAP_std\n";
  for (const CellSummary& c : cells)
    out += fmt::format("{},{},{},{:.4f},{:.4f}\n", c.scenario, c.variant, c.runs, c.mean_map, c.std_map);
  return out;
}

namespace {

constexpr std::uint8_t kPalette[kNumClasses][3] = {{24, 24, 28}, {250, 200, 40}, {60, 200, 90}, {230, 70, 60}};

}  // namespace

Image render_labels(std::span<const std::uint8_t> labels, std::size_t rows, std::size_t cols) {
  if (labels.size() != rows * cols) throw std::invalid_argument("render_labels: label count does not match the grid");
  Image img{cols, rows, std::vector<std::uint8_t>(rows * cols * 3)};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::uint8_t l = std::min<std::uint8_t>(labels[r * cols + c], kNumClasses - 1);
      const std::size_t y = rows - 1 - r;
      std::copy_n(kPalette[l], 3, img.rgb.begin() + static_cast<std::ptrdiff_t>((y * cols + c) * 3));
    }
  return img;
}

Image render_prediction(const Tensor& probs) {
  if (probs.rank() != 3 || probs.dim(0) != kNumClasses) throw ShapeError("render_prediction: expected [4,H,W]");
  const std::size_t rows = probs.dim(1), cols = probs.dim(2), plane = rows * cols;
  std::vector<std::uint8_t> labels(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < kNumClasses; ++k)
      if (probs[k * plane + i] > probs[best * plane + i]) best = k;
    labels[i] = static_cast<std::uint8_t>(best);
  }
  return render_labels(labels, rows, cols);
}

Image render_satellite_patch(const Tensor& aligned, std::size_t rows, std::size_t cols) {
  if (aligned.rank() != 3 || aligned.dim(0) != 3) throw ShapeError("render_satellite_patch: expected [3,H,W]");
  const std::size_t h = aligned.dim(1), w = aligned.dim(2);
  Image img{cols, rows, std::vector<std::uint8_t>(rows * cols * 3)};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t sr = std::min(h - 1, (2 * r + 1) * h / (2 * rows));
      const std::size_t sc = std::min(w - 1, (2 * c + 1) * w / (2 * cols));
      const std::size_t y = rows - 1 - r;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(aligned[(ch * h + sr) * w + sc], 0.0, 1.0);
        img.rgb[(y * cols + c) * 3 + ch] = static_cast<std::uint8_t>(std::lround(255.0 * v));
      }
    }
  return img;
}

Image hstack(std::span<const Image> panels) {
  constexpr std::size_t kGutter = 2;
  Image out;
  for (const Image& p : panels) out.height = std::max(out.height, p.height);
  for (const Image& p : panels) out.width += p.width;
  if (!panels.empty()) out.width += kGutter * (panels.size() - 1);
  out.rgb.assign(out.width * out.height * 3, 255);
  std::size_t x0 = 0;
  for (const Image& p : panels) {
    for (std::size_t y = 0; y < p.height; ++y)
      std::copy_n(p.rgb.begin() + static_cast<std::ptrdiff_t>(y * p.width * 3), p.width * 3,
                  out.rgb.begin() + static_cast<std::ptrdiff_t>((y * out.width + x0) * 3));
    x0 += p.width + kGutter;
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("report: cannot write " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw std::runtime_error("report: write to " + path.string() + " failed");
}

}  // namespace satmap
