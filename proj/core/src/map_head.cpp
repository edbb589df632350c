#include "satmap/map_head.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace satmap {

SegHead SegHead::create(nn::ParamStore& store, std::size_t channels, Rng& rng) {
  SegHead h;
  h.c1_ = nn::Conv2d::create(store, "head.conv1", channels, channels, 3, 1, 1, rng);
  h.c2_ = nn::Conv2d::create(store, "head.conv2", channels, channels, 3, 1, 1, rng);
  h.classifier_ = nn::Linear::create(store, "head.classifier", channels, kNumClasses, rng, false);
  return h;
}

Tensor SegHead::logits(const Tensor& features) const {
  return classifier_.cells(ops::gelu(c2_(ops::gelu(c1_(features)))));
}

namespace {

struct Cell {
  std::size_t r, c;
};

double cell_dist2(Cell a, double r, double c) {
  const double dr = static_cast<double>(a.r) - r, dc = static_cast<double>(a.c) - c;
  return dr * dr + dc * dc;
}

/// Components come out in row-major order of their first cell, cells sorted row-major.
std::vector<std::vector<Cell>> components(const std::vector<bool>& on, std::size_t rows, std::size_t cols) {
  std::vector<std::vector<Cell>> out;
  std::vector<bool> seen(on.size(), false);
  std::vector<Cell> stack;
  for (std::size_t start = 0; start < on.size(); ++start) {
    if (!on[start] || seen[start]) continue;
    std::vector<Cell> comp;
    seen[start] = true;
    stack.push_back({start / cols, start % cols});
    while (!stack.empty()) {
      const Cell cur = stack.back();
      stack.pop_back();
      comp.push_back(cur);
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const auto r = static_cast<std::ptrdiff_t>(cur.r) + dr, c = static_cast<std::ptrdiff_t>(cur.c) + dc;
          if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(rows) || c >= static_cast<std::ptrdiff_t>(cols)) continue;
          const std::size_t i = static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c);
          if (on[i] && !seen[i]) {
            seen[i] = true;
            stack.push_back({static_cast<std::size_t>(r), static_cast<std::size_t>(c)});
          }
        }
    }
    std::sort(comp.begin(), comp.end(), [](Cell a, Cell b) { return a.r != b.r ? a.r < b.r : a.c < b.c; });
    out.push_back(std::move(comp));
  }
  return out;
}

std::vector<Cell> chain(const std::vector<Cell>& comp) {
  double mr = 0.0, mc = 0.0;
  for (Cell c : comp) mr += static_cast<double>(c.r), mc += static_cast<double>(c.c);
  mr /= static_cast<double>(comp.size());
  mc /= static_cast<double>(comp.size());
  std::size_t cur = 0;
  for (std::size_t i = 1; i < comp.size(); ++i)
    if (cell_dist2(comp[i], mr, mc) > cell_dist2(comp[cur], mr, mc)) cur = i;
  std::vector<bool> used(comp.size(), false);
  std::vector<Cell> order;
  order.reserve(comp.size());
  for (std::size_t step = 0; step < comp.size(); ++step) {
    used[cur] = true;
    order.push_back(comp[cur]);
    std::size_t next = comp.size();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < comp.size(); ++i) {
      if (used[i]) continue;
      const double d = cell_dist2(comp[i], static_cast<double>(comp[cur].r), static_cast<double>(comp[cur].c));
      if (d < best) best = d, next = i;
    }
    if (next == comp.size()) break;
    cur = next;
  }
  return order;
}

}  // namespace

std::vector<PredInstance> vectorize(const Tensor& probs, const GridConfig& grid, const VectorizeConfig& cfg) {
  const std::size_t rows = grid.rows(), cols = grid.cols(), plane = rows * cols;
  if (probs.shape() != Shape{kNumClasses, rows, cols})
    throw ShapeError("vectorize: probabilities " + shape_str(probs.shape()) + " do not match the grid");
  const double tolerance = 0.5 * std::min(grid.cell_forward(), grid.cell_lateral());
  std::vector<PredInstance> out;
  for (MapClass cls : kMapClasses) {
    const std::size_t k = static_cast<std::size_t>(cls);
    std::vector<bool> on(plane);
    for (std::size_t i = 0; i < plane; ++i) on[i] = probs[k * plane + i] >= cfg.min_prob;
    std::vector<PredInstance> found;
    for (const auto& comp : components(on, rows, cols)) {
      if (comp.size() < cfg.min_cells) continue;
      double conf = 0.0;
      for (Cell c : comp) conf += probs[k * plane + c.r * cols + c.c];
      Polyline line;
      for (Cell c : chain(comp)) line.push_back(grid.cell_center(c.r, c.c));
      found.push_back({cls, simplify(line, tolerance), conf / static_cast<double>(comp.size())});
    }
    std::stable_sort(found.begin(), found.end(),
                     [](const PredInstance& a, const PredInstance& b) { return a.confidence > b.confidence; });
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

double chamfer_distance(const Polyline& a, const Polyline& b, std::size_t resample_n) {
  const Polyline pa = resample(a, resample_n), pb = resample(b, resample_n);
  auto directed = [](const Polyline& from, const Polyline& to) {
    double total = 0.0;
    for (Vec2 p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (Vec2 q : to) best = std::min(best, dist(p, q));
      total += best;
    }
    return total / static_cast<double>(from.size());
  };
  return 0.5 * (directed(pa, pb) + directed(pb, pa));
}

void ApConfig::validate() const {
  if (thresholds.empty()) throw std::invalid_argument("ApConfig: need at least one threshold");
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    if (!(thresholds[i] > 0.0) || (i > 0 && !(thresholds[i] > thresholds[i - 1])))
      throw std::invalid_argument("ApConfig: thresholds must be positive and ascending");
  if (resample_n < 2) throw std::invalid_argument("ApConfig: resample_n must be at least 2");
}

namespace {

struct RankedPred {
  std::size_t frame, index;
  double confidence;
};

/// Chamfer matrices per frame for one class, computed once for all thresholds.
struct ClassMatches {
  std::vector<RankedPred> ranked;
  std::vector<std::vector<std::vector<double>>> cd;  // [frame][pred-in-class][gt-in-class]
  std::size_t gt_total = 0;
};

ClassMatches prepare(std::span<const FrameResult> frames, MapClass cls, std::size_t resample_n) {
  ClassMatches m;
  m.cd.resize(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    std::vector<const Polyline*> gts;
    for (const VectorInstance& g : frames[f].gts)
      if (g.cls == cls) gts.push_back(&g.points);
    m.gt_total += gts.size();
    for (const PredInstance& p : frames[f].preds) {
      if (p.cls != cls) continue;
      std::vector<double> row;
      for (const Polyline* g : gts) row.push_back(chamfer_distance(p.points, *g, resample_n));
      m.ranked.push_back({f, m.cd[f].size(), p.confidence});
      m.cd[f].push_back(std::move(row));
    }
  }
  std::stable_sort(m.ranked.begin(), m.ranked.end(),
                   [](const RankedPred& a, const RankedPred& b) { return a.confidence > b.confidence; });
  return m;
}

double average_precision(const ClassMatches& m, double tau) {
  if (m.gt_total == 0) return m.ranked.empty() ? 1.0 : 0.0;
  std::vector<std::vector<bool>> matched(m.cd.size());
  for (std::size_t f = 0; f < m.cd.size(); ++f)
    matched[f].assign(m.cd[f].empty() ? 0 : m.cd[f].front().size(), false);
  std::vector<double> recall, precision;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < m.ranked.size(); ++k) {
    const RankedPred& p = m.ranked[k];
    const auto& row = m.cd[p.frame][p.index];
    std::size_t best = row.size();
    for (std::size_t g = 0; g < row.size(); ++g)
      if (!matched[p.frame][g] && (best == row.size() || row[g] < row[best])) best = g;
    if (best < row.size() && row[best] <= tau) {
      matched[p.frame][best] = true;
      ++tp;
    }
    recall.push_back(static_cast<double>(tp) / static_cast<double>(m.gt_total));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
  }
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < recall.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

}  // namespace

double ap_at_threshold(std::span<const FrameResult> frames, MapClass cls, double tau, std::size_t resample_n) {
  return average_precision(prepare(frames, cls, resample_n), tau);
}

MetricReport map_metric(std::span<const FrameResult> frames, const ApConfig& cfg) {
  cfg.validate();
  MetricReport report;
  for (std::size_t c = 0; c < 3; ++c) {
    const ClassMatches m = prepare(frames, kMapClasses[c], cfg.resample_n);
    double total = 0.0;
    for (double tau : cfg.thresholds) total += average_precision(m, tau);
    report.per_class[c] = total / static_cast<double>(cfg.thresholds.size());
  }
  report.map = (report.per_class[0] + report.per_class[1] + report.per_class[2]) / 3.0;
  return report;
}

std::array<double, kNumClasses> class_weights(std::span<const std::uint8_t> labels) {
  std::array<double, kNumClasses> counts{};
  for (std::uint8_t l : labels) {
    if (l >= kNumClasses) throw std::invalid_argument("class_weights: label out of range");
    counts[l] += 1.0;
  }
  std::array<double, kNumClasses> w{};
  for (std::size_t c = 0; c < kNumClasses; ++c)
    w[c] = counts[c] > 0.0 ? std::clamp(counts[0] / counts[c], 1.0, 20.0) : 20.0;
  w[0] = 1.0;
  return w;
}

}  // namespace satmap
