#include "satmap/synth_world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "satmap/rng.hpp"

namespace satmap {

namespace {

constexpr double kPi = std::numbers::pi;

constexpr double kDividerWidth = 0.5;
constexpr double kCrossingWidth = 0.8;
constexpr double kBoundaryWidth = 0.6;

/// Deterministic value noise in [-1, 1] keyed by a seed and an index.
double hash_noise(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t h = mix_seed(seed, index);
  return static_cast<double>(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

struct RoadFrame {
  Vec2 origin;
  double heading;
  Vec2 to_world(double u, double v) const {
    const double c = std::cos(heading), s = std::sin(heading);
    return {origin.x + c * u - s * v, origin.y + s * u + c * v};
  }
  Polyline line(std::initializer_list<std::pair<double, double>> uv) const {
    Polyline p;
    for (auto [u, v] : uv) p.push_back(to_world(u, v));
    return p;
  }
};

/// Straight run from u0 to u1 at lateral v, sampled every 10 m.
Polyline along(const RoadFrame& f, double u0, double u1, double v) {
  Polyline p;
  const int n = std::max(1, static_cast<int>(std::ceil(std::abs(u1 - u0) / 10.0)));
  for (int k = 0; k <= n; ++k) p.push_back(f.to_world(u0 + (u1 - u0) * k / n, v));
  return p;
}

Polyline across(const RoadFrame& f, double v0, double v1, double u) {
  Polyline p;
  const int n = std::max(1, static_cast<int>(std::ceil(std::abs(v1 - v0) / 10.0)));
  for (int k = 0; k <= n; ++k) p.push_back(f.to_world(u, v0 + (v1 - v0) * k / n));
  return p;
}

Polyline rect_ring(const RoadFrame& f, double u0, double u1, double v0, double v1) {
  return f.line({{u0, v0}, {u1, v0}, {u1, v1}, {u0, v1}, {u0, v0}});
}

void add_nuisances(SceneSpec& scene, const RoadFrame& f, double half_width, Rng& rng) {
  const auto count = rng.integer(3, 10);
  for (std::int64_t n = 0; n < count; ++n) {
    Nuisance nu;
    nu.kind = static_cast<NuisanceKind>(rng.integer(0, 3));
    const double cu = rng.uniform(-35.0, 35.0);
    const double cv = rng.uniform(-half_width - 12.0, half_width + 12.0);
    const double r = rng.uniform(2.0, 7.0);
    const double rot = rng.uniform(-kPi, kPi);
    const double c = std::cos(rot), s = std::sin(rot);
    if (nu.kind == NuisanceKind::shadow || nu.kind == NuisanceKind::building) {
      const double a = nu.kind == NuisanceKind::shadow ? r : r * 0.8;
      const double b = nu.kind == NuisanceKind::shadow ? r * 0.5 : r * 0.8;
      for (auto [du, dv] : {std::pair{-a, -b}, std::pair{a, -b}, std::pair{a, b}, std::pair{-a, b}})
        nu.polygon.push_back(f.to_world(cu + c * du - s * dv, cv + s * du + c * dv));
    } else {
      for (int k = 0; k < 10; ++k) {
        const double ang = 2.0 * kPi * k / 10.0;
        const double rr = r * rng.uniform(0.7, 1.3);
        nu.polygon.push_back(f.to_world(cu + rr * std::cos(ang), cv + rr * std::sin(ang)));
      }
    }
    scene.nuisances.push_back(std::move(nu));
  }
}

void add_ego_track(SceneSpec& scene, const RoadFrame& f, double half_width, Rng& rng) {
  const double u0 = rng.uniform(-12.0, 0.0);
  const double v = rng.uniform(-half_width + 2.0, half_width - 2.0);
  for (int k = 0; k < 3; ++k) {
    const Vec2 p = f.to_world(u0 + 5.0 * k, v);
    scene.ego_track.push_back(EgoPose::make(p.x, p.y, f.heading + rng.uniform(-0.05, 0.05)));
  }
}

SceneSpec straight_template(std::uint64_t seed) {
  SceneSpec scene;
  scene.seed = seed;
  const RoadFrame f{{0.0, 0.0}, 0.0};
  scene.instances.push_back({MapClass::boundary, along(f, -100.0, 100.0, 7.0), kBoundaryWidth});
  scene.instances.push_back({MapClass::boundary, along(f, -100.0, 100.0, -7.0), kBoundaryWidth});
  scene.instances.push_back({MapClass::divider, along(f, -100.0, 39.0, 0.0), kDividerWidth});
  scene.instances.push_back({MapClass::divider, along(f, 45.0, 100.0, 0.0), kDividerWidth});
  scene.instances.push_back({MapClass::ped_crossing, rect_ring(f, 40.0, 44.0, -6.0, 6.0), kCrossingWidth});
  scene.ego_track = {EgoPose{0.0, 0.0, 0.0}};
  return scene;
}

/// Crossing footprint in road coordinates.
struct CrossingBox {
  double u0, u1, v0, v1;
};

/// Pieces of [a, b] left after removing every blocked interval.
std::vector<std::pair<double, double>> free_runs(double a, double b, std::vector<std::pair<double, double>> blocked) {
  std::sort(blocked.begin(), blocked.end());
  std::vector<std::pair<double, double>> runs;
  double cur = a;
  for (auto [lo, hi] : blocked) {
    if (hi <= cur || lo >= b) continue;
    if (lo - cur > 1.0) runs.push_back({cur, lo});
    cur = std::max(cur, hi);
  }
  if (b - cur > 1.0) runs.push_back({cur, b});
  return runs;
}

/// Dividers stop this far short of a crossing.
constexpr double kStopGap = 1.0;
/// Crossings end this far inside the kerb.
constexpr double kKerbInset = 1.0;

void add_along_divider(SceneSpec& scene, const RoadFrame& f, double u0, double u1, double v,
                       const std::vector<CrossingBox>& crossings) {
  std::vector<std::pair<double, double>> blocked;
  for (const auto& c : crossings)
    if (v >= c.v0 && v <= c.v1) blocked.push_back({c.u0 - kStopGap, c.u1 + kStopGap});
  for (auto [a, b] : free_runs(u0, u1, blocked)) scene.instances.push_back({MapClass::divider, along(f, a, b, v), kDividerWidth});
}

void add_across_divider(SceneSpec& scene, const RoadFrame& f, double v0, double v1, double u,
                        const std::vector<CrossingBox>& crossings) {
  std::vector<std::pair<double, double>> blocked;
  for (const auto& c : crossings)
    if (u >= c.u0 && u <= c.u1) blocked.push_back({c.v0 - kStopGap, c.v1 + kStopGap});
  for (auto [a, b] : free_runs(v0, v1, blocked)) scene.instances.push_back({MapClass::divider, across(f, a, b, u), kDividerWidth});
}

SceneSpec random_scene(std::uint64_t seed, bool intersection) {
  Rng rng(mix_seed(seed, 0x5ce7e));
  SceneSpec scene;
  scene.seed = seed;
  const RoadFrame f{{rng.uniform(-400.0, 400.0), rng.uniform(-400.0, 400.0)}, rng.uniform(-kPi, kPi)};
  const double w = rng.uniform(5.5, 9.0);
  const auto n_div = rng.integer(1, 3);
  std::vector<double> div_v;
  for (std::int64_t k = 1; k <= n_div; ++k)
    div_v.push_back(-w + 2.0 * w * static_cast<double>(k) / static_cast<double>(n_div + 1));
  const auto n_ped = rng.integer(1, 4);
  std::vector<CrossingBox> crossings;
  const double vin = w - kKerbInset;

  if (!intersection) {
    for (double v : {w, -w}) scene.instances.push_back({MapClass::boundary, along(f, -100.0, 100.0, v), kBoundaryWidth});
    int attempts = 0;
    while (static_cast<std::int64_t>(crossings.size()) < n_ped && attempts++ < 200) {
      const double u = rng.uniform(-26.0, 22.0);
      if (std::any_of(crossings.begin(), crossings.end(), [u](const CrossingBox& c) { return std::abs(c.u0 - u) < 8.0; }))
        continue;
      crossings.push_back({u, u + rng.uniform(3.0, 5.0), -vin, vin});
    }
    for (double v : div_v) add_along_divider(scene, f, -100.0, 100.0, v, crossings);
  } else {
    const double uc = rng.uniform(-15.0, 15.0);
    const double w2 = rng.uniform(5.5, 8.0);
    // kerb lines turn the corner: one L per quadrant
    for (double su : {-1.0, 1.0})
      for (double sv : {-1.0, 1.0}) {
        Polyline kerb = along(f, su * 100.0, uc + su * w2, sv * w);
        const Polyline side = across(f, sv * w, sv * 100.0, uc + su * w2);
        kerb.insert(kerb.end(), side.begin() + 1, side.end());
        scene.instances.push_back({MapClass::boundary, std::move(kerb), kBoundaryWidth});
      }

    std::vector<int> mouths = {0, 1, 2, 3};
    std::shuffle(mouths.begin(), mouths.end(), rng.engine());
    const double uin = w2 - kKerbInset;
    for (std::int64_t k = 0; k < n_ped; ++k) {
      const double depth = rng.uniform(3.0, 5.0);
      switch (mouths[static_cast<std::size_t>(k)]) {
        case 0: crossings.push_back({uc - w2 - 1.0 - depth, uc - w2 - 1.0, -vin, vin}); break;
        case 1: crossings.push_back({uc + w2 + 1.0, uc + w2 + 1.0 + depth, -vin, vin}); break;
        case 2: crossings.push_back({uc - uin, uc + uin, w + 1.0, w + 1.0 + depth}); break;
        default: crossings.push_back({uc - uin, uc + uin, -w - 1.0 - depth, -w - 1.0}); break;
      }
    }
    for (double v : div_v) {
      add_along_divider(scene, f, -100.0, uc - w2, v, crossings);
      add_along_divider(scene, f, uc + w2, 100.0, v, crossings);
    }
    add_across_divider(scene, f, w, 100.0, uc, crossings);
    add_across_divider(scene, f, -100.0, -w, uc, crossings);
  }
  for (const auto& c : crossings)
    scene.instances.push_back({MapClass::ped_crossing, rect_ring(f, c.u0, c.u1, c.v0, c.v1), kCrossingWidth});
  add_nuisances(scene, f, w, rng);
  add_ego_track(scene, f, w, rng);
  return scene;
}

/// Calls fn(row, col) for every cell within half_width of the ego polyline.
template <typename Fn>
void stroke_cells(const GridConfig& grid, const Polyline& line, double half_width, Fn fn) {
  const auto rows = static_cast<std::ptrdiff_t>(grid.rows()), cols = static_cast<std::ptrdiff_t>(grid.cols());
  const double reach_r = half_width / grid.cell_forward() + 1.0, reach_c = half_width / grid.cell_lateral() + 1.0;
  for (std::size_t s = 0; s + 1 < line.size(); ++s) {
    const Vec2 a = grid.ego_to_cell(line[s]), b = grid.ego_to_cell(line[s + 1]);
    const auto r0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(std::min(a.x, b.x) - reach_r)));
    const auto r1 = std::min<std::ptrdiff_t>(rows - 1, static_cast<std::ptrdiff_t>(std::ceil(std::max(a.x, b.x) + reach_r)));
    const auto c0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(std::min(a.y, b.y) - reach_c)));
    const auto c1 = std::min<std::ptrdiff_t>(cols - 1, static_cast<std::ptrdiff_t>(std::ceil(std::max(a.y, b.y) + reach_c)));
    for (std::ptrdiff_t r = r0; r <= r1; ++r)
      for (std::ptrdiff_t c = c0; c <= c1; ++c) {
        const Vec2 p = grid.cell_center(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
        if (point_segment_distance(p, line[s], line[s + 1]) <= half_width + 1e-9)
          fn(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      }
  }
}

Polyline to_ego(const Polyline& world, const EgoPose& pose) {
  Polyline out;
  out.reserve(world.size());
  for (Vec2 p : world) out.push_back(pose.world_to_ego(p));
  return out;
}

double cell_bearing(Vec2 ego) { return std::atan2(ego.y, ego.x); }

double angle_diff(double a, double b) { return std::abs(normalize_angle(a - b)); }

}  // namespace

const char* class_name(MapClass cls) {
  switch (cls) {
    case MapClass::background: return "background";
    case MapClass::divider: return "divider";
    case MapClass::ped_crossing: return "ped_crossing";
    case MapClass::boundary: return "boundary";
  }
  return "?";
}

SceneSpec gen_scene(std::uint64_t seed, SceneTemplate layout) {
  switch (layout) {
    case SceneTemplate::straight: return straight_template(seed);
    case SceneTemplate::intersection: return random_scene(seed, true);
    case SceneTemplate::random: break;
  }
  return random_scene(seed, (mix_seed(seed, 0x7e3) & 1U) != 0U);
}

std::size_t GridConfig::rows() const { return static_cast<std::size_t>(std::lround(range_forward / cell)); }
std::size_t GridConfig::cols() const { return static_cast<std::size_t>(std::lround(range_lateral / cell)); }

Vec2 GridConfig::cell_center(std::size_t row, std::size_t col) const {
  return {-range_forward / 2.0 + (static_cast<double>(row) + 0.5) * cell_forward(),
          range_lateral / 2.0 - (static_cast<double>(col) + 0.5) * cell_lateral()};
}

Vec2 GridConfig::ego_to_cell(Vec2 ego) const {
  return {(ego.x + range_forward / 2.0) / cell_forward() - 0.5, (range_lateral / 2.0 - ego.y) / cell_lateral() - 0.5};
}

double GridConfig::max_range() const { return std::hypot(range_forward / 2.0, range_lateral / 2.0); }

void GridConfig::validate() const {
  if (!(range_forward > 0.0) || !(range_lateral > 0.0) || !(cell > 0.0) || rows() == 0 || cols() == 0)
    throw std::invalid_argument("GridConfig: ranges and cell size must be positive");
}

double grid_half_width(double instance_width, const GridConfig& grid) {
  return std::max(instance_width, std::min(grid.cell_forward(), grid.cell_lateral())) / 2.0;
}

std::array<double, 3> class_albedo(MapClass cls) {
  switch (cls) {
    case MapClass::divider: return {0.92, 0.88, 0.55};
    case MapClass::ped_crossing: return {0.95, 0.95, 0.95};
    case MapClass::boundary: return {0.62, 0.58, 0.52};
    case MapClass::background: break;
  }
  return {0.25, 0.25, 0.27};
}

SatTile render_satellite(const SceneSpec& scene, const TileConfig& cfg) {
  if (scene.instances.empty() || scene.ego_track.empty()) throw std::invalid_argument("render_satellite: empty scene");
  const double res = cfg.resolution;
  const auto n = static_cast<std::size_t>(2.0 * std::ceil(cfg.half_extent / res));
  const EgoPose& centre = scene.ego_track.front();
  SatTile tile;
  tile.resolution = res;
  tile.origin = {centre.x - (static_cast<double>(n) - 1.0) / 2.0 * res,
                 centre.y + (static_cast<double>(n) - 1.0) / 2.0 * res};
  tile.raster = Tensor::zeros({3, n, n});
  auto px = tile.raster.mutable_data();
  const std::size_t plane = n * n;
  auto set = [&](std::size_t r, std::size_t c, const std::array<double, 3>& rgb) {
    for (std::size_t ch = 0; ch < 3; ++ch) px[ch * plane + r * n + c] = rgb[ch];
  };
  const std::uint64_t texture_seed = mix_seed(scene.seed, 0x7a11e);

  const auto base = class_albedo(MapClass::background);
  for (std::size_t i = 0; i < plane; ++i) {
    const double t = 0.03 * hash_noise(texture_seed, i);
    for (std::size_t ch = 0; ch < 3; ++ch) px[ch * plane + i] = base[ch] + t;
  }

  // pixel bounding box of a world-space point set grown by `margin` metres
  auto pixel_box = [&](const Polyline& pts, double margin) {
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (Vec2 p : pts) {
      const Vec2 q = tile.world_to_pixel(p);
      x0 = std::min(x0, q.x), x1 = std::max(x1, q.x), y0 = std::min(y0, q.y), y1 = std::max(y1, q.y);
    }
    const double m = margin / res + 1.0;
    const auto clampi = [n](double v) { return static_cast<std::ptrdiff_t>(std::clamp(v, -1.0, static_cast<double>(n))); };
    return std::array<std::ptrdiff_t, 4>{clampi(std::floor(y0 - m)), clampi(std::ceil(y1 + m)), clampi(std::floor(x0 - m)),
                                         clampi(std::ceil(x1 + m))};
  };

  for (MapClass cls : kMapClasses) {
    const auto albedo = class_albedo(cls);
    for (const MapInstance& inst : scene.instances) {
      if (inst.cls != cls) continue;
      const double hw = std::max(inst.width, res) / 2.0;
      for (std::size_t s = 0; s + 1 < inst.points.size(); ++s) {
        const Polyline seg = {inst.points[s], inst.points[s + 1]};
        const auto box = pixel_box(seg, hw);
        for (std::ptrdiff_t r = std::max<std::ptrdiff_t>(box[0], 0); r <= std::min<std::ptrdiff_t>(box[1], n - 1); ++r)
          for (std::ptrdiff_t c = std::max<std::ptrdiff_t>(box[2], 0); c <= std::min<std::ptrdiff_t>(box[3], n - 1); ++c) {
            const Vec2 w = tile.pixel_to_world({static_cast<double>(c), static_cast<double>(r)});
            if (point_segment_distance(w, seg[0], seg[1]) <= hw) set(static_cast<std::size_t>(r), static_cast<std::size_t>(c), albedo);
          }
      }
    }
  }

  for (std::size_t k = 0; k < scene.nuisances.size(); ++k) {
    const Nuisance& nu = scene.nuisances[k];
    const std::uint64_t nseed = mix_seed(texture_seed, 1000 + k);
    const double roof = 0.45 + 0.4 * (0.5 + 0.5 * hash_noise(nseed, 0));
    const auto box = pixel_box(nu.polygon, 0.0);
    for (std::ptrdiff_t r = std::max<std::ptrdiff_t>(box[0], 0); r <= std::min<std::ptrdiff_t>(box[1], n - 1); ++r)
      for (std::ptrdiff_t c = std::max<std::ptrdiff_t>(box[2], 0); c <= std::min<std::ptrdiff_t>(box[3], n - 1); ++c) {
        const Vec2 w = tile.pixel_to_world({static_cast<double>(c), static_cast<double>(r)});
        if (!point_in_polygon(w, nu.polygon)) continue;
        const std::size_t i = static_cast<std::size_t>(r) * n + static_cast<std::size_t>(c);
        const double t = hash_noise(nseed, i + 1);
        switch (nu.kind) {
          case NuisanceKind::shadow:
            for (std::size_t ch = 0; ch < 3; ++ch) px[ch * plane + i] *= kShadowFactor;
            break;
          case NuisanceKind::vegetation:
            px[i] = 0.16 + 0.05 * t;
            px[plane + i] = 0.36 + 0.08 * t;
            px[2 * plane + i] = 0.12 + 0.04 * t;
            break;
          case NuisanceKind::building:
            for (std::size_t ch = 0; ch < 3; ++ch) px[ch * plane + i] = std::clamp(roof + 0.06 * t, 0.0, 1.0);
            break;
          case NuisanceKind::cloud: {
            const double edge = std::min(1.0, polygon_edge_distance(w, nu.polygon) / 2.0);
            const double alpha = 0.75 * edge * edge * (3.0 - 2.0 * edge);
            for (std::size_t ch = 0; ch < 3; ++ch) px[ch * plane + i] = std::min(1.0, px[ch * plane + i] + alpha);
            break;
          }
        }
      }
  }
  for (double& v : px) v = std::clamp(v, 0.0, 1.0);
  return tile;
}

double range_visibility(double range, const ObservationConfig& cfg, const GridConfig& grid) {
  const double end = cfg.falloff_end.value_or(grid.range_forward / 2.0);
  if (range <= cfg.full_visibility_range) return 1.0;
  if (range >= end) return cfg.min_visibility;
  const double t = (range - cfg.full_visibility_range) / (end - cfg.full_visibility_range);
  return 1.0 - (1.0 - cfg.min_visibility) * t;
}

EgoObservation render_ego_observation(const SceneSpec& scene, const EgoPose& pose, const GridConfig& grid,
                                      const ObservationConfig& cfg, std::uint64_t seed) {
  grid.validate();
  const std::size_t rows = grid.rows(), cols = grid.cols(), plane = rows * cols;
  Rng rng(mix_seed(seed, 0x0b5));

  std::vector<OcclusionWedge> wedges;
  if (cfg.wedges) {
    wedges = *cfg.wedges;
  } else {
    const auto count = rng.integer(0, static_cast<std::int64_t>(cfg.max_wedges));
    for (std::int64_t k = 0; k < count; ++k) {
      OcclusionWedge w;
      w.distance = rng.uniform(4.0, 15.0);
      w.bearing = rng.uniform(-kPi, kPi);
      w.half_angle = std::atan(rng.uniform(1.0, 2.5) / w.distance);
      wedges.push_back(w);
    }
  }

  EgoObservation obs{Tensor::zeros({3, rows, cols}), Tensor::zeros({1, rows, cols})};
  auto mask = obs.mask.mutable_data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const Vec2 p = grid.cell_center(r, c);
      const double range = norm(p);
      double v = range_visibility(range, cfg, grid);
      for (const OcclusionWedge& w : wedges)
        if (range > w.distance && angle_diff(cell_bearing(p), w.bearing) <= w.half_angle) v = 0.0;
      mask[r * cols + c] = v;
    }

  auto raster = obs.raster.mutable_data();
  for (const MapInstance& inst : scene.instances) {
    const std::size_t ch = static_cast<std::size_t>(inst.cls) - 1;
    stroke_cells(grid, to_ego(inst.points, pose), grid_half_width(inst.width, grid),
                 [&](std::size_t r, std::size_t c) { raster[ch * plane + r * cols + c] = 1.0; });
  }
  for (std::size_t i = 0; i < plane; ++i) {
    const bool seen = rng.uniform() < mask[i];
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double& v = raster[ch * plane + i];
      v = (seen ? v : 0.0) + cfg.noise_sigma * rng.normal();
    }
  }
  return obs;
}

const char* degradation_name(DegradationKind kind) {
  switch (kind) {
    case DegradationKind::none: return "none";
    case DegradationKind::fog: return "fog";
    case DegradationKind::snow: return "snow";
    case DegradationKind::frame_lost: return "frame_lost";
    case DegradationKind::camera_crash: return "camera_crash";
    case DegradationKind::low_light: return "low_light";
  }
  return "?";
}

DegradationKind parse_degradation(const std::string& name) {
  for (auto k : {DegradationKind::none, DegradationKind::fog, DegradationKind::snow, DegradationKind::frame_lost,
                 DegradationKind::camera_crash, DegradationKind::low_light})
    if (name == degradation_name(k)) return k;
  throw std::invalid_argument("unknown degradation kind: " + name);
}

void DegradationSpec::validate() const {
  if (!(severity >= 0.0 && severity <= 1.0)) throw std::invalid_argument("degradation severity must lie in [0, 1]");
  if (kind == DegradationKind::none && severity != 0.0)
    throw std::invalid_argument("degradation kind none requires severity 0");
}

Tensor apply_degradation(const Tensor& raster, const GridConfig& grid, const DegradationSpec& spec) {
  spec.validate();
  if (raster.rank() != 3 || raster.dim(1) != grid.rows() || raster.dim(2) != grid.cols())
    throw ShapeError("apply_degradation: raster " + shape_str(raster.shape()) + " does not match the grid");
  Tensor out = raster.detach();
  if (spec.kind == DegradationKind::none || spec.severity == 0.0) return out;

  const std::size_t channels = raster.dim(0), rows = grid.rows(), cols = grid.cols(), plane = rows * cols;
  auto v = out.mutable_data();
  Rng rng(mix_seed(spec.rng_seed, static_cast<std::uint64_t>(spec.kind)));
  const double s = spec.severity;
  auto zero_cells_where = [&](auto pred) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        if (pred(grid.cell_center(r, c)))
          for (std::size_t ch = 0; ch < channels; ++ch) v[ch * plane + r * cols + c] = 0.0;
  };

  switch (spec.kind) {
    case DegradationKind::fog:
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const double frac = norm(grid.cell_center(r, c)) / grid.max_range();
          const double blend = s * (0.3 + 0.5 * frac);
          for (std::size_t ch = 0; ch < channels; ++ch) {
            double& x = v[ch * plane + r * cols + c];
            x += (1.0 - x) * blend;
          }
        }
      break;
    case DegradationKind::snow: {
      std::vector<std::size_t> cells(plane);
      std::iota(cells.begin(), cells.end(), std::size_t{0});
      std::shuffle(cells.begin(), cells.end(), rng.engine());
      const auto count = static_cast<std::size_t>(std::lround(s * 0.15 * static_cast<double>(plane)));
      for (std::size_t k = 0; k < count; ++k)
        for (std::size_t ch = 0; ch < channels; ++ch) v[ch * plane + cells[k]] = 1.0;
      break;
    }
    case DegradationKind::frame_lost: {
      constexpr int kSectors = 12;
      std::vector<int> order(kSectors);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng.engine());
      const auto dropped = static_cast<std::size_t>(std::lround(s * 0.5 * kSectors));
      std::vector<bool> lost(kSectors, false);
      for (std::size_t k = 0; k < dropped; ++k) lost[static_cast<std::size_t>(order[k])] = true;
      zero_cells_where([&](Vec2 p) {
        const double b = cell_bearing(p) + kPi;
        const auto sector = std::min(kSectors - 1, static_cast<int>(b / (2.0 * kPi / kSectors)));
        return lost[static_cast<std::size_t>(sector)];
      });
      break;
    }
    case DegradationKind::camera_crash: {
      const auto crashed = static_cast<std::size_t>(std::ceil(s * 3.0 - 1e-9));
      zero_cells_where([&](Vec2 p) {
        for (std::size_t k = 0; k < crashed; ++k)
          if (angle_diff(cell_bearing(p), kCrashSectors[k].bearing) <= kCrashSectors[k].half_width) return true;
        return false;
      });
      break;
    }
    case DegradationKind::low_light:
      for (double& x : v) x = x * (1.0 - 0.8 * s) + 0.05 * s * rng.normal();
      break;
    case DegradationKind::none:
      break;
  }
  return out;
}

GroundTruth rasterize_gt(const SceneSpec& scene, const EgoPose& pose, const GridConfig& grid) {
  grid.validate();
  GroundTruth gt;
  gt.labels.assign(grid.rows() * grid.cols(), 0);
  const Vec2 lo{-grid.range_forward / 2.0, -grid.range_lateral / 2.0};
  const Vec2 hi{grid.range_forward / 2.0, grid.range_lateral / 2.0};
  for (MapClass cls : kMapClasses) {
    for (const MapInstance& inst : scene.instances) {
      if (inst.cls != cls) continue;
      const Polyline ego = to_ego(inst.points, pose);
      stroke_cells(grid, ego, grid_half_width(inst.width, grid), [&](std::size_t r, std::size_t c) {
        gt.labels[r * grid.cols() + c] = static_cast<std::uint8_t>(cls);
      });
      for (Polyline& piece : clip_polyline(ego, lo, hi)) gt.instances.push_back({cls, std::move(piece)});
    }
  }
  return gt;
}

}  // namespace satmap
