#include "satmap/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <zlib.h>

#include "satmap/nn.hpp"
#include "satmap/rng.hpp"

namespace satmap {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'F', 'L', '1'};

std::vector<float> to_f32(const Tensor& t) {
  std::vector<float> out(t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(t[i]);
  return out;
}

Tensor from_f32(Shape shape, const std::vector<float>& v) {
  return Tensor::from(std::move(shape), std::vector<double>(v.begin(), v.end()));
}

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const unsigned char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_floats(const std::vector<float>& v) {
    put(static_cast<std::uint32_t>(v.size()));
    const auto* p = reinterpret_cast<const unsigned char*>(v.data());
    bytes_.insert(bytes_.end(), p, p + v.size() * sizeof(float));
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}
  template <typename T>
  T get() {
    require(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::vector<float> get_floats() {
    const auto n = get<std::uint32_t>();
    require(std::size_t{n} * sizeof(float));
    std::vector<float> v(n);
    std::memcpy(v.data(), bytes_.data() + pos_, v.size() * sizeof(float));
    pos_ += v.size() * sizeof(float);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  void require(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DatasetError("dataset: truncated file at byte " + std::to_string(pos_));
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_;
};

std::uint32_t crc_of(const unsigned char* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace

TileConfig WorldConfig::tile() const {
  TileConfig t;
  t.resolution = tile_resolution;
  // track poses sit up to 10 m from the first pose; 5 m spare for pose noise
  t.half_extent = std::max(t.half_extent, std::hypot(grid.range_forward / 2.0, grid.range_lateral / 2.0) + 15.0);
  return t;
}

void WorldConfig::validate() const {
  grid.validate();
  patch.validate();
  if (patch.range_forward != grid.range_forward || patch.range_lateral != grid.range_lateral)
    throw std::invalid_argument("WorldConfig: satellite patch and BEV grid must cover the same range");
  if (!(tile_resolution > 0.0)) throw std::invalid_argument("WorldConfig: tile resolution must be positive");
}

Tensor Sample::sat_tensor() const { return from_f32({3, sat_lat, sat_fwd}, sat); }
Tensor Sample::obs_tensor() const { return from_f32({3, grid_h, grid_w}, obs); }
Tensor Sample::mask_tensor() const { return from_f32({1, grid_h, grid_w}, mask); }

std::vector<std::uint8_t> Sample::label_ids() const {
  std::vector<std::uint8_t> ids(labels.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint8_t>(labels[i]);
  return ids;
}

GridConfig Sample::grid() const {
  GridConfig g;
  g.range_forward = range_forward;
  g.range_lateral = range_lateral;
  g.cell = range_forward / grid_h;
  return g;
}

std::uint64_t sample_seed(std::uint64_t data_seed, bool eval_split, std::size_t index) {
  return mix_seed(mix_seed(data_seed, eval_split ? 0xE7A1 : 0x7A1), index);
}

Sample make_sample(std::uint64_t seed, const WorldConfig& cfg) {
  cfg.validate();
  const SceneSpec scene = gen_scene(seed, cfg.layout);
  const EgoPose pose = scene.ego_track[mix_seed(seed, 0x90e) % scene.ego_track.size()];
  const SatTile tile = render_satellite(scene, cfg.tile());
  const EgoObservation obs = render_ego_observation(scene, pose, cfg.grid, cfg.observation, mix_seed(seed, 0x0b5e));
  const GroundTruth gt = rasterize_gt(scene, pose, cfg.grid);

  Sample s;
  s.seed = seed;
  s.range_forward = cfg.grid.range_forward;
  s.range_lateral = cfg.grid.range_lateral;
  s.grid_h = static_cast<std::uint32_t>(cfg.grid.rows());
  s.grid_w = static_cast<std::uint32_t>(cfg.grid.cols());
  s.sat_lat = static_cast<std::uint32_t>(cfg.patch.lateral_px);
  s.sat_fwd = static_cast<std::uint32_t>(cfg.patch.forward_px);
  s.pose = pose;
  s.sat = to_f32(crop_patch(tile, pose, cfg.patch));
  s.obs = to_f32(obs.raster);
  s.mask = to_f32(obs.mask);
  s.labels.assign(gt.labels.begin(), gt.labels.end());
  for (const VectorInstance& inst : gt.instances) {
    VectorInstance rounded{inst.cls, {}};
    // out of line: GCC 11 at -O3 folds the paired float casts away when inlined
    for (Vec2 p : inst.points) rounded.points.push_back({nn::round_to_float(p.x), nn::round_to_float(p.y)});
    s.gt.push_back(std::move(rounded));
  }
  return s;
}

Tensor recrop_satellite(const Sample& sample, const WorldConfig& cfg, const EgoPose& pose) {
  const SceneSpec scene = gen_scene(sample.seed, cfg.layout);
  const SatTile tile = render_satellite(scene, cfg.tile());
  Tensor crop = crop_patch(tile, pose, cfg.patch);
  for (double& v : crop.mutable_data()) v = static_cast<float>(v);
  return crop;
}

void dataset_write(const std::vector<Sample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("dataset: cannot open " + path.string() + " for writing");
  Writer header;
  for (char c : kMagic) header.put(c);
  header.put(kDatasetVersion);
  header.put(static_cast<std::uint32_t>(samples.size()));
  out.write(reinterpret_cast<const char*>(header.bytes().data()), static_cast<std::streamsize>(header.bytes().size()));

  for (const Sample& s : samples) {
    Writer w;
    w.put(s.seed);
    w.put(s.range_forward);
    w.put(s.range_lateral);
    w.put(s.grid_h);
    w.put(s.grid_w);
    w.put(s.sat_lat);
    w.put(s.sat_fwd);
    w.put(s.pose.x);
    w.put(s.pose.y);
    w.put(s.pose.heading);
    w.put_floats(s.sat);
    w.put_floats(s.obs);
    w.put_floats(s.mask);
    w.put_floats(s.labels);
    Writer gt;
    gt.put(static_cast<std::uint32_t>(s.gt.size()));
    for (const VectorInstance& inst : s.gt) {
      gt.put(static_cast<std::uint8_t>(inst.cls));
      gt.put(static_cast<std::uint16_t>(inst.points.size()));
      for (Vec2 p : inst.points) {
        gt.put(static_cast<float>(p.x));
        gt.put(static_cast<float>(p.y));
      }
    }
    w.put(static_cast<std::uint32_t>(gt.bytes().size()));
    w.bytes().insert(w.bytes().end(), gt.bytes().begin(), gt.bytes().end());
    w.put(crc_of(w.bytes().data(), w.bytes().size()));
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
  }
  if (!out) throw DatasetError("dataset: write to " + path.string() + " failed");
}

std::vector<Sample> dataset_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("dataset: cannot open " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  Reader r(bytes, 0);
  for (char c : kMagic)
    if (r.get<char>() != c) throw DatasetError("dataset: bad magic in " + path.string());
  const auto version = r.get<std::uint32_t>();
  if (version != kDatasetVersion)
    throw DatasetError("dataset: version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kDatasetVersion) + ")");
  const auto count = r.get<std::uint32_t>();

  std::vector<Sample> samples;
  samples.reserve(count);
  std::size_t pos = r.pos();
  for (std::uint32_t k = 0; k < count; ++k) {
    Reader rec(bytes, pos);
    Sample s;
    s.seed = rec.get<std::uint64_t>();
    s.range_forward = rec.get<double>();
    s.range_lateral = rec.get<double>();
    s.grid_h = rec.get<std::uint32_t>();
    s.grid_w = rec.get<std::uint32_t>();
    s.sat_lat = rec.get<std::uint32_t>();
    s.sat_fwd = rec.get<std::uint32_t>();
    s.pose.x = rec.get<double>();
    s.pose.y = rec.get<double>();
    s.pose.heading = rec.get<double>();
    s.sat = rec.get_floats();
    s.obs = rec.get_floats();
    s.mask = rec.get_floats();
    s.labels = rec.get_floats();
    const auto gt_bytes = rec.get<std::uint32_t>();
    const std::size_t gt_end = rec.pos() + gt_bytes;
    const auto n_inst = rec.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_inst; ++i) {
      VectorInstance inst;
      inst.cls = static_cast<MapClass>(rec.get<std::uint8_t>());
      const auto npts = rec.get<std::uint16_t>();
      for (std::uint16_t p = 0; p < npts; ++p) {
        const float x = rec.get<float>();
        const float y = rec.get<float>();
        inst.points.push_back({x, y});
      }
      s.gt.push_back(std::move(inst));
    }
    const std::size_t body_end = rec.pos();
    const auto stored = rec.get<std::uint32_t>();
    if (body_end != gt_end || stored != crc_of(bytes.data() + pos, body_end - pos))
      throw DatasetError("dataset: checksum mismatch in record " + std::to_string(k));
    const std::size_t cells = std::size_t{s.grid_h} * s.grid_w;
    if (s.obs.size() != 3 * cells || s.mask.size() != cells || s.labels.size() != cells ||
        s.sat.size() != 3 * std::size_t{s.sat_lat} * s.sat_fwd)
      throw DatasetError("dataset: raster sizes disagree with the geometry header in record " + std::to_string(k));
    pos = rec.pos();
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace satmap
