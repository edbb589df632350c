#include "satmap/optim.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <zlib.h>

namespace satmap {

double cosine_lr(const OptimConfig& cfg, std::size_t step) {
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.steps));
  double lr = cfg.lr_floor + 0.5 * (cfg.lr - cfg.lr_floor) * (1.0 + std::cos(std::numbers::pi * progress));
  if (step < cfg.warmup) lr *= static_cast<double>(step + 1) / static_cast<double>(cfg.warmup);
  return lr;
}

AdamW::AdamW(const nn::ParamStore& params, OptimConfig cfg) : cfg_(cfg) {
  for (const auto& [name, t] : params.entries()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::step(nn::ParamStore& params, std::size_t step) {
  const auto& entries = params.entries();
  if (entries.size() != m_.size()) throw std::logic_error("AdamW: parameter set changed since construction");
  for (const auto& [name, t] : entries) {
    for (double g : t.grad())
      if (!std::isfinite(g))
        throw NumericError("optimizer step " + std::to_string(step) + ": non-finite gradient in parameter " + name);
  }
  const double lr = cosine_lr(cfg_, step);
  const double t = static_cast<double>(step + 1);
  const double c1 = 1.0 - std::pow(kBeta1, t), c2 = 1.0 - std::pow(kBeta2, t);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor p = entries[k].second;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = nn::round_to_float(kBeta1 * m[i] + (1.0 - kBeta1) * g[i]);
      v[i] = nn::round_to_float(kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i]);
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      w[i] = nn::round_to_float(w[i] * (1.0 - lr * cfg_.weight_decay) - lr * update);
    }
  }
}

namespace {

constexpr char kMagic[4] = {'S', 'F', 'C', 'K'};

template <typename T>
void put(std::vector<unsigned char>& out, T value) {
  const auto* p = reinterpret_cast<const unsigned char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

void put_tensor(std::vector<unsigned char>& out, const std::string& name, const Shape& shape,
                std::span<const double> values) {
  put(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t e : shape) put(out, static_cast<std::uint64_t>(e));
  for (double v : values) put(out, static_cast<float>(v));
}

class Cursor {
 public:
  explicit Cursor(const std::vector<unsigned char>& b, std::size_t end) : bytes_(b), end_(end) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > end_) throw CheckpointError("checkpoint: truncated file");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    if (pos_ + n > end_) throw CheckpointError("checkpoint: truncated file");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header, const nn::ParamStore& params,
                     const AdamW* optimizer) {
  std::vector<unsigned char> bytes;
  bytes.insert(bytes.end(), std::begin(kMagic), std::end(kMagic));
  put(bytes, kCheckpointVersion);
  put(bytes, header.config_hash);
  put(bytes, header.step);
  const auto& entries = params.entries();
  const std::size_t moments = optimizer ? 2 * entries.size() : 0;
  put(bytes, static_cast<std::uint32_t>(entries.size() + moments));
  for (const auto& [name, t] : entries) put_tensor(bytes, name, t.shape(), t.data());
  if (optimizer) {
    for (std::size_t k = 0; k < entries.size(); ++k)
      put_tensor(bytes, "adam.m/" + entries[k].first, entries[k].second.shape(), optimizer->first_moments()[k]);
    for (std::size_t k = 0; k < entries.size(); ++k)
      put_tensor(bytes, "adam.v/" + entries[k].first, entries[k].second.shape(), optimizer->second_moments()[k]);
  }
  put(bytes, static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size()))));
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointHeader load_checkpoint(const std::filesystem::path& path, nn::ParamStore& params, AdamW* optimizer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() < 4 + 4 + 8 + 8 + 4 + 4) throw CheckpointError("checkpoint: truncated file");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (stored_crc != crc32(crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size() - 4)))
    throw CheckpointError("checkpoint: checksum mismatch in " + path.string());

  Cursor c(bytes, bytes.size() - 4);
  if (c.get_string(4) != std::string(kMagic, 4)) throw CheckpointError("checkpoint: bad magic");
  const auto version = c.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  CheckpointHeader header;
  header.config_hash = c.get<std::uint64_t>();
  header.step = c.get<std::uint64_t>();
  const auto count = c.get<std::uint32_t>();
  std::map<std::string, StoredTensor> stored;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = c.get_string(c.get<std::uint32_t>());
    StoredTensor t;
    const auto rank = c.get<std::uint32_t>();
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(static_cast<std::size_t>(c.get<std::uint64_t>()));
    t.values.resize(shape_numel(t.shape));
    for (double& v : t.values) v = c.get<float>();
    stored.emplace(name, std::move(t));
  }
  if (!c.done()) throw CheckpointError("checkpoint: trailing bytes before checksum");

  auto take = [&](const std::string& name, const Shape& shape) -> const std::vector<double>& {
    const auto it = stored.find(name);
    if (it == stored.end()) throw CheckpointError("checkpoint: missing tensor " + name);
    if (it->second.shape != shape)
      throw CheckpointError("checkpoint: tensor " + name + " has shape " + shape_str(it->second.shape) +
                            ", expected " + shape_str(shape));
    return it->second.values;
  };
  const auto& entries = params.entries();
  for (const auto& [name, t] : entries) {
    const auto& v = take(name, t.shape());
    Tensor p = t;
    std::copy(v.begin(), v.end(), p.mutable_data().begin());
  }
  if (optimizer) {
    for (std::size_t k = 0; k < entries.size(); ++k) {
      optimizer->first_moments()[k] = take("adam.m/" + entries[k].first, entries[k].second.shape());
      optimizer->second_moments()[k] = take("adam.v/" + entries[k].first, entries[k].second.shape());
    }
  }
  return header;
}

}  // namespace satmap
