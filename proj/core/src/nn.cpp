#include "satmap/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace satmap::nn {

Tensor ParamStore::create(const std::string& name, Shape shape) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::out_of_range("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

std::size_t ParamStore::scalar_count() const { return scalar_count_with_prefix(""); }

std::size_t ParamStore::scalar_count_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_)
    if (name.compare(0, prefix.size(), prefix) == 0) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng, double gain2) {
  const double bound = std::sqrt(3.0 * gain2 / static_cast<double>(fan_in));
  for (double& v : t.mutable_data()) v = round_to_float(rng.uniform(-bound, bound));
}

Conv2d Conv2d::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                      std::size_t stride, std::size_t padding, Rng& rng) {
  Conv2d c{store.create(name + ".weight", {out, in, k, k}), store.create(name + ".bias", {out}), stride, padding};
  kaiming_uniform(c.weight, in * k * k, rng, 2.0);
  return c;
}

Linear Linear::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                      bool gelu_follows) {
  Linear l{store.create(name + ".weight", {out, in}), store.create(name + ".bias", {out})};
  kaiming_uniform(l.weight, in, rng, gelu_follows ? 2.0 : 1.0);
  return l;
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, std::size_t channels) {
  LayerNorm n{store.create(name + ".weight", {channels}), store.create(name + ".bias", {channels})};
  for (double& v : n.weight.mutable_data()) v = 1.0;
  return n;
}

}  // namespace satmap::nn
