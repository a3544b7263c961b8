#include "ofkit/params.hpp"

#include <cmath>
#include <stdexcept>

namespace ofkit {

Var ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  Var v = Var::leaf(std::move(init), true);
  index_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
  return entries_[it->second].second;
}

int64_t ParamStore::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, v] : entries_) n += v.value().numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

void ParamStore::save(const std::string& path, const std::vector<CheckpointRecord>& extra) const {
  std::vector<CheckpointRecord> records;
  records.reserve(extra.size() + entries_.size());
  for (const auto& rec : extra) records.push_back(rec);
  for (const auto& [name, v] : entries_) records.push_back({name, v.value()});
  write_checkpoint(path, records);
}

std::map<std::string, Tensor> ParamStore::load(const std::string& path) {
  std::map<std::string, Tensor> all = read_checkpoint_map(path);
  std::map<std::string, Tensor> unknown;
  for (auto& [name, tensor] : all) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      unknown.emplace(name, std::move(tensor));
      continue;
    }
    Var v = entries_[it->second].second;
    if (v.value().shape() != tensor.shape())
      throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " +
                               tensor.shape_str() + ", model expects " + v.value().shape_str());
    Tensor& dst = v.node()->value;
    std::copy(tensor.data(), tensor.data() + tensor.numel(), dst.data());
  }
  for (const auto& [name, v] : entries_)
    if (!all.count(name))
      throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
  return unknown;
}

Tensor xavier_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(rng, -a, a);
  return t;
}

Tensor normal_init(std::vector<int64_t> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = normal(rng, 0.0, stddev);
  return t;
}

LinearParams make_linear(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                         Rng& rng, bool bias) {
  LinearParams p;
  p.w = store.add(name + "/w", xavier_uniform({in, out}, in, out, rng));
  if (bias) p.b = store.add(name + "/b", Tensor({out}));
  return p;
}

}  // namespace ofkit
