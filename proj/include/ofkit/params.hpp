#pragma once

#include <map>
#include <string>
#include <vector>

#include "ofkit/autodiff.hpp"
#include "ofkit/checkpoint.hpp"
#include "ofkit/ops.hpp"
#include "ofkit/rng.hpp"

namespace ofkit {

struct LinearParams {
  Var w;  // in x out
  Var b;  // out (may be undefined for bias-free layers)

  Var operator()(const Var& x) const { return linear(x, w, b); }
};

// Ordered collection of named trainable leaves. Creation order is the
// optimizer's iteration order, which keeps updates deterministic.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  int64_t parameter_count() const;

  void zero_grads();
  void save(const std::string& path, const std::vector<CheckpointRecord>& extra = {}) const;
  // Loads values into existing parameters; missing or mis-shaped entries are
  // an error. Unknown file records are returned for the caller to interpret.
  std::map<std::string, Tensor> load(const std::string& path);

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::map<std::string, size_t> index_;
};

Tensor xavier_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, Rng& rng);
Tensor normal_init(std::vector<int64_t> shape, double stddev, Rng& rng);

// Standard linear-layer factory: xavier weight, zero bias.
LinearParams make_linear(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                         Rng& rng, bool bias = true);

}  // namespace ofkit
