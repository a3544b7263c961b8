#pragma once

#include <string>
#include <vector>

#include "ofkit/assignment.hpp"
#include "ofkit/data.hpp"
#include "ofkit/model.hpp"

namespace ofkit {

// Raised on invalid or malformed configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct OptimConfig {
  double lr = 5e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int epochs = 12;
  std::vector<int> decay_epochs = {8, 11};  // divide the rate entering the next epoch
  double decay_factor = 0.1;
  int batch_size = 4;
  double grad_clip = 0.5;  // global-norm bound, 0 disables
  int max_iterations = 0;  // 0 = run all epochs
  bool flip_augmentation = true;
};

// Learning rate for a 1-based epoch: divided by 10 after each decay epoch.
double lr_at_epoch(const OptimConfig& cfg, int epoch);

struct DataPaths {
  std::vector<std::string> classes;
  std::string train_dir;
  std::string test_dir;
};

struct EvalSettings {
  std::string protocol = "voc07";
  double score_threshold = 0.05;
  int top_k = 300;
  int threads = 1;  // parallel image evaluation, deterministic merge order
};

struct SynthSettings {
  SynthConfig scene;
  int train_count = 2000;
  int test_count = 200;
};

struct RunConfig {
  std::string profile = "default";
  uint64_t seed = 20240901;
  ModelConfig model;
  OptimConfig optim;
  LossWeights loss;
  DataPaths data;
  EvalSettings eval;
  SynthSettings synth;

  void validate() const;  // throws ConfigError
  LabelMap label_map() const { return LabelMap(data.classes); }

  static RunConfig from_json_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text, const std::string& origin);
};

}  // namespace ofkit
