#pragma once

#include <iosfwd>
#include <optional>

#include "ofkit/config.hpp"
#include "ofkit/eval.hpp"

namespace ofkit {

// Raised when training hits a non-finite loss (CLI exit code 4).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Decoupled weight decay; bias, norm, and embedding parameters are not
// decayed. State is keyed by parameter order, so stepping is deterministic.
class AdamW {
 public:
  explicit AdamW(const OptimConfig& cfg) : cfg_(cfg) {}
  void step(ParamStore& params, double lr);

 private:
  OptimConfig cfg_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Global-norm gradient clipping; returns the pre-clip norm.
double clip_gradients(ParamStore& params, double max_norm);

// Mirrored copy for flip augmentation (pixels and boxes).
AnnotatedImage flip_scene(const AnnotatedImage& img, bool horizontal, bool vertical);

struct TrainStats {
  int iterations = 0;
  int epochs_run = 0;
  double final_loss = 0.0;
  std::string checkpoint_path;
  std::string log_path;
};

// Full training loop: JSON-lines log (iteration, epoch, lr, loss terms) and
// a checkpoint under out_dir. Deterministic for a fixed config seed.
TrainStats train_run(const RunConfig& cfg, const std::string& out_dir,
                     std::ostream* progress = nullptr);

// NMS-free inference over a dataset. threads > 1 opts into parallel
// evaluation; results merge in image order, so output does not depend on the
// thread count.
std::vector<Detection> run_inference(Detector& model, const std::vector<AnnotatedImage>& images,
                                     double score_threshold, int top_k, int threads = 1);

}  // namespace ofkit
