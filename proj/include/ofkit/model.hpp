#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ofkit/attention.hpp"

namespace ofkit {

struct ModelConfig {
  int num_queries = 300;
  int dim = 256;
  int depth = 6;
  int self_heads = 8;
  int cross_heads = 64;
  int cross_points = 32;
  int pe_frequencies = 64;
  double pe_temperature = 10000.0;
  double eta = 2.0;
  std::vector<int> strides = {8, 16, 32, 64};
  int num_classes = 15;
  int ffn_multiplier = 4;
  bool detach_boxes = true;  // refine a detached box each layer
  std::vector<int> backbone_channels = {16, 32, 64};  // one per stem conv
  int image_width = 800;
  int image_height = 800;

  void validate() const;
  PEConfig pe_config() const { return {pe_temperature, pe_frequencies}; }
  SelfAttentionConfig self_config() const { return {self_heads}; }
  CrossAttentionConfig cross_config() const { return {cross_heads, cross_points, eta, strides}; }
};

struct LayerPrediction {
  Var class_logits;  // N x C
  Var boxes5;        // N x 5 as (cx, cy, w, h, theta), canonical
  Var qp5;           // N x 5 as (x, y, z, r, theta) after refinement
  int layer_index = 0;

  std::vector<OrientedBox> boxes() const;
};

struct QueryDetection {
  int category = 0;
  double score = 0.0;
  OrientedBox box;
};

// (x, y, z, r, theta) rows -> (cx, cy, w, h, theta) rows, differentiable.
Var zr_to_box_rows(const Var& qp5);
// Folds theta into [-pi/2, pi/2); quarter folds negate r.
Var canonicalize_rows(const Var& qp5);

// Uniform grid of query boxes covering a W x H image: row-major centers,
// z = log2(sqrt(cell area)), r = 0, theta = 0.
Tensor initial_query_grid(int num_queries, int image_w, int image_h);

class Detector {
 public:
  Detector(ModelConfig cfg, uint64_t seed);

  // One prediction per decoder layer (deep supervision order).
  std::vector<LayerPrediction> forward(const Tensor& image);

  // NoGrad forward; per query the best class by sigmoid score, filtered and
  // truncated. Never applies NMS.
  std::vector<QueryDetection> infer(const Tensor& image, double score_threshold, int top_k);

  FeaturePyramid run_backbone(const Var& image);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);  // shapes must match
  static Detector from_checkpoint(const std::string& path);

 private:
  struct LayerParams {
    LinearParams pe_proj;
    LinearParams self_out;
    CrossAttentionParams cross;
    LinearParams ffn_in, ffn_out;
    LinearParams cls_head, box_head;
    Var ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
  };
  struct ConvParams {
    Var w, b;
  };

  Var refine_queries(const Var& qp_in, const Var& deltas) const;

  ModelConfig cfg_;
  ParamStore params_;
  std::vector<ConvParams> stem_;
  std::vector<ConvParams> extra_;               // one stride-2 conv per level past the first
  std::vector<LinearParams> channel_mappers_;   // per level, trunk -> D
  Var query_embed_;                             // N x D
  Tensor query_grid_;                           // N x 5 initial positional queries
  std::vector<LayerParams> layers_;
};

}  // namespace ofkit
