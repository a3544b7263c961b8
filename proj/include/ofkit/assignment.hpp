#pragma once

#include <utility>
#include <vector>

#include "ofkit/model.hpp"

namespace ofkit {

struct GroundTruth {
  int category = 0;
  OrientedBox box;
};

// One-to-one assignment; unmatched queries are background.
struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (query index, gt index)
};

struct LossWeights {
  double cls = 2.0;
  double l1 = 2.0;
  double iou = 5.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

// Kuhn-Munkres minimum-cost assignment on an N x M matrix; pair count is
// min(N, M). Rows are processed in order and ties resolve to the first
// column scanned, so the result is deterministic.
MatchResult hungarian_match(const Tensor& cost);

// Pairwise assignment cost mirroring the training loss terms:
// lambda_cls * focal(query logits vs one-hot gt class)
// + lambda_l1 * |normalized box diff|_1 + lambda_iou * (1 - rotated IoU).
Tensor match_cost(const Tensor& class_logits, const std::vector<OrientedBox>& pred_boxes,
                  const std::vector<GroundTruth>& gt, const LossWeights& weights, double img_w,
                  double img_h);

// Sigmoid focal loss, mean over queries; target_class[i] = -1 for background.
Var focal_loss(const Var& logits, const std::vector<int>& target_class, double alpha,
               double gamma);

// (L1, IoU) losses over the matched pairs. Pairs whose ground truth is
// degenerate are skipped and counted in *skipped.
std::pair<Var, Var> regression_losses(const Var& boxes5, const MatchResult& match,
                                      const std::vector<GroundTruth>& gt, double img_w,
                                      double img_h, int* skipped = nullptr);

struct LossBreakdown {
  Var total;
  double cls = 0.0, l1 = 0.0, iou = 0.0;  // unweighted component values
  int matched = 0;
  int skipped_degenerate = 0;
};

// Hungarian assignment of each layer's predictions (on plain values).
std::vector<MatchResult> match_layers(const std::vector<LayerPrediction>& predictions,
                                      const std::vector<GroundTruth>& gt,
                                      const LossWeights& weights, double img_w, double img_h);

// Weighted loss with the matching held fixed: the differentiable part of the
// objective, and what gradient checks probe.
LossBreakdown total_loss_fixed_match(const std::vector<LayerPrediction>& predictions,
                                     const std::vector<MatchResult>& matches,
                                     const std::vector<GroundTruth>& gt,
                                     const LossWeights& weights, double img_w, double img_h);

// Deep supervision: each layer is matched independently and contributes the
// full weighted combination.
LossBreakdown total_loss(const std::vector<LayerPrediction>& predictions,
                         const std::vector<GroundTruth>& gt, const LossWeights& weights,
                         double img_w, double img_h);

}  // namespace ofkit
