#include "ofkit/assignment.hpp"

#include <cmath>
#include <limits>

#include "ofkit/row_map.hpp"

namespace ofkit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double focal_terms(double logit, bool positive, double alpha, double gamma) {
  const double sp_pos = logit > 0 ? logit + std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
  const double sp_neg = logit > 0 ? std::log1p(std::exp(-logit)) : -logit + std::log1p(std::exp(logit));
  // sp_pos = softplus(x) = -log(1-p), sp_neg = softplus(-x) = -log p
  if (positive) return alpha * std::exp(-gamma * sp_pos) * sp_neg;
  return (1.0 - alpha) * std::exp(-gamma * sp_neg) * sp_pos;
}

}  // namespace

MatchResult hungarian_match(const Tensor& cost) {
  if (cost.rank() != 2) throw std::invalid_argument("hungarian_match: cost must be 2-D");
  if (!cost.all_finite()) throw std::invalid_argument("hungarian_match: non-finite cost entry");
  const int rows = static_cast<int>(cost.dim(0));
  const int cols = static_cast<int>(cost.dim(1));
  if (rows == 0 || cols == 0) return {};

  // shortest augmenting path needs n <= m; transpose transparently
  const bool transposed = rows > cols;
  const int n = transposed ? cols : rows;
  const int m = transposed ? rows : cols;
  auto c = [&](int i, int j) { return transposed ? cost.at(j, i) : cost.at(i, j); };

  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(m) + 1, 0), way(static_cast<size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(m) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = p[static_cast<size_t>(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = c(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }

  MatchResult result;
  for (int j = 1; j <= m; ++j) {
    const int i = p[static_cast<size_t>(j)];
    if (i == 0) continue;
    if (transposed)
      result.pairs.emplace_back(j - 1, i - 1);
    else
      result.pairs.emplace_back(i - 1, j - 1);
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  return result;
}

Tensor match_cost(const Tensor& class_logits, const std::vector<OrientedBox>& pred_boxes,
                  const std::vector<GroundTruth>& gt, const LossWeights& weights, double img_w,
                  double img_h) {
  const int64_t n = class_logits.dim(0);
  const int64_t num_classes = class_logits.dim(1);
  const int64_t m = static_cast<int64_t>(gt.size());
  if (static_cast<int64_t>(pred_boxes.size()) != n)
    throw std::invalid_argument("match_cost: logits and boxes disagree on N");
  Tensor cost({n, m});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      const GroundTruth& g = gt[static_cast<size_t>(j)];
      double focal = 0.0;
      for (int64_t k = 0; k < num_classes; ++k)
        focal += focal_terms(class_logits.at(i, k), k == g.category, weights.focal_alpha,
                             weights.focal_gamma);
      const OrientedBox& p = pred_boxes[static_cast<size_t>(i)];
      const double l1 = std::fabs(p.cx - g.box.cx) / img_w + std::fabs(p.cy - g.box.cy) / img_h +
                        std::fabs(p.w - g.box.w) / img_w + std::fabs(p.h - g.box.h) / img_h +
                        std::fabs(p.theta - g.box.theta) / kPi;
      const double iou_term = 1.0 - rotated_iou(p, g.box);
      cost.at(i, j) = weights.cls * focal + weights.l1 * l1 + weights.iou * iou_term;
    }
  return cost;
}

Var focal_loss(const Var& logits, const std::vector<int>& target_class, double alpha,
               double gamma) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2) throw std::invalid_argument("focal_loss: logits must be N x C");
  const int64_t n = lv.dim(0), c = lv.dim(1);
  if (static_cast<int64_t>(target_class.size()) != n)
    throw std::invalid_argument("focal_loss: one target per query required");

  Tensor pos_mask({n, c}), neg_mask({n, c});
  for (int64_t i = 0; i < n; ++i) {
    const int t = target_class[static_cast<size_t>(i)];
    for (int64_t k = 0; k < c; ++k) {
      const bool positive = t >= 0 && k == t;
      pos_mask.at(i, k) = positive ? alpha : 0.0;
      neg_mask.at(i, k) = positive ? 0.0 : 1.0 - alpha;
    }
  }
  // stable pieces: softplus(x) = -log(1-p), softplus(-x) = -log p
  const Var sp_pos = softplus(logits);
  const Var sp_neg = softplus(neg(logits));
  const Var pos_term = mul(exp(mul_scalar(sp_pos, -gamma)), sp_neg);  // (1-p)^g * -log p
  const Var neg_term = mul(exp(mul_scalar(sp_neg, -gamma)), sp_pos);  // p^g * -log(1-p)
  const Var weighted =
      add(mul(Var::constant(pos_mask), pos_term), mul(Var::constant(neg_mask), neg_term));
  return mul_scalar(sum(weighted), 1.0 / static_cast<double>(n));  // mean over queries
}

std::pair<Var, Var> regression_losses(const Var& boxes5, const MatchResult& match,
                                      const std::vector<GroundTruth>& gt, double img_w,
                                      double img_h, int* skipped) {
  std::vector<int64_t> keep_rows;
  std::vector<const GroundTruth*> keep_gt;
  int skip_count = 0;
  for (const auto& [qi, gi] : match.pairs) {
    const GroundTruth& g = gt[static_cast<size_t>(gi)];
    if (g.box.w * g.box.h < kern::kDegenerateArea) {
      ++skip_count;  // degenerate ground truth carries no regression signal
      continue;
    }
    keep_rows.push_back(qi);
    keep_gt.push_back(&g);
  }
  if (skipped) *skipped = skip_count;
  if (keep_rows.empty())
    return {Var::constant(Tensor::scalar(0.0)), Var::constant(Tensor::scalar(0.0))};

  const int64_t m = static_cast<int64_t>(keep_rows.size());
  const Var pred = gather_rows(boxes5, keep_rows);

  Tensor gt_t({m, 5});
  Tensor scale({m, 5});
  for (int64_t i = 0; i < m; ++i) {
    const OrientedBox& b = keep_gt[static_cast<size_t>(i)]->box;
    gt_t.at(i, 0) = b.cx;
    gt_t.at(i, 1) = b.cy;
    gt_t.at(i, 2) = b.w;
    gt_t.at(i, 3) = b.h;
    gt_t.at(i, 4) = b.theta;
    scale.at(i, 0) = 1.0 / img_w;
    scale.at(i, 1) = 1.0 / img_h;
    scale.at(i, 2) = 1.0 / img_w;
    scale.at(i, 3) = 1.0 / img_h;
    scale.at(i, 4) = 1.0 / kPi;
  }
  const Var diff = mul(sub(pred, Var::constant(gt_t)), Var::constant(scale));
  const Var l1 = mul_scalar(sum(abs(diff)), 1.0 / static_cast<double>(m));

  std::vector<OrientedBox> gt_boxes(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) gt_boxes[static_cast<size_t>(i)] = keep_gt[static_cast<size_t>(i)]->box;
  using D = Dual<5>;
  const Var iou = map_rows_indexed<5>(
      "rotated_iou_rows", pred, 1, [gt_boxes](int64_t row, const D* in, D* out) {
        const OrientedBox& g = gt_boxes[static_cast<size_t>(row)];
        const kern::Box<D> pb{in[0], in[1], in[2], in[3], in[4]};
        const kern::Box<D> gb{D(g.cx), D(g.cy), D(g.w), D(g.h), D(g.theta)};
        out[0] = kern::rotated_iou(pb, gb);
      });
  const Var iou_loss = mean(add_scalar(neg(iou), 1.0));
  return {l1, iou_loss};
}

std::vector<MatchResult> match_layers(const std::vector<LayerPrediction>& predictions,
                                      const std::vector<GroundTruth>& gt,
                                      const LossWeights& weights, double img_w, double img_h) {
  std::vector<MatchResult> matches(predictions.size());
  if (gt.empty()) return matches;
  for (size_t l = 0; l < predictions.size(); ++l) {
    const Tensor cost = match_cost(predictions[l].class_logits.value(), predictions[l].boxes(),
                                   gt, weights, img_w, img_h);
    matches[l] = hungarian_match(cost);
  }
  return matches;
}

LossBreakdown total_loss_fixed_match(const std::vector<LayerPrediction>& predictions,
                                     const std::vector<MatchResult>& matches,
                                     const std::vector<GroundTruth>& gt,
                                     const LossWeights& weights, double img_w, double img_h) {
  if (predictions.empty()) throw std::invalid_argument("total_loss: needs at least one layer");
  if (matches.size() != predictions.size())
    throw std::invalid_argument("total_loss: one match per layer required");
  LossBreakdown out;
  Var total = Var::constant(Tensor::scalar(0.0));
  for (size_t l = 0; l < predictions.size(); ++l) {
    const LayerPrediction& pred = predictions[l];
    const MatchResult& match = matches[l];
    const int64_t n = pred.class_logits.value().dim(0);
    std::vector<int> targets(static_cast<size_t>(n), -1);
    for (const auto& [qi, gi] : match.pairs)
      targets[static_cast<size_t>(qi)] = gt[static_cast<size_t>(gi)].category;
    const Var cls = focal_loss(pred.class_logits, targets, weights.focal_alpha, weights.focal_gamma);
    int skipped = 0;
    const auto [l1, iou] = regression_losses(pred.boxes5, match, gt, img_w, img_h, &skipped);
    out.cls += cls.value()[0];
    out.l1 += l1.value()[0];
    out.iou += iou.value()[0];
    out.matched += static_cast<int>(match.pairs.size());
    out.skipped_degenerate += skipped;
    const Var layer_loss = add(add(mul_scalar(cls, weights.cls), mul_scalar(l1, weights.l1)),
                               mul_scalar(iou, weights.iou));
    total = add(total, layer_loss);
  }
  out.total = total;
  return out;
}

LossBreakdown total_loss(const std::vector<LayerPrediction>& predictions,
                         const std::vector<GroundTruth>& gt, const LossWeights& weights,
                         double img_w, double img_h) {
  return total_loss_fixed_match(predictions, match_layers(predictions, gt, weights, img_w, img_h),
                                gt, weights, img_w, img_h);
}

}  // namespace ofkit
