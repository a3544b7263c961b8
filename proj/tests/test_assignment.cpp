#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "ofkit/assignment.hpp"
#include "ofkit/verify.hpp"

using namespace ofkit;

namespace {

Tensor random_cost(Rng& rng, int64_t n, int64_t m, double lo = 0.0, double hi = 10.0) {
  Tensor t({n, m});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(rng, lo, hi);
  return t;
}

double assignment_total(const Tensor& cost, const MatchResult& match) {
  double total = 0.0;
  for (const auto& [i, j] : match.pairs) total += cost.at(i, j);
  return total;
}

OrientedBox random_box(Rng& rng) {
  return normalize_angle({uniform(rng, 10, 54), uniform(rng, 10, 54), uniform(rng, 6, 24),
                          uniform(rng, 6, 24), uniform(rng, -1.5, 1.5)});
}

}  // namespace

TEST_CASE("hungarian closed-form cases") {
  const MatchResult diag = hungarian_match(Tensor({2, 2}, {1, 2, 2, 1}));
  REQUIRE(diag.pairs.size() == 2);
  CHECK(diag.pairs[0] == std::pair<int, int>{0, 0});
  CHECK(diag.pairs[1] == std::pair<int, int>{1, 1});

  const MatchResult single = hungarian_match(Tensor({1, 1}, {3.5}));
  REQUIRE(single.pairs.size() == 1);
  CHECK(single.pairs[0] == std::pair<int, int>{0, 0});

  Tensor bad({1, 2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS(hungarian_match(bad));
}

TEST_CASE("hungarian equals brute force on random matrices up to 7x7") {
  Rng rng(21);
  for (int it = 0; it < 300; ++it) {
    const int64_t n = uniform_int(rng, 1, 7);
    const int64_t m = uniform_int(rng, 1, 7);
    const Tensor cost = random_cost(rng, n, m);
    const MatchResult match = hungarian_match(cost);
    CHECK(static_cast<int64_t>(match.pairs.size()) == std::min(n, m));
    CHECK(assignment_total(cost, match) ==
          doctest::Approx(brute_force_assignment_cost(cost)).epsilon(1e-10));

    std::set<int> qs, gs;
    for (const auto& [qi, gi] : match.pairs) {
      CHECK(qs.insert(qi).second);  // one-to-one both ways
      CHECK(gs.insert(gi).second);
    }
  }
}

TEST_CASE("scaling costs by a positive constant keeps the assignment") {
  Rng rng(22);
  for (int it = 0; it < 50; ++it) {
    const Tensor cost = random_cost(rng, 5, 4);
    Tensor scaled = cost;
    for (int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= 37.5;
    CHECK(hungarian_match(cost).pairs == hungarian_match(scaled).pairs);
  }
}

TEST_CASE("match_cost: exact prediction wins its column, zero weights zero the matrix") {
  Rng rng(23);
  const std::vector<GroundTruth> gt = {{0, random_box(rng)}, {1, random_box(rng)}};
  Tensor logits({3, 2});
  for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = -4.0;
  logits.at(0, 0) = 6.0;  // query 0 confidently predicts class 0
  std::vector<OrientedBox> boxes = {gt[0].box, random_box(rng), random_box(rng)};

  const Tensor cost = match_cost(logits, boxes, gt, LossWeights{}, 64, 64);
  for (int64_t i = 1; i < 3; ++i) CHECK(cost.at(0, 0) < cost.at(i, 0));

  const Tensor zero = match_cost(logits, boxes, gt, LossWeights{0, 0, 0, 0.25, 2.0}, 64, 64);
  for (int64_t i = 0; i < zero.numel(); ++i) CHECK(zero[i] == 0.0);

  // optimality: matched total never exceeds the identity assignment
  for (int it = 0; it < 20; ++it) {
    std::vector<GroundTruth> gts;
    for (int j = 0; j < 3; ++j) gts.push_back({j % 2, random_box(rng)});
    Tensor lg = random_cost(rng, 4, 2, -3, 3);
    std::vector<OrientedBox> preds;
    for (int i = 0; i < 4; ++i) preds.push_back(random_box(rng));
    const Tensor c = match_cost(lg, preds, gts, LossWeights{}, 64, 64);
    const MatchResult m = hungarian_match(c);
    double identity_total = 0.0;
    for (int j = 0; j < 3; ++j) identity_total += c.at(j, j);
    CHECK(assignment_total(c, m) <= identity_total + 1e-12);
  }
}

TEST_CASE("focal loss closed-form values") {
  // p_t = 1 exactly (huge logit) contributes zero
  Var logits = Var::constant(Tensor({1, 1}, {1000.0}));
  CHECK(focal_loss(logits, {0}, 0.25, 2.0).value()[0] == 0.0);

  // positive class at p = 0.5: alpha (1-p)^2 ln 2
  Var half = Var::constant(Tensor({1, 1}, {0.0}));
  CHECK(focal_loss(half, {0}, 0.25, 2.0).value()[0] ==
        doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
  CHECK(focal_loss(half, {0}, 0.25, 2.0).value()[0] == doctest::Approx(0.043322).epsilon(1e-4));

  // background target at p ~ 0 contributes ~0
  Var bg = Var::constant(Tensor({1, 1}, {-1000.0}));
  CHECK(focal_loss(bg, {-1}, 0.25, 2.0).value()[0] == 0.0);
}

TEST_CASE("focal loss gradient matches finite differences") {
  Rng rng(24);
  Tensor logits({4, 3});
  for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = uniform(rng, -3, 3);
  const std::vector<int> targets = {1, -1, 2, -1};
  Var leaf = Var::leaf(logits, true);
  backpropagate(focal_loss(leaf, targets, 0.25, 2.0));
  const Tensor fd = finite_difference_gradient(
      [&](const Tensor& probe) {
        NoGradGuard ng;
        return focal_loss(Var::constant(probe), targets, 0.25, 2.0).value()[0];
      },
      logits);
  CHECK(gradient_rel_error(leaf.grad(), fd) <= 1e-4);
}

TEST_CASE("regression losses: zero at the optimum, one for disjoint boxes") {
  Rng rng(25);
  const OrientedBox b = random_box(rng);
  Tensor pred({1, 5}, {b.cx, b.cy, b.w, b.h, b.theta});
  MatchResult match;
  match.pairs = {{0, 0}};
  const std::vector<GroundTruth> gt = {{0, b}};
  const auto [l1, iou] = regression_losses(Var::constant(pred), match, gt, 64, 64);
  CHECK(l1.value()[0] == 0.0);
  CHECK(iou.value()[0] == 0.0);

  const std::vector<GroundTruth> far = {{0, {500, 500, 4, 4, 0}}};
  const auto [l1f, iouf] = regression_losses(Var::constant(pred), match, far, 64, 64);
  CHECK(iouf.value()[0] == 1.0);
  CHECK(l1f.value()[0] > 0.0);

  int skipped = 0;
  const std::vector<GroundTruth> degenerate = {{0, {10, 10, 1e-12, 1e-12, 0}}};
  const auto [l1d, ioud] = regression_losses(Var::constant(pred), match, degenerate, 64, 64, &skipped);
  CHECK(skipped == 1);
  CHECK(l1d.value()[0] == 0.0);
  CHECK(ioud.value()[0] == 0.0);
}

TEST_CASE("IoU loss agrees with the rasterization oracle and differentiates") {
  Rng rng(26);
  for (int it = 0; it < 10; ++it) {
    const OrientedBox p = random_box(rng);
    OrientedBox g = p;
    g.cx += uniform(rng, -6, 6);
    g.cy += uniform(rng, -6, 6);
    g.theta = uniform(rng, -1.2, 1.2);
    g = normalize_angle(g);
    Tensor pred({1, 5}, {p.cx, p.cy, p.w, p.h, p.theta});
    MatchResult match;
    match.pairs = {{0, 0}};
    const std::vector<GroundTruth> gt = {{0, g}};
    Var leaf = Var::leaf(pred, true);
    const auto [l1, iou_loss] = regression_losses(leaf, match, gt, 64, 64);
    CHECK(std::fabs((1.0 - iou_loss.value()[0]) - rasterized_iou(p, g, 1024)) <= 5e-3);

    backpropagate(add(l1, iou_loss));
    const Tensor fd = finite_difference_gradient(
        [&](const Tensor& probe) {
          NoGradGuard ng;
          const auto [a, b] = regression_losses(Var::constant(probe), match, gt, 64, 64);
          return add(a, b).value()[0];
        },
        pred);
    CHECK(gradient_rel_error(leaf.grad(), fd) <= 1e-4);
  }
}

TEST_CASE("total loss: zero at a perfect prediction, additive across layers") {
  const OrientedBox b{20, 30, 10, 6, 0.4};
  const std::vector<GroundTruth> gt = {{0, b}};

  LayerPrediction perfect;
  Tensor logits({2, 2});
  logits.at(0, 0) = 1000.0;  // p_t = 1 for the matched query
  logits.at(0, 1) = -1000.0;
  logits.at(1, 0) = -1000.0;
  logits.at(1, 1) = -1000.0;
  perfect.class_logits = Var::constant(logits);
  Tensor boxes({2, 5});
  boxes.at(0, 0) = b.cx;
  boxes.at(0, 1) = b.cy;
  boxes.at(0, 2) = b.w;
  boxes.at(0, 3) = b.h;
  boxes.at(0, 4) = b.theta;
  boxes.at(1, 0) = 50;
  boxes.at(1, 1) = 50;
  boxes.at(1, 2) = 4;
  boxes.at(1, 3) = 4;
  perfect.boxes5 = Var::constant(boxes);

  const LossBreakdown single = total_loss({perfect}, gt, LossWeights{}, 64, 64);
  CHECK(single.total.value()[0] == 0.0);
  CHECK(single.matched == 1);

  const LossBreakdown twice = total_loss({perfect, perfect}, gt, LossWeights{}, 64, 64);
  CHECK(twice.total.value()[0] == doctest::Approx(2.0 * single.total.value()[0]));

  // imperfect predictions give a strictly positive loss
  Tensor soft = logits;
  soft.at(0, 0) = 1.0;
  LayerPrediction imperfect = perfect;
  imperfect.class_logits = Var::constant(soft);
  const LossBreakdown pos = total_loss({imperfect}, gt, LossWeights{}, 64, 64);
  CHECK(pos.total.value()[0] > 0.0);
  const LossBreakdown doubled = total_loss({imperfect, imperfect}, gt, LossWeights{}, 64, 64);
  CHECK(doubled.total.value()[0] == doctest::Approx(2.0 * pos.total.value()[0]).epsilon(1e-12));

  // empty ground truth: classification-only path still works
  const LossBreakdown empty = total_loss({imperfect}, {}, LossWeights{}, 64, 64);
  CHECK(empty.matched == 0);
  CHECK(empty.total.value()[0] >= 0.0);
}
