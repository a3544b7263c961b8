#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ofkit/attention.hpp"
#include "ofkit/verify.hpp"

using namespace ofkit;

namespace {

Tensor rand_tensor(Rng& rng, std::vector<int64_t> shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(rng, lo, hi);
  return t;
}

Tensor random_qp5(Rng& rng, int64_t n, double span = 48.0) {
  Tensor qp({n, 5});
  for (int64_t i = 0; i < n; ++i) {
    qp.at(i, 0) = uniform(rng, 8, span);
    qp.at(i, 1) = uniform(rng, 8, span);
    qp.at(i, 2) = uniform(rng, 2.5, 4.5);
    qp.at(i, 3) = uniform(rng, -1.0, 1.0);
    qp.at(i, 4) = uniform(rng, -1.4, 1.4);
  }
  return qp;
}

FeaturePyramid random_pyramid(Rng& rng, int64_t base_hw, int levels, int64_t dim,
                              int first_stride = 8) {
  FeaturePyramid fp;
  int64_t hw = base_hw;
  int stride = first_stride;
  for (int l = 0; l < levels; ++l) {
    fp.levels.push_back(Var::constant(rand_tensor(rng, {hw, hw, dim})));
    fp.strides.push_back(stride);
    hw = std::max<int64_t>(1, hw / 2);
    stride *= 2;
  }
  return fp;
}

LinearParams identity_proj(int64_t d) {
  LinearParams p;
  p.w = Var::constant(Tensor::identity(d));
  p.b = Var::constant(Tensor({d}));
  return p;
}

CrossAttentionParams params_from_weights(const CrossAttentionWeights& w, bool requires_grad) {
  CrossAttentionParams p;
  auto mk = [&](const Tensor& t) { return Var::leaf(t, requires_grad); };
  p.offsets = {mk(w.offsets_w), mk(w.offsets_b)};
  p.channel_a = {mk(w.channel_a_w), mk(w.channel_a_b)};
  p.channel_b = {mk(w.channel_b_w), mk(w.channel_b_b)};
  p.spatial_a = {mk(w.spatial_a_w), mk(w.spatial_a_b)};
  p.spatial_b = {mk(w.spatial_b_w), mk(w.spatial_b_b)};
  p.out = {mk(w.out_w), mk(w.out_b)};
  return p;
}

CrossAttentionWeights random_weights(Rng& rng, int64_t d, int g, int o) {
  const int64_t go = static_cast<int64_t>(g) * o;
  CrossAttentionWeights w;
  w.offsets_w = rand_tensor(rng, {d, 3 * go}, -0.3, 0.3);
  w.offsets_b = rand_tensor(rng, {3 * go}, -0.5, 0.5);
  w.channel_a_w = rand_tensor(rng, {d, d}, -0.3, 0.3);
  w.channel_a_b = rand_tensor(rng, {d}, -0.1, 0.1);
  w.channel_b_w = rand_tensor(rng, {d, d}, -0.3, 0.3);
  w.channel_b_b = rand_tensor(rng, {d}, -0.1, 0.1);
  w.spatial_a_w = rand_tensor(rng, {d, d}, -0.3, 0.3);
  w.spatial_a_b = rand_tensor(rng, {d}, -0.1, 0.1);
  w.spatial_b_w = rand_tensor(rng, {d, go}, -0.3, 0.3);
  w.spatial_b_b = rand_tensor(rng, {go}, -0.1, 0.1);
  w.out_w = rand_tensor(rng, {static_cast<int64_t>(o) * d, d}, -0.2, 0.2);
  w.out_b = rand_tensor(rng, {d}, -0.1, 0.1);
  return w;
}

}  // namespace

TEST_CASE("self-attention with one query returns its own value row") {
  Rng rng(3);
  const int64_t d = 8;
  Var qc = Var::constant(rand_tensor(rng, {1, d}));
  Var phi = Var::constant(rand_tensor(rng, {1, d}));
  Var scores = Var::constant(Tensor({1, 1}));
  Var out = wasserstein_self_attention(qc, phi, scores, {2}, identity_proj(d));
  for (int64_t j = 0; j < d; ++j) CHECK(out.value().at(0, j) == doctest::Approx(qc.value().at(0, j)));
}

TEST_CASE("distant queries suppress cross-attention terms") {
  Rng rng(4);
  const int64_t n = 2, d = 8;
  Var qc = Var::constant(rand_tensor(rng, {n, d}, -0.1, 0.1));
  Var phi = Var::constant(Tensor({n, d}));
  Tensor g({n, n});
  g.at(0, 0) = g.at(1, 1) = std::log(1.0 + 1e-7);
  g.at(0, 1) = g.at(1, 0) = std::log(1e-7);  // far apart
  Var out = wasserstein_self_attention(qc, phi, Var::constant(g), {2}, identity_proj(d));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      CHECK(out.value().at(i, j) == doctest::Approx(qc.value().at(i, j)).epsilon(1e-5));
}

TEST_CASE("adding a constant to every score leaves the attention unchanged") {
  Rng rng(5);
  const int64_t n = 4, d = 8;
  Tensor qc = rand_tensor(rng, {n, d});
  Tensor phi = rand_tensor(rng, {n, d});
  Tensor g = rand_tensor(rng, {n, n}, -3, 0);
  Tensor g_shift = g;
  for (int64_t i = 0; i < g_shift.numel(); ++i) g_shift[i] += 7.25;
  auto run = [&](const Tensor& scores) {
    return wasserstein_self_attention(Var::constant(qc), Var::constant(phi),
                                      Var::constant(scores), {2}, identity_proj(d));
  };
  const Tensor a = run(g).value();
  const Tensor b = run(g_shift).value();
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(std::fabs(a[i] - b[i]) <= 1e-9);
}

TEST_CASE("wasserstein_score_matrix: symmetric, constant diagonal, matches scalar path") {
  Rng rng(6);
  const Tensor qp = random_qp5(rng, 5);
  const Tensor m = wasserstein_score_matrix(Var::constant(qp)).value();
  for (int64_t i = 0; i < 5; ++i) {
    CHECK(m.at(i, i) == std::log(1.0 + 1e-7));
    for (int64_t j = 0; j < 5; ++j) {
      CHECK(m.at(i, j) == doctest::Approx(m.at(j, i)).epsilon(1e-12));
      const OrientedBox bi = zr_to_box({qp.at(i, 0), qp.at(i, 1), qp.at(i, 2), qp.at(i, 3), qp.at(i, 4)});
      const OrientedBox bj = zr_to_box({qp.at(j, 0), qp.at(j, 1), qp.at(j, 2), qp.at(j, 3), qp.at(j, 4)});
      if (i != j) CHECK(m.at(i, j) == doctest::Approx(wasserstein_score(bi, bj)).epsilon(1e-12));
    }
  }
}

TEST_CASE("full self-attention gradient matches finite differences") {
  Rng rng(7);
  const int64_t n = 3, d = 8;
  Tensor qc_t = rand_tensor(rng, {n, d});
  Tensor qp_t = random_qp5(rng, n);
  Tensor w_t = rand_tensor(rng, {d, d}, -0.4, 0.4);

  auto forward = [&](const Tensor& qc_in, const Tensor& qp_in, const Tensor& w_in, bool grad,
                     Var* qc_leaf, Var* qp_leaf, Var* w_leaf) {
    Var qc = Var::leaf(qc_in, grad);
    Var qp = Var::leaf(qp_in, grad);
    Var w = Var::leaf(w_in, grad);
    if (qc_leaf) *qc_leaf = qc;
    if (qp_leaf) *qp_leaf = qp;
    if (w_leaf) *w_leaf = w;
    PEConfig pe_cfg{10000.0, 2};  // 4K = 8 = D
    Var phi = gaussian_pe_rows(qp, pe_cfg);
    Var scores = wasserstein_score_matrix(qp);
    LinearParams proj{w, Var::constant(Tensor({d}))};
    return wasserstein_self_attention(qc, phi, scores, {2}, proj);
  };

  Var qc_leaf, qp_leaf, w_leaf;
  Var out = forward(qc_t, qp_t, w_t, true, &qc_leaf, &qp_leaf, &w_leaf);
  backpropagate(sum(out));

  auto fd_for = [&](const Tensor& x, int which) {
    return finite_difference_gradient(
        [&](const Tensor& probe) {
          NoGradGuard ng;
          const Tensor& a = which == 0 ? probe : qc_t;
          const Tensor& b = which == 1 ? probe : qp_t;
          const Tensor& c = which == 2 ? probe : w_t;
          return sum(forward(a, b, c, false, nullptr, nullptr, nullptr)).value()[0];
        },
        x);
  };
  CHECK(gradient_rel_error(qc_leaf.grad(), fd_for(qc_t, 0)) <= 1e-4);
  CHECK(gradient_rel_error(qp_leaf.grad(), fd_for(qp_t, 1)) <= 1e-4);
  CHECK(gradient_rel_error(w_leaf.grad(), fd_for(w_t, 2)) <= 1e-4);
}

TEST_CASE("compute_offsets: zero projection gives zero offsets, shape is N x 3gO") {
  Rng rng(8);
  const int64_t n = 2, d = 8;
  const int g = 4, o = 8;
  Var qc = Var::constant(rand_tensor(rng, {n, d}));
  LinearParams zero{Var::constant(Tensor({d, 3 * g * o})), Var::constant(Tensor({3 * g * o}))};
  Var off = compute_offsets(qc, zero);
  CHECK(off.value().shape() == std::vector<int64_t>{n, 3 * g * o});
  for (int64_t i = 0; i < off.value().numel(); ++i) CHECK(off.value()[i] == 0.0);
}

TEST_CASE("make_sampling_points follows the offset scaling law") {
  // q = (100, 50, z=4, r=0, theta=0), delta = (0.5, -0.25, 1) -> (108, 46, 5)
  Tensor qp({1, 5});
  qp.at(0, 0) = 100;
  qp.at(0, 1) = 50;
  qp.at(0, 2) = 4;
  qp.at(0, 3) = 0;
  qp.at(0, 4) = 0;
  Tensor off({1, 3});  // g = 1, o = 1
  off.at(0, 0) = 0.5;
  off.at(0, 1) = -0.25;
  off.at(0, 2) = 1.0;
  const Var frame = box_sampling_frame(Var::constant(qp));
  const SamplingPoints pts = make_sampling_points(Var::constant(off), frame, 1, 1);
  CHECK(pts.x.value()[0] == doctest::Approx(108.0));
  CHECK(pts.y.value()[0] == doctest::Approx(46.0));
  CHECK(pts.z.value()[0] == doctest::Approx(5.0));

  // anisotropy: r != 0 scales x by 2^(z-r) and y by 2^(z+r)
  qp.at(0, 3) = 1.0;
  const Var frame2 = box_sampling_frame(Var::constant(qp));
  const SamplingPoints pts2 = make_sampling_points(Var::constant(off), frame2, 1, 1);
  CHECK(pts2.x.value()[0] == doctest::Approx(100.0 + 0.5 * std::exp2(3.0)));
  CHECK(pts2.y.value()[0] == doctest::Approx(50.0 - 0.25 * std::exp2(5.0)));
}

TEST_CASE("align_points rotates about the query center and preserves distances") {
  Tensor qp({1, 5});
  qp.at(0, 0) = 100;
  qp.at(0, 1) = 50;
  qp.at(0, 2) = 3;
  qp.at(0, 3) = 0;
  qp.at(0, 4) = kPi / 2;
  const Var frame = box_sampling_frame(Var::constant(qp));
  SamplingPoints pts;
  pts.x = Var::constant(Tensor({1, 1}, {108.0}));
  pts.y = Var::constant(Tensor({1, 1}, {46.0}));
  pts.z = Var::constant(Tensor({1, 1}, {3.0}));
  const SamplingPoints aligned = align_points(pts, frame);
  CHECK(aligned.x.value()[0] == doctest::Approx(104.0));
  CHECK(aligned.y.value()[0] == doctest::Approx(58.0));
  CHECK(aligned.z.value()[0] == 3.0);

  // composition and isometry on random clouds
  Rng rng(9);
  for (int it = 0; it < 20; ++it) {
    const double th1 = uniform(rng, -1.5, 1.5), th2 = uniform(rng, -1.5, 1.5);
    Tensor base = random_qp5(rng, 1);
    auto frame_with = [&](double th) {
      Tensor q = base;
      q.at(0, 4) = th;
      return box_sampling_frame(Var::constant(q));
    };
    Tensor px({1, 4}), py({1, 4});
    for (int64_t i = 0; i < 4; ++i) {
      px[i] = base.at(0, 0) + uniform(rng, -20, 20);
      py[i] = base.at(0, 1) + uniform(rng, -20, 20);
    }
    SamplingPoints cloud{Var::constant(px), Var::constant(py), Var::constant(Tensor({1, 4}))};
    const SamplingPoints once = align_points(align_points(cloud, frame_with(th1)), frame_with(th2));
    const SamplingPoints combo = align_points(cloud, frame_with(th1 + th2));
    for (int64_t i = 0; i < 4; ++i) {
      CHECK(std::fabs(once.x.value()[i] - combo.x.value()[i]) <= 1e-9);
      CHECK(std::fabs(once.y.value()[i] - combo.y.value()[i]) <= 1e-9);
      const double before = std::hypot(px[i] - base.at(0, 0), py[i] - base.at(0, 1));
      const double after = std::hypot(combo.x.value()[i] - base.at(0, 0),
                                      combo.y.value()[i] - base.at(0, 1));
      CHECK(std::fabs(before - after) <= 1e-9);
    }
  }
}

TEST_CASE("sample_values: cell centers, midpoints, and out-of-bounds padding") {
  Rng rng(10);
  const int64_t d = 4;
  FeaturePyramid fp;
  fp.levels.push_back(Var::constant(rand_tensor(rng, {4, 4, d})));
  fp.strides.push_back(8);

  auto sample_at = [&](double ix, double iy) {
    SamplingPoints pts;
    pts.x = Var::constant(Tensor({1, 1}, {(ix + 0.5) * 8.0}));
    pts.y = Var::constant(Tensor({1, 1}, {(iy + 0.5) * 8.0}));
    pts.z = Var::constant(Tensor({1, 1}, {3.0}));
    return sample_values(fp, pts, 1)[0][0].value();
  };

  const Tensor center = sample_at(2, 1);  // exact cell center
  for (int64_t c = 0; c < d; ++c)
    CHECK(center.at(0, c) == fp.levels[0].value().at(1, 2, c));

  const Tensor mid = sample_at(1.5, 2.5);  // midpoint of 4 cells
  for (int64_t c = 0; c < d; ++c) {
    const auto& f = fp.levels[0].value();
    const double mean = 0.25 * (f.at(2, 1, c) + f.at(2, 2, c) + f.at(3, 1, c) + f.at(3, 2, c));
    CHECK(mid.at(0, c) == doctest::Approx(mean).epsilon(1e-12));
  }

  const Tensor outside = sample_at(100, 100);
  for (int64_t c = 0; c < d; ++c) CHECK(outside.at(0, c) == 0.0);
}

TEST_CASE("scale_aware weights: closed-form values and argmax at the nearest level") {
  Rng rng(11);
  const int64_t d = 4;
  FeaturePyramid fp = random_pyramid(rng, 4, 2, d);
  SamplingPoints pts;
  pts.x = Var::constant(Tensor({1, 1}, {10.0}));
  pts.y = Var::constant(Tensor({1, 1}, {10.0}));
  pts.z = Var::constant(Tensor({1, 1}, {3.0}));  // log2(8): matches level 0 exactly
  auto values = sample_values(fp, pts, 1);
  CrossAttentionConfig cfg{1, 1, 2.0, {8, 16}};
  auto fused = scale_aware(pts, values, cfg);
  // level 0 weight = sigmoid(0) = 0.5, level 1 weight = sigmoid(-0.5)
  const double w1 = 1.0 / (1.0 + std::exp(0.5));
  for (int64_t c = 0; c < d; ++c) {
    const double expected = values[0][0].value().at(0, c) * 0.5 + values[1][0].value().at(0, c) * w1;
    CHECK(fused[0].value().at(0, c) == doctest::Approx(expected).epsilon(1e-12));
  }
  // sigmoid(-(2^2)/2) = sigmoid(-2) for a 2-offset is the documented value
  CHECK(1.0 / (1.0 + std::exp(2.0)) == doctest::Approx(0.119203).epsilon(1e-5));

  // weight is maximal at the level whose log2 stride is nearest z
  for (double z : {2.7, 3.4, 4.2, 5.0}) {
    double best = -1;
    size_t best_l = 0;
    for (size_t l = 0; l < 2; ++l) {
      const double diff = z - std::log2(static_cast<double>(cfg.strides[l]));
      const double w = 1.0 / (1.0 + std::exp(diff * diff / cfg.eta));
      if (w > best) {
        best = w;
        best_l = l;
      }
    }
    const size_t nearest =
        std::fabs(z - 3.0) <= std::fabs(z - 4.0) ? 0 : 1;
    CHECK(best_l == nearest);
  }
}

TEST_CASE("channel and spatial gates default to one half on zero content") {
  Rng rng(12);
  const int64_t n = 2, d = 8;
  const int g = 2, o = 4;
  CrossAttentionConfig cfg{g, o, 2.0, {8, 16}};
  CrossAttentionWeights w = random_weights(rng, d, g, o);
  // zero gate biases: Qc = 0 drives every gate through sigmoid(0) = 0.5
  w.channel_a_b = Tensor({d});
  w.channel_b_b = Tensor({d});
  w.spatial_a_b = Tensor({d});
  w.spatial_b_b = Tensor({static_cast<int64_t>(g) * o});
  CrossAttentionParams params = params_from_weights(w, false);

  FeaturePyramid fp = random_pyramid(rng, 4, 2, d);
  Var qc = Var::constant(Tensor({n, d}));
  Tensor qp = random_qp5(rng, n, 20.0);
  const Var frame = box_sampling_frame(Var::constant(qp));
  const Var off = compute_offsets(qc, params.offsets);
  const SamplingPoints aligned = align_points(make_sampling_points(off, frame, g, o), frame);
  const auto values = sample_values(fp, aligned, g);
  const auto fused = scale_aware(aligned, values, cfg);
  const auto gated = channel_aware(qc, fused, params, g, o);
  for (size_t h = 0; h < gated.size(); ++h)
    for (int64_t i = 0; i < gated[h].value().numel(); ++i)
      CHECK(gated[h].value()[i] == doctest::Approx(0.5 * fused[h].value()[i]).epsilon(1e-12));

  const Var out = spatial_aware(qc, gated, params, g, o);
  CHECK(out.value().shape() == std::vector<int64_t>{n, d});
}

TEST_CASE("oriented cross-attention equals the straight-line reference bit for bit") {
  Rng rng(13);
  for (int it = 0; it < 20; ++it) {
    const int64_t n = 1 + (it % 3), d = 8;
    const int g = (it % 2) ? 2 : 4;
    const int o = (it % 2) ? 4 : 2;
    CrossAttentionConfig cfg{g, o, 2.0, {8, 16}};
    const CrossAttentionWeights w = random_weights(rng, d, g, o);
    const Tensor qc = rand_tensor(rng, {n, d});
    const Tensor qp = random_qp5(rng, n, 28.0);
    FeaturePyramid fp = random_pyramid(rng, 4, 2, d);

    const Var out = oriented_cross_attention(Var::constant(qc), Var::constant(qp), fp, cfg,
                                             params_from_weights(w, false));
    std::vector<Tensor> levels{fp.levels[0].value(), fp.levels[1].value()};
    const Tensor ref = reference_cross_attention(qc, qp, levels, cfg.strides, g, o, cfg.eta, w);
    REQUIRE(out.value().shape() == ref.shape());
    for (int64_t i = 0; i < ref.numel(); ++i) CHECK(out.value()[i] == ref[i]);  // bitwise
  }
}

TEST_CASE("rotating the positional query rotates the aligned cloud exactly") {
  Rng rng(14);
  const int64_t n = 2, d = 8;
  const int g = 2, o = 4;
  const CrossAttentionWeights w = random_weights(rng, d, g, o);
  CrossAttentionParams params = params_from_weights(w, false);
  const Var qc = Var::constant(rand_tensor(rng, {n, d}));
  Tensor qp = random_qp5(rng, n, 30.0);
  const double phi = 0.6;
  Tensor qp_rot = qp;
  for (int64_t i = 0; i < n; ++i) qp_rot.at(i, 4) += phi;

  auto cloud_for = [&](const Tensor& q) {
    const Var frame = box_sampling_frame(Var::constant(q));
    const Var off = compute_offsets(qc, params.offsets);
    return align_points(make_sampling_points(off, frame, g, o), frame);
  };
  const SamplingPoints a = cloud_for(qp);
  const SamplingPoints b = cloud_for(qp_rot);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < g * o; ++j) {
      const double cx = qp.at(i, 0), cy = qp.at(i, 1);
      const double rx = a.x.value().at(i, j) - cx, ry = a.y.value().at(i, j) - cy;
      const double ex = cx + std::cos(phi) * rx - std::sin(phi) * ry;
      const double ey = cy + std::sin(phi) * rx + std::cos(phi) * ry;
      CHECK(b.x.value().at(i, j) == doctest::Approx(ex).epsilon(1e-12));
      CHECK(b.y.value().at(i, j) == doctest::Approx(ey).epsilon(1e-12));
    }
}

TEST_CASE("full oriented cross-attention gradient matches finite differences") {
  Rng rng(15);
  const int64_t n = 2, d = 8;
  const int g = 2, o = 4;
  CrossAttentionConfig cfg{g, o, 2.0, {8, 16}};
  const CrossAttentionWeights w = random_weights(rng, d, g, o);
  const Tensor qc_t = rand_tensor(rng, {n, d});
  const Tensor qp_t = random_qp5(rng, n, 24.0);
  const Tensor f0 = rand_tensor(rng, {4, 4, d});
  const Tensor f1 = rand_tensor(rng, {2, 2, d});

  auto forward = [&](const Tensor& qc_in, const Tensor& qp_in, const Tensor& f0_in,
                     const Tensor& f1_in, bool grad, std::vector<Var>* leaves) {
    Var qc = Var::leaf(qc_in, grad);
    Var qp = Var::leaf(qp_in, grad);
    FeaturePyramid fp;
    fp.levels = {Var::leaf(f0_in, grad), Var::leaf(f1_in, grad)};
    fp.strides = {8, 16};
    if (leaves) *leaves = {qc, qp, fp.levels[0], fp.levels[1]};
    return oriented_cross_attention(qc, qp, fp, cfg, params_from_weights(w, false));
  };

  std::vector<Var> leaves;
  backpropagate(sum(forward(qc_t, qp_t, f0, f1, true, &leaves)));

  const Tensor* tensors[4] = {&qc_t, &qp_t, &f0, &f1};
  for (int which = 0; which < 4; ++which) {
    const Tensor fd = finite_difference_gradient(
        [&](const Tensor& probe) {
          NoGradGuard ng;
          const Tensor& a = which == 0 ? probe : qc_t;
          const Tensor& b = which == 1 ? probe : qp_t;
          const Tensor& c = which == 2 ? probe : f0;
          const Tensor& e = which == 3 ? probe : f1;
          return sum(forward(a, b, c, e, false, nullptr)).value()[0];
        },
        *tensors[which]);
    INFO("leaf " << which);
    CHECK(gradient_rel_error(leaves[static_cast<size_t>(which)].grad(), fd) <= 1e-4);
  }
}
