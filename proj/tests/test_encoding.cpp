#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ofkit/encoding.hpp"
#include "ofkit/ops.hpp"
#include "ofkit/rng.hpp"

using namespace ofkit;

namespace {

// Monte-Carlo estimate of E[sinusoidal_pe(x)], x ~ N(mu, Sigma).
std::vector<double> monte_carlo_pe(const Gaussian2D& g, const PEConfig& cfg, int64_t samples,
                                   Rng& rng) {
  const double lxx = std::sqrt(g.var_xx);
  const double lyx = g.var_xy / lxx;
  const double lyy = std::sqrt(g.var_yy - lyx * lyx);
  std::vector<double> acc(static_cast<size_t>(cfg.embedding_length(2)), 0.0);
  for (int64_t s = 0; s < samples; ++s) {
    const double z0 = normal(rng), z1 = normal(rng);
    const double coords[2] = {g.mu_x + lxx * z0, g.mu_y + lyx * z0 + lyy * z1};
    const std::vector<double> pe = sinusoidal_pe(coords, cfg);
    for (size_t i = 0; i < pe.size(); ++i) acc[i] += pe[i];
  }
  for (double& v : acc) v /= static_cast<double>(samples);
  return acc;
}

}  // namespace

TEST_CASE("sinusoidal_pe closed-form anchors and layout") {
  PEConfig cfg{100.0, 4};
  const double zero[2] = {0.0, 0.0};
  const auto pe0 = sinusoidal_pe(zero, cfg);
  REQUIRE(static_cast<int>(pe0.size()) == cfg.embedding_length(2));
  for (int i = 0; i < 8; ++i) CHECK(pe0[static_cast<size_t>(i)] == 0.0);   // sin blocks
  for (int i = 8; i < 16; ++i) CHECK(pe0[static_cast<size_t>(i)] == 1.0);  // cos blocks

  // x = pi * T^(2k/D') makes frequency k hit sin = 0, cos = -1
  for (int k = 0; k < cfg.frequencies; ++k) {
    const double x[1] = {kPi / cfg.freq_scale(k)};
    const auto pe = sinusoidal_pe(x, cfg);
    CHECK(std::fabs(pe[static_cast<size_t>(k)]) <= 1e-9);
    CHECK(pe[static_cast<size_t>(cfg.frequencies + k)] == doctest::Approx(-1.0));
  }

  Rng rng(7);
  for (int it = 0; it < 50; ++it) {
    const double x[2] = {uniform(rng, -500, 500), uniform(rng, -500, 500)};
    for (double v : sinusoidal_pe(x, cfg)) {
      CHECK(v <= 1.0);
      CHECK(v >= -1.0);
    }
  }
  CHECK_THROWS(sinusoidal_pe(zero, PEConfig{0.5, 4}));
}

TEST_CASE("lift_gaussian scales means linearly and variances quadratically") {
  const Gaussian2D g = box_to_gaussian({10, 20, 8, 4, 0.7});
  PEConfig cfg{10000.0, 16};
  const LiftedGaussian lifted = lift_gaussian(g, cfg);
  CHECK(lifted.mu_x[0] == g.mu_x);  // k = 0: scale 1
  CHECK(lifted.var_x[0] == g.var_xx);
  for (int k = 0; k < cfg.frequencies; ++k) {
    const double s = cfg.freq_scale(k);
    CHECK(lifted.mu_x[static_cast<size_t>(k)] == doctest::Approx(s * g.mu_x));
    CHECK(lifted.var_x[static_cast<size_t>(k)] == doctest::Approx(s * s * g.var_xx));
    CHECK(lifted.var_y[static_cast<size_t>(k)] == doctest::Approx(s * s * g.var_yy));
  }
  const LiftedGaussian zero = lift_gaussian({1, 2, 0, 0, 0}, cfg);
  for (double v : zero.var_x) CHECK(v == 0.0);
}

TEST_CASE("expected_sincos closed form") {
  CHECK(expected_sincos(0.0, 3.7).first == 0.0);
  const auto nv = expected_sincos(1.234, 0.0);
  CHECK(nv.first == std::sin(1.234));
  CHECK(nv.second == std::cos(1.234));
  CHECK(expected_sincos(kPi / 2, 2.0).first == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(expected_sincos(kPi / 2, 2.0).first == doctest::Approx(0.367879).epsilon(1e-5));
  CHECK_THROWS(expected_sincos(0.0, -1e-6));
}

TEST_CASE("expected_sincos matches a 1e6-sample Monte-Carlo estimate") {
  Rng rng(11);
  const double mu = kPi / 2, var = 2.0;
  double acc_s = 0.0, acc_c = 0.0;
  const int64_t n = 1000000;
  for (int64_t i = 0; i < n; ++i) {
    const double x = mu + std::sqrt(var) * normal(rng);
    acc_s += std::sin(x);
    acc_c += std::cos(x);
  }
  const auto [es, ec] = expected_sincos(mu, var);
  CHECK(std::fabs(acc_s / n - es) <= 3e-3);
  CHECK(std::fabs(acc_c / n - ec) <= 3e-3);
}

TEST_CASE("gaussian_pe reduces to sinusoidal_pe as the box shrinks") {
  PEConfig cfg{10000.0, 16};
  const OrientedBox tiny{12.5, -3.25, 1e-12, 1e-12, 0.9};
  const auto gp = gaussian_pe(tiny, cfg);
  const double coords[2] = {tiny.cx, tiny.cy};
  const auto sp = sinusoidal_pe(coords, cfg);
  REQUIRE(gp.size() == sp.size());
  for (size_t i = 0; i < gp.size(); ++i) CHECK(std::fabs(gp[i] - sp[i]) <= 1e-9);
}

TEST_CASE("gaussian_pe attenuates to zero for huge boxes") {
  PEConfig cfg{10000.0, 8};
  const auto pe = gaussian_pe({32, 32, 5000, 5000, 0.3}, cfg);
  // the k = 0 entries die first; high-k entries attenuate more slowly but
  // every entry of a huge box is tiny
  for (size_t i = 0; i < pe.size(); ++i) {
    CHECK(std::fabs(pe[i]) <= 1.0);
  }
  CHECK(std::fabs(pe[0]) <= 1e-12);
  CHECK(std::fabs(pe[static_cast<size_t>(2 * cfg.frequencies)]) <= 1e-12);
}

TEST_CASE("gaussian_pe is invariant to theta +/- pi and to w/h swap folds") {
  PEConfig cfg{10000.0, 16};
  Rng rng(13);
  for (int it = 0; it < 50; ++it) {
    OrientedBox b{uniform(rng, 0, 64), uniform(rng, 0, 64), uniform(rng, 2, 30),
                  uniform(rng, 2, 30), uniform(rng, -kPi / 2, kPi / 2)};
    const auto base = gaussian_pe(b, cfg);
    OrientedBox turned = b;
    turned.theta += kPi;
    const auto pe_pi = gaussian_pe(normalize_angle(turned), cfg);
    OrientedBox swapped{b.cx, b.cy, b.h, b.w, b.theta + kPi / 2};
    const auto pe_swap = gaussian_pe(normalize_angle(swapped), cfg);
    for (size_t i = 0; i < base.size(); ++i) {
      CHECK(std::fabs(base[i] - pe_pi[i]) <= 1e-9);
      CHECK(std::fabs(base[i] - pe_swap[i]) <= 1e-9);
    }
  }
}

TEST_CASE("attenuation is strictly monotone in box width for the x entries") {
  PEConfig cfg{10000.0, 8};
  const double widths[4] = {2, 6, 18, 54};
  std::vector<std::vector<double>> pes;
  for (double w : widths) pes.push_back(gaussian_pe({37.3, 11.1, w, 3, 0}, cfg));
  for (int k = 0; k < cfg.frequencies; ++k)
    for (size_t i = 0; i + 1 < pes.size(); ++i) {
      // hypot of the (sin, cos) pair equals the attenuation factor exactly
      const auto att = [&](size_t j) {
        return std::hypot(pes[j][static_cast<size_t>(k)],
                          pes[j][static_cast<size_t>(2 * cfg.frequencies + k)]);
      };
      CHECK(att(i) > att(i + 1));
    }
}

TEST_CASE("gaussian_pe matches the Monte-Carlo oracle on a random box") {
  PEConfig cfg{10000.0, 8};
  Rng rng(17);
  const OrientedBox b{uniform(rng, 10, 50), uniform(rng, 10, 50), uniform(rng, 4, 20),
                      uniform(rng, 4, 20), uniform(rng, -kPi / 2, kPi / 2)};
  const auto closed = gaussian_pe(b, cfg);
  const auto mc = monte_carlo_pe(box_to_gaussian(b), cfg, 1000000, rng);
  double worst = 0.0;
  for (size_t i = 0; i < closed.size(); ++i) worst = std::max(worst, std::fabs(closed[i] - mc[i]));
  CHECK(worst <= 3e-3);
}

TEST_CASE("gaussian_pe_rows gradient matches finite differences") {
  PEConfig cfg{10000.0, 4};
  Rng rng(19);
  Tensor qp({3, 5});
  for (int64_t i = 0; i < 3; ++i) {
    qp.at(i, 0) = uniform(rng, 5, 60);
    qp.at(i, 1) = uniform(rng, 5, 60);
    qp.at(i, 2) = uniform(rng, 2, 4.5);   // z
    qp.at(i, 3) = uniform(rng, -1, 1);    // r
    qp.at(i, 4) = uniform(rng, -1.2, 1.2);
  }
  Var x = Var::leaf(qp, true);
  Var pe = gaussian_pe_rows(x, cfg);
  REQUIRE(pe.value().shape() == std::vector<int64_t>{3, 16});
  backpropagate(sum(pe));
  const Tensor fd = finite_difference_gradient(
      [&](const Tensor& probe) {
        NoGradGuard ng;
        return sum(gaussian_pe_rows(Var::constant(probe), cfg)).value()[0];
      },
      qp);
  CHECK(gradient_rel_error(x.grad(), fd) <= 1e-4);

  // plain and tape paths agree bitwise
  for (int64_t i = 0; i < 3; ++i) {
    const OrientedBox box = zr_to_box({qp.at(i, 0), qp.at(i, 1), qp.at(i, 2), qp.at(i, 3), qp.at(i, 4)});
    const auto plain = gaussian_pe(box, cfg);
    for (size_t j = 0; j < plain.size(); ++j)
      CHECK(pe.value().at(i, static_cast<int64_t>(j)) == plain[j]);
  }
}
