#pragma once

#include <span>
#include <utility>
#include <vector>

#include "ofkit/autodiff.hpp"
#include "ofkit/geometry.hpp"

namespace ofkit {

// Sinusoidal encoding config. Each encoded coordinate contributes K sine and
// K cosine entries; frequency k scales the coordinate by T^(-k/K).
struct PEConfig {
  double temperature = 10000.0;
  int frequencies = 64;  // K; per-coordinate width D' = 2K

  double freq_scale(int k) const;
  int embedding_length(int coords) const { return 2 * frequencies * coords; }
  void validate() const;
};

// Layout: [sin c0 | sin c1 | ... | cos c0 | cos c1 | ...], frequencies
// ascending inside each block. Fixed for checkpoint compatibility.
std::vector<double> sinusoidal_pe(std::span<const double> coords, const PEConfig& cfg);

// Per-frequency means and diagonal variances of the lifted Gaussian.
struct LiftedGaussian {
  std::vector<double> mu_x, mu_y;    // length K
  std::vector<double> var_x, var_y;  // diag of the lifted covariance
};
LiftedGaussian lift_gaussian(const Gaussian2D& g, const PEConfig& cfg);

// E[sin x], E[cos x] for x ~ N(mu, var): the closed-form attenuation.
std::pair<double, double> expected_sincos(double mu, double var);

// Gaussian positional encoding of a box: expectation of the sinusoidal
// encoding of (x, y) under the box's Gaussian. Length 4K; angle and size
// enter through the covariance attenuation.
std::vector<double> gaussian_pe(const OrientedBox& box, const PEConfig& cfg);

// Tape version, rowwise over positional queries in (x, y, z, r, theta) form;
// output N x 4K, differentiable w.r.t. the query parameters.
Var gaussian_pe_rows(const Var& qp5, const PEConfig& cfg);

}  // namespace ofkit
