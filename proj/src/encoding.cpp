#include "ofkit/encoding.hpp"

#include <cmath>
#include <stdexcept>

#include "ofkit/row_map.hpp"

namespace ofkit {

double PEConfig::freq_scale(int k) const {
  // T^(-2k/D') with D' = 2K
  return std::pow(temperature, -static_cast<double>(k) / static_cast<double>(frequencies));
}

void PEConfig::validate() const {
  if (temperature <= 1.0) throw std::invalid_argument("PEConfig: temperature must be > 1");
  if (frequencies < 1) throw std::invalid_argument("PEConfig: frequency count must be positive");
}

std::vector<double> sinusoidal_pe(std::span<const double> coords, const PEConfig& cfg) {
  cfg.validate();
  const int K = cfg.frequencies;
  const size_t m = coords.size();
  std::vector<double> out(2 * static_cast<size_t>(K) * m);
  for (size_t c = 0; c < m; ++c)
    for (int k = 0; k < K; ++k) {
      const double arg = coords[c] * cfg.freq_scale(k);
      out[c * K + k] = std::sin(arg);
      out[(m + c) * K + k] = std::cos(arg);
    }
  return out;
}

LiftedGaussian lift_gaussian(const Gaussian2D& g, const PEConfig& cfg) {
  cfg.validate();
  const int K = cfg.frequencies;
  LiftedGaussian out;
  out.mu_x.resize(K);
  out.mu_y.resize(K);
  out.var_x.resize(K);
  out.var_y.resize(K);
  for (int k = 0; k < K; ++k) {
    const double s = cfg.freq_scale(k);
    out.mu_x[k] = s * g.mu_x;
    out.mu_y[k] = s * g.mu_y;
    out.var_x[k] = s * s * g.var_xx;
    out.var_y[k] = s * s * g.var_yy;
  }
  return out;
}

std::pair<double, double> expected_sincos(double mu, double var) {
  if (var < 0.0) throw std::domain_error("expected_sincos: negative variance");
  const double att = std::exp(-0.5 * var);
  return {std::sin(mu) * att, std::cos(mu) * att};
}

namespace {

// Shared core so the plain and tape paths perform identical arithmetic.
// Input: box as (cx, cy, w, h, theta); output: 4K embedding.
template <class T>
void gaussian_pe_core(const kern::Box<T>& box, const PEConfig& cfg, T* out) {
  const kern::Gauss<T> g = kern::box_to_gaussian(box);
  const int K = cfg.frequencies;
  for (int k = 0; k < K; ++k) {
    const double s = cfg.freq_scale(k);
    const T mx = g.mx * T(s);
    const T my = g.my * T(s);
    const T ax = exp(g.xx * T(-0.5 * s * s));
    const T ay = exp(g.yy * T(-0.5 * s * s));
    out[k] = sin(mx) * ax;          // sin x block
    out[K + k] = sin(my) * ay;      // sin y block
    out[2 * K + k] = cos(mx) * ax;  // cos x block
    out[3 * K + k] = cos(my) * ay;  // cos y block
  }
}

}  // namespace

std::vector<double> gaussian_pe(const OrientedBox& box, const PEConfig& cfg) {
  cfg.validate();
  if (!(box.w > 0.0) || !(box.h > 0.0))
    throw std::domain_error("gaussian_pe: box requires positive size");
  std::vector<double> out(static_cast<size_t>(cfg.embedding_length(2)));
  const kern::Box<double> b{box.cx, box.cy, box.w, box.h, box.theta};
  gaussian_pe_core(b, cfg, out.data());
  return out;
}

Var gaussian_pe_rows(const Var& qp5, const PEConfig& cfg) {
  cfg.validate();
  using D = Dual<5>;
  return map_rows<5>("gaussian_pe_rows", qp5, cfg.embedding_length(2),
                     [cfg](const D* row, D* out) {
                       kern::Box<D> b;
                       b.cx = row[0];
                       b.cy = row[1];
                       kern::zr_to_wh(row[2], row[3], b.w, b.h);
                       b.theta = row[4];
                       gaussian_pe_core(b, cfg, out);
                     });
}

}  // namespace ofkit
