#pragma once

#include <array>
#include <cmath>

namespace ofkit {

// Forward-mode scalar with N derivative slots. Geometry kernels are written
// against a generic scalar so the same code produces values (double) and
// per-parameter Jacobians (Dual<N>) for the tape's custom nodes.
template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit by design, mirrors double
  static Dual seeded(double value, int slot) {
    Dual out(value);
    out.d[static_cast<size_t>(slot)] = 1.0;
    return out;
  }

  Dual operator-() const {
    Dual out(-v);
    for (int i = 0; i < N; ++i) out.d[i] = -d[i];
    return out;
  }
  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    for (int i = 0; i < N; ++i) d[i] = (d[i] - v * inv * o.d[i]) * inv;
    v *= inv;
    return *this;
  }

  friend Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend Dual operator*(Dual a, const Dual& b) { return a *= b; }
  friend Dual operator/(Dual a, const Dual& b) { return a /= b; }

  friend bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
  friend bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
  friend bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
  friend bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }
};

template <int N>
Dual<N> sin(const Dual<N>& x) {
  Dual<N> out(std::sin(x.v));
  const double c = std::cos(x.v);
  for (int i = 0; i < N; ++i) out.d[i] = c * x.d[i];
  return out;
}

template <int N>
Dual<N> cos(const Dual<N>& x) {
  Dual<N> out(std::cos(x.v));
  const double s = -std::sin(x.v);
  for (int i = 0; i < N; ++i) out.d[i] = s * x.d[i];
  return out;
}

template <int N>
Dual<N> exp(const Dual<N>& x) {
  Dual<N> out(std::exp(x.v));
  for (int i = 0; i < N; ++i) out.d[i] = out.v * x.d[i];
  return out;
}

template <int N>
Dual<N> log(const Dual<N>& x) {
  Dual<N> out(std::log(x.v));
  const double inv = 1.0 / x.v;
  for (int i = 0; i < N; ++i) out.d[i] = inv * x.d[i];
  return out;
}

// d(sqrt)/dx at 0 is taken as 0 (subgradient of the clamped distance).
template <int N>
Dual<N> sqrt(const Dual<N>& x) {
  Dual<N> out(std::sqrt(x.v));
  const double scale = out.v > 0.0 ? 0.5 / out.v : 0.0;
  for (int i = 0; i < N; ++i) out.d[i] = scale * x.d[i];
  return out;
}

template <int N>
Dual<N> abs(const Dual<N>& x) {
  return x.v < 0.0 ? -x : x;
}

template <int N>
Dual<N> exp2(const Dual<N>& x) {
  constexpr double ln2 = 0.6931471805599453;
  Dual<N> out(std::exp2(x.v));
  for (int i = 0; i < N; ++i) out.d[i] = out.v * ln2 * x.d[i];
  return out;
}

// double passthroughs so generic kernels resolve unqualified math calls for
// both scalar types inside this namespace
inline double sin(double x) { return std::sin(x); }
inline double cos(double x) { return std::cos(x); }
inline double exp(double x) { return std::exp(x); }
inline double log(double x) { return std::log(x); }
inline double sqrt(double x) { return std::sqrt(x); }
inline double abs(double x) { return std::fabs(x); }
inline double exp2(double x) { return std::exp2(x); }

inline double value_of(double x) { return x; }
template <int N>
double value_of(const Dual<N>& x) {
  return x.v;
}

}  // namespace ofkit
