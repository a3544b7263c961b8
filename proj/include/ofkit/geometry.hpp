#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ofkit/dual.hpp"

namespace ofkit {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kWassersteinTau = 1.0;
inline constexpr double kWassersteinEps = 1e-7;

struct Vec2 {
  double x = 0.0, y = 0.0;
};

// 5-parameter rotated rectangle. theta is the rotation of the width axis
// from the image x-axis, canonical range [-pi/2, pi/2).
struct OrientedBox {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0, theta = 0.0;
};

// mean + symmetric 2x2 covariance in pixel units
struct Gaussian2D {
  double mu_x = 0.0, mu_y = 0.0;
  double var_xx = 0.0, var_xy = 0.0, var_yy = 0.0;
};

// (x, y, log2 scale, log2 aspect, theta); w = 2^(z-r/2), h = 2^(z+r/2)
struct QueryBox5 {
  double x = 0.0, y = 0.0, z = 0.0, r = 0.0, theta = 0.0;
};

struct ConvexPolygon {
  std::vector<Vec2> vertices;  // counter-clockwise
};

// ---- generic kernels (double for evaluation, Dual<N> for Jacobians) ----
namespace kern {

template <class T>
struct Box {
  T cx, cy, w, h, theta;
};

template <class T>
struct Gauss {
  T mx, my, xx, xy, yy;
};

template <class T>
Gauss<T> box_to_gaussian(const Box<T>& b) {
  const T c = cos(b.theta), s = sin(b.theta);
  const T a = b.w * b.w * T(0.25);  // eigenvalues w^2/4, h^2/4
  const T e = b.h * b.h * T(0.25);
  Gauss<T> g;
  g.mx = b.cx;
  g.my = b.cy;
  g.xx = a * c * c + e * s * s;
  g.xy = (a - e) * s * c;
  g.yy = a * s * s + e * c * c;
  return g;
}

// clamps tiny negative radicands from rounding; larger ones are hard errors
template <class T>
T checked_sqrt(const T& x, const char* what) {
  if (value_of(x) < 0.0) {
    if (value_of(x) < -1e-9)
      throw std::domain_error(std::string("wasserstein: negative radicand in ") + what);
    return T(0.0);
  }
  return sqrt(x);
}

template <class T>
T wasserstein_distance(const Gauss<T>& a, const Gauss<T>& b) {
  if (value_of(a.xx) <= 0 || value_of(a.yy) <= 0 ||
      value_of(a.xx * a.yy - a.xy * a.xy) <= 0 || value_of(b.xx) <= 0 ||
      value_of(b.yy) <= 0 || value_of(b.xx * b.yy - b.xy * b.xy) <= 0)
    throw std::domain_error("wasserstein: covariance is not SPD");
  const T dx = a.mx - b.mx, dy = a.my - b.my;
  const T det_a = a.xx * a.yy - a.xy * a.xy;
  const T det_b = b.xx * b.yy - b.xy * b.xy;
  const T tr_ab = a.xx * b.xx + a.xy * b.xy * T(2.0) + a.yy * b.yy;
  // 2x2 identity: Tr((S1^1/2 S2 S1^1/2)^1/2) = sqrt(Tr(S1 S2) + 2 sqrt(det S1 det S2))
  const T cross = checked_sqrt(tr_ab + T(2.0) * checked_sqrt(det_a * det_b, "det"), "trace");
  // grouped so every term commutes under argument swap: symmetry holds bitwise
  const T tr_sum = (a.xx + a.yy) + (b.xx + b.yy);
  const T d2 = ((dx * dx + dy * dy) + tr_sum) - T(2.0) * cross;
  return checked_sqrt(d2, "distance");
}

template <class T>
T wasserstein_score(const Gauss<T>& a, const Gauss<T>& b) {
  const T d = wasserstein_distance(a, b);
  return log(T(1.0) / (T(kWassersteinTau) + d) + T(kWassersteinEps));
}

template <class T>
void zr_to_wh(const T& z, const T& r, T& w, T& h) {
  w = exp2(z - r * T(0.5));
  h = exp2(z + r * T(0.5));
}

// --- convex clipping on fixed-capacity rings (4-gon x 4-gon => <= 8) ---
template <class T>
struct PointT {
  T x, y;
};

template <class T>
struct PolyT {
  std::array<PointT<T>, 16> pts;
  int n = 0;
};

template <class T>
PolyT<T> box_polygon(const Box<T>& b) {
  const T c = cos(b.theta), s = sin(b.theta);
  const T hw = b.w * T(0.5), hh = b.h * T(0.5);
  PolyT<T> p;
  p.n = 4;
  const double sx[4] = {1, -1, -1, 1};
  const double sy[4] = {1, 1, -1, -1};
  for (int i = 0; i < 4; ++i) {
    const T ox = hw * T(sx[i]), oy = hh * T(sy[i]);
    p.pts[i].x = b.cx + c * ox - s * oy;
    p.pts[i].y = b.cy + s * ox + c * oy;
  }
  return p;
}

template <class T>
T polygon_area_abs(const PolyT<T>& p) {
  if (p.n < 3) return T(0.0);
  T acc(0.0);
  for (int i = 0; i < p.n; ++i) {
    const auto& a = p.pts[i];
    const auto& b = p.pts[(i + 1) % p.n];
    acc += a.x * b.y - b.x * a.y;
  }
  return abs(acc * T(0.5));
}

// Sutherland-Hodgman; the clip polygon must be convex and CCW.
template <class T>
PolyT<T> clip_convex(const PolyT<T>& subject, const PolyT<T>& clip) {
  PolyT<T> cur = subject;
  for (int e = 0; e < clip.n && cur.n > 0; ++e) {
    const auto& a = clip.pts[e];
    const auto& b = clip.pts[(e + 1) % clip.n];
    const T ex = b.x - a.x, ey = b.y - a.y;
    PolyT<T> next;
    for (int i = 0; i < cur.n; ++i) {
      const auto& s = cur.pts[i];
      const auto& t = cur.pts[(i + 1) % cur.n];
      const T ds = ex * (s.y - a.y) - ey * (s.x - a.x);  // >=0: inside (left of edge)
      const T dt = ex * (t.y - a.y) - ey * (t.x - a.x);
      const bool s_in = value_of(ds) >= 0.0;
      const bool t_in = value_of(dt) >= 0.0;
      if (s_in && t_in) {
        next.pts[next.n++] = t;
      } else if (s_in && !t_in) {
        const T u = ds / (ds - dt);
        next.pts[next.n++] = {s.x + u * (t.x - s.x), s.y + u * (t.y - s.y)};
      } else if (!s_in && t_in) {
        const T u = ds / (ds - dt);
        next.pts[next.n++] = {s.x + u * (t.x - s.x), s.y + u * (t.y - s.y)};
        next.pts[next.n++] = t;
      }
    }
    cur = next;
  }
  return cur;
}

constexpr double kDegenerateArea = 1e-12;

template <class T>
bool box_param_less(const Box<T>& a, const Box<T>& b) {
  const double pa[5] = {value_of(a.cx), value_of(a.cy), value_of(a.w), value_of(a.h),
                        value_of(a.theta)};
  const double pb[5] = {value_of(b.cx), value_of(b.cy), value_of(b.w), value_of(b.h),
                        value_of(b.theta)};
  for (int i = 0; i < 5; ++i) {
    if (pa[i] < pb[i]) return true;
    if (pa[i] > pb[i]) return false;
  }
  return false;
}

template <class T>
T rotated_iou(const Box<T>& a, const Box<T>& b, bool* degenerate = nullptr) {
  if (degenerate) *degenerate = false;
  if (value_of(a.w * a.h) < kDegenerateArea || value_of(b.w * b.h) < kDegenerateArea) {
    if (degenerate) *degenerate = true;
    return T(0.0);
  }
  // identical parameters: IoU is exactly 1 (an interior maximum, gradient 0)
  if (value_of(a.cx) == value_of(b.cx) && value_of(a.cy) == value_of(b.cy) &&
      value_of(a.w) == value_of(b.w) && value_of(a.h) == value_of(b.h) &&
      value_of(a.theta) == value_of(b.theta))
    return T(1.0);
  // canonical clip order: the result is bitwise symmetric in (a, b)
  const Box<T>& first = box_param_less(b, a) ? b : a;
  const Box<T>& second = box_param_less(b, a) ? a : b;
  const T area_sum = first.w * first.h + second.w * second.h;
  const T inter = polygon_area_abs(clip_convex(box_polygon(first), box_polygon(second)));
  return inter / (area_sum - inter);
}

}  // namespace kern

// ---- plain-double public surface ----

bool box_is_canonical(const OrientedBox& b);
OrientedBox normalize_angle(const OrientedBox& b);
std::array<Vec2, 4> box_corners(const OrientedBox& b);

Gaussian2D box_to_gaussian(const OrientedBox& b);
QueryBox5 box_to_zr(const OrientedBox& b);
OrientedBox zr_to_box(const QueryBox5& q);

double wasserstein_distance(const Gaussian2D& a, const Gaussian2D& b);
double wasserstein_score(const Gaussian2D& a, const Gaussian2D& b);
double wasserstein_score(const OrientedBox& a, const OrientedBox& b);

double rotated_iou(const OrientedBox& a, const OrientedBox& b, bool* degenerate = nullptr);

double signed_area(const ConvexPolygon& p);
ConvexPolygon box_to_polygon(const OrientedBox& b);
ConvexPolygon clip_convex(const ConvexPolygon& subject, const ConvexPolygon& clip);

bool point_in_box(const OrientedBox& b, double px, double py);

// Smallest-area enclosing rectangle (rotating calipers over the convex
// hull), reported with theta folded into [-pi/4, pi/4) so the result is a
// unique representative among the swap-equivalent forms.
OrientedBox minimum_enclosing_box(const std::vector<Vec2>& pts);

}  // namespace ofkit
