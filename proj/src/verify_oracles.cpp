#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ofkit/verify.hpp"

namespace ofkit {

namespace {

struct Sym2 {
  double a, b, c;  // [[a,b],[b,c]]
};

struct Eig2 {
  double l1, l2;      // eigenvalues, l1 >= l2
  double v1x, v1y;    // unit eigenvector of l1
};

Eig2 eig_sym2(const Sym2& m) {
  const double half_tr = 0.5 * (m.a + m.c);
  const double half_diff = 0.5 * (m.a - m.c);
  const double disc = std::sqrt(half_diff * half_diff + m.b * m.b);
  Eig2 e;
  e.l1 = half_tr + disc;
  e.l2 = half_tr - disc;
  if (std::fabs(m.b) > 1e-300) {
    const double vx = e.l1 - m.c, vy = m.b;
    const double n = std::hypot(vx, vy);
    e.v1x = vx / n;
    e.v1y = vy / n;
  } else if (m.a >= m.c) {
    e.v1x = 1.0;
    e.v1y = 0.0;
  } else {
    e.v1x = 0.0;
    e.v1y = 1.0;
  }
  return e;
}

Sym2 sqrt_sym2(const Sym2& m) {
  const Eig2 e = eig_sym2(m);
  if (e.l2 < -1e-9) throw std::domain_error("sqrt_sym2: matrix not PSD");
  const double s1 = std::sqrt(std::max(e.l1, 0.0));
  const double s2 = std::sqrt(std::max(e.l2, 0.0));
  // V diag(s) V^T with V = [v1, v2], v2 = rot90(v1)
  const double x = e.v1x, y = e.v1y;
  return {s1 * x * x + s2 * y * y, (s1 - s2) * x * y, s1 * y * y + s2 * x * x};
}

Sym2 to_sym(const Gaussian2D& g) { return {g.var_xx, g.var_xy, g.var_yy}; }

}  // namespace

double wasserstein_distance_eigen(const Gaussian2D& a, const Gaussian2D& b) {
  const Sym2 s1 = to_sym(a), s2 = to_sym(b);
  const Sym2 r = sqrt_sym2(s1);
  // m = r * s2 * r (symmetric since r is symmetric)
  const double m00 = r.a * s2.a + r.b * s2.b;
  const double m01 = r.a * s2.b + r.b * s2.c;
  const double m10 = r.b * s2.a + r.c * s2.b;
  const double m11 = r.b * s2.b + r.c * s2.c;
  const Sym2 m = {m00 * r.a + m01 * r.b, m00 * r.b + m01 * r.c, m10 * r.b + m11 * r.c};
  const Eig2 em = eig_sym2(m);
  const double tr_sqrt = std::sqrt(std::max(em.l1, 0.0)) + std::sqrt(std::max(em.l2, 0.0));
  const double dx = a.mu_x - b.mu_x, dy = a.mu_y - b.mu_y;
  const double d2 = dx * dx + dy * dy + (s1.a + s1.c) + (s2.a + s2.c) - 2.0 * tr_sqrt;
  return std::sqrt(std::max(d2, 0.0));
}

double rasterized_iou(const OrientedBox& a, const OrientedBox& b, int grid) {
  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (const OrientedBox* box : {&a, &b})
    for (const Vec2& v : box_corners(*box)) {
      min_x = std::min(min_x, v.x);
      max_x = std::max(max_x, v.x);
      min_y = std::min(min_y, v.y);
      max_y = std::max(max_y, v.y);
    }
  const double sx = (max_x - min_x) / grid;
  const double sy = (max_y - min_y) / grid;
  const double ca = std::cos(a.theta), sa = std::sin(a.theta);
  const double cb = std::cos(b.theta), sb = std::sin(b.theta);
  const double hwa = 0.5 * a.w, hha = 0.5 * a.h, hwb = 0.5 * b.w, hhb = 0.5 * b.h;
  int64_t inter = 0, uni = 0;
  for (int iy = 0; iy < grid; ++iy) {
    const double py = min_y + (iy + 0.5) * sy;
    for (int ix = 0; ix < grid; ++ix) {
      const double px = min_x + (ix + 0.5) * sx;
      const double rax = px - a.cx, ray = py - a.cy;
      const bool ina = std::fabs(ca * rax + sa * ray) <= hwa &&
                       std::fabs(-sa * rax + ca * ray) <= hha;
      const double rbx = px - b.cx, rby = py - b.cy;
      const bool inb = std::fabs(cb * rbx + sb * rby) <= hwb &&
                       std::fabs(-sb * rbx + cb * rby) <= hhb;
      inter += ina && inb;
      uni += ina || inb;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double brute_force_assignment_cost(const Tensor& cost) {
  if (cost.rank() != 2) throw std::invalid_argument("brute_force_assignment_cost: 2-D cost");
  const int64_t n = cost.dim(0), m = cost.dim(1);
  // enumerate injections of the smaller side into the larger
  const bool rows_small = n <= m;
  const int64_t k = rows_small ? n : m;
  const int64_t big = rows_small ? m : n;
  std::vector<int> perm(static_cast<size_t>(big));
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end());
  double best = 1e300;
  do {
    double total = 0.0;
    for (int64_t i = 0; i < k; ++i)
      total += rows_small ? cost.at(i, perm[static_cast<size_t>(i)])
                          : cost.at(perm[static_cast<size_t>(i)], i);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace ofkit
