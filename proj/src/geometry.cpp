#include "ofkit/geometry.hpp"

#include <algorithm>

namespace ofkit {

namespace {

void require_positive_size(const OrientedBox& b) {
  if (!(b.w > 0.0) || !(b.h > 0.0))
    throw std::domain_error("oriented box requires w > 0 and h > 0");
}

kern::Box<double> to_kern(const OrientedBox& b) { return {b.cx, b.cy, b.w, b.h, b.theta}; }

kern::Gauss<double> to_kern(const Gaussian2D& g) {
  return {g.mu_x, g.mu_y, g.var_xx, g.var_xy, g.var_yy};
}

}  // namespace

bool box_is_canonical(const OrientedBox& b) {
  return b.w > 0.0 && b.h > 0.0 && b.theta >= -kPi / 2 && b.theta < kPi / 2;
}

OrientedBox normalize_angle(const OrientedBox& b) {
  require_positive_size(b);
  // fold into [-pi, pi), then resolve the half-turn band with a w/h swap
  double t = b.theta - 2.0 * kPi * std::floor((b.theta + kPi) / (2.0 * kPi));
  OrientedBox out = b;
  if (t >= kPi / 2) {
    out.w = b.h;
    out.h = b.w;
    out.theta = t - kPi / 2;
  } else if (t < -kPi / 2) {
    out.w = b.h;
    out.h = b.w;
    out.theta = t + kPi / 2;
  } else {
    out.theta = t;
  }
  return out;
}

std::array<Vec2, 4> box_corners(const OrientedBox& b) {
  const auto poly = kern::box_polygon(to_kern(b));
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) out[i] = {poly.pts[i].x, poly.pts[i].y};
  return out;
}

Gaussian2D box_to_gaussian(const OrientedBox& b) {
  require_positive_size(b);
  const auto g = kern::box_to_gaussian(to_kern(b));
  return {g.mx, g.my, g.xx, g.xy, g.yy};
}

QueryBox5 box_to_zr(const OrientedBox& b) {
  require_positive_size(b);
  return {b.cx, b.cy, std::log2(std::sqrt(b.w * b.h)), std::log2(b.h / b.w), b.theta};
}

OrientedBox zr_to_box(const QueryBox5& q) {
  double w, h;
  kern::zr_to_wh(q.z, q.r, w, h);
  return {q.x, q.y, w, h, q.theta};
}

double wasserstein_distance(const Gaussian2D& a, const Gaussian2D& b) {
  return kern::wasserstein_distance(to_kern(a), to_kern(b));
}

double wasserstein_score(const Gaussian2D& a, const Gaussian2D& b) {
  return kern::wasserstein_score(to_kern(a), to_kern(b));
}

double wasserstein_score(const OrientedBox& a, const OrientedBox& b) {
  return kern::wasserstein_score(kern::box_to_gaussian(to_kern(a)),
                                 kern::box_to_gaussian(to_kern(b)));
}

double rotated_iou(const OrientedBox& a, const OrientedBox& b, bool* degenerate) {
  return kern::rotated_iou(to_kern(a), to_kern(b), degenerate);
}

double signed_area(const ConvexPolygon& p) {
  if (p.vertices.size() < 3) return 0.0;
  double acc = 0.0;
  for (size_t i = 0; i < p.vertices.size(); ++i) {
    const Vec2& a = p.vertices[i];
    const Vec2& b = p.vertices[(i + 1) % p.vertices.size()];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * acc;
}

ConvexPolygon box_to_polygon(const OrientedBox& b) {
  ConvexPolygon p;
  for (const Vec2& v : box_corners(b)) p.vertices.push_back(v);
  return p;
}

ConvexPolygon clip_convex(const ConvexPolygon& subject, const ConvexPolygon& clip) {
  kern::PolyT<double> s, c;
  if (subject.vertices.size() > 16 || clip.vertices.size() > 16)
    throw std::invalid_argument("clip_convex: polygon capacity exceeded");
  s.n = static_cast<int>(subject.vertices.size());
  for (int i = 0; i < s.n; ++i) s.pts[i] = {subject.vertices[i].x, subject.vertices[i].y};
  c.n = static_cast<int>(clip.vertices.size());
  for (int i = 0; i < c.n; ++i) c.pts[i] = {clip.vertices[i].x, clip.vertices[i].y};
  const auto res = kern::clip_convex(s, c);
  ConvexPolygon out;
  for (int i = 0; i < res.n; ++i) out.vertices.push_back({res.pts[i].x, res.pts[i].y});
  return out;
}

bool point_in_box(const OrientedBox& b, double px, double py) {
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const double rx = px - b.cx, ry = py - b.cy;
  const double u = c * rx + s * ry;
  const double v = -s * rx + c * ry;
  return std::fabs(u) <= 0.5 * b.w && std::fabs(v) <= 0.5 * b.h;
}

namespace {

double cross3(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew monotone chain, CCW hull.
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  const size_t n = pts.size();
  if (n < 3) return pts;
  std::vector<Vec2> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross3(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const size_t lower = k + 1;
  for (size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross3(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace

OrientedBox minimum_enclosing_box(const std::vector<Vec2>& pts) {
  if (pts.size() < 3) throw std::invalid_argument("minimum_enclosing_box: needs >= 3 points");
  std::vector<Vec2> hull = convex_hull(pts);
  if (hull.size() < 3) {
    // collinear input: degenerate box along the segment is not representable
    throw std::domain_error("minimum_enclosing_box: points are collinear");
  }

  double best_area = std::numeric_limits<double>::infinity();
  OrientedBox best;
  const size_t n = hull.size();
  for (size_t e = 0; e < n; ++e) {
    const Vec2& a = hull[e];
    const Vec2& b = hull[(e + 1) % n];
    const double ex = b.x - a.x, ey = b.y - a.y;
    const double len = std::hypot(ex, ey);
    if (len < 1e-12) continue;
    const double ux = ex / len, uy = ey / len;
    double lo_u = 1e300, hi_u = -1e300, lo_v = 1e300, hi_v = -1e300;
    for (const Vec2& p : hull) {
      const double pu = p.x * ux + p.y * uy;
      const double pv = -p.x * uy + p.y * ux;
      lo_u = std::min(lo_u, pu);
      hi_u = std::max(hi_u, pu);
      lo_v = std::min(lo_v, pv);
      hi_v = std::max(hi_v, pv);
    }
    const double area = (hi_u - lo_u) * (hi_v - lo_v);
    if (area < best_area - 1e-12) {
      best_area = area;
      const double cu = 0.5 * (lo_u + hi_u), cv = 0.5 * (lo_v + hi_v);
      best.cx = cu * ux - cv * uy;
      best.cy = cu * uy + cv * ux;
      best.w = hi_u - lo_u;
      best.h = hi_v - lo_v;
      best.theta = std::atan2(uy, ux);
    }
  }

  // quarter-turn fold into [-pi/4, pi/4); odd folds swap sides
  const double k = std::floor(best.theta / (kPi / 2) + 0.5);
  best.theta -= k * (kPi / 2);
  if (std::llround(k) % 2 != 0) std::swap(best.w, best.h);
  // guard against w or h collapsing for near-degenerate hulls
  best.w = std::max(best.w, 1e-9);
  best.h = std::max(best.h, 1e-9);
  return best;
}

}  // namespace ofkit
