#include <cmath>

#include "ofkit/verify.hpp"

namespace ofkit {

namespace {

double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y = x * w + b, accumulation over k ascending, bias added after the sum
Tensor ref_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int64_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  Tensor y({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      const double a = x.at(i, kk);
      for (int64_t j = 0; j < n; ++j) y.at(i, j) += a * w.at(kk, j);
    }
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) y.at(i, j) += b[j];
  return y;
}

double ref_bilinear(const Tensor& fmap, double fx, double fy, int64_t c) {
  const int64_t H = fmap.dim(0), W = fmap.dim(1);
  const int64_t x0 = static_cast<int64_t>(std::floor(fx));
  const int64_t y0 = static_cast<int64_t>(std::floor(fy));
  const double tx = fx - static_cast<double>(x0);
  const double ty = fy - static_cast<double>(y0);
  auto at = [&](int64_t yy, int64_t xx) {
    return (yy >= 0 && yy < H && xx >= 0 && xx < W) ? fmap.at(yy, xx, c) : 0.0;
  };
  const double v00 = at(y0, x0), v01 = at(y0, x0 + 1);
  const double v10 = at(y0 + 1, x0), v11 = at(y0 + 1, x0 + 1);
  return (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11);
}

}  // namespace

Tensor reference_cross_attention(const Tensor& qc, const Tensor& qp5,
                                 const std::vector<Tensor>& levels,
                                 const std::vector<int>& strides, int heads, int points,
                                 double eta, const CrossAttentionWeights& w) {
  const int64_t n = qc.dim(0), d = qc.dim(1);
  const int64_t go = static_cast<int64_t>(heads) * points;
  const int64_t dh = d / heads;
  const int64_t num_levels = static_cast<int64_t>(levels.size());

  const Tensor offsets = ref_linear(qc, w.offsets_w, w.offsets_b);  // N x 3gO

  // gates
  Tensor cgate = ref_linear(qc, w.channel_a_w, w.channel_a_b);
  for (int64_t i = 0; i < cgate.numel(); ++i) cgate[i] = cgate[i] > 0 ? cgate[i] : 0.0;
  cgate = ref_linear(cgate, w.channel_b_w, w.channel_b_b);
  for (int64_t i = 0; i < cgate.numel(); ++i) cgate[i] = ref_sigmoid(cgate[i]);

  Tensor sgate = ref_linear(qc, w.spatial_a_w, w.spatial_a_b);
  for (int64_t i = 0; i < sgate.numel(); ++i) sgate[i] = sgate[i] > 0 ? sgate[i] : 0.0;
  sgate = ref_linear(sgate, w.spatial_b_w, w.spatial_b_b);
  for (int64_t i = 0; i < sgate.numel(); ++i) sgate[i] = ref_sigmoid(sgate[i]);

  Tensor flat({n, points * d});  // (h*O + o)*dh + c per query
  std::vector<double> acc(static_cast<size_t>(dh));
  for (int64_t q = 0; q < n; ++q) {
    const double cx = qp5.at(q, 0), cy = qp5.at(q, 1);
    const double z = qp5.at(q, 2), r = qp5.at(q, 3), theta = qp5.at(q, 4);
    const double sx = std::exp2(z - r), sy = std::exp2(z + r);
    const double cth = std::cos(theta), sth = std::sin(theta);
    for (int h = 0; h < heads; ++h)
      for (int o = 0; o < points; ++o) {
        const int64_t col = static_cast<int64_t>(h) * points + o;
        const double xt = offsets.at(q, col) * sx + cx;
        const double yt = offsets.at(q, go + col) * sy + cy;
        const double zt = offsets.at(q, 2 * go + col) + z;
        const double rx = xt - cx, ry = yt - cy;
        const double px = (rx * cth - ry * sth) + cx;
        const double py = (rx * sth + ry * cth) + cy;

        std::fill(acc.begin(), acc.end(), 0.0);
        for (int64_t l = 0; l < num_levels; ++l) {
          const double inv_s = 1.0 / static_cast<double>(strides[static_cast<size_t>(l)]);
          const double diff = zt + (-std::log2(static_cast<double>(strides[static_cast<size_t>(l)])));
          const double weight = ref_sigmoid((diff * diff) * (-1.0 / eta));
          const double fx = px * inv_s + (-0.5);
          const double fy = py * inv_s + (-0.5);
          for (int64_t c = 0; c < dh; ++c) {
            const double v = ref_bilinear(levels[static_cast<size_t>(l)], fx, fy,
                                          static_cast<int64_t>(h) * dh + c);
            acc[static_cast<size_t>(c)] += v * weight;
          }
        }
        for (int64_t c = 0; c < dh; ++c) {
          const double gated =
              (acc[static_cast<size_t>(c)] * cgate.at(q, static_cast<int64_t>(h) * dh + c)) *
              sgate.at(q, col);
          flat.at(q, col * dh + c) = gated;
        }
      }
  }
  return ref_linear(flat, w.out_w, w.out_b);
}

}  // namespace ofkit
