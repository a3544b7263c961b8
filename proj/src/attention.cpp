#include "ofkit/attention.hpp"

#include <cmath>

#include "ofkit/row_map.hpp"

namespace ofkit {

void FeaturePyramid::validate(int64_t dim) const {
  if (levels.empty() || levels.size() != strides.size())
    throw std::invalid_argument("FeaturePyramid: levels and strides must align");
  for (size_t l = 0; l < levels.size(); ++l) {
    const Tensor& f = levels[l].value();
    if (f.rank() != 3 || f.dim(2) != dim)
      throw std::invalid_argument("FeaturePyramid: level " + std::to_string(l) +
                                  " must be [H,W," + std::to_string(dim) + "]");
    if (l > 0 && strides[l] != 2 * strides[l - 1])
      throw std::invalid_argument("FeaturePyramid: adjacent strides must differ by factor 2");
  }
}

Var wasserstein_score_matrix(const Var& qp5) {
  using D = Dual<10>;
  const double diag = std::log(1.0 + kWassersteinEps);  // coinciding queries
  return map_row_pairs<5>(
      "wasserstein_score_matrix", qp5,
      [](const D* a, const D* b) {
        kern::Box<D> ba{a[0], a[1], D(0), D(0), a[4]};
        kern::zr_to_wh(a[2], a[3], ba.w, ba.h);
        kern::Box<D> bb{b[0], b[1], D(0), D(0), b[4]};
        kern::zr_to_wh(b[2], b[3], bb.w, bb.h);
        return kern::wasserstein_score(kern::box_to_gaussian(ba), kern::box_to_gaussian(bb));
      },
      /*constant_diagonal=*/true, diag);
}

Var wasserstein_self_attention(const Var& qc, const Var& phi_d, const Var& scores,
                               const SelfAttentionConfig& cfg, const LinearParams& out_proj) {
  const Tensor& qv = qc.value();
  if (qv.rank() != 2) throw std::invalid_argument("self_attention: Qc must be N x D");
  const int64_t n = qv.dim(0), d = qv.dim(1);
  if (d % cfg.heads != 0)
    throw std::invalid_argument("self_attention: heads must divide the model width");
  if (!scores.value().same_shape(Tensor({n, n})) ||
      !phi_d.value().same_shape(qv))
    throw std::invalid_argument("self_attention: score/PE shape mismatch");

  const int64_t dh = d / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Var q = add(qc, phi_d);
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    const Var qh = slice(q, 1, h * dh, dh);
    Var logits = mul_scalar(matmul(qh, transpose(qh)), inv_sqrt);
    logits = add(logits, scores);
    const Var attn = softmax(logits);
    heads.push_back(matmul(attn, slice(qc, 1, h * dh, dh)));
  }
  return out_proj(concatenate(heads, 1));
}

CrossAttentionParams make_cross_attention_params(ParamStore& store, const std::string& prefix,
                                                 int64_t dim, const CrossAttentionConfig& cfg,
                                                 Rng& rng) {
  CrossAttentionParams p;
  const int64_t go = static_cast<int64_t>(cfg.heads) * cfg.points;
  p.offsets = make_linear(store, prefix + "/offsets", dim, 3 * go, rng);
  p.channel_a = make_linear(store, prefix + "/channel_a", dim, dim, rng);
  p.channel_b = make_linear(store, prefix + "/channel_b", dim, dim, rng);
  p.spatial_a = make_linear(store, prefix + "/spatial_a", dim, dim, rng);
  p.spatial_b = make_linear(store, prefix + "/spatial_b", dim, go, rng);
  p.out = make_linear(store, prefix + "/out", cfg.points * dim, dim, rng);
  return p;
}

Var box_sampling_frame(const Var& qp5) {
  using D = Dual<5>;
  return map_rows<5>("box_sampling_frame", qp5, 7, [](const D* row, D* out) {
    out[0] = row[0];                  // cx
    out[1] = row[1];                  // cy
    out[2] = exp2(row[2] - row[3]);   // 2^(z-r)
    out[3] = exp2(row[2] + row[3]);   // 2^(z+r)
    out[4] = cos(row[4]);
    out[5] = sin(row[4]);
    out[6] = row[2];                  // z
  });
}

Var compute_offsets(const Var& qc, const LinearParams& proj) { return proj(qc); }

SamplingPoints make_sampling_points(const Var& offsets, const Var& frame, int heads, int points) {
  const int64_t go = static_cast<int64_t>(heads) * points;
  if (offsets.value().rank() != 2 || offsets.value().dim(1) != 3 * go)
    throw std::invalid_argument("make_sampling_points: offsets must be N x 3gO");
  const Var dx = slice(offsets, 1, 0, go);
  const Var dy = slice(offsets, 1, go, go);
  const Var dz = slice(offsets, 1, 2 * go, go);
  const Var cx = slice(frame, 1, 0, 1);
  const Var cy = slice(frame, 1, 1, 1);
  const Var sx = slice(frame, 1, 2, 1);
  const Var sy = slice(frame, 1, 3, 1);
  const Var zc = slice(frame, 1, 6, 1);
  SamplingPoints pts;
  pts.x = add_rowwise(mul_rowwise(dx, sx), cx);  // x + dx * 2^(z-r)
  pts.y = add_rowwise(mul_rowwise(dy, sy), cy);  // y + dy * 2^(z+r)
  pts.z = add_rowwise(dz, zc);                   // z + dz
  return pts;
}

SamplingPoints align_points(const SamplingPoints& pts, const Var& frame) {
  const Var cx = slice(frame, 1, 0, 1);
  const Var cy = slice(frame, 1, 1, 1);
  const Var cth = slice(frame, 1, 4, 1);
  const Var sth = slice(frame, 1, 5, 1);
  const Var rx = sub_rowwise(pts.x, cx);
  const Var ry = sub_rowwise(pts.y, cy);
  SamplingPoints out;
  out.x = add_rowwise(sub(mul_rowwise(rx, cth), mul_rowwise(ry, sth)), cx);
  out.y = add_rowwise(add(mul_rowwise(rx, sth), mul_rowwise(ry, cth)), cy);
  out.z = pts.z;  // depth never rotates
  return out;
}

std::vector<std::vector<Var>> sample_values(const FeaturePyramid& fp, const SamplingPoints& pts,
                                            int heads) {
  const int64_t n = pts.x.value().dim(0);
  const int64_t go = pts.x.value().dim(1);
  const int64_t points = go / heads;
  const int64_t d = fp.levels[0].value().dim(2);
  const int64_t dh = d / heads;
  std::vector<std::vector<Var>> values(fp.levels.size());
  for (size_t l = 0; l < fp.levels.size(); ++l) {
    const double inv_s = 1.0 / static_cast<double>(fp.strides[l]);
    values[l].reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const Var px = reshape(slice(pts.x, 1, h * points, points), {n * points, 1});
      const Var py = reshape(slice(pts.y, 1, h * points, points), {n * points, 1});
      Var coords = concatenate({px, py}, 1);
      // pixel-center alignment: feature cell (i, j) sits at image coords
      // ((j + .5) s, (i + .5) s)
      coords = add_scalar(mul_scalar(coords, inv_s), -0.5);
      values[l].push_back(bilinear_gather(fp.levels[l], coords, h * dh, (h + 1) * dh));
    }
  }
  return values;
}

std::vector<Var> scale_aware(const SamplingPoints& pts,
                             const std::vector<std::vector<Var>>& values,
                             const CrossAttentionConfig& cfg) {
  const int64_t n = pts.z.value().dim(0);
  const int64_t go = pts.z.value().dim(1);
  const int64_t points = go / cfg.heads;
  std::vector<Var> fused(static_cast<size_t>(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    const Var zh = reshape(slice(pts.z, 1, h * points, points), {n * points, 1});
    for (size_t l = 0; l < values.size(); ++l) {
      const Var diff = add_scalar(zh, -std::log2(static_cast<double>(cfg.strides[l])));
      const Var weight = sigmoid(mul_scalar(mul(diff, diff), -1.0 / cfg.eta));
      const Var term = mul_rowwise(values[l][static_cast<size_t>(h)], weight);
      fused[static_cast<size_t>(h)] =
          l == 0 ? term : add(fused[static_cast<size_t>(h)], term);
    }
  }
  return fused;
}

std::vector<Var> channel_aware(const Var& qc, const std::vector<Var>& fused,
                               const CrossAttentionParams& params, int heads, int points) {
  const int64_t d = qc.value().dim(1);
  const int64_t dh = d / heads;
  const Var gate = sigmoid(params.channel_b(relu(params.channel_a(qc))));  // N x D
  std::vector<Var> out(fused.size());
  for (int h = 0; h < heads; ++h) {
    const Var gh = repeat_rows(slice(gate, 1, h * dh, dh), points);  // (N*O) x dh
    out[static_cast<size_t>(h)] = mul(fused[static_cast<size_t>(h)], gh);
  }
  return out;
}

Var spatial_aware(const Var& qc, const std::vector<Var>& gated,
                  const CrossAttentionParams& params, int heads, int points) {
  const int64_t n = qc.value().dim(0);
  const int64_t d = qc.value().dim(1);
  const int64_t dh = d / heads;
  const Var gate = sigmoid(params.spatial_b(relu(params.spatial_a(qc))));  // N x gO
  std::vector<Var> flat(gated.size());
  for (int h = 0; h < heads; ++h) {
    const Var gh = reshape(slice(gate, 1, h * points, points), {n * points, 1});
    const Var vh = mul_rowwise(gated[static_cast<size_t>(h)], gh);
    flat[static_cast<size_t>(h)] = reshape(vh, {n, points * dh});
  }
  return params.out(concatenate(flat, 1));
}

Var oriented_cross_attention(const Var& qc, const Var& qp5, const FeaturePyramid& fp,
                             const CrossAttentionConfig& cfg, const CrossAttentionParams& params) {
  const int64_t d = qc.value().dim(1);
  if (d % cfg.heads != 0)
    throw std::invalid_argument("cross_attention: heads must divide the model width");
  fp.validate(d);
  if (static_cast<size_t>(fp.levels.size()) != cfg.strides.size())
    throw std::invalid_argument("cross_attention: stride config does not match pyramid");

  const Var frame = box_sampling_frame(qp5);
  const Var offsets = compute_offsets(qc, params.offsets);
  const SamplingPoints raw = make_sampling_points(offsets, frame, cfg.heads, cfg.points);
  const SamplingPoints aligned = align_points(raw, frame);
  const auto values = sample_values(fp, aligned, cfg.heads);
  const auto fused = scale_aware(aligned, values, cfg);
  const auto gated = channel_aware(qc, fused, params, cfg.heads, cfg.points);
  return spatial_aware(qc, gated, params, cfg.heads, cfg.points);
}

}  // namespace ofkit
