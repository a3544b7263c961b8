#pragma once

#include <vector>

#include "ofkit/encoding.hpp"
#include "ofkit/params.hpp"

namespace ofkit {

struct SelfAttentionConfig {
  int heads = 8;
};

struct CrossAttentionConfig {
  int heads = 64;   // g
  int points = 32;  // O per head
  double eta = 2.0;
  std::vector<int> strides = {8, 16, 32, 64};
};

// L feature maps [H_l, W_l, D] with power-of-two strides; adjacent strides
// differ by a factor of 2.
struct FeaturePyramid {
  std::vector<Var> levels;
  std::vector<int> strides;

  void validate(int64_t dim) const;
};

// N x N matrix of pairwise Wasserstein scores of the positional queries.
// Diagonal entries are the coincidence score log(1 + eps), a constant.
Var wasserstein_score_matrix(const Var& qp5);

// Eq-10-shaped self-attention: Softmax((Qc+phi)(Qc+phi)^T / sqrt(d_q) + G) Qc
// per head, scores added identically to every head, bare Qc as values, then
// an output projection. The caller owns residual + norm.
Var wasserstein_self_attention(const Var& qc, const Var& phi_d, const Var& scores,
                               const SelfAttentionConfig& cfg, const LinearParams& out_proj);

struct CrossAttentionParams {
  LinearParams offsets;                // D -> 3 g O
  LinearParams channel_a, channel_b;   // D -> D -> D
  LinearParams spatial_a, spatial_b;   // D -> D -> g O
  LinearParams out;                    // O*D -> D
};
CrossAttentionParams make_cross_attention_params(ParamStore& store, const std::string& prefix,
                                                 int64_t dim, const CrossAttentionConfig& cfg,
                                                 Rng& rng);

// Per-query sampling frame from (x, y, z, r, theta):
// columns (cx, cy, 2^(z-r), 2^(z+r), cos theta, sin theta, z).
Var box_sampling_frame(const Var& qp5);

// Learned offsets; layout [all dx | all dy | all dz], each block g*O wide
// with head-major point order.
Var compute_offsets(const Var& qc, const LinearParams& proj);

struct SamplingPoints {
  Var x, y, z;  // each N x (g*O); image pixels for x/y, log2 scale for z
};

SamplingPoints make_sampling_points(const Var& offsets, const Var& frame, int heads, int points);

// Rotates the 2-D positions about the query center by theta; z unchanged.
SamplingPoints align_points(const SamplingPoints& pts, const Var& frame);

// Bilinear values per level and head: values[l][h] is (N*O) x (D/g), sampled
// at P/s^l - 0.5 with zero padding, head h reading its channel block.
std::vector<std::vector<Var>> sample_values(const FeaturePyramid& fp, const SamplingPoints& pts,
                                            int heads);

// Sigmoid(-(z - log2 s^l)^2 / eta) fusion over levels; one entry per head.
std::vector<Var> scale_aware(const SamplingPoints& pts,
                             const std::vector<std::vector<Var>>& values,
                             const CrossAttentionConfig& cfg);

// Channel gate Sigmoid(Linear(ReLU(Linear(Qc)))) broadcast over points.
std::vector<Var> channel_aware(const Var& qc, const std::vector<Var>& fused,
                               const CrossAttentionParams& params, int heads, int points);

// Spatial gate over points, flatten, and the final projection to N x D.
Var spatial_aware(const Var& qc, const std::vector<Var>& gated,
                  const CrossAttentionParams& params, int heads, int points);

Var oriented_cross_attention(const Var& qc, const Var& qp5, const FeaturePyramid& fp,
                             const CrossAttentionConfig& cfg, const CrossAttentionParams& params);

}  // namespace ofkit
