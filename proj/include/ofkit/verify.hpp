#pragma once

#include <string>
#include <vector>

#include "ofkit/geometry.hpp"
#include "ofkit/tensor.hpp"

namespace ofkit {

// Independent oracle implementations. Everything in this header deliberately
// avoids the closed forms and fused paths it is used to check.

// Wasserstein distance via explicit 2x2 eigendecompositions:
// S1^(1/2) from the eigensystem of S1, then the eigenvalues of
// S1^(1/2) S2 S1^(1/2) give Tr of its square root.
double wasserstein_distance_eigen(const Gaussian2D& a, const Gaussian2D& b);

// IoU estimated by sampling cell centers of a grid x grid raster over the
// joint bounding box.
double rasterized_iou(const OrientedBox& a, const OrientedBox& b, int grid = 2048);

// Exhaustive minimum-cost injection for small assignment instances.
double brute_force_assignment_cost(const Tensor& cost);

// Straight-line oriented cross-attention: explicit loops over queries,
// heads, points, and levels, no head-batched tensor ops and no tape. Written
// to perform the same arithmetic as the library path, so results agree bit
// for bit on identical inputs.
struct CrossAttentionWeights {
  Tensor offsets_w, offsets_b;
  Tensor channel_a_w, channel_a_b;
  Tensor channel_b_w, channel_b_b;
  Tensor spatial_a_w, spatial_a_b;
  Tensor spatial_b_w, spatial_b_b;
  Tensor out_w, out_b;
};

Tensor reference_cross_attention(const Tensor& qc, const Tensor& qp5,
                                 const std::vector<Tensor>& levels,
                                 const std::vector<int>& strides, int heads, int points,
                                 double eta, const CrossAttentionWeights& w);

struct SuiteResult {
  std::string suite;
  int cases = 0;
  int failures = 0;
  double max_err = 0.0;
  double budget = 0.0;  // the tolerance the suite enforces
  bool pass = false;
};

// Worst relative FD error across every registered op, `seeds` instances each.
double check_registered_op_gradients(int seeds, uint64_t seed);
// Worst relative FD error over all parameters of a tiny 2-layer decoder with
// the full matching loss on top (N=3, D=8, g=2, O=4, two feature levels).
double check_decoder_loss_gradients(uint64_t seed);

// Registered oracle suites (run by the CLI `verify` command and by the
// acceptance tests): pe-montecarlo, wasserstein-eigen, iou-raster,
// hungarian-bruteforce, gradients, attention-naive.
std::vector<std::string> verify_suite_names();
SuiteResult run_verify_suite(const std::string& name, uint64_t seed = 20240901);

}  // namespace ofkit
