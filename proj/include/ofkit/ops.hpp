#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ofkit/autodiff.hpp"
#include "ofkit/rng.hpp"

namespace ofkit {

// Elementwise binaries accept equal shapes, or a single-element tensor on
// either side (the one permitted broadcast). Anything else throws.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var neg(const Var& a);

Var sin(const Var& a);
Var cos(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var softplus(const Var& a);
Var abs(const Var& a);

Var matmul(const Var& a, const Var& b);  // (m,k)x(k,n) -> (m,n)
Var transpose(const Var& a);             // 2-D only
Var softmax(const Var& a);               // over the last axis

Var reshape(const Var& a, std::vector<int64_t> shape);
Var concatenate(const std::vector<Var>& parts, int axis);
Var slice(const Var& a, int axis, int64_t start, int64_t len);

Var sum(const Var& a);   // -> scalar
Var mean(const Var& a);  // -> scalar

// Row machinery for (query, point) layouts; all shapes are validated.
Var gather_rows(const Var& a, const std::vector<int64_t>& rows);
Var repeat_rows(const Var& a, int64_t k);          // row i -> rows i*k..i*k+k-1
Var mul_rowwise(const Var& a, const Var& col);     // a: MxN, col: Mx1
Var add_rowwise(const Var& a, const Var& col);
Var sub_rowwise(const Var& a, const Var& col);

// Bilinear sample of fmap[H,W,C] channels [c0,c1) at P continuous positions
// (coords[P,2] as x,y in feature space). Out-of-bounds corners contribute
// zero. Gradients flow to the feature map and to the coordinates.
Var bilinear_gather(const Var& fmap, const Var& coords, int64_t c0, int64_t c1);
Var bilinear_gather(const Var& fmap, const Var& coords);

// Fused layers used throughout the decoder.
Var linear(const Var& x, const Var& w, const Var& b);  // x:NxK w:KxM b:M (b may be undefined)
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// x:[H,W,Ci] w:[Co,kh,kw,Ci] b:[Co]; zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

// Name-based dispatch for ops whose semantics are fully determined by their
// tensor inputs (the spec'd primitive surface). Unknown name -> error.
Var evaluate(const std::string& op_name, const std::vector<Var>& inputs);
bool has_evaluate_op(const std::string& op_name);

// Central finite differences, elementwise on x.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double step = 1e-5);

// One gradient-checkable instance of an op: a random-input generator plus the
// op application. verify collects these for every registered op.
struct OpCheck {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> make_inputs;
  std::function<Var(const std::vector<Var>&)> apply;
};

std::vector<OpCheck> primitive_op_checks();

// max_i |a_i-b_i| / max(1, |a|_inf, |b|_inf)
double gradient_rel_error(const Tensor& autodiff, const Tensor& fd);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

}  // namespace ofkit
