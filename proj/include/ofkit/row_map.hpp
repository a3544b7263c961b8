#pragma once

#include <functional>

#include "ofkit/dual.hpp"
#include "ofkit/ops.hpp"

namespace ofkit {

// Applies a smooth R^IN -> R^out_cols map to every row of x, recording the
// per-row Jacobian (computed forward-mode) for the backward pass. The value
// channel of Dual performs exactly the double arithmetic, so results match a
// plain evaluation bit for bit.
template <int IN>
Var map_rows(const char* name, const Var& x, int64_t out_cols,
             const std::function<void(const Dual<IN>*, Dual<IN>*)>& fn) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.dim(1) != IN)
    throw std::invalid_argument(std::string(name) + ": expected Nx" + std::to_string(IN) +
                                " input, got " + xv.shape_str());
  const int64_t n = xv.dim(0);
  Tensor out({n, out_cols});
  Tensor jac({n, out_cols, IN});
  std::vector<Dual<IN>> row(IN);
  std::vector<Dual<IN>> res(static_cast<size_t>(out_cols));
  for (int64_t i = 0; i < n; ++i) {
    for (int c = 0; c < IN; ++c) row[c] = Dual<IN>::seeded(xv.at(i, c), c);
    fn(row.data(), res.data());
    for (int64_t j = 0; j < out_cols; ++j) {
      out.at(i, j) = res[static_cast<size_t>(j)].v;
      for (int c = 0; c < IN; ++c) jac.at(i, j, c) = res[static_cast<size_t>(j)].d[c];
    }
  }
  return make_op(name, std::move(out), {x}, [n, out_cols, jac = std::move(jac)](Node& node) {
    const Var& x_in = node.inputs[0];
    if (!x_in.requires_grad()) return;
    Tensor dx({n, IN});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < out_cols; ++j) {
        const double g = node.grad_buf.at(i, j);
        for (int c = 0; c < IN; ++c) dx.at(i, c) += g * jac.at(i, j, c);
      }
    accumulate_grad(x_in, dx);
  });
}

// As map_rows, but the map also receives the row index (per-row constants
// such as a matched target box).
template <int IN>
Var map_rows_indexed(const char* name, const Var& x, int64_t out_cols,
                     const std::function<void(int64_t, const Dual<IN>*, Dual<IN>*)>& fn) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.dim(1) != IN)
    throw std::invalid_argument(std::string(name) + ": expected Nx" + std::to_string(IN) +
                                " input, got " + xv.shape_str());
  const int64_t n = xv.dim(0);
  Tensor out({n, out_cols});
  Tensor jac({n, out_cols, IN});
  std::vector<Dual<IN>> row(IN);
  std::vector<Dual<IN>> res(static_cast<size_t>(out_cols));
  for (int64_t i = 0; i < n; ++i) {
    for (int c = 0; c < IN; ++c) row[c] = Dual<IN>::seeded(xv.at(i, c), c);
    fn(i, row.data(), res.data());
    for (int64_t j = 0; j < out_cols; ++j) {
      out.at(i, j) = res[static_cast<size_t>(j)].v;
      for (int c = 0; c < IN; ++c) jac.at(i, j, c) = res[static_cast<size_t>(j)].d[c];
    }
  }
  return make_op(name, std::move(out), {x}, [n, out_cols, jac = std::move(jac)](Node& node) {
    const Var& x_in = node.inputs[0];
    if (!x_in.requires_grad()) return;
    Tensor dx({n, IN});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < out_cols; ++j) {
        const double g = node.grad_buf.at(i, j);
        for (int c = 0; c < IN; ++c) dx.at(i, c) += g * jac.at(i, j, c);
      }
    accumulate_grad(x_in, dx);
  });
}

// Pairwise variant: out[i][j] = fn(row_i, row_j) over all ordered pairs of
// rows of x (an NxIN matrix). The map sees 2*IN dual slots: row_i occupies
// slots [0,IN), row_j slots [IN,2*IN). diagonal_value short-circuits i == j
// with a constant (used where the pair map is constant on the diagonal).
template <int IN>
Var map_row_pairs(const char* name, const Var& x,
                  const std::function<Dual<2 * IN>(const Dual<2 * IN>*, const Dual<2 * IN>*)>& fn,
                  bool constant_diagonal, double diagonal_value) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.dim(1) != IN)
    throw std::invalid_argument(std::string(name) + ": expected Nx" + std::to_string(IN) +
                                " input, got " + xv.shape_str());
  const int64_t n = xv.dim(0);
  constexpr int K = 2 * IN;
  Tensor out({n, n});
  Tensor jac({n * n, K});
  std::vector<Dual<K>> a(IN), b(IN);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      if (constant_diagonal && i == j) {
        out.at(i, j) = diagonal_value;
        continue;
      }
      for (int c = 0; c < IN; ++c) {
        a[c] = Dual<K>::seeded(xv.at(i, c), c);
        b[c] = Dual<K>::seeded(xv.at(j, c), IN + c);
      }
      const Dual<K> r = fn(a.data(), b.data());
      out.at(i, j) = r.v;
      for (int c = 0; c < K; ++c) jac.at(i * n + j, c) = r.d[c];
    }
  return make_op(name, std::move(out), {x}, [n, jac = std::move(jac)](Node& node) {
    const Var& x_in = node.inputs[0];
    if (!x_in.requires_grad()) return;
    Tensor dx({n, IN});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        const double g = node.grad_buf.at(i, j);
        if (g == 0.0) continue;
        for (int c = 0; c < IN; ++c) {
          dx.at(i, c) += g * jac.at(i * n + j, c);
          dx.at(j, c) += g * jac.at(i * n + j, IN + c);
        }
      }
    accumulate_grad(x_in, dx);
  });
}

}  // namespace ofkit
