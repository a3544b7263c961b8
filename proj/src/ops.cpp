#include "ofkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace ofkit {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) shape_error(op, detail);
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus_scalar(double x) {
  // log(1+e^x), stable on both tails
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Elementwise binary with the single permitted broadcast (one side scalar).
template <class Fwd, class Bwd>
Var binary_op(const char* name, const Var& a, const Var& b, Fwd fwd, Bwd bwd) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool same = av.same_shape(bv);
  const bool b_scalar = !same && bv.is_scalar();
  const bool a_scalar = !same && !b_scalar && av.is_scalar();
  require(same || a_scalar || b_scalar, name,
          "incompatible shapes " + av.shape_str() + " and " + bv.shape_str() +
              " (only scalar-with-tensor broadcast is supported)");

  const Tensor& big = a_scalar ? bv : av;
  Tensor out(big.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double x = a_scalar ? av[0] : av[i];
    const double y = b_scalar ? bv[0] : bv[i];
    out[i] = fwd(x, y);
  }
  return make_op(name, std::move(out), {a, b}, [a_scalar, b_scalar, bwd](Node& node) {
    const Var& a_in = node.inputs[0];
    const Var& b_in = node.inputs[1];
    const Tensor& av2 = a_in.value();
    const Tensor& bv2 = b_in.value();
    const Tensor& g = node.grad_buf;
    const int64_t n2 = g.numel();
    if (a_in.requires_grad()) {
      Tensor da(av2.shape());
      for (int64_t i = 0; i < n2; ++i) {
        const double x = a_scalar ? av2[0] : av2[i];
        const double y = b_scalar ? bv2[0] : bv2[i];
        const double d = g[i] * bwd(x, y, true);
        if (a_scalar)
          da[0] += d;
        else
          da[i] = d;
      }
      accumulate_grad(a_in, da);
    }
    if (b_in.requires_grad()) {
      Tensor db(bv2.shape());
      for (int64_t i = 0; i < n2; ++i) {
        const double x = a_scalar ? av2[0] : av2[i];
        const double y = b_scalar ? bv2[0] : bv2[i];
        const double d = g[i] * bwd(x, y, false);
        if (b_scalar)
          db[0] += d;
        else
          db[i] = d;
      }
      accumulate_grad(b_in, db);
    }
  });
}

template <class Fwd, class Deriv>
Var unary_op(const char* name, const Var& a, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  Tensor saved = out;  // several derivatives reuse the forward value
  return make_op(name, std::move(out), {a}, [deriv, saved = std::move(saved)](Node& node) {
    const Var& a_in = node.inputs[0];
    if (!a_in.requires_grad()) return;
    const Tensor& av2 = a_in.value();
    const Tensor& g = node.grad_buf;
    Tensor da(av2.shape());
    const int64_t n2 = da.numel();
    for (int64_t i = 0; i < n2; ++i) da[i] = g[i] * deriv(av2[i], saved[i]);
    accumulate_grad(a_in, da);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, bool) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, bool wrt_a) { return wrt_a ? 1.0 : -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, bool wrt_a) { return wrt_a ? y : x; });
}

Var add_scalar(const Var& a, double c) { return add(a, Var::constant(c)); }
Var mul_scalar(const Var& a, double c) { return mul(a, Var::constant(c)); }

Var neg(const Var& a) {
  return unary_op(
      "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var sin(const Var& a) {
  return unary_op(
      "sin", a, [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); });
}

Var cos(const Var& a) {
  return unary_op(
      "cos", a, [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

Var exp(const Var& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  return unary_op(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Var sigmoid(const Var& a) {
  return unary_op(
      "sigmoid", a, [](double x) { return sigmoid_scalar(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var softplus(const Var& a) {
  return unary_op(
      "softplus", a, [](double x) { return softplus_scalar(x); },
      [](double x, double) { return sigmoid_scalar(x); });
}

Var abs(const Var& a) {
  return unary_op(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2, "matmul",
          "expects 2-D operands, got " + av.shape_str() + " and " + bv.shape_str());
  require(av.dim(1) == bv.dim(0), "matmul",
          "inner dimensions differ: " + av.shape_str() + " x " + bv.shape_str());
  const int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  {
    const double* A = av.data();
    const double* B = bv.data();
    double* C = out.data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t kk = 0; kk < k; ++kk) {
        const double aik = A[i * k + kk];
        const double* Brow = B + kk * n;
        double* Crow = C + i * n;
        for (int64_t j = 0; j < n; ++j) Crow[j] += aik * Brow[j];
      }
  }
  return make_op("matmul", std::move(out), {a, b}, [m, k, n](Node& node) {
    const Var& a_in = node.inputs[0];
    const Var& b_in = node.inputs[1];
    const double* G = node.grad_buf.data();
    if (a_in.requires_grad()) {
      Tensor da({m, k});
      const double* B = b_in.value().data();
      double* DA = da.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          const double* Brow = B + j;  // column j
          double* DArow = DA + i * k;
          for (int64_t kk = 0; kk < k; ++kk) DArow[kk] += g * Brow[kk * n];
        }
      accumulate_grad(a_in, da);
    }
    if (b_in.requires_grad()) {
      Tensor db({k, n});
      const double* A = a_in.value().data();
      double* DB = db.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          const double aik = A[i * k + kk];
          const double* Grow = G + i * n;
          double* DBrow = DB + kk * n;
          for (int64_t j = 0; j < n; ++j) DBrow[j] += aik * Grow[j];
        }
      accumulate_grad(b_in, db);
    }
  });
}

Var transpose(const Var& a) {
  const Tensor& av = a.value();
  require(av.rank() == 2, "transpose", "expects a 2-D tensor, got " + av.shape_str());
  const int64_t m = av.dim(0), n = av.dim(1);
  Tensor out({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  return make_op("transpose", std::move(out), {a}, [m, n](Node& node) {
    const Var& a_in = node.inputs[0];
    if (!a_in.requires_grad()) return;
    Tensor da({m, n});
    for (int64_t j = 0; j < n; ++j)
      for (int64_t i = 0; i < m; ++i) da.at(i, j) = node.grad_buf.at(j, i);
    accumulate_grad(a_in, da);
  });
}

Var softmax(const Var& a) {
  const Tensor& av = a.value();
  require(av.rank() >= 1, "softmax", "expects rank >= 1");
  require(av.all_finite(), "softmax", "input must be finite");
  const int64_t inner = av.dim(av.rank() - 1);
  const int64_t rows = av.numel() / inner;
  Tensor out(av.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * inner;
    double* y = out.data() + r * inner;
    double mx = x[0];
    for (int64_t i = 1; i < inner; ++i) mx = std::max(mx, x[i]);
    double s = 0.0;
    for (int64_t i = 0; i < inner; ++i) {
      y[i] = std::exp(x[i] - mx);
      s += y[i];
    }
    const double inv = 1.0 / s;
    for (int64_t i = 0; i < inner; ++i) y[i] *= inv;
  }
  Tensor saved = out;
  return make_op("softmax", std::move(out), {a},
                 [inner, rows, saved = std::move(saved)](Node& node) {
                   const Var& a_in = node.inputs[0];
                   if (!a_in.requires_grad()) return;
                   Tensor da(a_in.value().shape());
                   for (int64_t r = 0; r < rows; ++r) {
                     const double* y = saved.data() + r * inner;
                     const double* g = node.grad_buf.data() + r * inner;
                     double dot = 0.0;
                     for (int64_t i = 0; i < inner; ++i) dot += g[i] * y[i];
                     double* d = da.data() + r * inner;
                     for (int64_t i = 0; i < inner; ++i) d[i] = y[i] * (g[i] - dot);
                   }
                   accumulate_grad(a_in, da);
                 });
}

Var reshape(const Var& a, std::vector<int64_t> shape) {
  const Tensor& av = a.value();
  require(Tensor::numel_of(shape) == av.numel(), "reshape",
          "cannot reshape " + av.shape_str() + " to " + Tensor::shape_to_string(shape));
  Tensor out(shape, std::vector<double>(av.data(), av.data() + av.numel()));
  std::vector<int64_t> orig = av.shape();
  return make_op("reshape", std::move(out), {a}, [orig = std::move(orig)](Node& node) {
    const Var& a_in = node.inputs[0];
    if (!a_in.requires_grad()) return;
    Tensor da(orig, std::vector<double>(node.grad_buf.data(),
                                        node.grad_buf.data() + node.grad_buf.numel()));
    accumulate_grad(a_in, da);
  });
}

namespace {
void concat_extents(const std::vector<int64_t>& shape, int axis, int64_t& outer, int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}
}  // namespace

Var concatenate(const std::vector<Var>& parts, int axis) {
  require(!parts.empty(), "concatenate", "needs at least one input");
  const Tensor& first = parts[0].value();
  require(axis >= 0 && axis < first.rank(), "concatenate", "axis out of range");
  std::vector<int64_t> out_shape = first.shape();
  int64_t axis_total = 0;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    require(t.rank() == first.rank(), "concatenate", "rank mismatch");
    for (int d = 0; d < t.rank(); ++d)
      if (d != axis)
        require(t.dim(d) == first.dim(d), "concatenate",
                "shape mismatch at axis " + std::to_string(d));
    axis_total += t.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;

  int64_t outer, inner;
  concat_extents(out_shape, axis, outer, inner);
  Tensor out(out_shape);
  std::vector<int64_t> part_dims;
  {
    int64_t offset = 0;
    for (const Var& p : parts) {
      const Tensor& t = p.value();
      const int64_t pd = t.dim(axis);
      part_dims.push_back(pd);
      for (int64_t o = 0; o < outer; ++o) {
        const double* src = t.data() + o * pd * inner;
        double* dst = out.data() + (o * axis_total + offset) * inner;
        std::copy(src, src + pd * inner, dst);
      }
      offset += pd;
    }
  }
  return make_op("concatenate", std::move(out), parts,
                 [axis_total, outer, inner, part_dims = std::move(part_dims)](Node& node) {
                   int64_t offset = 0;
                   for (size_t pi = 0; pi < node.inputs.size(); ++pi) {
                     const Var& p = node.inputs[pi];
                     const int64_t pd = part_dims[pi];
                     if (p.requires_grad()) {
                       Tensor dp(p.value().shape());
                       for (int64_t o = 0; o < outer; ++o) {
                         const double* src = node.grad_buf.data() + (o * axis_total + offset) * inner;
                         double* dst = dp.data() + o * pd * inner;
                         std::copy(src, src + pd * inner, dst);
                       }
                       accumulate_grad(p, dp);
                     }
                     offset += pd;
                   }
                 });
}

Var slice(const Var& a, int axis, int64_t start, int64_t len) {
  const Tensor& av = a.value();
  require(axis >= 0 && axis < av.rank(), "slice", "axis out of range");
  require(start >= 0 && len >= 0 && start + len <= av.dim(axis), "slice",
          "range [" + std::to_string(start) + "," + std::to_string(start + len) +
              ") exceeds axis size " + std::to_string(av.dim(axis)));
  std::vector<int64_t> out_shape = av.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  int64_t outer, inner;
  concat_extents(av.shape(), axis, outer, inner);
  const int64_t axis_dim = av.dim(axis);
  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o) {
    const double* src = av.data() + (o * axis_dim + start) * inner;
    std::copy(src, src + len * inner, out.data() + o * len * inner);
  }
  return make_op("slice", std::move(out), {a}, [outer, inner, axis_dim, start, len](Node& node) {
    const Var& a_in = node.inputs[0];
    if (!a_in.requires_grad()) return;
    Tensor da(a_in.value().shape());
    for (int64_t o = 0; o < outer; ++o) {
      const double* src = node.grad_buf.data() + o * len * inner;
      double* dst = da.data() + (o * axis_dim + start) * inner;
      std::copy(src, src + len * inner, dst);
    }
    accumulate_grad(a_in, da);
  });
}

Var sum(const Var& a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) s += av[i];
  return make_op("sum", Tensor::scalar(s), {a}, [](Node& node) {
    const Var& a_in = node.inputs[0];
    if (!a_in.requires_grad()) return;
    accumulate_grad(a_in, Tensor::full(a_in.value().shape(), node.grad_buf[0]));
  });
}

Var mean(const Var& a) {
  const Tensor& av = a.value();
  require(av.numel() > 0, "mean", "empty tensor");
  double s = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) s += av[i];
  const double inv = 1.0 / static_cast<double>(av.numel());
  return make_op("mean", Tensor::scalar(s * inv), {a}, [inv](Node& node) {
    const Var& a_in = node.inputs[0];
    if (!a_in.requires_grad()) return;
    accumulate_grad(a_in, Tensor::full(a_in.value().shape(), node.grad_buf[0] * inv));
  });
}

Var gather_rows(const Var& a, const std::vector<int64_t>& rows) {
  const Tensor& av = a.value();
  require(av.rank() == 2, "gather_rows", "expects a 2-D tensor");
  const int64_t n = av.dim(0), c = av.dim(1);
  for (int64_t r : rows)
    require(r >= 0 && r < n, "gather_rows", "row index " + std::to_string(r) + " out of range");
  Tensor out({static_cast<int64_t>(rows.size()), c});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy(av.data() + rows[i] * c, av.data() + (rows[i] + 1) * c,
              out.data() + static_cast<int64_t>(i) * c);
  return make_op("gather_rows", std::move(out), {a}, [rows, c](Node& node) {
    const Var& a_in = node.inputs[0];
    if (!a_in.requires_grad()) return;
    Tensor da(a_in.value().shape());
    for (size_t i = 0; i < rows.size(); ++i) {
      const double* src = node.grad_buf.data() + static_cast<int64_t>(i) * c;
      double* dst = da.data() + rows[i] * c;
      for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
    }
    accumulate_grad(a_in, da);
  });
}

Var repeat_rows(const Var& a, int64_t k) {
  const Tensor& av = a.value();
  require(av.rank() == 2, "repeat_rows", "expects a 2-D tensor");
  require(k >= 1, "repeat_rows", "k must be positive");
  const int64_t m = av.dim(0), c = av.dim(1);
  Tensor out({m * k, c});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t r = 0; r < k; ++r)
      std::copy(av.data() + i * c, av.data() + (i + 1) * c, out.data() + (i * k + r) * c);
  return make_op("repeat_rows", std::move(out), {a}, [m, k, c](Node& node) {
    const Var& a_in = node.inputs[0];
    if (!a_in.requires_grad()) return;
    Tensor da({m, c});
    for (int64_t i = 0; i < m; ++i)
      for (int64_t r = 0; r < k; ++r) {
        const double* src = node.grad_buf.data() + (i * k + r) * c;
        double* dst = da.data() + i * c;
        for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
      }
    accumulate_grad(a_in, da);
  });
}

namespace {
enum class RowwiseKind { Mul, Add, Sub };

Var rowwise_op(const char* name, RowwiseKind kind, const Var& a, const Var& col) {
  const Tensor& av = a.value();
  const Tensor& cv = col.value();
  require(av.rank() == 2, name, "expects a 2-D left operand");
  require(cv.rank() == 2 && cv.dim(1) == 1 && cv.dim(0) == av.dim(0), name,
          "expects an Mx1 column matching " + av.shape_str() + ", got " + cv.shape_str());
  const int64_t m = av.dim(0), n = av.dim(1);
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const double s = cv[i];
    const double* x = av.data() + i * n;
    double* y = out.data() + i * n;
    for (int64_t j = 0; j < n; ++j)
      y[j] = kind == RowwiseKind::Mul ? x[j] * s : (kind == RowwiseKind::Add ? x[j] + s : x[j] - s);
  }
  return make_op(name, std::move(out), {a, col}, [kind, m, n](Node& node) {
    const Var& a_in = node.inputs[0];
    const Var& c_in = node.inputs[1];
    const Tensor& g = node.grad_buf;
    if (a_in.requires_grad()) {
      Tensor da({m, n});
      for (int64_t i = 0; i < m; ++i) {
        const double s = c_in.value()[i];
        for (int64_t j = 0; j < n; ++j)
          da.at(i, j) = kind == RowwiseKind::Mul ? g.at(i, j) * s : g.at(i, j);
      }
      accumulate_grad(a_in, da);
    }
    if (c_in.requires_grad()) {
      Tensor dc({m, 1});
      for (int64_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          const double gij = g.at(i, j);
          acc += kind == RowwiseKind::Mul ? gij * a_in.value().at(i, j)
                                          : (kind == RowwiseKind::Sub ? -gij : gij);
        }
        dc[i] = acc;
      }
      accumulate_grad(c_in, dc);
    }
  });
}
}  // namespace

Var mul_rowwise(const Var& a, const Var& col) { return rowwise_op("mul_rowwise", RowwiseKind::Mul, a, col); }
Var add_rowwise(const Var& a, const Var& col) { return rowwise_op("add_rowwise", RowwiseKind::Add, a, col); }
Var sub_rowwise(const Var& a, const Var& col) { return rowwise_op("sub_rowwise", RowwiseKind::Sub, a, col); }

Var bilinear_gather(const Var& fmap, const Var& coords, int64_t c0, int64_t c1) {
  const Tensor& fv = fmap.value();
  const Tensor& pv = coords.value();
  require(fv.rank() == 3, "bilinear_gather", "feature map must be [H,W,C]");
  require(pv.rank() == 2 && pv.dim(1) == 2, "bilinear_gather", "coords must be [P,2]");
  const int64_t H = fv.dim(0), W = fv.dim(1), C = fv.dim(2);
  require(0 <= c0 && c0 < c1 && c1 <= C, "bilinear_gather", "bad channel range");
  const int64_t P = pv.dim(0), OC = c1 - c0;
  Tensor out({P, OC});
  for (int64_t p = 0; p < P; ++p) {
    const double fx = pv.at(p, 0), fy = pv.at(p, 1);
    const int64_t x0 = static_cast<int64_t>(std::floor(fx));
    const int64_t y0 = static_cast<int64_t>(std::floor(fy));
    const double tx = fx - static_cast<double>(x0);
    const double ty = fy - static_cast<double>(y0);
    const bool in00 = y0 >= 0 && y0 < H && x0 >= 0 && x0 < W;
    const bool in01 = y0 >= 0 && y0 < H && x0 + 1 >= 0 && x0 + 1 < W;
    const bool in10 = y0 + 1 >= 0 && y0 + 1 < H && x0 >= 0 && x0 < W;
    const bool in11 = y0 + 1 >= 0 && y0 + 1 < H && x0 + 1 >= 0 && x0 + 1 < W;
    for (int64_t c = 0; c < OC; ++c) {
      const double v00 = in00 ? fv.at(y0, x0, c0 + c) : 0.0;
      const double v01 = in01 ? fv.at(y0, x0 + 1, c0 + c) : 0.0;
      const double v10 = in10 ? fv.at(y0 + 1, x0, c0 + c) : 0.0;
      const double v11 = in11 ? fv.at(y0 + 1, x0 + 1, c0 + c) : 0.0;
      out.at(p, c) = (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) +
                     ty * ((1.0 - tx) * v10 + tx * v11);
    }
  }
  return make_op("bilinear_gather", std::move(out), {fmap, coords},
                 [H, W, c0, OC](Node& node) {
                   const Var& f_in = node.inputs[0];
                   const Var& p_in = node.inputs[1];
                   const Tensor& fv2 = f_in.value();
                   const Tensor& pv2 = p_in.value();
                   const int64_t P2 = pv2.dim(0);
                   Tensor df(f_in.requires_grad() ? fv2.shape() : std::vector<int64_t>{});
                   Tensor dp(p_in.requires_grad() ? pv2.shape() : std::vector<int64_t>{});
                   for (int64_t p = 0; p < P2; ++p) {
                     const double fx = pv2.at(p, 0), fy = pv2.at(p, 1);
                     const int64_t x0 = static_cast<int64_t>(std::floor(fx));
                     const int64_t y0 = static_cast<int64_t>(std::floor(fy));
                     const double tx = fx - static_cast<double>(x0);
                     const double ty = fy - static_cast<double>(y0);
                     const bool in00 = y0 >= 0 && y0 < H && x0 >= 0 && x0 < W;
                     const bool in01 = y0 >= 0 && y0 < H && x0 + 1 >= 0 && x0 + 1 < W;
                     const bool in10 = y0 + 1 >= 0 && y0 + 1 < H && x0 >= 0 && x0 < W;
                     const bool in11 = y0 + 1 >= 0 && y0 + 1 < H && x0 + 1 >= 0 && x0 + 1 < W;
                     double gx = 0.0, gy = 0.0;
                     for (int64_t c = 0; c < OC; ++c) {
                       const double g = node.grad_buf.at(p, c);
                       const double v00 = in00 ? fv2.at(y0, x0, c0 + c) : 0.0;
                       const double v01 = in01 ? fv2.at(y0, x0 + 1, c0 + c) : 0.0;
                       const double v10 = in10 ? fv2.at(y0 + 1, x0, c0 + c) : 0.0;
                       const double v11 = in11 ? fv2.at(y0 + 1, x0 + 1, c0 + c) : 0.0;
                       if (f_in.requires_grad()) {
                         if (in00) df.at(y0, x0, c0 + c) += g * (1.0 - ty) * (1.0 - tx);
                         if (in01) df.at(y0, x0 + 1, c0 + c) += g * (1.0 - ty) * tx;
                         if (in10) df.at(y0 + 1, x0, c0 + c) += g * ty * (1.0 - tx);
                         if (in11) df.at(y0 + 1, x0 + 1, c0 + c) += g * ty * tx;
                       }
                       gx += g * ((1.0 - ty) * (v01 - v00) + ty * (v11 - v10));
                       gy += g * (((1.0 - tx) * v10 + tx * v11) - ((1.0 - tx) * v00 + tx * v01));
                     }
                     if (p_in.requires_grad()) {
                       dp.at(p, 0) = gx;
                       dp.at(p, 1) = gy;
                     }
                   }
                   if (f_in.requires_grad()) accumulate_grad(f_in, df);
                   if (p_in.requires_grad()) accumulate_grad(p_in, dp);
                 });
}

Var bilinear_gather(const Var& fmap, const Var& coords) {
  return bilinear_gather(fmap, coords, 0, fmap.value().dim(2));
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(0), "linear",
          "incompatible shapes " + xv.shape_str() + " x " + wv.shape_str());
  Var y = matmul(x, w);
  if (!b.defined()) return y;
  const Tensor& bv = b.value();
  require(bv.rank() == 1 && bv.dim(0) == wv.dim(1), "linear",
          "bias shape " + bv.shape_str() + " does not match output width");
  const int64_t m = xv.dim(0), n = wv.dim(1);
  Tensor out(y.value());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.at(i, j) += bv[j];
  return make_op("linear_bias", std::move(out), {y, b}, [m, n](Node& node) {
    const Var& y_in = node.inputs[0];
    const Var& b_in = node.inputs[1];
    if (y_in.requires_grad()) accumulate_grad(y_in, node.grad_buf);
    if (b_in.requires_grad()) {
      Tensor db({n});
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) db[j] += node.grad_buf.at(i, j);
      accumulate_grad(b_in, db);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  require(xv.rank() == 2, "layer_norm", "expects a 2-D input");
  const int64_t m = xv.dim(0), d = xv.dim(1);
  require(gv.rank() == 1 && gv.dim(0) == d && bv.rank() == 1 && bv.dim(0) == d, "layer_norm",
          "gamma/beta must be length-" + std::to_string(d) + " vectors");
  Tensor out({m, d});
  Tensor xhat({m, d});
  Tensor inv_sigma({m});
  for (int64_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = inv;
    for (int64_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv;
      xhat.at(i, j) = h;
      out.at(i, j) = h * gv[j] + bv[j];
    }
  }
  return make_op("layer_norm", std::move(out), {x, gamma, beta},
                 [m, d, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node& node) {
                   const Var& x_in = node.inputs[0];
                   const Var& g_in = node.inputs[1];
                   const Var& b_in = node.inputs[2];
                   const Tensor& g = node.grad_buf;
                   if (g_in.requires_grad() || b_in.requires_grad()) {
                     Tensor dg({d}), db({d});
                     for (int64_t i = 0; i < m; ++i)
                       for (int64_t j = 0; j < d; ++j) {
                         dg[j] += g.at(i, j) * xhat.at(i, j);
                         db[j] += g.at(i, j);
                       }
                     if (g_in.requires_grad()) accumulate_grad(g_in, dg);
                     if (b_in.requires_grad()) accumulate_grad(b_in, db);
                   }
                   if (x_in.requires_grad()) {
                     Tensor dx({m, d});
                     const Tensor& gv2 = g_in.value();
                     for (int64_t i = 0; i < m; ++i) {
                       double mean_g = 0.0, mean_gx = 0.0;
                       for (int64_t j = 0; j < d; ++j) {
                         const double t = g.at(i, j) * gv2[j];
                         mean_g += t;
                         mean_gx += t * xhat.at(i, j);
                       }
                       mean_g /= static_cast<double>(d);
                       mean_gx /= static_cast<double>(d);
                       for (int64_t j = 0; j < d; ++j) {
                         const double t = g.at(i, j) * gv2[j];
                         dx.at(i, j) = (t - mean_g - xhat.at(i, j) * mean_gx) * inv_sigma[i];
                       }
                     }
                     accumulate_grad(x_in, dx);
                   }
                 });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(xv.rank() == 3, "conv2d", "input must be [H,W,C]");
  require(wv.rank() == 4, "conv2d", "weight must be [Co,kh,kw,Ci]");
  require(wv.dim(3) == xv.dim(2), "conv2d",
          "input channels " + std::to_string(xv.dim(2)) + " != weight channels " +
              std::to_string(wv.dim(3)));
  require(stride >= 1 && pad >= 0, "conv2d", "bad stride/pad");
  const int64_t H = xv.dim(0), W = xv.dim(1), Ci = xv.dim(2);
  const int64_t Co = wv.dim(0), kh = wv.dim(1), kw = wv.dim(2);
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  require(Ho >= 1 && Wo >= 1, "conv2d", "kernel larger than padded input");
  if (b.defined())
    require(b.value().rank() == 1 && b.value().dim(0) == Co, "conv2d", "bias must be [Co]");

  Tensor out({Ho, Wo, Co});
  for (int64_t oy = 0; oy < Ho; ++oy)
    for (int64_t ox = 0; ox < Wo; ++ox)
      for (int64_t co = 0; co < Co; ++co) {
        double acc = b.defined() ? b.value()[co] : 0.0;
        for (int64_t ky = 0; ky < kh; ++ky) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int64_t kx = 0; kx < kw; ++kx) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            const double* xr = xv.data() + (iy * W + ix) * Ci;
            const double* wr = wv.data() + ((co * kh + ky) * kw + kx) * Ci;
            for (int64_t ci = 0; ci < Ci; ++ci) acc += xr[ci] * wr[ci];
          }
        }
        out.at(oy, ox, co) = acc;
      }

  std::vector<Var> inputs = b.defined() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_op("conv2d", std::move(out), std::move(inputs),
                 [H, W, Ci, Co, kh, kw, Ho, Wo, stride, pad](Node& node) {
                   const Var& x_in = node.inputs[0];
                   const Var& w_in = node.inputs[1];
                   const bool has_b = node.inputs.size() == 3;
                   const bool need_dx = x_in.requires_grad();
                   const bool need_dw = w_in.requires_grad();
                   const bool need_db = has_b && node.inputs[2].requires_grad();
                   const Tensor& g = node.grad_buf;
                   Tensor dx(need_dx ? x_in.value().shape() : std::vector<int64_t>{0});
                   Tensor dw(need_dw ? w_in.value().shape() : std::vector<int64_t>{0});
                   Tensor db(need_db ? std::vector<int64_t>{Co} : std::vector<int64_t>{0});
                   for (int64_t oy = 0; oy < Ho; ++oy)
                     for (int64_t ox = 0; ox < Wo; ++ox)
                       for (int64_t co = 0; co < Co; ++co) {
                         const double go = g.at(oy, ox, co);
                         if (need_db) db[co] += go;
                         for (int64_t ky = 0; ky < kh; ++ky) {
                           const int64_t iy = oy * stride - pad + ky;
                           if (iy < 0 || iy >= H) continue;
                           for (int64_t kx = 0; kx < kw; ++kx) {
                             const int64_t ix = ox * stride - pad + kx;
                             if (ix < 0 || ix >= W) continue;
                             const double* xr = x_in.value().data() + (iy * W + ix) * Ci;
                             const double* wr =
                                 w_in.value().data() + ((co * kh + ky) * kw + kx) * Ci;
                             if (need_dx) {
                               double* dxr = dx.data() + (iy * W + ix) * Ci;
                               for (int64_t ci = 0; ci < Ci; ++ci) dxr[ci] += go * wr[ci];
                             }
                             if (need_dw) {
                               double* dwr = dw.data() + ((co * kh + ky) * kw + kx) * Ci;
                               for (int64_t ci = 0; ci < Ci; ++ci) dwr[ci] += go * xr[ci];
                             }
                           }
                         }
                       }
                   if (need_dx) accumulate_grad(x_in, dx);
                   if (need_dw) accumulate_grad(w_in, dw);
                   if (need_db) accumulate_grad(node.inputs[2], db);
                 });
}

namespace {

using EvalFn = std::function<Var(const std::vector<Var>&)>;

const std::map<std::string, std::pair<size_t, EvalFn>>& eval_table() {
  static const std::map<std::string, std::pair<size_t, EvalFn>> table = {
      {"add", {2, [](const std::vector<Var>& in) { return add(in[0], in[1]); }}},
      {"sub", {2, [](const std::vector<Var>& in) { return sub(in[0], in[1]); }}},
      {"mul", {2, [](const std::vector<Var>& in) { return mul(in[0], in[1]); }}},
      {"matmul", {2, [](const std::vector<Var>& in) { return matmul(in[0], in[1]); }}},
      {"sin", {1, [](const std::vector<Var>& in) { return sin(in[0]); }}},
      {"cos", {1, [](const std::vector<Var>& in) { return cos(in[0]); }}},
      {"exp", {1, [](const std::vector<Var>& in) { return exp(in[0]); }}},
      {"log", {1, [](const std::vector<Var>& in) { return log(in[0]); }}},
      {"sqrt", {1, [](const std::vector<Var>& in) { return sqrt(in[0]); }}},
      {"sigmoid", {1, [](const std::vector<Var>& in) { return sigmoid(in[0]); }}},
      {"relu", {1, [](const std::vector<Var>& in) { return relu(in[0]); }}},
      {"softplus", {1, [](const std::vector<Var>& in) { return softplus(in[0]); }}},
      {"abs", {1, [](const std::vector<Var>& in) { return abs(in[0]); }}},
      {"neg", {1, [](const std::vector<Var>& in) { return neg(in[0]); }}},
      {"softmax", {1, [](const std::vector<Var>& in) { return softmax(in[0]); }}},
      {"softmax-over-last-axis", {1, [](const std::vector<Var>& in) { return softmax(in[0]); }}},
      {"transpose", {1, [](const std::vector<Var>& in) { return transpose(in[0]); }}},
      {"sum", {1, [](const std::vector<Var>& in) { return sum(in[0]); }}},
      {"mean", {1, [](const std::vector<Var>& in) { return mean(in[0]); }}},
      {"bilinear-gather", {2, [](const std::vector<Var>& in) { return bilinear_gather(in[0], in[1]); }}},
  };
  return table;
}

}  // namespace

bool has_evaluate_op(const std::string& op_name) { return eval_table().count(op_name) > 0; }

Var evaluate(const std::string& op_name, const std::vector<Var>& inputs) {
  auto it = eval_table().find(op_name);
  if (it == eval_table().end())
    throw std::invalid_argument("evaluate: unknown op '" + op_name + "'");
  if (inputs.size() != it->second.first)
    throw std::invalid_argument("evaluate: op '" + op_name + "' expects " +
                                std::to_string(it->second.first) + " inputs, got " +
                                std::to_string(inputs.size()));
  return it->second.second(inputs);
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double step) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = f(probe);
    probe[i] = orig - step;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_difference_gradient: non-finite function value");
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

double gradient_rel_error(const Tensor& autodiff, const Tensor& fd) {
  if (!autodiff.same_shape(fd))
    throw std::invalid_argument("gradient_rel_error: shape mismatch");
  double max_diff = 0.0;
  for (int64_t i = 0; i < autodiff.numel(); ++i)
    max_diff = std::max(max_diff, std::fabs(autodiff[i] - fd[i]));
  const double scale = std::max({1.0, autodiff.max_abs(), fd.max_abs()});
  return max_diff / scale;
}

namespace {

Tensor rand_tensor(Rng& rng, std::vector<int64_t> shape, double lo = -1.5, double hi = 1.5) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(rng, lo, hi);
  return t;
}

// Keeps |x| away from the kink so central differences stay valid.
Tensor rand_tensor_away_from_zero(Rng& rng, std::vector<int64_t> shape, double margin = 0.05) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v = uniform(rng, margin, 1.5);
    if (uniform(rng, 0.0, 1.0) < 0.5) v = -v;
    t[i] = v;
  }
  return t;
}

}  // namespace

std::vector<OpCheck> primitive_op_checks() {
  std::vector<OpCheck> checks;
  auto push = [&checks](std::string name, std::function<std::vector<Tensor>(Rng&)> gen,
                        std::function<Var(const std::vector<Var>&)> apply) {
    checks.push_back({std::move(name), std::move(gen), std::move(apply)});
  };

  const std::vector<int64_t> s34{3, 4};
  push("add", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34), rand_tensor(r, s34)}; },
       [](const std::vector<Var>& in) { return add(in[0], in[1]); });
  push("add_scalar_bcast",
       [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34), rand_tensor(r, {})}; },
       [](const std::vector<Var>& in) { return add(in[0], in[1]); });
  push("sub", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34), rand_tensor(r, s34)}; },
       [](const std::vector<Var>& in) { return sub(in[0], in[1]); });
  push("mul", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34), rand_tensor(r, s34)}; },
       [](const std::vector<Var>& in) { return mul(in[0], in[1]); });
  push("mul_scalar_bcast",
       [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {}), rand_tensor(r, s34)}; },
       [](const std::vector<Var>& in) { return mul(in[0], in[1]); });
  push("neg", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34)}; },
       [](const std::vector<Var>& in) { return neg(in[0]); });
  push("sin", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34, -3, 3)}; },
       [](const std::vector<Var>& in) { return sin(in[0]); });
  push("cos", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34, -3, 3)}; },
       [](const std::vector<Var>& in) { return cos(in[0]); });
  push("exp", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34, -2, 2)}; },
       [](const std::vector<Var>& in) { return exp(in[0]); });
  push("log", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34, 0.2, 3.0)}; },
       [](const std::vector<Var>& in) { return log(in[0]); });
  push("sqrt", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34, 0.2, 3.0)}; },
       [](const std::vector<Var>& in) { return sqrt(in[0]); });
  push("sigmoid", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34, -4, 4)}; },
       [](const std::vector<Var>& in) { return sigmoid(in[0]); });
  push("relu", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor_away_from_zero(r, s34)}; },
       [](const std::vector<Var>& in) { return relu(in[0]); });
  push("softplus", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34, -4, 4)}; },
       [](const std::vector<Var>& in) { return softplus(in[0]); });
  push("abs", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor_away_from_zero(r, s34)}; },
       [](const std::vector<Var>& in) { return abs(in[0]); });
  push("matmul",
       [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 4}), rand_tensor(r, {4, 5})}; },
       [](const std::vector<Var>& in) { return matmul(in[0], in[1]); });
  push("transpose", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34)}; },
       [](const std::vector<Var>& in) { return transpose(in[0]); });
  push("softmax", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34, -3, 3)}; },
       [](const std::vector<Var>& in) { return softmax(in[0]); });
  push("reshape", [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {2, 6})}; },
       [](const std::vector<Var>& in) { return reshape(in[0], {3, 4}); });
  push("concatenate",
       [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 2}), rand_tensor(r, {3, 3})}; },
       [](const std::vector<Var>& in) { return concatenate({in[0], in[1]}, 1); });
  push("slice", [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {4, 5})}; },
       [](const std::vector<Var>& in) { return slice(in[0], 1, 1, 3); });
  push("sum", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34)}; },
       [](const std::vector<Var>& in) { return sum(in[0]); });
  push("mean", [s34](Rng& r) { return std::vector<Tensor>{rand_tensor(r, s34)}; },
       [](const std::vector<Var>& in) { return mean(in[0]); });
  push("gather_rows", [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {5, 3})}; },
       [](const std::vector<Var>& in) { return gather_rows(in[0], {4, 0, 2, 0}); });
  push("repeat_rows", [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 4})}; },
       [](const std::vector<Var>& in) { return repeat_rows(in[0], 3); });
  push("mul_rowwise",
       [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {4, 3}), rand_tensor(r, {4, 1})}; },
       [](const std::vector<Var>& in) { return mul_rowwise(in[0], in[1]); });
  push("add_rowwise",
       [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {4, 3}), rand_tensor(r, {4, 1})}; },
       [](const std::vector<Var>& in) { return add_rowwise(in[0], in[1]); });
  push("sub_rowwise",
       [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {4, 3}), rand_tensor(r, {4, 1})}; },
       [](const std::vector<Var>& in) { return sub_rowwise(in[0], in[1]); });
  push("bilinear_gather",
       [](Rng& r) {
         Tensor fmap = rand_tensor(r, {4, 5, 3});
         Tensor coords({6, 2});
         // fractional parts kept away from cell edges so the FD probe stays
         // within one bilinear patch
         for (int64_t p = 0; p < 6; ++p) {
           coords.at(p, 0) = static_cast<double>(uniform_int(r, -1, 4)) + uniform(r, 0.2, 0.8);
           coords.at(p, 1) = static_cast<double>(uniform_int(r, -1, 3)) + uniform(r, 0.2, 0.8);
         }
         return std::vector<Tensor>{std::move(fmap), std::move(coords)};
       },
       [](const std::vector<Var>& in) { return bilinear_gather(in[0], in[1], 1, 3); });
  push("linear",
       [](Rng& r) {
         return std::vector<Tensor>{rand_tensor(r, {3, 4}), rand_tensor(r, {4, 5}),
                                    rand_tensor(r, {5})};
       },
       [](const std::vector<Var>& in) { return linear(in[0], in[1], in[2]); });
  push("layer_norm",
       [](Rng& r) {
         return std::vector<Tensor>{rand_tensor(r, {3, 8}), rand_tensor(r, {8}, 0.5, 1.5),
                                    rand_tensor(r, {8})};
       },
       [](const std::vector<Var>& in) { return layer_norm(in[0], in[1], in[2]); });
  push("conv2d",
       [](Rng& r) {
         return std::vector<Tensor>{rand_tensor(r, {6, 6, 2}), rand_tensor(r, {3, 3, 3, 2}),
                                    rand_tensor(r, {3})};
       },
       [](const std::vector<Var>& in) { return conv2d(in[0], in[1], in[2], 2, 1); });
  return checks;
}

}  // namespace ofkit
