#include "metoken/diffengine.hpp"

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <sstream>

#include "metoken/common.hpp"

namespace metoken::diff {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  data.assign(n, fill);
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data = {v};
  return t;
}

Tensor Tensor::from(Shape s, std::vector<double> d) {
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(d);
  if (t.numel() != t.data.size())
    throw ShapeError("Tensor::from: shape " + shape_str(t.shape) + " does not match data size " +
                     std::to_string(t.data.size()));
  return t;
}

size_t Tensor::numel() const {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

size_t Tensor::rows() const {
  if (shape.size() <= 1) return 1;
  if (shape.size() == 2) return shape[0];
  throw ShapeError("rank > 2 tensor in matrix context: " + shape_str(shape));
}

size_t Tensor::cols() const {
  if (shape.empty()) return 1;
  if (shape.size() == 1) return shape[0];
  if (shape.size() == 2) return shape[1];
  throw ShapeError("rank > 2 tensor in matrix context: " + shape_str(shape));
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape));
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

void Node::add_grad(const Tensor& g) {
  if (!grad_ready) {
    grad = Tensor(value.shape);
    grad_ready = true;
  }
  assert(g.numel() == grad.numel());
  for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
}

void Node::zero_grad() {
  grad_ready = false;
  grad = Tensor();
}

Var make_leaf(Tensor v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

Var make_const(Tensor v) { return make_leaf(std::move(v), false); }

Var Tape::record(Tensor out, std::vector<Var> parents, std::function<void(Node&)> fn,
                 bool force_no_grad) {
#ifndef NDEBUG
  assert(out.all_finite() && "non-finite value produced by a diffengine op");
#endif
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  n->parents = std::move(parents);
  if (!force_no_grad)
    for (const Var& p : n->parents)
      if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(fn);
  order_.push_back(n);
  return n;
}

void Tape::backward(Var loss) {
  if (loss->value.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss->value.shape));
  // recorded intermediates restart from zero so every call contributes one
  // unit to the leaves; leaf gradients accumulate across calls
  for (Var& n : order_) n->zero_grad();
  Tensor one(loss->value.shape);
  one.data[0] = 1.0;
  loss->add_grad(one);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node& n = **it;
    if (n.grad_ready && n.backward_fn) n.backward_fn(n);
  }
}

void Tape::clear() { order_.clear(); }

// ---------------------------------------------------------------------------
// broadcasting helpers

namespace {

struct B2 {
  size_t rows, cols;
};

B2 bshape(const Tensor& t) { return {t.rows(), t.cols()}; }

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  B2 x = bshape(a), y = bshape(b);
  size_t r = std::max(x.rows, y.rows);
  size_t c = std::max(x.cols, y.cols);
  bool ok = (x.rows == y.rows || x.rows == 1 || y.rows == 1) &&
            (x.cols == y.cols || x.cols == 1 || y.cols == 1);
  if (!ok)
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
  // Preserve the higher-rank operand's rank convention.
  if (a.rank() == 2 || b.rank() == 2) return {r, c};
  if (a.rank() == 1 || b.rank() == 1) return {c};
  return {};
}

// Sum g down to the shape of target (inverse of broadcast).
Tensor reduce_to(const Tensor& g, const Tensor& target) {
  if (g.same_shape(target.shape == g.shape ? g : target) && g.shape == target.shape) return g;
  B2 gs = bshape(g), ts = bshape(target);
  Tensor out(target.shape);
  for (size_t r = 0; r < gs.rows; ++r) {
    size_t tr = ts.rows == 1 ? 0 : r;
    for (size_t c = 0; c < gs.cols; ++c) {
      size_t tc = ts.cols == 1 ? 0 : c;
      out.data[tr * ts.cols + tc] += g.data[r * gs.cols + c];
    }
  }
  return out;
}

template <typename F>
Tensor broadcast_eval(const Tensor& a, const Tensor& b, const char* op, F f) {
  Shape os = broadcast_shape(a, b, op);
  Tensor out(os);
  B2 as = bshape(a), bs = bshape(b), os2 = bshape(out);
  for (size_t r = 0; r < os2.rows; ++r) {
    size_t ar = as.rows == 1 ? 0 : r, br = bs.rows == 1 ? 0 : r;
    for (size_t c = 0; c < os2.cols; ++c) {
      size_t ac = as.cols == 1 ? 0 : c, bc = bs.cols == 1 ? 0 : c;
      out.data[r * os2.cols + c] = f(a.data[ar * as.cols + ac], b.data[br * bs.cols + bc]);
    }
  }
  return out;
}

// Elementwise gradient with broadcast reduction: d += reduce(g * w).
void bcast_accum(Node& parent, const Tensor& g, const Tensor& weight_num, bool use_weight,
                 const Tensor& other, bool mul_other, double sign) {
  // weight tensors follow the parent/other broadcast pattern of the forward op
  Tensor contrib(g.shape);
  B2 gs = bshape(g);
  B2 ws = use_weight ? bshape(weight_num) : gs;
  B2 os = mul_other ? bshape(other) : gs;
  for (size_t r = 0; r < gs.rows; ++r) {
    size_t wr = ws.rows == 1 ? 0 : r, orr = os.rows == 1 ? 0 : r;
    for (size_t c = 0; c < gs.cols; ++c) {
      size_t wc = ws.cols == 1 ? 0 : c, oc = os.cols == 1 ? 0 : c;
      double v = g.data[r * gs.cols + c] * sign;
      if (use_weight) v *= weight_num.data[wr * ws.cols + wc];
      if (mul_other) v *= other.data[orr * os.cols + oc];
      contrib.data[r * gs.cols + c] = v;
    }
  }
  parent.add_grad(reduce_to(contrib, parent.value));
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise / broadcast ops

Var Tape::add(Var a, Var b) {
  Tensor out = broadcast_eval(a->value, b->value, "add", [](double x, double y) { return x + y; });
  return record(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad)
      bcast_accum(*n.parents[0], n.grad, Tensor(), false, Tensor(), false, 1.0);
    if (n.parents[1]->requires_grad)
      bcast_accum(*n.parents[1], n.grad, Tensor(), false, Tensor(), false, 1.0);
  });
}

Var Tape::sub(Var a, Var b) {
  Tensor out = broadcast_eval(a->value, b->value, "sub", [](double x, double y) { return x - y; });
  return record(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad)
      bcast_accum(*n.parents[0], n.grad, Tensor(), false, Tensor(), false, 1.0);
    if (n.parents[1]->requires_grad)
      bcast_accum(*n.parents[1], n.grad, Tensor(), false, Tensor(), false, -1.0);
  });
}

Var Tape::mul(Var a, Var b) {
  Tensor out = broadcast_eval(a->value, b->value, "mul", [](double x, double y) { return x * y; });
  return record(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad)
      bcast_accum(*n.parents[0], n.grad, Tensor(), false, n.parents[1]->value, true, 1.0);
    if (n.parents[1]->requires_grad)
      bcast_accum(*n.parents[1], n.grad, Tensor(), false, n.parents[0]->value, true, 1.0);
  });
}

Var Tape::div(Var a, Var b) {
  Tensor out = broadcast_eval(a->value, b->value, "div", [](double x, double y) { return x / y; });
  Var node = record(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor inv_b = broadcast_eval(n.grad, bv, "div", [](double g, double y) { return g / y; });
      n.parents[0]->add_grad(reduce_to(inv_b, av));
    }
    if (n.parents[1]->requires_grad) {
      // d/db = -g * a / b^2 over the broadcast grid
      Tensor t = broadcast_eval(n.grad, n.value, "div", [](double g, double q) { return g * q; });
      Tensor t2 = broadcast_eval(t, bv, "div", [](double gq, double y) { return -gq / y; });
      n.parents[1]->add_grad(reduce_to(t2, bv));
    }
  });
  return node;
}

Var Tape::scale(Var a, double c) {
  Tensor out = a->value;
  for (double& v : out.data) v *= c;
  return record(std::move(out), {a}, [c](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor g = n.grad;
    for (double& v : g.data) v *= c;
    n.parents[0]->add_grad(g);
  });
}

Var Tape::relu(Var a) {
  Tensor out = a->value;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return record(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor g = n.grad;
    const Tensor& x = n.parents[0]->value;
    for (size_t i = 0; i < g.data.size(); ++i)
      if (x.data[i] <= 0.0) g.data[i] = 0.0;
    n.parents[0]->add_grad(g);
  });
}

Var Tape::log(Var a) {
  Tensor out = a->value;
  for (double& v : out.data) {
    if (v <= 0.0) throw NumericalError("log of a non-positive value");
    v = std::log(v);
  }
  return record(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor g = n.grad;
    const Tensor& x = n.parents[0]->value;
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] /= x.data[i];
    n.parents[0]->add_grad(g);
  });
}

Var Tape::exp(Var a) {
  Tensor out = a->value;
  for (double& v : out.data) v = std::exp(v);
  return record(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor g = n.grad;
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= n.value.data[i];
    n.parents[0]->add_grad(g);
  });
}

// ---------------------------------------------------------------------------
// linear algebra

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2)
    throw ShapeError("matmul: needs rank-2 operands, got " + shape_str(av.shape) + " and " +
                     shape_str(bv.shape));
  if (av.shape[1] != bv.shape[0])
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(av.shape) + " x " +
                     shape_str(bv.shape));
  size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor out({m, n});
  if (m && k && n) {
    CMapMat A(av.data.data(), Eigen::Index(m), Eigen::Index(k));
    CMapMat B(bv.data.data(), Eigen::Index(k), Eigen::Index(n));
    MapMat C(out.data.data(), Eigen::Index(m), Eigen::Index(n));
    C.noalias() = A * B;
  }
  return record(std::move(out), {a, b}, [m, k, n](Node& nd) {
    if (m == 0 || n == 0) return;
    CMapMat G(nd.grad.data.data(), Eigen::Index(m), Eigen::Index(n));
    if (nd.parents[0]->requires_grad && k) {
      CMapMat B(nd.parents[1]->value.data.data(), Eigen::Index(k), Eigen::Index(n));
      Tensor da({m, k});
      MapMat D(da.data.data(), Eigen::Index(m), Eigen::Index(k));
      D.noalias() = G * B.transpose();
      nd.parents[0]->add_grad(da);
    }
    if (nd.parents[1]->requires_grad && k) {
      CMapMat A(nd.parents[0]->value.data.data(), Eigen::Index(m), Eigen::Index(k));
      Tensor db({k, n});
      MapMat D(db.data.data(), Eigen::Index(k), Eigen::Index(n));
      D.noalias() = A.transpose() * G;
      nd.parents[1]->add_grad(db);
    }
  });
}

Var Tape::transpose(Var a) {
  const Tensor& av = a->value;
  if (av.rank() != 2) throw ShapeError("transpose: needs rank-2, got " + shape_str(av.shape));
  size_t m = av.shape[0], n = av.shape[1];
  Tensor out({n, m});
  for (size_t r = 0; r < m; ++r)
    for (size_t c = 0; c < n; ++c) out.data[c * m + r] = av.data[r * n + c];
  return record(std::move(out), {a}, [m, n](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor g({m, n});
    for (size_t r = 0; r < n; ++r)
      for (size_t c = 0; c < m; ++c) g.data[c * n + r] = nd.grad.data[r * m + c];
    nd.parents[0]->add_grad(g);
  });
}

// ---------------------------------------------------------------------------
// row-wise ops

Var Tape::softmax(Var a) {
  const Tensor& av = a->value;
  size_t m = av.rows(), n = av.cols();
  Tensor out(av.shape);
  for (size_t r = 0; r < m; ++r) {
    const double* x = av.data.data() + r * n;
    double* y = out.data.data() + r * n;
    double mx = x[0];
    for (size_t c = 1; c < n; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (size_t c = 0; c < n; ++c) {
      y[c] = std::exp(x[c] - mx);
      z += y[c];
    }
    for (size_t c = 0; c < n; ++c) y[c] /= z;
  }
  return record(std::move(out), {a}, [m, n](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor g(nd.parents[0]->value.shape);
    for (size_t r = 0; r < m; ++r) {
      const double* y = nd.value.data.data() + r * n;
      const double* gy = nd.grad.data.data() + r * n;
      double dot = 0.0;
      for (size_t c = 0; c < n; ++c) dot += gy[c] * y[c];
      double* gx = g.data.data() + r * n;
      for (size_t c = 0; c < n; ++c) gx[c] = (gy[c] - dot) * y[c];
    }
    nd.parents[0]->add_grad(g);
  });
}

Var Tape::log_softmax(Var a) {
  const Tensor& av = a->value;
  size_t m = av.rows(), n = av.cols();
  Tensor out(av.shape);
  for (size_t r = 0; r < m; ++r) {
    const double* x = av.data.data() + r * n;
    double* y = out.data.data() + r * n;
    double mx = x[0];
    for (size_t c = 1; c < n; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (size_t c = 0; c < n; ++c) z += std::exp(x[c] - mx);
    double lse = mx + std::log(z);
    for (size_t c = 0; c < n; ++c) y[c] = x[c] - lse;
  }
  return record(std::move(out), {a}, [m, n](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor g(nd.parents[0]->value.shape);
    for (size_t r = 0; r < m; ++r) {
      const double* y = nd.value.data.data() + r * n;
      const double* gy = nd.grad.data.data() + r * n;
      double gsum = 0.0;
      for (size_t c = 0; c < n; ++c) gsum += gy[c];
      double* gx = g.data.data() + r * n;
      for (size_t c = 0; c < n; ++c) gx[c] = gy[c] - std::exp(y[c]) * gsum;
    }
    nd.parents[0]->add_grad(g);
  });
}

Var Tape::layer_norm(Var a) {
  constexpr double kEps = 1e-5;
  const Tensor& av = a->value;
  size_t m = av.rows(), n = av.cols();
  Tensor out(av.shape);
  std::vector<double> inv_std(m);
  for (size_t r = 0; r < m; ++r) {
    const double* x = av.data.data() + r * n;
    double mu = 0.0;
    for (size_t c = 0; c < n; ++c) mu += x[c];
    mu /= double(n);
    double var = 0.0;
    for (size_t c = 0; c < n; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= double(n);
    double is = 1.0 / std::sqrt(var + kEps);
    inv_std[r] = is;
    double* y = out.data.data() + r * n;
    for (size_t c = 0; c < n; ++c) y[c] = (x[c] - mu) * is;
  }
  return record(std::move(out), {a}, [m, n, inv_std](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor g(nd.parents[0]->value.shape);
    for (size_t r = 0; r < m; ++r) {
      const double* y = nd.value.data.data() + r * n;
      const double* gy = nd.grad.data.data() + r * n;
      double mean_g = 0.0, mean_gy = 0.0;
      for (size_t c = 0; c < n; ++c) {
        mean_g += gy[c];
        mean_gy += gy[c] * y[c];
      }
      mean_g /= double(n);
      mean_gy /= double(n);
      double* gx = g.data.data() + r * n;
      for (size_t c = 0; c < n; ++c) gx[c] = inv_std[r] * (gy[c] - mean_g - y[c] * mean_gy);
    }
    nd.parents[0]->add_grad(g);
  });
}

Var Tape::l2_normalize(Var a) {
  const Tensor& av = a->value;
  size_t m = av.rows(), n = av.cols();
  Tensor out(av.shape);
  std::vector<double> inv_norm(m);
  for (size_t r = 0; r < m; ++r) {
    const double* x = av.data.data() + r * n;
    double s = 0.0;
    for (size_t c = 0; c < n; ++c) s += x[c] * x[c];
    double nr = std::sqrt(s);
    if (nr < 1e-300) throw NumericalError("l2_normalize: zero-norm row " + std::to_string(r));
    inv_norm[r] = 1.0 / nr;
    double* y = out.data.data() + r * n;
    for (size_t c = 0; c < n; ++c) y[c] = x[c] * inv_norm[r];
  }
  return record(std::move(out), {a}, [m, n, inv_norm](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor g(nd.parents[0]->value.shape);
    for (size_t r = 0; r < m; ++r) {
      const double* y = nd.value.data.data() + r * n;
      const double* gy = nd.grad.data.data() + r * n;
      double dot = 0.0;
      for (size_t c = 0; c < n; ++c) dot += gy[c] * y[c];
      double* gx = g.data.data() + r * n;
      for (size_t c = 0; c < n; ++c) gx[c] = (gy[c] - dot * y[c]) * inv_norm[r];
    }
    nd.parents[0]->add_grad(g);
  });
}

// ---------------------------------------------------------------------------
// reductions

Var Tape::mse(Var a, Var b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (!av.same_shape(bv))
    throw ShapeError("mse: shapes differ, " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  double acc = 0.0;
  for (size_t i = 0; i < av.data.size(); ++i) {
    double d = av.data[i] - bv.data[i];
    acc += d * d;
  }
  size_t numel = std::max<size_t>(1, av.numel());
  Tensor out = Tensor::scalar(acc / double(numel));
  return record(std::move(out), {a, b}, [numel](Node& nd) {
    double g = nd.grad.data[0] * 2.0 / double(numel);
    const Tensor& av2 = nd.parents[0]->value;
    const Tensor& bv2 = nd.parents[1]->value;
    if (nd.parents[0]->requires_grad) {
      Tensor da(av2.shape);
      for (size_t i = 0; i < da.data.size(); ++i) da.data[i] = g * (av2.data[i] - bv2.data[i]);
      nd.parents[0]->add_grad(da);
    }
    if (nd.parents[1]->requires_grad) {
      Tensor db(bv2.shape);
      for (size_t i = 0; i < db.data.size(); ++i) db.data[i] = -g * (av2.data[i] - bv2.data[i]);
      nd.parents[1]->add_grad(db);
    }
  });
}

Var Tape::sum(Var a) {
  double acc = 0.0;
  for (double v : a->value.data) acc += v;
  return record(Tensor::scalar(acc), {a}, [](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor g(nd.parents[0]->value.shape, nd.grad.data[0]);
    nd.parents[0]->add_grad(g);
  });
}

Var Tape::mean(Var a) {
  size_t n = std::max<size_t>(1, a->value.numel());
  return scale(sum(a), 1.0 / double(n));
}

Var Tape::row_sum(Var a) {
  const Tensor& av = a->value;
  size_t m = av.rows(), n = av.cols();
  Tensor out({m, 1});
  for (size_t r = 0; r < m; ++r) {
    double acc = 0.0;
    for (size_t c = 0; c < n; ++c) acc += av.data[r * n + c];
    out.data[r] = acc;
  }
  return record(std::move(out), {a}, [m, n](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor g(nd.parents[0]->value.shape);
    for (size_t r = 0; r < m; ++r)
      for (size_t c = 0; c < n; ++c) g.data[r * n + c] = nd.grad.data[r];
    nd.parents[0]->add_grad(g);
  });
}

// ---------------------------------------------------------------------------
// indexing

Var Tape::gather_rows(Var a, std::vector<int> idx) {
  const Tensor& av = a->value;
  if (av.rank() != 2) throw ShapeError("gather_rows: needs rank-2, got " + shape_str(av.shape));
  size_t n = av.shape[1];
  for (int r : idx)
    if (r < 0 || size_t(r) >= av.shape[0]) throw IndexError("gather_rows: row index out of range");
  Tensor out({idx.size(), n});
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy_n(av.data.data() + size_t(idx[r]) * n, n, out.data.data() + r * n);
  return record(std::move(out), {a}, [idx, n](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor g(nd.parents[0]->value.shape);
    for (size_t r = 0; r < idx.size(); ++r) {
      double* dst = g.data.data() + size_t(idx[r]) * n;
      const double* src = nd.grad.data.data() + r * n;
      for (size_t c = 0; c < n; ++c) dst[c] += src[c];
    }
    nd.parents[0]->add_grad(g);
  });
}

Var Tape::gather_cols(Var a, std::vector<int> idx) {
  const Tensor& av = a->value;
  if (av.rank() != 2) throw ShapeError("gather_cols: needs rank-2, got " + shape_str(av.shape));
  if (idx.size() != av.shape[0])
    throw ShapeError("gather_cols: need one column index per row");
  size_t n = av.shape[1];
  for (int c : idx)
    if (c < 0 || size_t(c) >= n) throw IndexError("gather_cols: column index out of range");
  Tensor out({idx.size()});
  for (size_t r = 0; r < idx.size(); ++r) out.data[r] = av.data[r * n + size_t(idx[r])];
  return record(std::move(out), {a}, [idx, n](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor g(nd.parents[0]->value.shape);
    for (size_t r = 0; r < idx.size(); ++r) g.data[r * n + size_t(idx[r])] += nd.grad.data[r];
    nd.parents[0]->add_grad(g);
  });
}

Var Tape::segment_sum(Var a, std::vector<int> seg, size_t n_segs) {
  const Tensor& av = a->value;
  if (av.rank() != 2) throw ShapeError("segment_sum: needs rank-2, got " + shape_str(av.shape));
  if (seg.size() != av.shape[0])
    throw ShapeError("segment_sum: need one segment id per row");
  size_t n = av.shape[1];
  for (int s : seg)
    if (s < 0 || size_t(s) >= n_segs) throw IndexError("segment_sum: segment id out of range");
  Tensor out({n_segs, n});
  for (size_t r = 0; r < seg.size(); ++r) {
    double* dst = out.data.data() + size_t(seg[r]) * n;
    const double* src = av.data.data() + r * n;
    for (size_t c = 0; c < n; ++c) dst[c] += src[c];
  }
  return record(std::move(out), {a}, [seg, n](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor g(nd.parents[0]->value.shape);
    for (size_t r = 0; r < seg.size(); ++r) {
      const double* src = nd.grad.data.data() + size_t(seg[r]) * n;
      double* dst = g.data.data() + r * n;
      for (size_t c = 0; c < n; ++c) dst[c] = src[c];
    }
    nd.parents[0]->add_grad(g);
  });
}

Var Tape::concat_cols(std::vector<Var> xs) {
  if (xs.empty()) throw ShapeError("concat_cols: no operands");
  size_t m = xs[0]->value.rows();
  size_t total = 0;
  std::vector<size_t> widths;
  for (const Var& x : xs) {
    if (x->value.rank() != 2 || x->value.shape[0] != m)
      throw ShapeError("concat_cols: row counts disagree");
    widths.push_back(x->value.shape[1]);
    total += x->value.shape[1];
  }
  Tensor out({m, total});
  size_t off = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const Tensor& v = xs[i]->value;
    for (size_t r = 0; r < m; ++r)
      std::copy_n(v.data.data() + r * widths[i], widths[i], out.data.data() + r * total + off);
    off += widths[i];
  }
  return record(std::move(out), xs, [m, total, widths](Node& nd) {
    size_t off2 = 0;
    for (size_t i = 0; i < nd.parents.size(); ++i) {
      if (nd.parents[i]->requires_grad) {
        Tensor g({m, widths[i]});
        for (size_t r = 0; r < m; ++r)
          std::copy_n(nd.grad.data.data() + r * total + off2, widths[i],
                      g.data.data() + r * widths[i]);
        nd.parents[i]->add_grad(g);
      }
      off2 += widths[i];
    }
  });
}

Var Tape::sg(Var a) {
  return record(a->value, {a}, nullptr, /*force_no_grad=*/true);
}

// ---------------------------------------------------------------------------
// optimizer

void adam_step(std::vector<Var>& params, OptimState& st) {
  if (st.moments.size() != params.size()) {
    st.moments.clear();
    for (const Var& p : params)
      st.moments.emplace_back(Tensor(p->value.shape), Tensor(p->value.shape));
  }
  st.step_count += 1;
  double bc1 = 1.0 - std::pow(st.beta1, double(st.step_count));
  double bc2 = 1.0 - std::pow(st.beta2, double(st.step_count));
  for (size_t i = 0; i < params.size(); ++i) {
    Node& p = *params[i];
    Tensor& m = st.moments[i].first;
    Tensor& v = st.moments[i].second;
    if (m.numel() != p.value.numel())
      throw ShapeError("adam_step: moment buffer shape mismatch at param " + std::to_string(i));
    for (size_t k = 0; k < p.value.data.size(); ++k) {
      double g = p.grad_ready ? p.grad.data[k] : 0.0;
      m.data[k] = st.beta1 * m.data[k] + (1.0 - st.beta1) * g;
      v.data[k] = st.beta2 * v.data[k] + (1.0 - st.beta2) * g * g;
      double mhat = m.data[k] / bc1;
      double vhat = v.data[k] / bc2;
      p.value.data[k] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

void zero_grads(std::vector<Var>& params) {
  for (Var& p : params) p->zero_grad();
}

}  // namespace metoken::diff
