#include "refseg/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "refseg/error.hpp"

namespace refseg {

Parameter::Parameter(std::string n, Matrix v, bool is_trainable)
    : name(std::move(n)), value(std::move(v)), trainable(is_trainable) {
  if (trainable) grad = Matrix::Zero(value.rows(), value.cols());
}

void Parameter::zero_grad() {
  if (!trainable) return;
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  } else {
    grad.setZero();
  }
}

namespace ag {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInput(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                       std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                       std::to_string(b.cols()));
  }
}

void require_scalar(const Matrix& s, const char* op) {
  if (s.rows() != 1 || s.cols() != 1) throw InvalidInput(std::string(op) + ": expected 1x1 scalar");
}

}  // namespace

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw InvalidInput("tape: invalid variable");
  return nodes_[v.id];
}

Var Tape::constant(Matrix m) {
  Node n;
  n.value = std::move(m);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant_ref(const Matrix& m) {
  Node n;
  n.borrowed = &m;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.borrowed = &p.value;
  if (p.trainable && grad_enabled_) {
    n.param = &p;
    n.requires_grad = true;
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::detach(Var v) { return constant(value(v)); }

const Matrix& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.borrowed ? *n.borrowed : n.value;
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  require_scalar(m, "scalar");
  return m(0, 0);
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

const Matrix& Tape::grad(Var v) const { return node(v).grad; }

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (Var in : inputs) {
    if (node(in).requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::accumulate(Var v, const Matrix& contribution) { accumulate_expr(v, contribution); }

void Tape::backward(Var root) {
  const Matrix& rv = value(root);
  require_scalar(rv, "backward");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad = Matrix::Ones(1, 1);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) n.param->grad += n.grad;
  }
}

void Tape::clear() { nodes_.clear(); }

// --- linear algebra -------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  if (A.cols() != B.rows()) throw InvalidInput("matmul: inner dimension mismatch");
  Matrix out;
  out.noalias() = A * B;
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate_expr(a, g * tp.value(b).transpose());
    if (tp.requires_grad(b)) tp.accumulate_expr(b, tp.value(a).transpose() * g);
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  if (A.cols() != B.cols()) throw InvalidInput("matmul_nt: inner dimension mismatch");
  Matrix out;
  out.noalias() = A * B.transpose();
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate_expr(a, g * tp.value(b));
    if (tp.requires_grad(b)) tp.accumulate_expr(b, g.transpose() * tp.value(a));
  });
}

Var transpose(Tape& t, Var a) {
  Matrix out = t.value(a).transpose();
  return t.push(std::move(out), {a},
                [a](Tape& tp, const Matrix& g) { tp.accumulate_expr(a, g.transpose()); });
}

// --- elementwise ------------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Matrix out = t.value(a) + t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  Matrix out = t.value(a) - t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate_expr(b, -g);
  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "mul");
  Matrix out = t.value(a).cwiseProduct(t.value(b));
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate_expr(a, g.cwiseProduct(tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate_expr(b, g.cwiseProduct(tp.value(a)));
  });
}

Var scale(Tape& t, Var a, double c) {
  Matrix out = t.value(a) * c;
  return t.push(std::move(out), {a}, [a, c](Tape& tp, const Matrix& g) { tp.accumulate_expr(a, g * c); });
}

Var affine(Tape& t, Var a, double c, double shift) {
  Matrix out = (t.value(a) * c).array() + shift;
  return t.push(std::move(out), {a}, [a, c](Tape& tp, const Matrix& g) { tp.accumulate_expr(a, g * c); });
}

Var add_row(Tape& t, Var a, Var row) {
  const Matrix& A = t.value(a);
  const Matrix& R = t.value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) throw InvalidInput("add_row: row shape mismatch");
  Matrix out = A.rowwise() + R.row(0);
  return t.push(std::move(out), {a, row}, [a, row](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(row)) tp.accumulate_expr(row, g.colwise().sum());
  });
}

Var mul_row(Tape& t, Var a, Var row) {
  const Matrix& A = t.value(a);
  const Matrix& R = t.value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) throw InvalidInput("mul_row: row shape mismatch");
  Matrix out = A.array().rowwise() * R.row(0).array();
  return t.push(std::move(out), {a, row}, [a, row](Tape& tp, const Matrix& g) {
    const Matrix& Rv = tp.value(row);
    if (tp.requires_grad(a)) {
      Matrix ga = g.array().rowwise() * Rv.row(0).array();
      tp.accumulate(a, ga);
    }
    if (tp.requires_grad(row)) tp.accumulate_expr(row, g.cwiseProduct(tp.value(a)).colwise().sum());
  });
}

Var mul_col(Tape& t, Var a, Var col) {
  const Matrix& A = t.value(a);
  const Matrix& C = t.value(col);
  if (C.cols() != 1 || C.rows() != A.rows()) throw InvalidInput("mul_col: column shape mismatch");
  Matrix out = A.array().colwise() * C.col(0).array();
  return t.push(std::move(out), {a, col}, [a, col](Tape& tp, const Matrix& g) {
    const Matrix& Cv = tp.value(col);
    if (tp.requires_grad(a)) {
      Matrix ga = g.array().colwise() * Cv.col(0).array();
      tp.accumulate(a, ga);
    }
    if (tp.requires_grad(col)) tp.accumulate_expr(col, g.cwiseProduct(tp.value(a)).rowwise().sum());
  });
}

Var mul_scalar(Tape& t, Var a, Var s) {
  require_scalar(t.value(s), "mul_scalar");
  const double sv = t.value(s)(0, 0);
  Matrix out = t.value(a) * sv;
  return t.push(std::move(out), {a, s}, [a, s, sv](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(a, g * sv);
    if (tp.requires_grad(s)) {
      Matrix gs(1, 1);
      gs(0, 0) = g.cwiseProduct(tp.value(a)).sum();
      tp.accumulate(s, gs);
    }
  });
}

Var div_scalar(Tape& t, Var a, Var s) {
  require_scalar(t.value(s), "div_scalar");
  const double sv = t.value(s)(0, 0);
  Matrix out = t.value(a) / sv;
  return t.push(std::move(out), {a, s}, [a, s, sv](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(a, g / sv);
    if (tp.requires_grad(s)) {
      Matrix gs(1, 1);
      gs(0, 0) = -g.cwiseProduct(tp.value(a)).sum() / (sv * sv);
      tp.accumulate(s, gs);
    }
  });
}

Var relu(Tape& t, Var a) {
  Matrix out = t.value(a).cwiseMax(0.0);
  return t.push(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    Matrix ga = (tp.value(a).array() > 0.0).select(g.array(), 0.0).matrix();
    tp.accumulate(a, ga);
  });
}

namespace {
constexpr double kGeluSlope = 1.702;
}

Var gelu(Tape& t, Var a) {
  const Matrix& x = t.value(a);
  Matrix sig = (1.0 + (-kGeluSlope * x.array()).exp()).inverse().matrix();
  Matrix out = x.cwiseProduct(sig);
  return t.push(std::move(out), {a}, [a, sig = std::move(sig)](Tape& tp, const Matrix& g) {
    const auto xs = tp.value(a).array();
    const auto s = sig.array();
    Matrix ga = (g.array() * (s + kGeluSlope * xs * s * (1.0 - s))).matrix();
    tp.accumulate(a, ga);
  });
}

// --- reductions and reshapes ------------------------------------------------

Var sum_all(Tape& t, Var a) {
  Matrix out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.push(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    const Matrix& A = tp.value(a);
    tp.accumulate_expr(a, Matrix::Constant(A.rows(), A.cols(), g(0, 0)));
  });
}

Var frobenius_sq(Tape& t, Var a) {
  Matrix out(1, 1);
  out(0, 0) = t.value(a).squaredNorm();
  return t.push(std::move(out), {a},
                [a](Tape& tp, const Matrix& g) { tp.accumulate_expr(a, tp.value(a) * (2.0 * g(0, 0))); });
}

Var mean_rows(Tape& t, Var a) {
  const Matrix& A = t.value(a);
  const auto n = static_cast<double>(A.rows());
  Matrix out = A.colwise().sum() / n;
  const auto rows = A.rows();
  return t.push(std::move(out), {a}, [a, n, rows](Tape& tp, const Matrix& g) {
    Matrix ga = (g / n).replicate(rows, 1);
    tp.accumulate(a, ga);
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInput("concat_cols: no inputs");
  const auto rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw InvalidInput("concat_cols: row count mismatch");
    cols += t.value(p).cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    const Matrix& P = t.value(p);
    out.middleCols(c, P.cols()) = P;
    c += P.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(out), parts, [inputs](Tape& tp, const Matrix& g) {
    Eigen::Index off = 0;
    for (Var p : inputs) {
      const auto w = tp.value(p).cols();
      if (tp.requires_grad(p)) tp.accumulate_expr(p, g.middleCols(off, w));
      off += w;
    }
  });
}

Var slice_cols(Tape& t, Var a, int start, int count) {
  const Matrix& A = t.value(a);
  if (start < 0 || count <= 0 || start + count > A.cols()) throw InvalidInput("slice_cols: out of range");
  Matrix out = A.middleCols(start, count);
  return t.push(std::move(out), {a}, [a, start, count](Tape& tp, const Matrix& g) {
    const Matrix& Av = tp.value(a);
    Matrix ga = Matrix::Zero(Av.rows(), Av.cols());
    ga.middleCols(start, count) = g;
    tp.accumulate(a, ga);
  });
}

// --- normalisation ------------------------------------------------------------

Var softmax_rows(Tape& t, Var a, const Matrix* additive_mask) {
  Matrix z = t.value(a);
  if (additive_mask) {
    require_same_shape(z, *additive_mask, "softmax_rows");
    z += *additive_mask;
  }
  const Eigen::VectorXd row_max = z.rowwise().maxCoeff();
  z = (z.colwise() - row_max).array().exp().matrix();
  const Eigen::VectorXd row_sum = z.rowwise().sum();
  z = z.array().colwise() / row_sum.array();
  Matrix y = z;
  return t.push(std::move(z), {a}, [a, y = std::move(y)](Tape& tp, const Matrix& g) {
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Matrix ga = y.cwiseProduct(g.colwise() - dot);
    tp.accumulate(a, ga);
  });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Matrix& X = t.value(x);
  const Matrix& G = t.value(gamma);
  const Matrix& B = t.value(beta);
  const auto d = X.cols();
  if (G.rows() != 1 || G.cols() != d || B.rows() != 1 || B.cols() != d) {
    throw InvalidInput("layer_norm: affine shape mismatch");
  }
  const Eigen::VectorXd mean = X.rowwise().mean();
  Matrix xc = X.colwise() - mean;
  const Eigen::VectorXd inv_std =
      ((xc.array().square().rowwise().sum() / static_cast<double>(d)) + eps).rsqrt();
  Matrix xhat = xc.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * G.row(0).array()).rowwise() + B.row(0).array();
  return t.push(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat = std::move(xhat), inv_std](Tape& tp, const Matrix& g) {
                  const Matrix& Gv = tp.value(gamma);
                  if (tp.requires_grad(gamma)) tp.accumulate_expr(gamma, g.cwiseProduct(xhat).colwise().sum());
                  if (tp.requires_grad(beta)) tp.accumulate_expr(beta, g.colwise().sum());
                  if (tp.requires_grad(x)) {
                    Matrix gx = g.array().rowwise() * Gv.row(0).array();
                    const Eigen::VectorXd m1 = gx.rowwise().mean();
                    const Eigen::VectorXd m2 = gx.cwiseProduct(xhat).rowwise().mean();
                    Matrix dx = gx.colwise() - m1;
                    dx -= (xhat.array().colwise() * m2.array()).matrix();
                    dx = dx.array().colwise() * inv_std.array();
                    tp.accumulate(x, dx);
                  }
                });
}

Var row_normalize(Tape& t, Var a, double eps) {
  const Matrix& A = t.value(a);
  const Eigen::VectorXd norms = A.rowwise().norm();
  const Eigen::VectorXd denom = norms.cwiseMax(eps);
  Matrix y = A.array().colwise() / denom.array();
  Matrix out = y;
  return t.push(std::move(out), {a}, [a, y = std::move(y), norms, denom, eps](Tape& tp, const Matrix& g) {
    Matrix ga(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      if (norms(r) > eps) {
        const double proj = g.row(r).dot(y.row(r));
        ga.row(r) = (g.row(r) - proj * y.row(r)) / denom(r);
      } else {
        ga.row(r) = g.row(r) / denom(r);
      }
    }
    tp.accumulate(a, ga);
  });
}

// --- losses -------------------------------------------------------------------

Var cross_entropy_row(Tape& t, Var logits, int target) {
  const Matrix& L = t.value(logits);
  if (L.rows() != 1 || target < 0 || target >= L.cols()) throw InvalidInput("cross_entropy_row: bad target");
  const double m = L.maxCoeff();
  Matrix p = (L.array() - m).exp().matrix();
  const double z = p.sum();
  p /= z;
  Matrix out(1, 1);
  out(0, 0) = (m + std::log(z)) - L(0, target);
  return t.push(std::move(out), {logits}, [logits, target, p = std::move(p)](Tape& tp, const Matrix& g) {
    Matrix gl = p;
    gl(0, target) -= 1.0;
    tp.accumulate_expr(logits, gl * g(0, 0));
  });
}

namespace {
// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
}  // namespace

Var bce_with_logits_mean(Tape& t, Var logits, std::span<const std::uint8_t> labels, double clamp) {
  const Matrix& L = t.value(logits);
  if (L.cols() != 1 || static_cast<std::size_t>(L.rows()) != labels.size()) {
    throw InvalidInput("bce_with_logits_mean: logits/labels size mismatch");
  }
  const auto n = L.rows();
  double total = 0.0;
  Matrix dlogit(n, 1);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double raw = L(j, 0);
    const double x = std::clamp(raw, -clamp, clamp);
    const bool pos = labels[static_cast<std::size_t>(j)] != 0;
    // -log sigma(x) = softplus(-x); -log(1 - sigma(x)) = softplus(x)
    total += pos ? softplus(-x) : softplus(x);
    const double sig = 1.0 / (1.0 + std::exp(-x));
    const bool inside = raw > -clamp && raw < clamp;
    dlogit(j, 0) = inside ? (sig - (pos ? 1.0 : 0.0)) / static_cast<double>(n) : 0.0;
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  return t.push(std::move(out), {logits}, [logits, dlogit = std::move(dlogit)](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(logits, dlogit * g(0, 0));
  });
}

}  // namespace ag
}  // namespace refseg
