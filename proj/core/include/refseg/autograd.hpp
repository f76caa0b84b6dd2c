#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records one forward computation. Every op appends a node holding its
// value and, when any input needs a gradient, a closure that pushes the
// node's gradient back to its inputs. Nodes are appended in topological
// order, so backward() is a single reverse sweep.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace refseg {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A named tensor owned by a model. Frozen parameters never accumulate gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool is_trainable = true);

  std::size_t size() const noexcept { return static_cast<std::size_t>(value.size()); }
  void zero_grad();
};

namespace ag {

struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Var constant(Matrix m);
  /// Borrows `m` without copying; the matrix must outlive the tape's use of it.
  Var constant_ref(const Matrix& m);
  /// Leaf bound to a parameter; backward() adds into p.grad when p is trainable.
  Var param(Parameter& p);
  /// Same value as `v`, but gradient stops here.
  Var detach(Var v);
  /// When disabled, param() binds parameters as constants and no node requires a gradient.
  void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

  const Matrix& value(Var v) const;
  double scalar(Var v) const;
  bool requires_grad(Var v) const;
  /// Gradient of the last backward() root with respect to `v` (zero-size if unreached).
  const Matrix& grad(Var v) const;

  /// Seeds d(root)/d(root) = 1 and sweeps all recorded nodes in reverse.
  void backward(Var root);
  void clear();
  std::size_t size() const noexcept { return nodes_.size(); }

  // --- op-author interface ------------------------------------------------
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Matrix value, std::span<const Var> inputs, Backward backward);
  /// Adds `contribution` into the gradient slot of `v` if it requires one.
  void accumulate(Var v, const Matrix& contribution);
  template <typename Expr>
  void accumulate_expr(Var v, const Expr& contribution) {
    if (!requires_grad(v)) return;
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) {
      n.grad = contribution;
    } else {
      n.grad += contribution;
    }
  }

 private:
  struct Node {
    Matrix value;
    const Matrix* borrowed = nullptr;
    Matrix grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    Backward backward;
  };
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

// --- linear algebra -------------------------------------------------------
Var matmul(Tape& t, Var a, Var b);     // A B
Var matmul_nt(Tape& t, Var a, Var b);  // A B^T
Var transpose(Tape& t, Var a);

// --- elementwise ------------------------------------------------------------
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
/// c * a + shift, elementwise.
Var affine(Tape& t, Var a, double c, double shift);
/// Broadcast a 1xC row over every row of `a`.
Var add_row(Tape& t, Var a, Var row);
Var mul_row(Tape& t, Var a, Var row);
/// Scale row r of `a` by col(r, 0).
Var mul_col(Tape& t, Var a, Var col);
/// a * s and a / s for a 1x1 scalar node s.
Var mul_scalar(Tape& t, Var a, Var s);
Var div_scalar(Tape& t, Var a, Var s);
Var relu(Tape& t, Var a);
/// x * sigmoid(1.702 x), a smooth GELU approximation.
Var gelu(Tape& t, Var a);

// --- reductions and reshapes ------------------------------------------------
Var sum_all(Tape& t, Var a);
Var frobenius_sq(Tape& t, Var a);
Var mean_rows(Tape& t, Var a);  // NxC -> 1xC
Var concat_cols(Tape& t, std::span<const Var> parts);
Var slice_cols(Tape& t, Var a, int start, int count);

// --- normalisation ------------------------------------------------------------
/// Row-wise softmax; `additive_mask` (same shape, constant) is added to the logits first.
Var softmax_rows(Tape& t, Var a, const Matrix* additive_mask = nullptr);
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);
/// Each row divided by max(||row||, eps).
Var row_normalize(Tape& t, Var a, double eps);

// --- losses -------------------------------------------------------------------
/// -log softmax(logits)[target] for a 1xK row of logits.
Var cross_entropy_row(Tape& t, Var logits, int target);
/// Mean binary cross-entropy over an Nx1 column of logits, each logit clamped
/// to [-clamp, clamp]. labels[j] != 0 marks the positive class.
Var bce_with_logits_mean(Tape& t, Var logits, std::span<const std::uint8_t> labels,
                         double clamp);

}  // namespace ag
}  // namespace refseg
