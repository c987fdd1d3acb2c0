#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

namespace contraj::ad {

/// Elementwise functions available to unary(). Each entry has a closed-form
/// derivative so the tape never nests differentiation: computations that need
/// second-order terms (e.g. the gradient of a Lyapunov network appearing
/// inside a loss) are spelled out as first-order ops on the tape instead.
enum class UnaryFn {
  Softplus,
  Sigmoid,       // also the derivative of Softplus
  SigmoidDeriv,  // s(1-s)
  Tanh,
  Relu,
  SmoothRelu,       // 0 | x^2/(2k) | x - k/2, knee parameter k
  SmoothReluDeriv,  // clamp(x/k, 0, 1)
  Square,
  Recip,
};

double unary_value(UnaryFn fn, double x, double knee);
double unary_deriv(UnaryFn fn, double x, double knee);

/// Reverse-mode tape over matrix-valued nodes. Vectors are single-column
/// matrices, scalars are 1x1. Node values live in creation order; backward()
/// walks the closures in reverse. Gradients accumulate, so a node may feed
/// any number of consumers.
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Drops all nodes but keeps vector capacity for reuse across iterations.
  void reset();

  int size() const { return static_cast<int>(nodes_.size()); }

  const Eigen::MatrixXd& val(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() target w.r.t. this node. Zero-sized
  /// until touched by backward().
  const Eigen::MatrixXd& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Seeds d(target)/d(target) = 1 and accumulates gradients into every
  /// contributing node. target must be 1x1.
  void backward(Var target);

  // --- node constructors -------------------------------------------------

  Var constant(const Eigen::MatrixXd& value);
  Var leaf(const Eigen::MatrixXd& value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double s);
  /// a + c with c a plain matrix (no gradient into c).
  Var add_const(Var a, const Eigen::MatrixXd& c);

  Var matmul(Var a, Var b);     // a * b
  Var matmul_tn(Var a, Var b);  // a^T * b
  /// mat + bias broadcast over columns; bias is n x 1.
  Var colwise_add(Var mat, Var bias);

  Var cwise_mul(Var a, Var b);
  /// mat (r x n) scaled per column by row (1 x n).
  Var rowbcast_mul(Var mat, Var row);

  Var unary(Var a, UnaryFn fn, double knee = 0.0);
  Var relu(Var a) { return unary(a, UnaryFn::Relu); }
  Var cwise_max_scalar(Var a, double floor);

  /// Sum over rows of each column: (r x n) -> (1 x n).
  Var colsum(Var a);
  Var sum_all(Var a);                              // (1 x 1)
  Var sumsq(Var a);                                // sum of squares, (1 x 1)
  Var sumsq_diff(Var a, const Eigen::MatrixXd& c); // ||a - c||_F^2, (1 x 1)

  Var rows(Var a, int first, int count);
  Var concat_rows(const std::vector<Var>& parts);
  Var append_const_row(Var a, double value);
  /// Column vector tiled to n identical columns.
  Var tile_cols(Var v, int n);
  /// Selected columns of a bank matrix; backward scatter-adds.
  Var gather_cols(Var bank, std::vector<int> idx);

  /// Matrix columns stacked into a single column, first column on top.
  Var flatten_cols(Var a);
  /// Flat-vector segment [off, off+n) as an n x 1 column.
  Var segment(Var v, int off, int n);
  /// Flat-vector segment reshaped row-major into rows x cols.
  Var reshape_rowmajor(Var v, int off, int rows, int cols);

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;  // zero-sized until touched
    bool requires_grad = false;
    bool touched = false;
    std::function<void(Tape&)> pull;  // propagates this node's grad to parents
  };

  Var push(Eigen::MatrixXd value, bool requires_grad, std::function<void(Tape&)> pull);
  Eigen::MatrixXd& grad_buf(int id);

  std::vector<Node> nodes_;
};

using Var = Tape::Var;

}  // namespace contraj::ad
