#pragma once

#include "cmasge/common.hpp"

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <vector>

namespace cmasge {

// Post-op finiteness checks; on by default in builds without NDEBUG.
void set_finite_checks(bool enabled);
bool finite_checks();

/// A learnable matrix with its gradient accumulator and momentum buffer.
/// All three always share a shape.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix init);

  void zero_grad() { grad.setZero(); }

  std::string name;
  Matrix value;
  Matrix grad;
  Matrix momentum;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Matrix grad() const;  // zeros if nothing flowed back
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape& tape() const;
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

/// Records a computation and replays it in reverse for gradients.
///
/// Nodes are appended in evaluation order, so reverse creation order is a
/// valid topological order for the backward sweep. Parameters bound with
/// `param()` receive their accumulated gradient at the end of `backward()`.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  Var param(Parameter& p);

  // Appends an op node; `fn` must add the input gradients given the output gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);

  void backward(Var root);

  const Matrix& value(Var v) const { return nodes_[v.id()].value; }
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
};

// ---- elementwise and linear algebra ----------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var hadamard(Var a, const Matrix& mask);
Var scale(Var a, double s);
Var add_row(Var x, Var row);  // x[r,:] + row for every r
Var linear(Var x, Var weight, Var bias);
Var relu(Var x);
Var sigmoid(Var x);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);
Var repeat_cols(Var column, Index n);

double sigmoid(double x);

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& u,
                                            const Eigen::MatrixBase<DerivedB>& v,
                                            typename DerivedA::Scalar eps = 1e-12) {
  using std::max;
  require(u.size() == v.size() && u.size() >= 1, "cosine_similarity: dimension mismatch");
  const auto nu = max(u.norm(), eps);
  const auto nv = max(v.norm(), eps);
  return u.reshaped().dot(v.reshaped()) / (nu * nv);
}

/// Pairwise cosine similarity between rows: out(r, n) = cos(x_r, y_n) with
/// each norm clamped below at `eps`.
Var cosine_rows(Var x, Var y, double eps = 1e-12);

// ---- normalization ---------------------------------------------------------

struct BatchMoments {
  RowVector mean;
  RowVector var;  // biased
};

// Normalizes each column with batch statistics; writes them to `moments` if non-null.
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchMoments* moments = nullptr);
// Normalizes with fixed statistics (no gradient to the statistics).
Var batch_norm_fixed(Var x, Var gamma, Var beta, const BatchMoments& stats, double eps);

// ---- spatial ---------------------------------------------------------------

/// Layout of a feature batch stored as a (batch*height*width) x channels
/// matrix, rows in (example, y, x) row-major order. Video uses width = 1.
struct Grid {
  Index batch = 1;
  Index height = 1;
  Index width = 1;
  Index locations() const { return height * width; }
  Index rows() const { return batch * height * width; }
  bool operator==(const Grid&) const = default;
};

struct ConvGeometry {
  Index kernel_h = 3, kernel_w = 3;
  Index stride_h = 1, stride_w = 1;
  Index pad_h = 1, pad_w = 1;
  bool replicate_pad = false;  // edge padding instead of zeros
};

Grid conv_output(const Grid& in, const ConvGeometry& g);
Grid pool_output(const Grid& in, Index pool_h, Index pool_w);  // ceil mode

// Patch extraction; columns ordered (ky, kx, channel).
Var im2col(Var x, const Grid& in, const ConvGeometry& g);
// Non-overlapping average pooling; edge windows average the cells they cover.
Var avg_pool(Var x, const Grid& in, Index pool_h, Index pool_w);

// ---- attention -------------------------------------------------------------

/// Normalizes each column of every `group`-row block to sum 1. Blocks whose
/// column sum is below `eps` become uniform and pass no gradient.
Var group_normalize(Var z, Index group, double eps = 1e-12);

/// For every example b: out[b*N + k, :] = sum_i a[b*M + i, k] * x[b*M + i, :].
Var group_aggregate(Var a, Var x, Index group);

/// logits(b, k) = dot(weight_k, h[b*N + k, :]) + bias, bias 1x1 (shared) or 1xN.
Var classify_rows(Var h, Var weight, Var bias);

}  // namespace cmasge
