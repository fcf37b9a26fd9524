#ifndef BEVPROMPT_NUMERICS_TAPE_HPP
#define BEVPROMPT_NUMERICS_TAPE_HPP

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "bevprompt/numerics/tensor.hpp"

namespace bevprompt::nn {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// tape that produced it is alive.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record of matrix-level primitives.
///
/// Nodes are appended in evaluation order, so replaying them from the loss
/// back to the first node is a reverse topological sweep. Gradients are only
/// accumulated into nodes that depend on a leaf created with variable();
/// everything else (including constant() leaves) keeps an exactly-zero
/// gradient. One tape per forward/backward pass; not thread-safe.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Record an op result. `backward` receives d(loss)/d(result) and must call
  /// accumulate() on its inputs. Skipped when no input requires a gradient.
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  void accumulate(const Var& v, const Tensor& g);

  /// Seed d(loss)/d(loss) = 1 and sweep backward. `loss` must be 1 x 1.
  void backward(const Var& loss);

  /// Gradient of the last backward() target; zeros when the node never
  /// received one.
  Tensor grad(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Taped primitives. Shapes are checked exactly as in the forward versions.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// x + row, with `row` (1 x n) broadcast over every row of x.
Var add_row(const Var& x, const Var& row);
Var scale(const Var& x, double s);
Var transpose(const Var& x);
Var relu(const Var& x);
Var softmax_rows(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);
/// Column-wise mean over rows -> 1 x n.
Var mean_rows(const Var& x);
/// Sum of all entries -> 1 x 1.
Var sum(const Var& x);
/// Sum of elementwise products with a constant weight tensor -> 1 x 1.
Var weighted_sum(const Var& x, const Tensor& weights);
/// Mean smooth-L1 (Huber, beta) over entries where mask != 0 -> 1 x 1.
Var smooth_l1(const Var& pred, const Tensor& target, const Tensor& mask, double beta = 1.0);

inline Var operator+(const Var& a, const Var& b) {
  return (b.rows() == 1 && a.rows() != 1) ? add_row(a, b) : add(a, b);
}

struct AttentionVars {
  Var wq, wk, wv, wo;
};

struct MlpVars {
  Var w1, b1, w2, b2;
};

struct NormVars {
  Var gain, bias;
};

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, const AttentionVars& w, int heads = 1);
Var mlp_block(const Var& x, const MlpVars& w);

}  // namespace bevprompt::nn

#endif  // BEVPROMPT_NUMERICS_TAPE_HPP
