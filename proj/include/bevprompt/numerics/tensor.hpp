#ifndef BEVPROMPT_NUMERICS_TENSOR_HPP
#define BEVPROMPT_NUMERICS_TENSOR_HPP

#include <Eigen/Dense>

#include <string>

namespace bevprompt::nn {

/// Dense row-major matrix of doubles. Every feature, weight and gradient in
/// the prompt and fusion stack is one of these; vectors are stored as 1 x n.
template <typename Scalar>
using TensorT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Tensor = TensorT<double>;

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& t) {
  return t.derived().array().isFinite().all();
}

// Forward-only primitives. Each throws DimensionError naming the offending
// shapes. The taped versions in tape.hpp compute the same values.

Tensor matmul(const Tensor& a, const Tensor& b);

/// Row-wise softmax with max subtraction; every row sums to one.
Tensor softmax_rows(const Tensor& x);

/// Per-row normalization to zero mean / unit (population) variance followed
/// by an elementwise affine map. `gain` and `bias` are 1 x d.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor relu(const Tensor& x);

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // each d x d

  static AttentionWeights zeros(Eigen::Index d);
  static AttentionWeights identity(Eigen::Index d);
};

/// softmax((q Wq)(k Wk)^T / sqrt(dh)) (v Wv), heads concatenated, then Wo.
/// With `heads` > 1 the projected channels are split into equal slices of
/// width dh = d / heads.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionWeights& w, int heads = 1);

struct MlpWeights {
  Tensor w1, b1, w2, b2;  // d x dh, 1 x dh, dh x d, 1 x d

  static MlpWeights zeros(Eigen::Index d, Eigen::Index hidden);
};

/// relu(x W1 + b1) W2 + b2, applied to every row independently.
Tensor mlp_block(const Tensor& x, const MlpWeights& w);

}  // namespace bevprompt::nn

#endif  // BEVPROMPT_NUMERICS_TENSOR_HPP
