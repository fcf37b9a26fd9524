#include "bevprompt/numerics/tensor.hpp"

#include <cmath>

#include "bevprompt/errors.hpp"

namespace bevprompt::nn {

namespace {

void require(bool ok, const std::string& op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw DimensionError(op + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
  }
}

void require_square(const Tensor& w, Eigen::Index d, const char* name) {
  if (w.rows() != d || w.cols() != d) {
    throw DimensionError(std::string("attention: projection ") + name + " is " + shape_string(w) +
                         ", expected [" + std::to_string(d) + "x" + std::to_string(d) + "]");
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  return a * b;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.cols() < 2) {
    throw DimensionError("layer_norm: degenerate feature dimension " + shape_string(x));
  }
  require(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm gain", x, gain);
  require(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm bias", x, bias);
  Tensor y(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const Eigen::RowVectorXd centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / n;
    const double inv = 1.0 / std::sqrt(var + eps);
    y.row(r) = (centered * inv).cwiseProduct(gain.row(0)) + bias.row(0);
  }
  return y;
}

Tensor relu(const Tensor& x) { return x.cwiseMax(0.0); }

AttentionWeights AttentionWeights::zeros(Eigen::Index d) {
  return {Tensor::Zero(d, d), Tensor::Zero(d, d), Tensor::Zero(d, d), Tensor::Zero(d, d)};
}

AttentionWeights AttentionWeights::identity(Eigen::Index d) {
  return {Tensor::Identity(d, d), Tensor::Identity(d, d), Tensor::Identity(d, d), Tensor::Identity(d, d)};
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionWeights& w,
                            int heads) {
  const Eigen::Index d = q.cols();
  if (d == 0) throw DimensionError("attention: zero feature dimension");
  require(k.cols() == d, "attention q/k", q, k);
  require(v.cols() == d && v.rows() == k.rows(), "attention k/v", k, v);
  require_square(w.wq, d, "Wq");
  require_square(w.wk, d, "Wk");
  require_square(w.wv, d, "Wv");
  require_square(w.wo, d, "Wo");
  if (heads < 1 || d % heads != 0) {
    throw DimensionError("attention: " + std::to_string(heads) + " heads do not divide d=" + std::to_string(d));
  }
  const Tensor qp = q * w.wq;
  const Tensor kp = k * w.wk;
  const Tensor vp = v * w.wv;
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor mixed(q.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Tensor scores = (qp.middleCols(h * dh, dh) * kp.middleCols(h * dh, dh).transpose()) * scale;
    mixed.middleCols(h * dh, dh) = softmax_rows(scores) * vp.middleCols(h * dh, dh);
  }
  return mixed * w.wo;
}

MlpWeights MlpWeights::zeros(Eigen::Index d, Eigen::Index hidden) {
  return {Tensor::Zero(d, hidden), Tensor::Zero(1, hidden), Tensor::Zero(hidden, d), Tensor::Zero(1, d)};
}

Tensor mlp_block(const Tensor& x, const MlpWeights& w) {
  require(x.cols() == w.w1.rows(), "mlp W1", x, w.w1);
  require(w.b1.rows() == 1 && w.b1.cols() == w.w1.cols(), "mlp b1", w.w1, w.b1);
  require(w.w2.rows() == w.w1.cols(), "mlp W2", w.w1, w.w2);
  require(w.b2.rows() == 1 && w.b2.cols() == w.w2.cols(), "mlp b2", w.w2, w.b2);
  Tensor hidden = x * w.w1;
  hidden.rowwise() += w.b1.row(0);
  Tensor out = relu(hidden) * w.w2;
  out.rowwise() += w.b2.row(0);
  return out;
}

}  // namespace bevprompt::nn
