#ifndef BEVPROMPT_ORACLES_NAIVE_LINALG_HPP
#define BEVPROMPT_ORACLES_NAIVE_LINALG_HPP

#include <cmath>
#include <vector>

#include "bevprompt/numerics/tensor.hpp"

// Element-by-element reference implementations.
namespace oracle {

using bevprompt::nn::Tensor;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor c(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

inline Tensor softmax_rows(const Tensor& x) {
  Tensor y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = x(i, 0);
    for (Eigen::Index j = 1; j < x.cols(); ++j) m = std::max(m, x(i, j));
    double z = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) z += std::exp(x(i, j) - m);
    for (Eigen::Index j = 0; j < x.cols(); ++j) y(i, j) = std::exp(x(i, j) - m) / z;
  }
  return y;
}

inline Tensor layer_norm(const Tensor& x, double eps) {
  Tensor y(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean /= n;
    double var = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= n;
    for (Eigen::Index j = 0; j < x.cols(); ++j) y(i, j) = (x(i, j) - mean) / std::sqrt(var + eps);
  }
  return y;
}

struct RowStats {
  double mean;
  double variance;
};

inline std::vector<RowStats> row_stats(const Tensor& x) {
  std::vector<RowStats> out;
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mean = 0.0, sq = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean /= n;
    for (Eigen::Index j = 0; j < x.cols(); ++j) sq += (x(i, j) - mean) * (x(i, j) - mean);
    out.push_back({mean, sq / n});
  }
  return out;
}

}  // namespace oracle

#endif  // BEVPROMPT_ORACLES_NAIVE_LINALG_HPP
