#ifndef BEVPROMPT_TESTS_SUPPORT_HPP
#define BEVPROMPT_TESTS_SUPPORT_HPP

#include <cmath>
#include <filesystem>

#include "bevprompt/numerics/tensor.hpp"
#include "bevprompt/rng.hpp"

namespace testing {

using bevprompt::nn::Tensor;

inline Tensor random_tensor(bevprompt::Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Tensor t(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) t(r, c) = scale * rng.normal();
  }
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  return (a - b).cwiseAbs().maxCoeff();
}

inline std::filesystem::path source_dir() { return BEVPROMPT_SOURCE_DIR; }
inline std::filesystem::path cli_path() { return BEVPROMPT_CLI_PATH; }

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(BEVPROMPT_BINARY_DIR) / "scratch" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing

#endif  // BEVPROMPT_TESTS_SUPPORT_HPP
