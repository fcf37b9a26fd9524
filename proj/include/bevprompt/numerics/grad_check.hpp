#ifndef BEVPROMPT_NUMERICS_GRAD_CHECK_HPP
#define BEVPROMPT_NUMERICS_GRAD_CHECK_HPP

#include <functional>
#include <span>
#include <vector>

#include "bevprompt/numerics/tape.hpp"

namespace bevprompt::nn {

/// Builds a scalar loss on `tape` from the recorded parameters.
using LossFn = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Eigen::Index worst_index = 0;
};

/// Compares the taped gradient of `loss` against central differences with
/// step `h`, entry by entry. The error of one entry is
/// |analytic - numeric| / max(1, |numeric|). Throws EvaluationError if any
/// loss evaluation is non-finite.
GradCheckResult grad_check(const LossFn& loss, std::vector<Tensor> params, double h = 1e-6);

}  // namespace bevprompt::nn

#endif  // BEVPROMPT_NUMERICS_GRAD_CHECK_HPP
