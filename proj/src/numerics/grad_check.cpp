#include "bevprompt/numerics/grad_check.hpp"

#include <cmath>

#include "bevprompt/errors.hpp"

namespace bevprompt::nn {

namespace {

double evaluate(const LossFn& loss, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.constant(p));
  const Var out = loss(tape, vars);
  if (out.rows() != 1 || out.cols() != 1) {
    throw DimensionError("grad_check: loss is " + shape_string(out.value()) + ", expected scalar");
  }
  const double v = out.value()(0, 0);
  if (!std::isfinite(v)) throw EvaluationError("grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckResult grad_check(const LossFn& loss, std::vector<Tensor> params, double h) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(tape.variable(p));
    const Var out = loss(tape, vars);
    if (!std::isfinite(out.value()(0, 0))) throw EvaluationError("grad_check: non-finite loss");
    tape.backward(out);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Eigen::Index i = 0; i < params[p].size(); ++i) {
      double& entry = params[p].data()[i];
      const double saved = entry;
      entry = saved + h;
      const double plus = evaluate(loss, params);
      entry = saved - h;
      const double minus = evaluate(loss, params);
      entry = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = std::abs(analytic[p].data()[i] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > result.max_rel_error) result = {err, p, i};
    }
  }
  return result;
}

}  // namespace bevprompt::nn
