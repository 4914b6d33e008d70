#include "mit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mit/errors.hpp"

namespace mit {

namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor>& inputs) {
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(Var::constant(t));
  const double value = fn(vars).item();
  if (!std::isfinite(value)) throw EvaluationError("gradcheck: forward value is not finite");
  return value;
}

}  // namespace

GradcheckReport gradcheck(const ScalarFn& fn, const std::vector<Tensor>& inputs, double eps, double tol) {
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(Var::leaf(t));
  const Var out = fn(leaves);
  if (!std::isfinite(out.item())) throw EvaluationError("gradcheck: forward value is not finite");
  backward(out);

  GradcheckReport report;
  std::vector<Tensor> probe = inputs;
  std::size_t flat = 0;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Tensor analytic = leaves[a].grad();
    for (std::size_t i = 0; i < inputs[a].numel(); ++i, ++flat) {
      const double x0 = inputs[a][i];
      probe[a][i] = x0 + eps;
      const double up = evaluate(fn, probe);
      probe[a][i] = x0 - eps;
      const double down = evaluate(fn, probe);
      probe[a][i] = x0;
      const double numeric = (up - down) / (2.0 * eps);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      const double rel = abs_err / denom;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_index = flat;
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace mit
