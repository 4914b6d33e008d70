#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mit/autograd.hpp"
#include "mit/tensor.hpp"

namespace mit {

struct GradcheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  /// Flat index (across all inputs) of the worst element.
  std::size_t worst_index = 0;
  bool passed = false;
};

/// Builds a scalar from leaf variables wrapping the supplied inputs.
using ScalarFn = std::function<Var(const std::vector<Var>&)>;

/// Compares reverse-mode gradients of `fn` against central finite differences
/// for every element of every input. The relative error of one element is
/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-8); the check passes
/// iff the largest relative error is ≤ tol. Throws EvaluationError when a
/// forward value is not finite.
GradcheckReport gradcheck(const ScalarFn& fn, const std::vector<Tensor>& inputs, double eps = 1e-5,
                          double tol = 1e-4);

}  // namespace mit
