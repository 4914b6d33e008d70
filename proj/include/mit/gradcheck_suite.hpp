#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mit/gradcheck.hpp"
#include "mit/model.hpp"

namespace mit {

/// Gradcheck over every tensor of `store`: the inputs are the parameters,
/// bound by name for `fn`.
GradcheckReport gradcheck_parameters(const ParameterStore& store, const std::function<Var(Bindings&)>& fn,
                                     double eps = 1e-5, double tol = 1e-4);

struct GradcheckCase {
  std::string name;
  std::function<GradcheckReport(std::uint64_t seed, double eps, double tol)> run;
};

/// Every differentiable operation of the library, each on a small random
/// instance drawn from `seed`.
const std::vector<GradcheckCase>& gradcheck_cases();

/// Hand-built scene with `supervoxels` occupied 0.25 m cells (two points
/// each), `views` random RGB views of side `side` with depth and cameras,
/// and tags (1, 0, 1, 0, ...).
Scene tiny_scene(std::uint64_t seed, std::size_t classes, std::size_t supervoxels, std::size_t views,
                 std::size_t side = 8);

/// Model sizes used by the end-to-end gradchecks (D = 8, two heads).
Config tiny_config();

}  // namespace mit
