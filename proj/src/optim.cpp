#include "mit/optim.hpp"

#include <cmath>

#include "mit/errors.hpp"

namespace mit {

void adamw_step(ParameterStore& params, const std::map<std::string, Tensor>& grads, AdamWState& state,
                const AdamWSettings& s) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.get_mut(name);
    if (p.shape() != g.shape()) throw ShapeError("adamw: gradient of " + name + " has the wrong shape");
    auto [mi, m_new] = state.first_moment.try_emplace(name, p.shape(), 0.0);
    auto [vi, v_new] = state.second_moment.try_emplace(name, p.shape(), 0.0);
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      p[i] -= s.learning_rate * s.weight_decay * p[i];
      p[i] -= s.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.eps);
    }
  }
}

}  // namespace mit
