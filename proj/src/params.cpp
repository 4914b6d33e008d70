#include "mit/params.hpp"

#include <cmath>

#include "mit/errors.hpp"

namespace mit {

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

void ParameterStore::add(const std::string& name, Tensor value) {
  if (!params_.emplace(name, std::move(value)).second) throw ConfigError("parameter registered twice: " + name);
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

Tensor& ParameterStore::get_mut(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

Var Bindings::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  if (!store_) throw ConfigError("unknown parameter: " + name);
  const Tensor& value = store_->get(name);
  Var v = trainable_ ? Var::leaf(value) : Var::constant(value);
  bound_.emplace(name, v);
  return v;
}

std::map<std::string, Tensor> Bindings::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : bound_) out.emplace(name, v.grad());
  return out;
}

}  // namespace mit
