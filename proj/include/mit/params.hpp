#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mit/autograd.hpp"
#include "mit/tensor.hpp"

namespace mit {

using Rng = std::mt19937_64;

/// Uniform in [−1/√fan_in, +1/√fan_in].
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// Named parameter tensors in deterministic (lexicographic) order.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all_mut() { return params_; }
  std::size_t total_size() const;

  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  std::map<std::string, Tensor> params_;
};

/// Per-forward view of a ParameterStore: each parameter becomes a graph leaf
/// on first use. Separate Bindings never share gradient buffers, which lets
/// independent scenes run forward/backward concurrently.
class Bindings {
 public:
  Bindings(const ParameterStore& store, bool trainable) : store_(&store), trainable_(trainable) {}
  /// Binds caller-owned variables only; unknown names throw.
  explicit Bindings(std::map<std::string, Var> vars) : store_(nullptr), trainable_(true), bound_(std::move(vars)) {}

  Var operator()(const std::string& name);
  bool trainable() const { return trainable_; }
  /// Gradients of every parameter touched by the forward pass.
  std::map<std::string, Tensor> gradients() const;
  const std::map<std::string, Var>& bound() const { return bound_; }

 private:
  const ParameterStore* store_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

}  // namespace mit
