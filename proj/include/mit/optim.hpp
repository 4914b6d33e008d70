#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mit/params.hpp"

namespace mit {

struct AdamWSettings {
  double learning_rate = 3e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;

  friend bool operator==(const AdamWState&, const AdamWState&) = default;
};

/// One AdamW update with decoupled weight decay. Only the parameters named
/// in `grads` move; the rest keep their values and moments.
void adamw_step(ParameterStore& params, const std::map<std::string, Tensor>& grads, AdamWState& state,
                const AdamWSettings& s);

}  // namespace mit
