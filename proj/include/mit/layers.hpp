#pragma once

#include <string>

#include "mit/attention.hpp"
#include "mit/geometry.hpp"
#include "mit/params.hpp"

namespace mit {

// Parameter naming: <prefix>.<part>.<tensor>, e.g. "enc3d.layer0.attn.wq".

void register_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);
void register_mlp(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
                  Rng& rng);
void register_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t dim);
void register_attention(ParameterStore& store, const std::string& prefix, std::size_t dim, Rng& rng);

MlpParams bind_mlp(Bindings& b, const std::string& prefix);
AttentionProjections bind_attention(Bindings& b, const std::string& prefix);

struct LayerNormParams {
  Var gain;
  Var bias;
};
LayerNormParams bind_layer_norm(Bindings& b, const std::string& prefix);

inline Var apply_layer_norm(const Var& x, const LayerNormParams& p) { return layer_norm(x, p.gain, p.bias); }

/// relu(x·w1 + b1)·w2 + b2
Var apply_mlp(const Var& x, const MlpParams& p);

}  // namespace mit
