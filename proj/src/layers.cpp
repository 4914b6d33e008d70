#include "mit/layers.hpp"

namespace mit {

void register_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  store.add(prefix + ".w", init_uniform({in, out}, in, rng));
  store.add(prefix + ".b", init_uniform({1, out}, in, rng));
}

void register_mlp(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
                  Rng& rng) {
  store.add(prefix + ".w1", init_uniform({in, hidden}, in, rng));
  store.add(prefix + ".b1", init_uniform({1, hidden}, in, rng));
  store.add(prefix + ".w2", init_uniform({hidden, out}, hidden, rng));
  store.add(prefix + ".b2", init_uniform({1, out}, hidden, rng));
}

void register_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + ".gain", Tensor({1, dim}, 1.0));
  store.add(prefix + ".bias", Tensor({1, dim}, 0.0));
}

void register_attention(ParameterStore& store, const std::string& prefix, std::size_t dim, Rng& rng) {
  for (const char* name : {".wq", ".wk", ".wv", ".wo"}) store.add(prefix + name, init_uniform({dim, dim}, dim, rng));
}

MlpParams bind_mlp(Bindings& b, const std::string& prefix) {
  return {b(prefix + ".w1"), b(prefix + ".b1"), b(prefix + ".w2"), b(prefix + ".b2")};
}

AttentionProjections bind_attention(Bindings& b, const std::string& prefix) {
  return {b(prefix + ".wq"), b(prefix + ".wk"), b(prefix + ".wv"), b(prefix + ".wo")};
}

LayerNormParams bind_layer_norm(Bindings& b, const std::string& prefix) {
  return {b(prefix + ".gain"), b(prefix + ".bias")};
}

Var apply_mlp(const Var& x, const MlpParams& p) {
  return add_row(matmul(relu(add_row(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

}  // namespace mit
