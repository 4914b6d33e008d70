#include "mit/attention.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "kernels.hpp"
#include "mit/errors.hpp"

namespace mit {

namespace {

void softmax_row_inplace(double* row, std::size_t n, const KeyMask* mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (mask && (*mask)[j]) continue;
    mx = std::max(mx, row[j]);
  }
  if (mx == -std::numeric_limits<double>::infinity()) {
    throw DegenerateMaskError("softmax: every column of a row is masked");
  }
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (mask && (*mask)[j]) {
      row[j] = 0.0;
      continue;
    }
    row[j] = std::exp(row[j] - mx);
    z += row[j];
  }
  const double inv = 1.0 / z;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

void check_mask(const std::optional<KeyMask>& mask, std::size_t n_k) {
  if (!mask) return;
  if (mask->size() != n_k) {
    throw ShapeError("attention: mask has " + std::to_string(mask->size()) + " entries for " + std::to_string(n_k) +
                     " keys");
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& logits, const std::optional<KeyMask>& column_mask) {
  const std::size_t n = logits.rows(), m = logits.cols();
  check_mask(column_mask, m);
  Tensor out = logits;
  const KeyMask* mask = column_mask ? &*column_mask : nullptr;
  for (std::size_t i = 0; i < n; ++i) softmax_row_inplace(out.data() + i * m, m, mask);
  return out;
}

AttentionOutput attention_core(const Var& q, const Var& k, const Var& v, std::size_t heads,
                               const std::optional<KeyMask>& key_mask) {
  const std::size_t nq = q.rows(), nk = k.rows(), dim = q.cols();
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention: model width " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (k.cols() != dim || v.cols() != dim || v.rows() != nk) {
    throw ShapeError("attention: Q " + shape_string(q.shape()) + ", K " + shape_string(k.shape()) + ", V " +
                     shape_string(v.shape()) + " are incompatible");
  }
  check_mask(key_mask, nk);
  const KeyMask* mask = key_mask ? &*key_mask : nullptr;
  const std::size_t dh = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto NQ = static_cast<Eigen::Index>(nq), NK = static_cast<Eigen::Index>(nk);
  const auto DH = static_cast<Eigen::Index>(dh), STRIDE = static_cast<Eigen::Index>(dim);
  using kernels::ConstStrided;
  using kernels::MutMap;
  using kernels::MutStrided;

  auto weights = std::make_shared<Tensor>(Shape{heads, nq, nk});
  Tensor out = Tensor::matrix(nq, dim);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    const ConstStrided qh(q.value().data() + off, NQ, DH, Eigen::OuterStride<>(STRIDE));
    const ConstStrided kh(k.value().data() + off, NK, DH, Eigen::OuterStride<>(STRIDE));
    const ConstStrided vh(v.value().data() + off, NK, DH, Eigen::OuterStride<>(STRIDE));
    MutMap w(weights->data() + h * nq * nk, NQ, NK);
    w.noalias() = (qh * kh.transpose()) * inv_sqrt;
    for (std::size_t i = 0; i < nq; ++i) softmax_row_inplace(w.data() + i * nk, nk, mask);
    MutStrided(out.data() + off, NQ, DH, Eigen::OuterStride<>(STRIDE)).noalias() = w * vh;
  }

  Tensor record = *weights;
  Var result = make_result(std::move(out), {q, k, v}, [weights, heads, nq, nk, dim, dh, inv_sqrt](Node& self) {
    Node& pq = *self.parents[0];
    Node& pk = *self.parents[1];
    Node& pv = *self.parents[2];
    const auto NQ = static_cast<Eigen::Index>(nq), NK = static_cast<Eigen::Index>(nk);
    const auto DH = static_cast<Eigen::Index>(dh), STRIDE = static_cast<Eigen::Index>(dim);
    const Eigen::OuterStride<> stride(STRIDE);
    kernels::RowMatrix dl(NQ, NK);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      const kernels::ConstMap w(weights->data() + h * nq * nk, NQ, NK);
      const kernels::ConstStrided g(self.grad.data() + off, NQ, DH, stride);
      const kernels::ConstStrided vh(pv.value.data() + off, NK, DH, stride);
      if (pv.requires_grad) kernels::MutStrided(pv.grad.data() + off, NK, DH, stride).noalias() += w.transpose() * g;
      if (!pq.requires_grad && !pk.requires_grad) continue;
      // softmax Jacobian: dl = w ∘ (dw − rowsum(w ∘ dw)), dw = g·vᵀ
      dl.noalias() = g * vh.transpose();
      const Eigen::VectorXd dot = w.cwiseProduct(dl).rowwise().sum();
      dl = (w.array() * (dl.colwise() - dot).array() * inv_sqrt).matrix();
      if (pq.requires_grad) {
        const kernels::ConstStrided kh(pk.value.data() + off, NK, DH, stride);
        kernels::MutStrided(pq.grad.data() + off, NQ, DH, stride).noalias() += dl * kh;
      }
      if (pk.requires_grad) {
        const kernels::ConstStrided qh(pq.value.data() + off, NQ, DH, stride);
        kernels::MutStrided(pk.grad.data() + off, NK, DH, stride).noalias() += dl.transpose() * qh;
      }
    }
  });
  return {std::move(result), std::move(record)};
}

AttentionOutput multi_head_attention(const Var& q_tokens, const Var& kv_tokens, const AttentionProjections& proj,
                                     std::size_t heads, const std::optional<KeyMask>& key_mask) {
  const std::size_t dim = q_tokens.cols();
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("multi_head_attention: width " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (kv_tokens.cols() != dim) {
    throw ShapeError("multi_head_attention: query width " + std::to_string(dim) + " vs key width " +
                     std::to_string(kv_tokens.cols()));
  }
  const Var q = matmul(q_tokens, proj.query);
  const Var k = matmul(kv_tokens, proj.key);
  const Var v = matmul(kv_tokens, proj.value);
  AttentionOutput core = attention_core(q, k, v, heads, key_mask);
  return {matmul(core.output, proj.output), std::move(core.weights)};
}

Tensor mean_over_heads(const Tensor& weights) {
  if (weights.rank() != 3) throw ShapeError("mean_over_heads: expected heads × n × m");
  const std::size_t h = weights.shape()[0], n = weights.shape()[1], m = weights.shape()[2];
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t i = 0; i < n * m; ++i) out[i] += weights[k * n * m + i];
  for (auto& v : out.values()) v /= static_cast<double>(h);
  return out;
}

}  // namespace mit
