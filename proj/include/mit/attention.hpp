#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "mit/autograd.hpp"
#include "mit/tensor.hpp"

namespace mit {

/// One flag per key; `true` hides the key from every query.
using KeyMask = std::vector<bool>;

/// Row-wise softmax. Masked columns receive exactly zero weight (their logits
/// are replaced by −∞ before normalisation). Throws DegenerateMaskError if a
/// mask hides every column.
Tensor softmax_rows(const Tensor& logits, const std::optional<KeyMask>& column_mask = std::nullopt);

struct AttentionOutput {
  Var output;
  /// heads × n_q × n_k
  Tensor weights;
};

/// Scaled dot-product attention over already-projected Q, K, V with the
/// feature axis split into `heads` contiguous groups. Returns the
/// concatenated per-head outputs (n_q × D) and the per-head weights.
AttentionOutput attention_core(const Var& q, const Var& k, const Var& v, std::size_t heads,
                               const std::optional<KeyMask>& key_mask = std::nullopt);

struct AttentionProjections {
  Var query;   // D × D
  Var key;     // D × D
  Var value;   // D × D
  Var output;  // D × D
};

/// Full multi-head attention: projections, attention_core, output projection.
AttentionOutput multi_head_attention(const Var& q_tokens, const Var& kv_tokens, const AttentionProjections& proj,
                                     std::size_t heads, const std::optional<KeyMask>& key_mask = std::nullopt);

/// Mean over the leading (head) axis of an h × n × m record.
Tensor mean_over_heads(const Tensor& weights);

}  // namespace mit
