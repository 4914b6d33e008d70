#pragma once

#include <span>
#include <string>
#include <vector>

#include "mit/encoder.hpp"

namespace mit {

/// One cross-attention layer: queries attend to the data tokens of the other
/// modality, then an MLP, both pre-norm with residuals.
struct CrossLayerParams {
  LayerNormParams norm_query;
  LayerNormParams norm_keyval;
  AttentionProjections attn;
  LayerNormParams norm_mlp;
  MlpParams mlp;
};

struct InterlacedBlock {
  CrossLayerParams odd;
  CrossLayerParams even;
};

void register_cross_layer(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t width,
                          Rng& rng);
CrossLayerParams bind_cross_layer(Bindings& b, const std::string& prefix);
void register_interlaced_block(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t width,
                               Rng& rng);
InterlacedBlock bind_interlaced_block(Bindings& b, const std::string& prefix);

struct CrossAttention {
  TokenSet updated;
  /// Head-averaged weights, (C+n_q) × (C+n_kv). Key-side class columns are 0.
  Tensor attention;
  /// Head-averaged scaled logits between query and key class tokens, C × C.
  Var class_logits;
};

CrossAttention cross_attend_masked(const TokenSet& queries, const TokenSet& keyvals, const CrossLayerParams& p,
                                   std::size_t heads);

/// Which modality provides the queries of the first layer in each block.
enum class QueryOrder { points_first, views_first };

struct DecoderLayerRecord {
  Tensor attention;
  Var class_logits;
  Modality query;
  /// Key/value tokens the layer attended to.
  Var keyvals;
  /// 1-based position in the stack; odd layers open a block.
  std::size_t layer = 0;
};

struct BlockOutput {
  TokenSet points;
  TokenSet views;
  DecoderLayerRecord odd;
  DecoderLayerRecord even;
};

BlockOutput interlaced_block(const TokenSet& points, const TokenSet& views, const InterlacedBlock& block,
                             std::size_t heads, QueryOrder order = QueryOrder::points_first);

struct DecoderTrace {
  TokenSet points;
  TokenSet views;
  std::vector<DecoderLayerRecord> layers;
};

DecoderTrace decode(const TokenSet& points, const TokenSet& views, std::span<const InterlacedBlock> blocks,
                    std::size_t heads, QueryOrder order = QueryOrder::points_first);

/// Symmetric N-pair loss over exp(logits), averaged over the given layers.
Var class_contrastive_loss(std::span<const Var> class_logits);

struct DecoderLoss {
  Var class_3d;
  Var class_2d;
  Var contrastive;
  Var total;
};

inline constexpr double kDefaultContrastWeight = 0.5;

DecoderLoss decoder_loss(const DecoderTrace& trace, const SceneTags& y, double alpha = kDefaultContrastWeight);

}  // namespace mit
