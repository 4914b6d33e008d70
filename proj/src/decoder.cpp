#include "mit/decoder.hpp"

#include <cmath>

#include "mit/errors.hpp"

namespace mit {

void register_cross_layer(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t width,
                          Rng& rng) {
  register_layer_norm(store, prefix + ".norm_query", dim);
  register_layer_norm(store, prefix + ".norm_keyval", dim);
  register_attention(store, prefix + ".attn", dim, rng);
  register_layer_norm(store, prefix + ".norm_mlp", dim);
  register_mlp(store, prefix + ".mlp", dim, width, dim, rng);
}

CrossLayerParams bind_cross_layer(Bindings& b, const std::string& prefix) {
  return {bind_layer_norm(b, prefix + ".norm_query"), bind_layer_norm(b, prefix + ".norm_keyval"),
          bind_attention(b, prefix + ".attn"), bind_layer_norm(b, prefix + ".norm_mlp"),
          bind_mlp(b, prefix + ".mlp")};
}

void register_interlaced_block(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t width,
                               Rng& rng) {
  register_cross_layer(store, prefix + ".odd", dim, width, rng);
  register_cross_layer(store, prefix + ".even", dim, width, rng);
}

InterlacedBlock bind_interlaced_block(Bindings& b, const std::string& prefix) {
  return {bind_cross_layer(b, prefix + ".odd"), bind_cross_layer(b, prefix + ".even")};
}

CrossAttention cross_attend_masked(const TokenSet& queries, const TokenSet& keyvals, const CrossLayerParams& p,
                                   std::size_t heads) {
  if (queries.n_class != keyvals.n_class) {
    throw ConfigError("cross_attend: " + std::to_string(queries.n_class) + " query class tokens vs " +
                      std::to_string(keyvals.n_class) + " key class tokens");
  }
  if (queries.tokens.cols() != keyvals.tokens.cols()) {
    throw ShapeError("cross_attend: token widths " + std::to_string(queries.tokens.cols()) + " and " +
                     std::to_string(keyvals.tokens.cols()) + " differ");
  }
  const std::size_t c = queries.n_class;
  const std::size_t dim = queries.tokens.cols();
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("cross_attend: width " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const Var qn = apply_layer_norm(queries.tokens, p.norm_query);
  const Var kvn = apply_layer_norm(keyvals.tokens, p.norm_keyval);
  const Var q = matmul(qn, p.attn.query);
  const Var k = matmul(kvn, p.attn.key);
  const Var v = matmul(kvn, p.attn.value);

  KeyMask mask(keyvals.tokens.rows(), false);
  for (std::size_t j = 0; j < c; ++j) mask[j] = true;
  AttentionOutput att = attention_core(q, k, v, heads, mask);

  Var x = add(queries.tokens, matmul(att.output, p.attn.output));
  x = add(x, apply_mlp(apply_layer_norm(x, p.norm_mlp), p.mlp));

  // Summing per-head dot products and dividing by h·√dh gives the head mean
  // of the per-head scaled logits.
  const double dh = static_cast<double>(dim / heads);
  const double s = 1.0 / (static_cast<double>(heads) * std::sqrt(dh));
  Var class_logits = scale(matmul_nt(slice_rows(q, 0, c), slice_rows(k, 0, c)), s);

  return {TokenSet{x, c, queries.modality}, mean_over_heads(att.weights), std::move(class_logits)};
}

namespace {

DecoderLayerRecord record_of(const CrossAttention& ca, const TokenSet& keyvals, std::size_t layer) {
  return {ca.attention, ca.class_logits, ca.updated.modality, keyvals.tokens, layer};
}

}  // namespace

BlockOutput interlaced_block(const TokenSet& points, const TokenSet& views, const InterlacedBlock& block,
                             std::size_t heads, QueryOrder order) {
  BlockOutput out;
  if (order == QueryOrder::points_first) {
    const CrossAttention first = cross_attend_masked(points, views, block.odd, heads);
    const CrossAttention second = cross_attend_masked(views, first.updated, block.even, heads);
    out.points = first.updated;
    out.views = second.updated;
    out.odd = record_of(first, views, 1);
    out.even = record_of(second, first.updated, 2);
  } else {
    const CrossAttention first = cross_attend_masked(views, points, block.odd, heads);
    const CrossAttention second = cross_attend_masked(points, first.updated, block.even, heads);
    out.views = first.updated;
    out.points = second.updated;
    out.odd = record_of(first, points, 1);
    out.even = record_of(second, first.updated, 2);
  }
  return out;
}

DecoderTrace decode(const TokenSet& points, const TokenSet& views, std::span<const InterlacedBlock> blocks,
                    std::size_t heads, QueryOrder order) {
  if (blocks.empty()) throw ConfigError("decode: at least one interlaced block is required");
  DecoderTrace trace{points, views, {}};
  for (std::size_t r = 0; r < blocks.size(); ++r) {
    BlockOutput b = interlaced_block(trace.points, trace.views, blocks[r], heads, order);
    b.odd.layer = 2 * r + 1;
    b.even.layer = 2 * r + 2;
    trace.points = b.points;
    trace.views = b.views;
    trace.layers.push_back(std::move(b.odd));
    trace.layers.push_back(std::move(b.even));
  }
  return trace;
}

Var class_contrastive_loss(std::span<const Var> class_logits) {
  if (class_logits.empty()) throw ConfigError("class_contrastive_loss: no attention layers");
  std::vector<Var> terms;
  terms.reserve(class_logits.size());
  for (const Var& l : class_logits) {
    if (l.rows() != l.cols()) throw ShapeError("class_contrastive_loss: block " + shape_string(l.shape()) + " is not square");
    terms.push_back(diagonal_cross_entropy(l));
  }
  return scale(sum_scalars(terms), 1.0 / static_cast<double>(class_logits.size()));
}

DecoderLoss decoder_loss(const DecoderTrace& trace, const SceneTags& y, double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError("decoder_loss: alpha must be nonnegative");
  DecoderLoss out;
  out.class_3d = multilabel_loss(class_token_scores(trace.points.class_tokens()), y);
  out.class_2d = multilabel_loss(class_token_scores(trace.views.class_tokens()), y);
  std::vector<Var> logits;
  for (const auto& rec : trace.layers) logits.push_back(rec.class_logits);
  out.contrastive = class_contrastive_loss(logits);
  if (alpha == 0.0) {
    const Var terms[] = {out.class_3d, out.class_2d};
    out.total = sum_scalars(terms);
  } else {
    const Var terms[] = {out.class_3d, out.class_2d, scale(out.contrastive, alpha)};
    out.total = sum_scalars(terms);
  }
  return out;
}

}  // namespace mit
