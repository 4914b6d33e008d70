#include "mit/encoder.hpp"

#include "mit/errors.hpp"

namespace mit {

void register_encoder_layer(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t width,
                            Rng& rng) {
  register_layer_norm(store, prefix + ".norm_attn", dim);
  register_attention(store, prefix + ".attn", dim, rng);
  register_layer_norm(store, prefix + ".norm_mlp", dim);
  register_mlp(store, prefix + ".mlp", dim, width, dim, rng);
}

EncoderLayerParams bind_encoder_layer(Bindings& b, const std::string& prefix) {
  return {bind_layer_norm(b, prefix + ".norm_attn"), bind_attention(b, prefix + ".attn"),
          bind_layer_norm(b, prefix + ".norm_mlp"), bind_mlp(b, prefix + ".mlp")};
}

EncoderTrace encode(const Var& data, const Var& positional, const Var& class_tokens, Modality modality,
                    std::span<const EncoderLayerParams> layers, std::size_t heads) {
  if (data.shape() != positional.shape()) {
    throw ShapeError("encode: data tokens " + shape_string(data.shape()) + " vs positional " +
                     shape_string(positional.shape()));
  }
  if (data.rows() == 0) throw ShapeError("encode: no data tokens");
  if (class_tokens.cols() != data.cols()) {
    throw ShapeError("encode: class tokens " + shape_string(class_tokens.shape()) + " do not match width " +
                     std::to_string(data.cols()));
  }
  if (heads == 0 || data.cols() % heads != 0) {
    throw ConfigError("encode: width " + std::to_string(data.cols()) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  Var x = concat_rows(class_tokens, add(data, positional));
  EncoderTrace trace;
  for (const auto& layer : layers) {
    const Var normed = apply_layer_norm(x, layer.norm_attn);
    AttentionOutput att = multi_head_attention(normed, normed, layer.attn, heads);
    x = add(x, att.output);
    x = add(x, apply_mlp(apply_layer_norm(x, layer.norm_mlp), layer.mlp));
    trace.attention.push_back(std::move(att.weights));
  }
  trace.final = TokenSet{x, class_tokens.rows(), modality};
  return trace;
}

Var class_token_scores(const Var& class_tokens) { return row_means(class_tokens); }

ClassAwareCam class_aware_cam(const Var& data_tokens, const Var& weights, const Var& bias) {
  Var cam = add_row(matmul(data_tokens, weights), bias);
  Var scores = col_means(cam);
  return {std::move(cam), std::move(scores)};
}

Var multilabel_loss(const Var& scores, const SceneTags& y) {
  std::vector<double> targets(y.y.begin(), y.y.end());
  return bce_with_logits_mean(scores, targets);
}

Var modality_loss(const EncoderTrace& trace, const ClassAwareCam& cam, const SceneTags& y) {
  const Var terms[] = {multilabel_loss(class_token_scores(trace.final.class_tokens()), y),
                       multilabel_loss(cam.scores, y)};
  return sum_scalars(terms);
}

EncoderLoss encoder_loss(const EncoderTrace& points, const EncoderTrace& views, const ClassAwareCam& points_cam,
                         const ClassAwareCam& views_cam, const SceneTags& y) {
  EncoderLoss out;
  out.class_3d = multilabel_loss(class_token_scores(points.final.class_tokens()), y);
  out.cam_3d = multilabel_loss(points_cam.scores, y);
  out.class_2d = multilabel_loss(class_token_scores(views.final.class_tokens()), y);
  out.cam_2d = multilabel_loss(views_cam.scores, y);
  const Var terms[] = {out.class_3d, out.cam_3d, out.class_2d, out.cam_2d};
  out.total = sum_scalars(terms);
  return out;
}

}  // namespace mit
