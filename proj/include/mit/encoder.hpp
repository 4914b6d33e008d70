#pragma once

#include <span>
#include <string>
#include <vector>

#include "mit/layers.hpp"
#include "mit/scene.hpp"

namespace mit {

enum class Modality { points, views };

/// Token matrix whose first `n_class` rows are class tokens and whose
/// remaining rows are data tokens (supervoxels or views).
struct TokenSet {
  Var tokens;
  std::size_t n_class = 0;
  Modality modality = Modality::points;

  std::size_t n_data() const { return tokens.rows() - n_class; }
  Var class_tokens() const { return slice_rows(tokens, 0, n_class); }
  Var data_tokens() const { return slice_rows(tokens, n_class, tokens.rows()); }
};

/// Pre-norm transformer layer: x + Attn(LN(x)), then x + MLP(LN(x)).
struct EncoderLayerParams {
  LayerNormParams norm_attn;
  AttentionProjections attn;
  LayerNormParams norm_mlp;
  MlpParams mlp;
};

void register_encoder_layer(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t width,
                            Rng& rng);
EncoderLayerParams bind_encoder_layer(Bindings& b, const std::string& prefix);

struct EncoderTrace {
  TokenSet final;
  /// One heads × (C+n) × (C+n) self-attention record per layer.
  std::vector<Tensor> attention;
};

/// Adds `positional` to the data tokens, prepends the class tokens and runs
/// the layer stack.
EncoderTrace encode(const Var& data, const Var& positional, const Var& class_tokens, Modality modality,
                    std::span<const EncoderLayerParams> layers, std::size_t heads);

/// Score of class c: mean of class-token row c (C × 1).
Var class_token_scores(const Var& class_tokens);

struct ClassAwareCam {
  Var cam;     // n_data × C
  Var scores;  // 1 × C, mean of the cam over data tokens
};

/// Per-token linear map to C class activations.
ClassAwareCam class_aware_cam(const Var& data_tokens, const Var& weights, const Var& bias);

/// Mean over classes of binary cross-entropy with logits.
Var multilabel_loss(const Var& scores, const SceneTags& y);

struct EncoderLoss {
  Var class_3d;
  Var cam_3d;
  Var class_2d;
  Var cam_2d;
  Var total;
};

/// L_enc = (L^c_3D + L^s_3D) + (L^c_2D + L^t_2D).
EncoderLoss encoder_loss(const EncoderTrace& points, const EncoderTrace& views, const ClassAwareCam& points_cam,
                         const ClassAwareCam& views_cam, const SceneTags& y);

/// Single-modality half of the encoder objective (class-token plus CAM term).
Var modality_loss(const EncoderTrace& trace, const ClassAwareCam& cam, const SceneTags& y);

}  // namespace mit
