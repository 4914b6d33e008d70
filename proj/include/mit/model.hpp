#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mit/config.hpp"
#include "mit/inference.hpp"
#include "mit/metrics.hpp"

namespace mit {

/// Registers every parameter of the model for `classes` classes.
ParameterStore init_parameters(const Config& cfg, std::size_t classes, std::uint64_t seed);

/// Prefixes of parameters used by the 2D branch and the decoder.
bool is_point_branch_parameter(const std::string& name);

/// Per-scene data that does not depend on the parameters.
struct PreparedScene {
  const Scene* scene = nullptr;
  SupervoxelPartition partition;
  /// Per view, empty unless the pose extension is on.
  std::vector<CoordinateMap> coordinate_maps;
};

PreparedScene prepare_scene(const Scene& scene, const Config& cfg);

struct ForwardPass {
  EncoderTrace points;
  ClassAwareCam points_cam;
  std::optional<EncoderTrace> views;
  std::optional<ClassAwareCam> views_cam;
  std::optional<DecoderTrace> decoder;
};

/// Runs the encoders (and decoder unless 3D-only) on the given view indices.
ForwardPass forward(Bindings& b, const Config& cfg, std::size_t classes, const PreparedScene& ps,
                    std::span<const std::size_t> views);

struct LossBreakdown {
  Var total;
  double encoder = 0.0;
  double decoder = 0.0;
  double contrastive = 0.0;
};

LossBreakdown model_loss(const ForwardPass& fp, const Config& cfg, const SceneTags& y);

/// Views used at inference time: the first min(T, available).
std::vector<std::size_t> inference_views(const Config& cfg, const Scene& scene);

struct SceneInference {
  Tensor cam;             // S × C, refined and fused
  std::vector<double> scene_logits;
  PseudoLabels labels;
  std::optional<Tensor> view_scores;  // n_views × C
  std::vector<std::size_t> views;
};

SceneInference infer_scene(const ParameterStore& params, const Config& cfg, std::size_t classes,
                           const PreparedScene& ps);

struct EvaluationReport {
  MiouReport miou;
  std::optional<MapReport> map;
  ConfusionMatrix confusion;
  std::vector<std::pair<std::string, MiouReport>> per_scene;
};

/// Pseudo-label mIoU over the labeled scenes (global confusion matrix) and
/// per-view tag mAP when views are used.
EvaluationReport evaluate(const ParameterStore& params, const Config& cfg, const Dataset& data);

}  // namespace mit
