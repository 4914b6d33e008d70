#pragma once

#include <span>
#include <vector>

#include "mit/decoder.hpp"
#include "mit/geometry.hpp"

namespace mit {

/// Class-to-supervoxel attention, C × S: rows [0,C), columns [C,C+S) of the
/// head-averaged weights, averaged over the last `k` encoder layers.
Tensor encoder_class_to_voxel(const EncoderTrace& trace, std::size_t k);

/// Same block from every decoder layer whose queries are view tokens (the
/// even layers in the default order), averaged.
Tensor decoder_class_to_voxel(const DecoderTrace& trace);

/// F[s,c] = cam[s,c] · a[c,s].
Tensor refine_cam(const Tensor& cam, const Tensor& class_to_voxel);

Tensor refine_cam_encoder(const Tensor& cam, const EncoderTrace& trace, std::size_t k);
Tensor refine_cam_decoder(const Tensor& cam, const DecoderTrace& trace);

/// Scales each row to mean 1; all-zero rows stay zero.
Tensor rescale_rows_to_unit_mean(const Tensor& m);

Tensor fuse_cams(const Tensor& a, const Tensor& b);

struct PseudoLabels {
  std::vector<int> labels;  // per point, kIgnoreLabel below threshold
  std::vector<double> confidence;
  std::vector<int> supervoxel_labels;
  std::vector<double> supervoxel_confidence;
};

inline constexpr double kDefaultConfidenceThreshold = 0.5;

/// Softmax over the classes whose scene score passes sigmoid > 0.5, argmax
/// per supervoxel (lowest index on ties), broadcast to member points.
PseudoLabels pseudo_labels(const Tensor& cam, std::span<const double> scene_logits, const SupervoxelPartition& partition,
                           double threshold = kDefaultConfidenceThreshold);

}  // namespace mit
