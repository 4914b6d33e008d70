#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mit/autograd.hpp"
#include "mit/scene.hpp"

namespace mit {

/// Surjective map from points to supervoxels; every supervoxel is non-empty.
struct SupervoxelPartition {
  std::vector<std::size_t> assignment;
  std::size_t count = 0;

  std::size_t points() const { return assignment.size(); }
  /// Member count of every supervoxel.
  std::vector<std::size_t> sizes() const;
};

/// Groups points by the grid cell floor(xyz / cell_size). Supervoxel indices
/// follow the order in which cells are first met while scanning the points.
SupervoxelPartition supervoxel_partition(const PointCloud& cloud, double cell_size);

/// Row s of the result is the mean of the rows assigned to supervoxel s.
Var supervoxel_average_pool(const Var& features, const SupervoxelPartition& partition);
Tensor supervoxel_average_pool(const Tensor& features, const SupervoxelPartition& partition);

/// Two per-row linear layers with a ReLU between them.
struct MlpParams {
  Var w1;  // in × hidden
  Var b1;  // 1 × hidden
  Var w2;  // hidden × out
  Var b2;  // 1 × out
};

Var coordinate_embedding(const Var& coords, const MlpParams& params);

/// Same value as pooling `coordinate_embedding(inputs)` by `group_of_row`,
/// computed by pooling the hidden layer first: the second layer is affine, so
/// it commutes with the mean. An empty group pools to a zero hidden state.
Var embed_and_pool(const Var& inputs, const MlpParams& params, std::span<const std::size_t> group_of_row,
                   std::size_t groups);

/// Two strided valid convolutions with ReLU, then global average pooling.
struct ConvStackParams {
  Var w1;  // (k·k·3) × channels
  Var b1;  // 1 × channels
  Var w2;  // (k·k·channels) × D
  Var b2;  // 1 × D
  std::size_t kernel = 3;
  std::size_t stride = 2;
};

/// Smallest image side the conv stack accepts.
std::size_t conv_stack_receptive_field(std::size_t kernel, std::size_t stride);

/// One pooled feature row per selected view (all views when `views` is empty).
Var view_featurize(const ViewSet& set, std::span<const std::size_t> views, const ConvStackParams& params);

/// Per-pixel coordinates from a depth map: [x, 1]ᵀ = d(u,v) · k⁻¹ [u, v, 1]ᵀ in
/// the camera frame, composed with `pose` into the world frame when given.
/// Pixels with depth 0 are invalid and hold (0, 0, 0).
struct CoordinateMap {
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor xyz;  // (H·W) × 3, row v·W + u
  std::vector<bool> valid;
};

CoordinateMap backproject_coordinate_map(const Tensor& depth, const Eigen::Matrix3d& intrinsics,
                                         const std::optional<Pose>& pose = std::nullopt);

/// Pose-extension positional tokens: f_emb applied to every valid pixel of a
/// view's coordinate map and averaged, one row per map.
Var pooled_coordinate_embedding(std::span<const CoordinateMap> maps, const MlpParams& params);

}  // namespace mit
