#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <string>
#include <vector>

#include "mit/tensor.hpp"

namespace mit {

inline constexpr int kIgnoreLabel = -1;

/// M points as rows (x, y, z, r, g, b); coordinates in meters, colors in [0, 1].
/// `labels` is either empty (unlabeled) or holds one class index per point.
struct PointCloud {
  Tensor points;
  std::vector<int> labels;

  std::size_t size() const { return points.numel() == 0 ? 0 : points.rows(); }
  bool labeled() const { return !labels.empty(); }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

/// Rigid camera-to-world transform: x_world = rotation · x_cam + translation.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  friend bool operator==(const Pose& a, const Pose& b) {
    return a.rotation == b.rotation && a.translation == b.translation;
  }
};

struct Camera {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Pose pose;

  friend bool operator==(const Camera& a, const Camera& b) {
    return a.intrinsics == b.intrinsics && a.pose == b.pose;
  }
};

/// T RGB views sharing one resolution. Images are stored as (H·W) × 3 pixel
/// rows in scanline order; depths as H × W (0 marks a pixel with no geometry).
/// `depths` and `cameras` are either empty or hold one entry per view.
struct ViewSet {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Tensor> images;
  std::vector<Tensor> depths;
  std::vector<Camera> cameras;

  std::size_t size() const { return images.size(); }
  bool has_geometry() const { return !depths.empty() && !cameras.empty(); }

  friend bool operator==(const ViewSet&, const ViewSet&) = default;
};

/// Scene-level class tags: y[c] = 1 iff class c occurs in the scene.
struct SceneTags {
  std::vector<int> y;

  std::size_t num_classes() const { return y.size(); }
  friend bool operator==(const SceneTags&, const SceneTags&) = default;
};

SceneTags tags_from_labels(const std::vector<int>& labels, std::size_t num_classes);

struct Scene {
  std::string id;
  PointCloud cloud;
  ViewSet views;
  SceneTags tags;

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Scene> scenes;

  std::size_t num_classes() const { return class_names.size(); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Checks the PointCloud/ViewSet/SceneTags invariants, throwing InputError.
void validate_scene(const Scene& scene, std::size_t num_classes);

}  // namespace mit
