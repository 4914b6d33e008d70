#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mit/scene.hpp"

namespace mit {

/// Knobs of the procedural scene generator.
struct SceneRecipe {
  std::size_t num_classes = 4;
  std::size_t points = 2048;
  std::size_t views = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  /// Probability that a point takes its class palette color (otherwise a random color).
  double palette_purity = 0.8;
  double color_noise = 0.04;
  /// Per-class probability of appearing in a scene (at least one class always appears).
  double class_presence = 0.6;
  /// Side of the square floor area, meters.
  double room_extent = 2.0;
  double wall_height = 1.0;
  /// Pixels on each side of a splatted point.
  std::size_t splat_radius = 1;
  /// When set, exactly these classes are placed.
  std::optional<std::vector<int>> classes;
};

/// Primitive kind a class is drawn as: floor slab, wall plane, box or sphere.
enum class PrimitiveKind { floor, wall, box, sphere };
PrimitiveKind primitive_kind(std::size_t class_index);

std::vector<std::string> default_class_names(std::size_t num_classes);

/// Deterministic in (seed, recipe). Throws RecipeError for unsatisfiable recipes.
Scene generate_scene(std::uint64_t seed, const SceneRecipe& recipe);

/// Scenes seeded first_seed, first_seed + 1, ...
Dataset generate_dataset(std::uint64_t first_seed, std::size_t count, const SceneRecipe& recipe);

struct Rendering {
  Tensor image;             // (H·W) × 3
  Tensor depth;             // H × W
  std::vector<int> labels;  // H·W, kIgnoreLabel where empty
};

/// Pinhole point-splat rendering with a z-buffer. Each point covers a square
/// of (2·splat_radius + 1)² pixels around its projection. Depth is the
/// camera-frame z of the winning point, stored at float precision; colors are
/// quantized to 8 bits.
Rendering render_view(const PointCloud& cloud, const Camera& camera, std::size_t height, std::size_t width,
                      std::size_t splat_radius = 0, const std::vector<double>& background = {0.0, 0.0, 0.0});

/// Per-view ground-truth tags: classes with at least one visible pixel.
std::vector<SceneTags> visible_view_tags(const Scene& scene, std::size_t num_classes, std::size_t splat_radius);

/// Camera at `position` looking at `target` (x right, y down, z forward).
Camera look_at_camera(const Eigen::Vector3d& position, const Eigen::Vector3d& target, double focal, double cx,
                      double cy);

}  // namespace mit
