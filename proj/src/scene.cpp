#include "mit/scene.hpp"

#include <cmath>

#include "mit/errors.hpp"

namespace mit {

SceneTags tags_from_labels(const std::vector<int>& labels, std::size_t num_classes) {
  SceneTags tags{std::vector<int>(num_classes, 0)};
  for (int l : labels) {
    if (l == kIgnoreLabel) continue;
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw InputError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    tags.y[static_cast<std::size_t>(l)] = 1;
  }
  return tags;
}

void validate_scene(const Scene& scene, std::size_t num_classes) {
  const auto fail = [&](const std::string& what) { throw InputError("scene " + scene.id + ": " + what); };
  const PointCloud& cloud = scene.cloud;
  if (cloud.points.rank() != 2 || cloud.points.cols() != 6) fail("points must be an M x 6 matrix");
  if (cloud.size() == 0) fail("point cloud is empty");
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto r = cloud.points.row(i);
    for (std::size_t a = 0; a < 3; ++a)
      if (!std::isfinite(r[a])) fail("non-finite coordinate at point " + std::to_string(i));
    for (std::size_t a = 3; a < 6; ++a)
      if (!(r[a] >= 0.0 && r[a] <= 1.0)) fail("color outside [0,1] at point " + std::to_string(i));
  }
  if (cloud.labeled() && cloud.labels.size() != cloud.size()) fail("label count differs from point count");
  if (scene.tags.y.size() != num_classes) fail("tag vector length differs from class count");
  for (int v : scene.tags.y)
    if (v != 0 && v != 1) fail("tags must be binary");

  const ViewSet& views = scene.views;
  if (views.size() == 0) fail("no views");
  for (const auto& img : views.images)
    if (img.rank() != 2 || img.rows() != views.height * views.width || img.cols() != 3)
      fail("views do not share one resolution");
  if (!views.depths.empty() && views.depths.size() != views.size()) fail("depth count differs from view count");
  if (!views.cameras.empty() && views.cameras.size() != views.size()) fail("camera count differs from view count");
  for (const auto& d : views.depths) {
    if (d.rank() != 2 || d.rows() != views.height || d.cols() != views.width) fail("depth map has wrong extent");
    for (double v : d.values())
      if (!(v >= 0.0) || !std::isfinite(v)) fail("depth must be finite and nonnegative");
  }
}

}  // namespace mit
