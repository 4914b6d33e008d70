#include "mit/geometry.hpp"

#include <Eigen/LU>
#include <array>
#include <cmath>
#include <map>

#include "mit/errors.hpp"

namespace mit {

std::vector<std::size_t> SupervoxelPartition::sizes() const {
  std::vector<std::size_t> out(count, 0);
  for (std::size_t s : assignment) ++out[s];
  return out;
}

SupervoxelPartition supervoxel_partition(const PointCloud& cloud, double cell_size) {
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) throw InputError("supervoxel_partition: cell size must be positive");
  SupervoxelPartition part;
  part.assignment.resize(cloud.size());
  std::map<std::array<long long, 3>, std::size_t> cells;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto r = cloud.points.row(i);
    std::array<long long, 3> key{};
    for (std::size_t a = 0; a < 3; ++a) {
      if (!std::isfinite(r[a])) throw InputError("supervoxel_partition: non-finite coordinate at point " + std::to_string(i));
      key[a] = static_cast<long long>(std::floor(r[a] / cell_size));
    }
    auto [it, inserted] = cells.emplace(key, cells.size());
    part.assignment[i] = it->second;
  }
  part.count = cells.size();
  return part;
}

Var supervoxel_average_pool(const Var& features, const SupervoxelPartition& partition) {
  if (features.rows() != partition.points()) {
    throw ShapeError("supervoxel_average_pool: " + std::to_string(features.rows()) + " feature rows for " +
                     std::to_string(partition.points()) + " points");
  }
  return segment_mean(features, partition.assignment, partition.count);
}

Tensor supervoxel_average_pool(const Tensor& features, const SupervoxelPartition& partition) {
  return supervoxel_average_pool(Var::constant(features), partition).value();
}

Var coordinate_embedding(const Var& coords, const MlpParams& p) {
  const Var hidden = relu(add_row(matmul(coords, p.w1), p.b1));
  return add_row(matmul(hidden, p.w2), p.b2);
}

Var embed_and_pool(const Var& inputs, const MlpParams& p, std::span<const std::size_t> group_of_row,
                   std::size_t groups) {
  const Var hidden = relu(add_row(matmul(inputs, p.w1), p.b1));
  return add_row(matmul(segment_mean(hidden, group_of_row, groups), p.w2), p.b2);
}

std::size_t conv_stack_receptive_field(std::size_t kernel, std::size_t stride) {
  return kernel + (kernel - 1) * stride;
}

Var view_featurize(const ViewSet& set, std::span<const std::size_t> views, const ConvStackParams& p) {
  std::vector<std::size_t> picked(views.begin(), views.end());
  if (picked.empty())
    for (std::size_t t = 0; t < set.size(); ++t) picked.push_back(t);
  const std::size_t h = set.height, w = set.width;
  const std::size_t field = conv_stack_receptive_field(p.kernel, p.stride);
  if (h < field || w < field) {
    throw InputError("view_featurize: " + std::to_string(h) + "x" + std::to_string(w) +
                     " images are smaller than the " + std::to_string(field) + "-pixel receptive field");
  }
  const std::size_t n = picked.size();
  std::vector<double> pixels;
  pixels.reserve(n * h * w * 3);
  for (std::size_t t : picked) {
    if (t >= set.size()) throw ShapeError("view_featurize: view index out of range");
    const auto& img = set.images[t].values();
    pixels.insert(pixels.end(), img.begin(), img.end());
  }
  const Var x = Var::constant(Tensor({n * h * w, 3}, std::move(pixels)));
  const Var c1 = relu(add_row(matmul(im2col(x, n, h, w, p.kernel, p.stride), p.w1), p.b1));
  const std::size_t h1 = conv_out_extent(h, p.kernel, p.stride), w1 = conv_out_extent(w, p.kernel, p.stride);
  const Var c2 = relu(add_row(matmul(im2col(c1, n, h1, w1, p.kernel, p.stride), p.w2), p.b2));
  const std::size_t per_view = conv_out_extent(h1, p.kernel, p.stride) * conv_out_extent(w1, p.kernel, p.stride);
  std::vector<std::size_t> view_of_row(n * per_view);
  for (std::size_t i = 0; i < view_of_row.size(); ++i) view_of_row[i] = i / per_view;
  return segment_mean(c2, view_of_row, n);
}

CoordinateMap backproject_coordinate_map(const Tensor& depth, const Eigen::Matrix3d& intrinsics,
                                         const std::optional<Pose>& pose) {
  if (std::abs(intrinsics.determinant()) < 1e-12) throw CameraError("backproject: intrinsics matrix is singular");
  const Eigen::Matrix3d kinv = intrinsics.inverse();
  CoordinateMap map;
  map.height = depth.rows();
  map.width = depth.cols();
  map.xyz = Tensor::matrix(map.height * map.width, 3);
  map.valid.assign(map.height * map.width, false);
  for (std::size_t v = 0; v < map.height; ++v)
    for (std::size_t u = 0; u < map.width; ++u) {
      const double d = depth.at(v, u);
      if (!(d >= 0.0) || !std::isfinite(d)) throw InputError("backproject: depth must be finite and nonnegative");
      if (d == 0.0) continue;
      Eigen::Vector3d x = d * (kinv * Eigen::Vector3d(static_cast<double>(u), static_cast<double>(v), 1.0));
      if (pose) x = pose->rotation * x + pose->translation;
      const std::size_t idx = v * map.width + u;
      for (int a = 0; a < 3; ++a) map.xyz.at(idx, static_cast<std::size_t>(a)) = x[a];
      map.valid[idx] = true;
    }
  return map;
}

Var pooled_coordinate_embedding(std::span<const CoordinateMap> maps, const MlpParams& params) {
  std::vector<double> coords;
  std::vector<std::size_t> group;
  for (std::size_t t = 0; t < maps.size(); ++t) {
    const auto& m = maps[t];
    for (std::size_t i = 0; i < m.valid.size(); ++i) {
      if (!m.valid[i]) continue;
      const auto r = m.xyz.row(i);
      coords.insert(coords.end(), r.begin(), r.end());
      group.push_back(t);
    }
  }
  const std::size_t n = group.size();
  return embed_and_pool(Var::constant(Tensor({n, 3}, std::move(coords))), params, group, maps.size());
}

}  // namespace mit
