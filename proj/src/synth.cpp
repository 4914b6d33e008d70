#include "mit/synth.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "mit/errors.hpp"

namespace mit {

namespace {

using Vec3 = Eigen::Vector3d;
using Rng = std::mt19937_64;

struct Primitive {
  PrimitiveKind kind;
  int label;
  Vec3 lo = Vec3::Zero();  // box/floor/wall bounds
  Vec3 hi = Vec3::Zero();
  Vec3 center = Vec3::Zero();  // sphere
  double radius = 0.0;
  double area = 0.0;
};

constexpr double kColorTable[8][3] = {
    {0.55, 0.40, 0.25}, {0.85, 0.85, 0.80}, {0.20, 0.35, 0.80}, {0.85, 0.20, 0.20},
    {0.20, 0.70, 0.30}, {0.90, 0.80, 0.20}, {0.60, 0.30, 0.70}, {0.20, 0.80, 0.80},
};

Vec3 class_color(std::size_t c, std::size_t num_classes) {
  if (c < 8) return {kColorTable[c][0], kColorTable[c][1], kColorTable[c][2]};
  // evenly spaced hues for large class counts
  const double h = 6.0 * static_cast<double>(c) / static_cast<double>(num_classes);
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  switch (static_cast<int>(h) % 6) {
    case 0: return {1.0, x, 0.0};
    case 1: return {x, 1.0, 0.0};
    case 2: return {0.0, 1.0, x};
    case 3: return {0.0, x, 1.0};
    case 4: return {x, 0.0, 1.0};
    default: return {1.0, 0.0, x};
  }
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double box_side_area(const Vec3& s) { return s.x() * s.y() + 2.0 * s.x() * s.z() + 2.0 * s.y() * s.z(); }

Vec3 sample_surface(const Primitive& p, Rng& rng) {
  switch (p.kind) {
    case PrimitiveKind::floor:
    case PrimitiveKind::wall:
      return {uniform(rng, p.lo.x(), p.hi.x()), uniform(rng, p.lo.y(), p.hi.y()), uniform(rng, p.lo.z(), p.hi.z())};
    case PrimitiveKind::box: {
      const Vec3 s = p.hi - p.lo;
      // top face, then the four sides; the bottom rests on the floor
      const double faces[5] = {s.x() * s.y(), s.x() * s.z(), s.x() * s.z(), s.y() * s.z(), s.y() * s.z()};
      double pick = uniform(rng, 0.0, box_side_area(s));
      int f = 0;
      while (f < 4 && pick > faces[f]) pick -= faces[f++];
      Vec3 q(uniform(rng, p.lo.x(), p.hi.x()), uniform(rng, p.lo.y(), p.hi.y()), uniform(rng, p.lo.z(), p.hi.z()));
      switch (f) {
        case 0: q.z() = p.hi.z(); break;
        case 1: q.y() = p.lo.y(); break;
        case 2: q.y() = p.hi.y(); break;
        case 3: q.x() = p.lo.x(); break;
        default: q.x() = p.hi.x(); break;
      }
      return q;
    }
    case PrimitiveKind::sphere: {
      std::normal_distribution<double> n(0.0, 1.0);
      Vec3 d(n(rng), n(rng), n(rng));
      while (d.norm() < 1e-9) d = Vec3(n(rng), n(rng), n(rng));
      return p.center + p.radius * d.normalized();
    }
  }
  return Vec3::Zero();
}

// Places the primitives of one class. `footprints` collects (center, radius)
// of objects standing on the floor so that boxes and spheres never overlap.
void place_class(int label, const SceneRecipe& r, Rng& rng, std::vector<Primitive>& out,
                 std::vector<std::pair<Eigen::Vector2d, double>>& footprints, bool& used_wall_x, bool& used_wall_y) {
  const double half = 0.5 * r.room_extent;
  const PrimitiveKind kind = primitive_kind(static_cast<std::size_t>(label));
  if (kind == PrimitiveKind::floor) {
    Primitive p{kind, label};
    p.lo = Vec3(-half, -half, 0.0);
    p.hi = Vec3(half, half, 0.0);
    p.area = r.room_extent * r.room_extent;
    out.push_back(p);
    return;
  }
  if (kind == PrimitiveKind::wall) {
    const int count = std::uniform_int_distribution<int>(1, 2)(rng);
    bool along_x = uniform(rng, 0.0, 1.0) < 0.5;
    for (int i = 0; i < count; ++i, along_x = !along_x) {
      if ((along_x && used_wall_x) || (!along_x && used_wall_y)) continue;
      Primitive p{kind, label};
      if (along_x) {
        p.lo = Vec3(-half, -half, 0.0);
        p.hi = Vec3(-half, half, r.wall_height);
        used_wall_x = true;
      } else {
        p.lo = Vec3(-half, -half, 0.0);
        p.hi = Vec3(half, -half, r.wall_height);
        used_wall_y = true;
      }
      p.area = r.room_extent * r.wall_height;
      out.push_back(p);
    }
    return;
  }
  const int count = std::uniform_int_distribution<int>(1, 2)(rng);
  for (int i = 0; i < count; ++i) {
    Primitive p{kind, label};
    Vec3 size = Vec3::Zero();
    double foot = 0.0;
    if (kind == PrimitiveKind::box) {
      size = Vec3(uniform(rng, 0.25, 0.5), uniform(rng, 0.25, 0.5), uniform(rng, 0.2, 0.6));
      foot = 0.5 * std::hypot(size.x(), size.y());
    } else {
      p.radius = uniform(rng, 0.15, 0.3);
      foot = p.radius;
    }
    const double span = half - foot - 0.05;
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed && span > 0.0; ++attempt) {
      const Eigen::Vector2d c(uniform(rng, -span, span), uniform(rng, -span, span));
      placed = std::none_of(footprints.begin(), footprints.end(),
                            [&](const auto& f) { return (f.first - c).norm() < f.second + foot + 0.05; });
      if (!placed) continue;
      footprints.emplace_back(c, foot);
      if (kind == PrimitiveKind::box) {
        p.lo = Vec3(c.x() - 0.5 * size.x(), c.y() - 0.5 * size.y(), 0.0);
        p.hi = Vec3(c.x() + 0.5 * size.x(), c.y() + 0.5 * size.y(), size.z());
        p.area = box_side_area(size);
      } else {
        p.center = Vec3(c.x(), c.y(), p.radius);
        p.area = 4.0 * std::numbers::pi * p.radius * p.radius;
      }
      out.push_back(p);
    }
    // A crowded floor may reject the second instance; the first always fits.
    if (!placed && i == 0) throw RecipeError("generate_scene: no room left to place class " + std::to_string(label));
  }
}

// Index of the winning point per pixel, or -1.
std::vector<long> splat(const PointCloud& cloud, const Camera& camera, std::size_t height, std::size_t width,
                        std::size_t radius, std::vector<double>& zbuf) {
  const Eigen::Matrix3d& k = camera.intrinsics;
  if (std::abs(k.determinant()) < 1e-12) throw CameraError("render_view: intrinsics matrix is singular");
  if (height < 8 || width < 8) throw InputError("render_view: resolution must be at least 8x8");
  const Eigen::Matrix3d rt = camera.pose.rotation.transpose();
  std::vector<long> owner(height * width, -1);
  zbuf.assign(height * width, std::numeric_limits<double>::infinity());
  const long r = static_cast<long>(radius);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto row = cloud.points.row(i);
    const Vec3 pc = rt * (Vec3(row[0], row[1], row[2]) - camera.pose.translation);
    if (pc.z() <= 1e-6) continue;
    const Vec3 h = k * pc;
    const double u = h.x() / h.z();
    const double v = h.y() / h.z();
    if (!std::isfinite(u) || !std::isfinite(v)) continue;
    const long pu = static_cast<long>(std::floor(u + 0.5));
    const long pv = static_cast<long>(std::floor(v + 0.5));
    for (long dy = -r; dy <= r; ++dy)
      for (long dx = -r; dx <= r; ++dx) {
        const long x = pu + dx, y = pv + dy;
        if (x < 0 || y < 0 || x >= static_cast<long>(width) || y >= static_cast<long>(height)) continue;
        const std::size_t idx = static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x);
        if (pc.z() < zbuf[idx]) {
          zbuf[idx] = pc.z();
          owner[idx] = static_cast<long>(i);
        }
      }
  }
  return owner;
}

double quantize8(double c) { return std::round(std::clamp(c, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

PrimitiveKind primitive_kind(std::size_t class_index) {
  switch (class_index) {
    case 0: return PrimitiveKind::floor;
    case 1: return PrimitiveKind::wall;
    case 2: return PrimitiveKind::box;
    case 3: return PrimitiveKind::sphere;
    default: return class_index % 2 == 0 ? PrimitiveKind::box : PrimitiveKind::sphere;
  }
}

std::vector<std::string> default_class_names(std::size_t num_classes) {
  static const char* base[] = {"floor", "wall", "box", "sphere"};
  std::vector<std::string> names;
  for (std::size_t c = 0; c < num_classes; ++c) names.push_back(c < 4 ? base[c] : "class" + std::to_string(c));
  return names;
}

Camera look_at_camera(const Eigen::Vector3d& position, const Eigen::Vector3d& target, double focal, double cx,
                      double cy) {
  const Vec3 forward = (target - position).normalized();
  Vec3 right = forward.cross(Vec3::UnitZ());
  if (right.norm() < 1e-9) right = forward.cross(Vec3::UnitY());
  right.normalize();
  const Vec3 down = forward.cross(right);
  Camera cam;
  cam.intrinsics << focal, 0.0, cx, 0.0, focal, cy, 0.0, 0.0, 1.0;
  cam.pose.rotation.col(0) = right;
  cam.pose.rotation.col(1) = down;
  cam.pose.rotation.col(2) = forward;
  cam.pose.translation = position;
  return cam;
}

Rendering render_view(const PointCloud& cloud, const Camera& camera, std::size_t height, std::size_t width,
                      std::size_t splat_radius, const std::vector<double>& background) {
  if (background.size() != 3) throw InputError("render_view: background must have 3 channels");
  std::vector<double> zbuf;
  const auto owner = splat(cloud, camera, height, width, splat_radius, zbuf);
  Rendering out{Tensor::matrix(height * width, 3), Tensor::matrix(height, width),
                std::vector<int>(height * width, kIgnoreLabel)};
  for (std::size_t p = 0; p < owner.size(); ++p) {
    if (owner[p] < 0) {
      for (std::size_t c = 0; c < 3; ++c) out.image.at(p, c) = quantize8(background[c]);
      continue;
    }
    const auto row = cloud.points.row(static_cast<std::size_t>(owner[p]));
    for (std::size_t c = 0; c < 3; ++c) out.image.at(p, c) = quantize8(row[3 + c]);
    out.depth[p] = static_cast<double>(static_cast<float>(zbuf[p]));
    if (cloud.labeled()) out.labels[p] = cloud.labels[static_cast<std::size_t>(owner[p])];
  }
  return out;
}

Scene generate_scene(std::uint64_t seed, const SceneRecipe& recipe) {
  const std::size_t num_classes = recipe.num_classes;
  if (num_classes < 2) throw RecipeError("generate_scene: need at least 2 classes");
  if (recipe.points < num_classes) throw RecipeError("generate_scene: point budget smaller than class count");
  if (recipe.views < 1) throw RecipeError("generate_scene: need at least one view");
  if (recipe.palette_purity < 0.0 || recipe.palette_purity > 1.0) {
    throw RecipeError("generate_scene: palette purity must lie in [0, 1]");
  }
  Rng rng(seed);

  std::vector<int> present;
  if (recipe.classes) {
    present = *recipe.classes;
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());
    if (present.empty()) throw RecipeError("generate_scene: explicit class list is empty");
    for (int c : present)
      if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
        throw RecipeError("generate_scene: class " + std::to_string(c) + " outside [0, C)");
  } else {
    while (present.empty()) {
      for (std::size_t c = 0; c < num_classes; ++c)
        if (uniform(rng, 0.0, 1.0) < recipe.class_presence) present.push_back(static_cast<int>(c));
    }
  }

  std::vector<Primitive> prims;
  std::vector<std::pair<Eigen::Vector2d, double>> footprints;
  bool wall_x = false, wall_y = false;
  for (int c : present) place_class(c, recipe, rng, prims, footprints, wall_x, wall_y);

  const std::size_t m = recipe.points;
  if (m < prims.size()) {
    throw RecipeError("generate_scene: " + std::to_string(m) + " points cannot cover " +
                      std::to_string(prims.size()) + " objects");
  }
  // one point per object, the rest by area with largest-remainder rounding
  double total_area = 0.0;
  for (const auto& p : prims) total_area += p.area;
  const std::size_t spare = m - prims.size();
  std::vector<std::size_t> quota(prims.size(), 1);
  std::vector<std::pair<double, std::size_t>> remainder;
  std::size_t assigned = prims.size();
  for (std::size_t i = 0; i < prims.size(); ++i) {
    const double share = static_cast<double>(spare) * prims[i].area / total_area;
    const auto whole = static_cast<std::size_t>(std::floor(share));
    quota[i] += whole;
    assigned += whole;
    remainder.emplace_back(share - static_cast<double>(whole), i);
  }
  std::stable_sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < m; ++i, ++assigned) ++quota[remainder[i % remainder.size()].second];

  Scene scene;
  scene.id = "scene_" + std::to_string(seed);
  scene.cloud.points = Tensor::matrix(m, 6);
  scene.cloud.labels.reserve(m);
  std::normal_distribution<double> jitter(0.0, 0.005);
  std::normal_distribution<double> tint(0.0, recipe.color_noise);
  std::size_t row = 0;
  for (std::size_t i = 0; i < prims.size(); ++i) {
    const Vec3 base = class_color(static_cast<std::size_t>(prims[i].label), num_classes);
    for (std::size_t n = 0; n < quota[i]; ++n, ++row) {
      const Vec3 q = sample_surface(prims[i], rng);
      Vec3 color;
      if (uniform(rng, 0.0, 1.0) < recipe.palette_purity) {
        color = base + Vec3(tint(rng), tint(rng), tint(rng));
      } else {
        color = Vec3(uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0));
      }
      auto out = scene.cloud.points.row(row);
      for (int a = 0; a < 3; ++a) out[static_cast<std::size_t>(a)] = q[a] + jitter(rng);
      for (int a = 0; a < 3; ++a) out[3 + static_cast<std::size_t>(a)] = std::clamp(color[a], 0.0, 1.0);
      scene.cloud.labels.push_back(prims[i].label);
    }
  }
  scene.tags = tags_from_labels(scene.cloud.labels, num_classes);

  // ring of cameras around the room, looking at its center
  const double h = static_cast<double>(recipe.height), w = static_cast<double>(recipe.width);
  const double focal = 0.5 * std::min(h, w) / std::tan(32.0 * std::numbers::pi / 180.0);
  const double cx = 0.5 * w, cy = 0.5 * h;
  scene.views.height = recipe.height;
  scene.views.width = recipe.width;
  const double step = 2.0 * std::numbers::pi / static_cast<double>(recipe.views);
  for (std::size_t t = 0; t < recipe.views; ++t) {
    const double theta = step * static_cast<double>(t) + uniform(rng, -0.25, 0.25) * step;
    const double dist = 1.6 * recipe.room_extent + uniform(rng, 0.0, 0.3);
    const Vec3 pos(dist * std::cos(theta), dist * std::sin(theta), 1.1 + uniform(rng, -0.2, 0.2));
    const Vec3 target(uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1), 0.3);
    scene.views.cameras.push_back(look_at_camera(pos, target, focal, cx, cy));
  }

  // Every object must be seen at least once; an unseen one gets a view from above.
  std::vector<std::size_t> first_point(prims.size());
  for (std::size_t i = 0, acc = 0; i < prims.size(); acc += quota[i], ++i) first_point[i] = acc;
  auto object_of = [&](long point) {
    const auto it = std::upper_bound(first_point.begin(), first_point.end(), static_cast<std::size_t>(point));
    return static_cast<std::size_t>(std::distance(first_point.begin(), it)) - 1;
  };
  std::vector<bool> seen(prims.size(), false);
  std::vector<double> zbuf;
  for (const auto& cam : scene.views.cameras)
    for (long p : splat(scene.cloud, cam, recipe.height, recipe.width, recipe.splat_radius, zbuf))
      if (p >= 0) seen[object_of(p)] = true;
  std::size_t retarget = 0;
  for (std::size_t i = 0; i < prims.size(); ++i) {
    if (seen[i]) continue;
    Vec3 center = 0.5 * (prims[i].lo + prims[i].hi);
    if (prims[i].kind == PrimitiveKind::sphere) center = prims[i].center;
    const std::size_t t = (retarget++ * 2 + 1) % recipe.views;
    scene.views.cameras[t] = look_at_camera(center + Vec3(0.0, -0.6, 2.4), center, focal, cx, cy);
    for (long p : splat(scene.cloud, scene.views.cameras[t], recipe.height, recipe.width, recipe.splat_radius, zbuf))
      if (p >= 0) seen[object_of(p)] = true;
  }

  for (const auto& cam : scene.views.cameras) {
    Rendering r = render_view(scene.cloud, cam, recipe.height, recipe.width, recipe.splat_radius);
    scene.views.images.push_back(std::move(r.image));
    scene.views.depths.push_back(std::move(r.depth));
  }
  return scene;
}

Dataset generate_dataset(std::uint64_t first_seed, std::size_t count, const SceneRecipe& recipe) {
  Dataset ds;
  ds.class_names = default_class_names(recipe.num_classes);
  ds.scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) ds.scenes.push_back(generate_scene(first_seed + i, recipe));
  return ds;
}

std::vector<SceneTags> visible_view_tags(const Scene& scene, std::size_t num_classes, std::size_t splat_radius) {
  if (!scene.cloud.labeled()) throw InputError("visible_view_tags: scene " + scene.id + " has no point labels");
  std::vector<SceneTags> out;
  for (const auto& cam : scene.views.cameras) {
    const Rendering r = render_view(scene.cloud, cam, scene.views.height, scene.views.width, splat_radius);
    SceneTags tags{std::vector<int>(num_classes, 0)};
    for (int l : r.labels)
      if (l >= 0 && static_cast<std::size_t>(l) < num_classes) tags.y[static_cast<std::size_t>(l)] = 1;
    out.push_back(std::move(tags));
  }
  return out;
}

}  // namespace mit
