#include "mit/inference.hpp"

#include <algorithm>
#include <cmath>

#include "mit/errors.hpp"

namespace mit {

namespace {

// Adds rows [0,c) × columns [c, c+s) of the head mean of `weights` into acc.
void accumulate_class_block(const Tensor& weights, std::size_t c, Tensor& acc) {
  const Tensor avg = weights.rank() == 3 ? mean_over_heads(weights) : weights;
  const std::size_t s = acc.cols();
  if (avg.rows() < c || avg.cols() != c + s) {
    throw ShapeError("class-to-voxel: attention " + shape_string(avg.shape()) + " does not hold a " +
                     std::to_string(c) + "x" + std::to_string(s) + " class block");
  }
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < s; ++j) acc.at(i, j) += avg.at(i, c + j);
}

Tensor scaled(Tensor t, double s) {
  for (double& v : t.values()) v *= s;
  return t;
}

}  // namespace

Tensor encoder_class_to_voxel(const EncoderTrace& trace, std::size_t k) {
  const std::size_t layers = trace.attention.size();
  if (k == 0 || k > layers) {
    throw ConfigError("refine_cam_encoder: K=" + std::to_string(k) + " but the encoder has " + std::to_string(layers) +
                      " layers");
  }
  const std::size_t c = trace.final.n_class;
  Tensor acc = Tensor::matrix(c, trace.final.n_data());
  for (std::size_t l = layers - k; l < layers; ++l) accumulate_class_block(trace.attention[l], c, acc);
  return scaled(std::move(acc), 1.0 / static_cast<double>(k));
}

Tensor decoder_class_to_voxel(const DecoderTrace& trace) {
  const std::size_t c = trace.points.n_class;
  Tensor acc = Tensor::matrix(c, trace.points.n_data());
  std::size_t used = 0;
  for (const auto& rec : trace.layers) {
    if (rec.query != Modality::views) continue;
    accumulate_class_block(rec.attention, c, acc);
    ++used;
  }
  if (used == 0) throw ConfigError("refine_cam_decoder: trace has no layer with view queries");
  return scaled(std::move(acc), 1.0 / static_cast<double>(used));
}

Tensor refine_cam(const Tensor& cam, const Tensor& class_to_voxel) {
  if (cam.rows() != class_to_voxel.cols() || cam.cols() != class_to_voxel.rows()) {
    throw ShapeError("refine_cam: cam " + shape_string(cam.shape()) + " vs class-to-voxel " +
                     shape_string(class_to_voxel.shape()));
  }
  Tensor out = cam;
  for (std::size_t s = 0; s < cam.rows(); ++s)
    for (std::size_t c = 0; c < cam.cols(); ++c) out.at(s, c) *= class_to_voxel.at(c, s);
  return out;
}

Tensor refine_cam_encoder(const Tensor& cam, const EncoderTrace& trace, std::size_t k) {
  return refine_cam(cam, encoder_class_to_voxel(trace, k));
}

Tensor refine_cam_decoder(const Tensor& cam, const DecoderTrace& trace) {
  return refine_cam(cam, decoder_class_to_voxel(trace));
}

Tensor rescale_rows_to_unit_mean(const Tensor& m) {
  Tensor out = m;
  const std::size_t n = m.cols();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += m.at(i, j);
    if (sum == 0.0) continue;
    const double f = static_cast<double>(n) / sum;
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) *= f;
  }
  return out;
}

Tensor fuse_cams(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("fuse_cams: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(a[i], b[i]);
  return out;
}

PseudoLabels pseudo_labels(const Tensor& cam, std::span<const double> scene_logits, const SupervoxelPartition& partition,
                           double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("pseudo_labels: threshold must lie in (0,1)");
  const std::size_t s = cam.rows(), c = cam.cols();
  if (s != partition.count) {
    throw ShapeError("pseudo_labels: cam has " + std::to_string(s) + " rows for " + std::to_string(partition.count) +
                     " supervoxels");
  }
  if (scene_logits.size() != c) throw ShapeError("pseudo_labels: scene score count does not match the cam");

  // sigmoid(x) > 0.5 exactly when x > 0
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < c; ++k)
    if (scene_logits[k] > 0.0) kept.push_back(k);

  PseudoLabels out;
  out.supervoxel_labels.assign(s, kIgnoreLabel);
  out.supervoxel_confidence.assign(s, 0.0);
  if (!kept.empty()) {
    for (std::size_t i = 0; i < s; ++i) {
      double mx = -INFINITY;
      std::size_t best = kept.front();
      for (std::size_t k : kept)
        if (cam.at(i, k) > mx) {
          mx = cam.at(i, k);
          best = k;
        }
      double z = 0.0;
      for (std::size_t k : kept) z += std::exp(cam.at(i, k) - mx);
      const double conf = 1.0 / z;
      out.supervoxel_confidence[i] = conf;
      if (conf > threshold) out.supervoxel_labels[i] = static_cast<int>(best);
    }
  }
  const std::size_t m = partition.points();
  out.labels.resize(m);
  out.confidence.resize(m);
  for (std::size_t p = 0; p < m; ++p) {
    out.labels[p] = out.supervoxel_labels[partition.assignment[p]];
    out.confidence[p] = out.supervoxel_confidence[partition.assignment[p]];
  }
  return out;
}

}  // namespace mit
