#include "mit/model.hpp"

#include <algorithm>

#include "mit/errors.hpp"
#include "mit/parallel.hpp"
#include "mit/synth.hpp"

namespace mit {

namespace {

constexpr std::size_t kPointChannels = 6;
constexpr std::size_t kKernel = 3;
constexpr std::size_t kStride = 2;
constexpr std::size_t kViewTagSplat = 1;

std::string layer_name(const char* prefix, std::size_t i) { return std::string(prefix) + std::to_string(i); }

std::vector<EncoderLayerParams> bind_encoder(Bindings& b, const std::string& prefix, std::size_t layers) {
  std::vector<EncoderLayerParams> out;
  for (std::size_t i = 0; i < layers; ++i) out.push_back(bind_encoder_layer(b, prefix + layer_name(".layer", i)));
  return out;
}

}  // namespace

ParameterStore init_parameters(const Config& cfg, std::size_t classes, std::uint64_t seed) {
  validate(cfg);
  if (classes < 1) throw ConfigError("init_parameters: need at least one class");
  const std::size_t d = cfg.dim, w = cfg.mlp_width, ch = cfg.conv_channels;
  Rng rng(seed);
  ParameterStore s;
  register_mlp(s, "point_mlp", kPointChannels, d, d, rng);
  register_mlp(s, "coord_emb", 3, d, d, rng);
  s.add("enc3d.cls", init_uniform({classes, d}, d, rng));
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) register_encoder_layer(s, "enc3d" + layer_name(".layer", i), d, w, rng);
  register_linear(s, "cam3d", d, classes, rng);

  s.add("conv.w1", init_uniform({kKernel * kKernel * 3, ch}, kKernel * kKernel * 3, rng));
  s.add("conv.b1", init_uniform({1, ch}, kKernel * kKernel * 3, rng));
  s.add("conv.w2", init_uniform({kKernel * kKernel * ch, d}, kKernel * kKernel * ch, rng));
  s.add("conv.b2", init_uniform({1, d}, kKernel * kKernel * ch, rng));
  s.add("view_pos", init_uniform({cfg.views, d}, d, rng));
  s.add("enc2d.cls", init_uniform({classes, d}, d, rng));
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) register_encoder_layer(s, "enc2d" + layer_name(".layer", i), d, w, rng);
  register_linear(s, "cam2d", d, classes, rng);

  for (std::size_t r = 0; r < cfg.blocks; ++r) register_interlaced_block(s, layer_name("dec.block", r), d, w, rng);
  return s;
}

bool is_point_branch_parameter(const std::string& name) {
  for (const char* p : {"point_mlp.", "coord_emb.", "enc3d.", "cam3d."})
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

PreparedScene prepare_scene(const Scene& scene, const Config& cfg) {
  PreparedScene ps;
  ps.scene = &scene;
  ps.partition = supervoxel_partition(scene.cloud, cfg.cell_size);
  if (cfg.pose_extension && !cfg.three_d_only) {
    if (!scene.views.has_geometry()) {
      throw InputError("scene " + scene.id + ": the pose extension needs depth maps and cameras");
    }
    for (std::size_t t = 0; t < scene.views.size(); ++t) {
      const Camera& cam = scene.views.cameras[t];
      ps.coordinate_maps.push_back(backproject_coordinate_map(scene.views.depths[t], cam.intrinsics, cam.pose));
    }
  }
  return ps;
}

ForwardPass forward(Bindings& b, const Config& cfg, std::size_t classes, const PreparedScene& ps,
                    std::span<const std::size_t> views) {
  const Scene& scene = *ps.scene;
  const SupervoxelPartition& part = ps.partition;
  const MlpParams coord = bind_mlp(b, "coord_emb");

  const Var points = Var::constant(scene.cloud.points);
  std::vector<double> xyz_values;
  xyz_values.reserve(scene.cloud.size() * 3);
  for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
    const auto r = scene.cloud.points.row(i);
    xyz_values.insert(xyz_values.end(), r.begin(), r.begin() + 3);
  }
  const Var xyz = Var::constant(Tensor({scene.cloud.size(), 3}, std::move(xyz_values)));

  const Var s3d = embed_and_pool(points, bind_mlp(b, "point_mlp"), part.assignment, part.count);
  const Var z3d = embed_and_pool(xyz, coord, part.assignment, part.count);
  const Var cls3d = b("enc3d.cls");
  if (cls3d.rows() != classes) throw ShapeError("forward: parameters were built for a different class count");
  const auto enc3d = bind_encoder(b, "enc3d", cfg.encoder_layers);

  ForwardPass fp;
  fp.points = encode(s3d, z3d, cls3d, Modality::points, enc3d, cfg.heads);
  fp.points_cam = class_aware_cam(fp.points.final.data_tokens(), b("cam3d.w"), b("cam3d.b"));
  if (cfg.three_d_only) return fp;

  if (views.empty()) throw InputError("forward: no views selected for scene " + scene.id);
  if (views.size() > cfg.views) {
    throw ConfigError("forward: " + std::to_string(views.size()) + " views exceed the configured " +
                      std::to_string(cfg.views));
  }
  const ConvStackParams conv{b("conv.w1"), b("conv.b1"), b("conv.w2"), b("conv.b2"), kKernel, kStride};
  const Var s2d = view_featurize(scene.views, views, conv);
  Var z2d = slice_rows(b("view_pos"), 0, views.size());
  if (cfg.pose_extension) {
    std::vector<CoordinateMap> maps;
    for (std::size_t t : views) maps.push_back(ps.coordinate_maps.at(t));
    z2d = add(z2d, pooled_coordinate_embedding(maps, coord));
  }
  const auto enc2d = bind_encoder(b, "enc2d", cfg.encoder_layers);
  fp.views = encode(s2d, z2d, b("enc2d.cls"), Modality::views, enc2d, cfg.heads);
  fp.views_cam = class_aware_cam(fp.views->final.data_tokens(), b("cam2d.w"), b("cam2d.b"));

  std::vector<InterlacedBlock> blocks;
  for (std::size_t r = 0; r < cfg.blocks; ++r) blocks.push_back(bind_interlaced_block(b, layer_name("dec.block", r)));
  fp.decoder = decode(fp.points.final, fp.views->final, blocks, cfg.heads, cfg.query_order);
  return fp;
}

LossBreakdown model_loss(const ForwardPass& fp, const Config& cfg, const SceneTags& y) {
  LossBreakdown out;
  if (cfg.three_d_only) {
    const Var l3d = modality_loss(fp.points, fp.points_cam, y);
    out.encoder = l3d.item();
    out.total = scale(l3d, cfg.encoder_weight);
    return out;
  }
  const EncoderLoss enc = encoder_loss(fp.points, *fp.views, fp.points_cam, *fp.views_cam, y);
  const DecoderLoss dec = decoder_loss(*fp.decoder, y, cfg.alpha);
  out.encoder = enc.total.item();
  out.decoder = dec.total.item();
  out.contrastive = dec.contrastive.item();
  const Var terms[] = {scale(enc.total, cfg.encoder_weight), scale(dec.total, cfg.decoder_weight)};
  out.total = sum_scalars(terms);
  return out;
}

std::vector<std::size_t> inference_views(const Config& cfg, const Scene& scene) {
  std::vector<std::size_t> v;
  if (cfg.three_d_only) return v;
  for (std::size_t t = 0; t < std::min(cfg.views, scene.views.size()); ++t) v.push_back(t);
  return v;
}

SceneInference infer_scene(const ParameterStore& params, const Config& cfg, std::size_t classes,
                           const PreparedScene& ps) {
  Bindings b(params, false);
  SceneInference out;
  out.views = inference_views(cfg, *ps.scene);
  const ForwardPass fp = forward(b, cfg, classes, ps, out.views);

  const Tensor& cam = fp.points_cam.cam.value();
  const Tensor refined = refine_cam(cam, rescale_rows_to_unit_mean(encoder_class_to_voxel(fp.points, cfg.refine_layers)));
  Var scene_scores;
  if (fp.decoder) {
    const Tensor refined_dec = refine_cam(cam, rescale_rows_to_unit_mean(decoder_class_to_voxel(*fp.decoder)));
    out.cam = fuse_cams(refined, refined_dec);
    scene_scores = class_token_scores(fp.decoder->points.class_tokens());
    out.view_scores = fp.views_cam->cam.value();
  } else {
    out.cam = refined;
    scene_scores = class_token_scores(fp.points.final.class_tokens());
  }
  out.scene_logits = scene_scores.value().values();
  out.labels = pseudo_labels(out.cam, out.scene_logits, ps.partition, cfg.threshold);
  return out;
}

EvaluationReport evaluate(const ParameterStore& params, const Config& cfg, const Dataset& data) {
  const std::size_t c = data.num_classes();
  std::vector<const Scene*> scenes;
  for (const auto& s : data.scenes)
    if (s.cloud.labeled()) scenes.push_back(&s);
  if (scenes.empty()) throw EvaluationError("evaluate: no scene carries point labels");

  struct Result {
    ConfusionMatrix cm{0};
    std::optional<Tensor> scores;
    std::vector<std::vector<double>> truth;
  };
  std::vector<Result> results(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) {
    const Scene& scene = *scenes[i];
    const PreparedScene ps = prepare_scene(scene, cfg);
    const SceneInference inf = infer_scene(params, cfg, c, ps);
    Result r{ConfusionMatrix(c), std::nullopt, {}};
    r.cm.add(inf.labels.labels, scene.cloud.labels);
    if (inf.view_scores && scene.views.has_geometry()) {
      const auto tags = visible_view_tags(scene, c, kViewTagSplat);
      for (std::size_t t : inf.views) r.truth.emplace_back(tags[t].y.begin(), tags[t].y.end());
      r.scores = inf.view_scores;
    }
    results[i] = std::move(r);
  });

  EvaluationReport rep{{}, std::nullopt, ConfusionMatrix(c), {}};
  std::vector<double> score_rows, truth_rows;
  std::size_t view_rows = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    rep.confusion.merge(results[i].cm);
    rep.per_scene.emplace_back(scenes[i]->id, miou_from_confusion(results[i].cm));
    if (results[i].scores) {
      const auto& v = results[i].scores->values();
      score_rows.insert(score_rows.end(), v.begin(), v.end());
      for (const auto& row : results[i].truth) truth_rows.insert(truth_rows.end(), row.begin(), row.end());
      view_rows += results[i].truth.size();
    }
  }
  rep.miou = miou_from_confusion(rep.confusion);
  if (view_rows > 0) {
    rep.map = compute_map(Tensor({view_rows, c}, std::move(score_rows)), Tensor({view_rows, c}, std::move(truth_rows)));
  }
  return rep;
}

}  // namespace mit
