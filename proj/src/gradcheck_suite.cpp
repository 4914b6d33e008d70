#include "mit/gradcheck_suite.hpp"

#include <cmath>

#include "mit/errors.hpp"

namespace mit {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.values()) v = d(rng);
  return t;
}

// Scalar probe: mean of the elementwise product with fixed random weights.
Var probe(const Var& x, Rng& rng) { return mean_all(hadamard(x, Var::constant(random_tensor(x.shape(), rng)))); }

SceneTags alternating_tags(std::size_t classes) {
  SceneTags y;
  for (std::size_t c = 0; c < classes; ++c) y.y.push_back(c % 2 == 0 ? 1 : 0);
  return y;
}

MlpParams mlp_of(const std::vector<Var>& v, std::size_t first) { return {v[first], v[first + 1], v[first + 2], v[first + 3]}; }

std::vector<Tensor> random_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  return {random_tensor({in, hidden}, rng), random_tensor({1, hidden}, rng), random_tensor({hidden, out}, rng),
          random_tensor({1, out}, rng)};
}

TokenSet random_tokens(std::size_t classes, std::size_t data, std::size_t dim, Modality m, Rng& rng) {
  return {Var::constant(random_tensor({classes + data, dim}, rng)), classes, m};
}

std::vector<GradcheckCase> build_cases() {
  using Inputs = std::vector<Var>;
  std::vector<GradcheckCase> cases;
  auto reg = [&cases](std::string name, std::function<GradcheckReport(std::uint64_t, double, double)> run) {
    cases.push_back({std::move(name), std::move(run)});
  };

  reg("matmul", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    return gradcheck([](const Inputs& v) { Rng r(1); return probe(matmul(v[0], v[1]), r); },
                     {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}, eps, tol);
  });
  reg("matmul_nt", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    return gradcheck([](const Inputs& v) { Rng r(2); return probe(matmul_nt(v[0], v[1]), r); },
                     {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)}, eps, tol);
  });
  reg("add_scale_hadamard", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    return gradcheck(
        [](const Inputs& v) {
          Rng r(3);
          return probe(hadamard(add(v[0], scale(v[1], -1.7)), add_row(v[0], v[2])), r);
        },
        {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({1, 4}, rng)}, eps, tol);
  });
  reg("relu", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    Tensor x = random_tensor({4, 5}, rng);
    // keep every entry clear of the kink
    for (double& v : x.values()) v = v < 0 ? v - 0.1 : v + 0.1;
    return gradcheck([](const Inputs& v) { Rng r(4); return probe(relu(v[0]), r); }, {x}, eps, tol);
  });
  reg("layer_norm", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    return gradcheck([](const Inputs& v) { Rng r(5); return probe(layer_norm(v[0], v[1], v[2]), r); },
                     {random_tensor({3, 6}, rng), random_tensor({1, 6}, rng), random_tensor({1, 6}, rng)}, eps, tol);
  });
  reg("means_slices", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    return gradcheck(
        [](const Inputs& v) {
          Rng r(6);
          const Var a = concat_rows(slice_rows(v[0], 1, 3), v[1]);
          const Var terms[] = {probe(row_means(a), r), probe(col_means(a), r), mean_all(a)};
          return sum_scalars(terms);
        },
        {random_tensor({4, 3}, rng), random_tensor({2, 3}, rng)}, eps, tol);
  });
  reg("supervoxel_average_pool", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    SupervoxelPartition part;
    part.assignment = {0, 1, 0, 2, 2, 2, 1};
    part.count = 3;
    return gradcheck([part](const Inputs& v) { Rng r(7); return probe(supervoxel_average_pool(v[0], part), r); },
                     {random_tensor({7, 4}, rng)}, eps, tol);
  });
  reg("im2col", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    return gradcheck([](const Inputs& v) { Rng r(8); return probe(im2col(v[0], 2, 5, 6, 3, 2), r); },
                     {random_tensor({2 * 5 * 6, 2}, rng)}, eps, tol);
  });
  reg("bce_with_logits", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    return gradcheck(
        [](const Inputs& v) {
          const double t[] = {1, 0, 1, 0, 0};
          return bce_with_logits_mean(v[0], t);
        },
        {random_tensor({1, 5}, rng, -3, 3)}, eps, tol);
  });
  reg("diagonal_cross_entropy", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    return gradcheck([](const Inputs& v) { return diagonal_cross_entropy(v[0]); }, {random_tensor({3, 3}, rng, -2, 2)},
                     eps, tol);
  });
  reg("multi_head_attention", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    const KeyMask mask{true, false, false, true, false};
    return gradcheck(
        [mask](const Inputs& v) {
          Rng r(9);
          const AttentionProjections p{v[2], v[3], v[4], v[5]};
          return probe(multi_head_attention(v[0], v[1], p, 2, mask).output, r);
        },
        {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({4, 4}, rng), random_tensor({4, 4}, rng),
         random_tensor({4, 4}, rng), random_tensor({4, 4}, rng)},
        eps, tol);
  });
  reg("coordinate_embedding", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    std::vector<Tensor> in{random_tensor({4, 3}, rng)};
    for (auto& t : random_mlp(3, 6, 5, rng)) in.push_back(std::move(t));
    return gradcheck([](const Inputs& v) { Rng r(10); return probe(coordinate_embedding(v[0], mlp_of(v, 1)), r); },
                     in, eps, tol);
  });
  reg("embed_and_pool", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    std::vector<Tensor> in{random_tensor({6, 6}, rng)};
    for (auto& t : random_mlp(6, 5, 4, rng)) in.push_back(std::move(t));
    const std::vector<std::size_t> groups{0, 1, 1, 0, 2, 1};
    return gradcheck(
        [groups](const Inputs& v) { Rng r(11); return probe(embed_and_pool(v[0], mlp_of(v, 1), groups, 3), r); }, in,
        eps, tol);
  });
  reg("view_featurize", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    ViewSet set;
    set.height = 9;
    set.width = 10;
    for (int t = 0; t < 2; ++t) set.images.push_back(random_tensor({90, 3}, rng, 0.0, 1.0));
    const std::vector<Tensor> in{random_tensor({27, 3}, rng), random_tensor({1, 3}, rng), random_tensor({27, 4}, rng),
                                 random_tensor({1, 4}, rng)};
    return gradcheck(
        [set](const Inputs& v) {
          Rng r(12);
          const ConvStackParams p{v[0], v[1], v[2], v[3], 3, 2};
          return probe(view_featurize(set, {}, p), r);
        },
        in, eps, tol);
  });
  reg("pooled_coordinate_embedding", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    const Scene scene = tiny_scene(seed, 2, 5, 3);
    std::vector<CoordinateMap> maps;
    for (std::size_t t = 0; t < scene.views.size(); ++t) {
      const Camera& c = scene.views.cameras[t];
      maps.push_back(backproject_coordinate_map(scene.views.depths[t], c.intrinsics, c.pose));
    }
    return gradcheck(
        [maps](const Inputs& v) { Rng r(13); return probe(pooled_coordinate_embedding(maps, mlp_of(v, 0)), r); },
        random_mlp(3, 6, 4, rng), eps, tol);
  });
  reg("encoder+class_token_scores", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed + 100);
    ParameterStore s;
    s.add("cls", init_uniform({2, 8}, 8, rng));
    s.add("data", random_tensor({5, 8}, rng));
    s.add("pos", random_tensor({5, 8}, rng));
    for (int l = 0; l < 2; ++l) register_encoder_layer(s, "layer" + std::to_string(l), 8, 8, rng);
    return gradcheck_parameters(
        s,
        [](Bindings& b) {
          const EncoderLayerParams layers[] = {bind_encoder_layer(b, "layer0"), bind_encoder_layer(b, "layer1")};
          const EncoderTrace tr = encode(b("data"), b("pos"), b("cls"), Modality::points, layers, 2);
          return multilabel_loss(class_token_scores(tr.final.class_tokens()), alternating_tags(2));
        },
        eps, tol);
  });
  reg("class_aware_cam", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    return gradcheck(
        [](const Inputs& v) {
          const ClassAwareCam cam = class_aware_cam(v[0], v[1], v[2]);
          Rng r(14);
          const Var terms[] = {probe(cam.cam, r), multilabel_loss(cam.scores, alternating_tags(2))};
          return sum_scalars(terms);
        },
        {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({1, 2}, rng)}, eps, tol);
  });
  reg("class_contrastive_loss", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    return gradcheck([](const Inputs& v) { return class_contrastive_loss(v); },
                     {random_tensor({3, 3}, rng, -2, 2), random_tensor({3, 3}, rng, -2, 2)}, eps, tol);
  });
  reg("encoder_loss", [](std::uint64_t seed, double eps, double tol) {
    Config cfg = tiny_config();
    cfg.three_d_only = false;
    const Scene scene = tiny_scene(seed, 2, 5, 3);
    const PreparedScene ps = prepare_scene(scene, cfg);
    ParameterStore s = init_parameters(cfg, 2, seed + 200);
    // drop the decoder so every remaining parameter feeds the encoder loss
    ParameterStore enc;
    for (const auto& [name, t] : s.all())
      if (name.rfind("dec.", 0) != 0) enc.add(name, t);
    return gradcheck_parameters(
        enc,
        [&](Bindings& b) {
          Config one = cfg;
          one.three_d_only = true;
          ForwardPass p3 = forward(b, one, 2, ps, {});
          const std::size_t views[] = {0, 1, 2};
          const ConvStackParams conv{b("conv.w1"), b("conv.b1"), b("conv.w2"), b("conv.b2"), 3, 2};
          std::vector<EncoderLayerParams> layers;
          for (std::size_t i = 0; i < cfg.encoder_layers; ++i)
            layers.push_back(bind_encoder_layer(b, "enc2d.layer" + std::to_string(i)));
          const EncoderTrace t2 = encode(view_featurize(scene.views, views, conv), slice_rows(b("view_pos"), 0, 3),
                                         b("enc2d.cls"), Modality::views, layers, cfg.heads);
          const ClassAwareCam c2 = class_aware_cam(t2.final.data_tokens(), b("cam2d.w"), b("cam2d.b"));
          return encoder_loss(p3.points, t2, p3.points_cam, c2, scene.tags).total;
        },
        eps, tol);
  });
  reg("decoder_loss", [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed + 300);
    ParameterStore s;
    register_interlaced_block(s, "block0", 8, 8, rng);
    const TokenSet points = random_tokens(2, 4, 8, Modality::points, rng);
    const TokenSet views = random_tokens(2, 3, 8, Modality::views, rng);
    return gradcheck_parameters(
        s,
        [&](Bindings& b) {
          const InterlacedBlock blocks[] = {bind_interlaced_block(b, "block0")};
          return decoder_loss(decode(points, views, blocks, 2), alternating_tags(2), 0.5).total;
        },
        eps, tol);
  });
  reg("model_loss+pose_extension", [](std::uint64_t seed, double eps, double tol) {
    Config cfg = tiny_config();
    cfg.pose_extension = true;
    const Scene scene = tiny_scene(seed, 2, 5, 3);
    const PreparedScene ps = prepare_scene(scene, cfg);
    const ParameterStore s = init_parameters(cfg, 2, seed + 400);
    return gradcheck_parameters(
        s,
        [&](Bindings& b) {
          const std::size_t views[] = {2, 0, 1};
          return model_loss(forward(b, cfg, 2, ps, views), cfg, scene.tags).total;
        },
        eps, tol);
  });
  return cases;
}

}  // namespace

GradcheckReport gradcheck_parameters(const ParameterStore& store, const std::function<Var(Bindings&)>& fn, double eps,
                                     double tol) {
  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  for (const auto& [name, t] : store.all()) {
    names.push_back(name);
    inputs.push_back(t);
  }
  return gradcheck(
      [&](const std::vector<Var>& vars) {
        std::map<std::string, Var> bound;
        for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], vars[i]);
        Bindings b(std::move(bound));
        return fn(b);
      },
      inputs, eps, tol);
}

const std::vector<GradcheckCase>& gradcheck_cases() {
  static const std::vector<GradcheckCase> cases = build_cases();
  return cases;
}

Scene tiny_scene(std::uint64_t seed, std::size_t classes, std::size_t supervoxels, std::size_t views, std::size_t side) {
  if (classes < 1 || supervoxels < 1 || views < 1) throw InputError("tiny_scene: empty request");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Scene s;
  s.id = "tiny_" + std::to_string(seed);
  const std::size_t m = 2 * supervoxels;
  s.cloud.points = Tensor::matrix(m, 6);
  const std::size_t present = (classes + 1) / 2;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t cell = i / 2;
    s.cloud.points.at(i, 0) = 0.25 * static_cast<double>(cell) + 0.05 + 0.1 * static_cast<double>(i % 2);
    s.cloud.points.at(i, 1) = 0.05 + 0.15 * unit(rng);
    s.cloud.points.at(i, 2) = 0.05 + 0.15 * unit(rng);
    for (std::size_t k = 3; k < 6; ++k) s.cloud.points.at(i, k) = unit(rng);
    s.cloud.labels.push_back(static_cast<int>(2 * (cell % present)));
  }
  s.tags = tags_from_labels(s.cloud.labels, classes);
  s.views.height = side;
  s.views.width = side;
  for (std::size_t t = 0; t < views; ++t) {
    s.views.images.push_back(random_tensor({side * side, 3}, rng, 0.0, 1.0));
    Tensor depth = random_tensor({side, side}, rng, 0.5, 2.0);
    for (double& d : depth.values())
      if (unit(rng) < 0.2) d = 0.0;
    s.views.depths.push_back(std::move(depth));
    Camera cam;
    cam.intrinsics << side / 2.0, 0, side / 2.0, 0, side / 2.0, side / 2.0, 0, 0, 1;
    cam.pose.translation = Eigen::Vector3d(unit(rng), unit(rng), -1.0);
    s.views.cameras.push_back(cam);
  }
  return s;
}

Config tiny_config() {
  Config c;
  c.heads = 2;
  c.encoder_layers = 2;
  c.blocks = 1;
  c.dim = 8;
  c.mlp_width = 8;
  c.conv_channels = 2;
  c.views = 3;
  c.refine_layers = 2;
  return c;
}

}  // namespace mit
