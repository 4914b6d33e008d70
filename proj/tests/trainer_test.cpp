#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "mit/checkpoint.hpp"
#include "mit/config.hpp"
#include "mit/errors.hpp"
#include "mit/optim.hpp"
#include "mit/parallel.hpp"
#include "mit/synth.hpp"
#include "mit/trainer.hpp"
#include "support.hpp"

using namespace mit;

namespace {

Dataset small_data(std::uint64_t seed, std::size_t scenes) {
  SceneRecipe r;
  r.points = 300;
  r.views = 4;
  r.height = 24;
  r.width = 24;
  return generate_dataset(seed, scenes, r);
}

Config small_config() {
  Config c;
  c.heads = 2;
  c.encoder_layers = 2;
  c.blocks = 1;
  c.dim = 8;
  c.mlp_width = 16;
  c.conv_channels = 4;
  c.views = 3;
  c.batch_size = 2;
  c.refine_layers = 2;
  c.seed = 5;
  return c;
}

TrainLog run(const Config& cfg, const Dataset& data, std::uint64_t epochs, Checkpoint& state) {
  Trainer t(cfg, data);
  TrainLog log;
  t.train(state, epochs, log);
  return log;
}

std::string replace_bytes(std::string s, std::size_t at, const std::string& with) {
  s.replace(at, with.size(), with);
  return s;
}

}  // namespace

TEST_CASE("config defaults, profiles and validation") {
  Config d = desk_profile();
  CHECK(d.heads == 4);
  CHECK(d.encoder_layers == 3);
  CHECK(d.blocks == 2);
  CHECK(d.dim == 32);
  CHECK(d.mlp_width == 64);
  CHECK(d.views == 8);
  CHECK(d.batch_size == 8);
  CHECK(d.epochs == 200);
  CHECK(d.learning_rate == 3e-3);
  CHECK(d.alpha == 0.5);
  CHECK(d.weight_decay == 1e-4);
  CHECK(d.threshold == 0.5);
  CHECK(d.refine_layers == 3);

  Config p = full_profile();
  CHECK(p.heads == 4);
  CHECK(p.encoder_layers == 3);
  CHECK(p.blocks == 2);
  CHECK(p.dim == 96);
  CHECK(p.mlp_width == 96);
  CHECK(p.views == 16);
  CHECK(p.batch_size == 32);
  CHECK(p.epochs == 500);
  CHECK(p.learning_rate == 1e-2);
  CHECK(p.alpha == 0.5);
  CHECK(p.weight_decay == 1e-4);

  Config bad = d;
  bad.heads = 5;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = d;
  bad.alpha = -0.1;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = d;
  bad.dim = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("config text round trip") {
  Config c = small_config();
  c.data = "some/dir";
  c.val_data = "other dir";
  c.learning_rate = 0.1 + 0.2;
  c.alpha = 1.0 / 3.0;
  c.pose_extension = true;
  c.query_order = QueryOrder::views_first;
  c.seed = 18446744073709551557ull;
  CHECK(parse_config(serialize_config(c)) == c);
  CHECK(parse_config(serialize_config(full_profile())) == full_profile());

  Config parsed = parse_config("# comment\nprofile = full\nheads = 2   # trailing\n\nthree_d_only = true\n");
  CHECK(parsed.dim == 96);
  CHECK(parsed.heads == 2);
  CHECK(parsed.three_d_only);

  try {
    parse_config("dim = 8\nwidht = 4\n", "c.cfg");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("c.cfg:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("heads = four\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("heads 4\n"), ConfigError);
}

TEST_CASE("AdamW step against a hand computation") {
  ParameterStore ps;
  ps.add("w", Tensor::from_rows({{1.0, -2.0}}));
  ps.add("frozen", Tensor::from_rows({{3.0}}));
  AdamWState st;
  AdamWSettings s{0.1, 0.01, 0.9, 0.999, 1e-8};
  std::map<std::string, Tensor> g{{"w", Tensor::from_rows({{0.5, -0.25}})}};
  adamw_step(ps, g, st, s);
  // first step: m̂ = g, v̂ = g², so the Adam move is lr·g/(|g| + eps)
  const double w0 = 1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8);
  const double w1 = -2.0 * (1.0 - 0.1 * 0.01) + 0.1 * 0.25 / (0.25 + 1e-8);
  CHECK(ps.get("w")[0] == doctest::Approx(w0).epsilon(1e-14));
  CHECK(ps.get("w")[1] == doctest::Approx(w1).epsilon(1e-14));
  CHECK(ps.get("frozen")[0] == 3.0);
  CHECK(st.step == 1);
  CHECK(st.first_moment.count("frozen") == 0);
}

TEST_CASE("parallel_for covers every index and rethrows the first failure") {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  try {
    parallel_for(50, [](std::size_t i) {
      if (i == 7 || i == 30) throw InputError("fail " + std::to_string(i));
    });
    FAIL("expected a throw");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()) == "fail 7");
  }
}

TEST_CASE("checkpoint round trip and corruption") {
  auto data = small_data(10, 4);
  Config cfg = small_config();
  Checkpoint state = initial_state(cfg, data.class_names);
  run(cfg, data, 1, state);

  const std::string bytes = encode_checkpoint(state);
  CHECK(bytes.substr(0, 8) == "MITCKPT1");
  CHECK(decode_checkpoint(bytes) == state);

  auto dir = testing::scratch_dir("ckpt");
  save_checkpoint(state, dir / "c.bin");
  Checkpoint back = load_checkpoint(dir / "c.bin");
  CHECK(back == state);
  for (const auto& [name, t] : state.params.all()) CHECK(back.params.get(name).values() == t.values());

  CHECK_THROWS_AS(decode_checkpoint(replace_bytes(bytes, 0, "NOTACKPT")), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(replace_bytes(bytes, 8, std::string("\x07\x00\x00\x00", 4))), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), CheckpointError);
  try {
    decode_checkpoint(replace_bytes(bytes, 8, std::string("\x02\x00\x00\x00", 4)));
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}

TEST_CASE("training is deterministic and resumable") {
  auto data = small_data(20, 5);
  Config cfg = small_config();

  Checkpoint a = initial_state(cfg, data.class_names);
  Checkpoint b = initial_state(cfg, data.class_names);
  auto la = run(cfg, data, 3, a);
  auto lb = run(cfg, data, 3, b);
  CHECK(encode_checkpoint(a) == encode_checkpoint(b));
  CHECK(la.steps == lb.steps);

  Checkpoint c = initial_state(cfg, data.class_names);
  run(cfg, data, 1, c);
  auto dir = testing::scratch_dir("resume");
  save_checkpoint(c, dir / "c.bin");
  Checkpoint resumed = load_checkpoint(dir / "c.bin");
  auto rest = run(cfg, data, 3, resumed);
  const std::size_t per_epoch = la.steps.size() / 3;
  REQUIRE(rest.steps.size() == 2 * per_epoch);
  for (std::size_t i = 0; i < rest.steps.size(); ++i)
    CHECK(std::abs(rest.steps[i].loss - la.steps[per_epoch + i].loss) <= 1e-12);
  CHECK(encode_checkpoint(resumed) == encode_checkpoint(a));
}

TEST_CASE("3D-only training leaves the 2D branch and decoder untouched") {
  auto data = small_data(30, 4);
  Config cfg = small_config();
  cfg.three_d_only = true;
  Checkpoint s = initial_state(cfg, data.class_names);
  auto other = [](const std::string& n) { return !is_point_branch_parameter(n); };
  const auto before_other = parameter_hash(s.params, other);
  const auto before_point = parameter_hash(s.params, is_point_branch_parameter);
  auto log = run(cfg, data, 2, s);
  CHECK(parameter_hash(s.params, other) == before_other);
  CHECK(parameter_hash(s.params, is_point_branch_parameter) != before_point);
  for (const auto& st : log.steps) {
    CHECK(st.decoder == 0.0);
    CHECK(st.contrastive == 0.0);
  }
  for (const auto& [name, m] : s.optimizer.first_moment) CHECK(is_point_branch_parameter(name));
}

TEST_CASE("a non-finite loss aborts the run with a dump") {
  auto data = small_data(40, 2);
  Config cfg = small_config();
  Checkpoint s = initial_state(cfg, data.class_names);
  s.params.get_mut("cam3d.b")[0] = std::numeric_limits<double>::infinity();
  Trainer t(cfg, data);
  auto dir = testing::scratch_dir("nan");
  t.set_dump_path(dir / "dump.tsv");
  TrainLog log;
  CHECK_THROWS_AS(t.run_epoch(s, log), TrainingError);
  CHECK(std::filesystem::exists(dir / "dump.tsv"));
}

TEST_CASE("smoke: loss falls over the first 20 steps at the default step size") {
  // Eight small scenes, one full-batch step per epoch. Per seed the loss
  // after 20 steps is compared to the first; the median change must be
  // negative and the median curve must fall at every step past the fifth.
  SceneRecipe r;
  r.points = 512;
  r.views = 4;
  r.height = 24;
  r.width = 24;
  auto data = generate_dataset(500, 8, r);
  Config cfg = desk_profile();
  cfg.views = 4;
  cfg.batch_size = 8;
  std::vector<std::vector<double>> curves;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.seed = seed;
    Checkpoint s = initial_state(cfg, data.class_names);
    auto log = run(cfg, data, 20, s);
    REQUIRE(log.steps.size() == 20);
    std::vector<double> c;
    for (const auto& st : log.steps) c.push_back(st.loss);
    curves.push_back(c);
  }
  auto median_at = [&](std::size_t k) {
    std::vector<double> v;
    for (const auto& c : curves) v.push_back(c[k]);
    std::nth_element(v.begin(), v.begin() + 2, v.end());
    return v[2];
  };
  std::vector<double> drop;
  for (const auto& c : curves) drop.push_back(c[19] - c[0]);
  std::nth_element(drop.begin(), drop.begin() + 2, drop.end());
  CHECK(drop[2] < 0.0);
  for (std::size_t k = 5; k < 20; ++k) {
    INFO("step ", k + 1);
    CHECK(median_at(k) < median_at(k - 1));
  }
}
