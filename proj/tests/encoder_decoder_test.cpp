#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mit/decoder.hpp"
#include "mit/encoder.hpp"
#include "mit/errors.hpp"
#include "support.hpp"

using namespace mit;

namespace {

constexpr std::size_t kD = 8;
constexpr std::size_t kC = 2;

std::vector<EncoderLayerParams> encoder_layers(ParameterStore& store, Bindings& b, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EncoderLayerParams> out;
  for (std::size_t i = 0; i < n; ++i) register_encoder_layer(store, "enc.layer" + std::to_string(i), kD, 12, rng);
  for (std::size_t i = 0; i < n; ++i) out.push_back(bind_encoder_layer(b, "enc.layer" + std::to_string(i)));
  return out;
}

std::vector<InterlacedBlock> blocks(ParameterStore& store, Bindings& b, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<InterlacedBlock> out;
  for (std::size_t i = 0; i < n; ++i) register_interlaced_block(store, "dec.block" + std::to_string(i), kD, 12, rng);
  for (std::size_t i = 0; i < n; ++i) out.push_back(bind_interlaced_block(b, "dec.block" + std::to_string(i)));
  return out;
}

TokenSet tokens(std::size_t n_data, Modality m, std::mt19937_64& rng) {
  return {Var::constant(testing::random_matrix(kC + n_data, kD, rng)), kC, m};
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm, std::size_t offset) {
  Tensor out = t;
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < t.cols(); ++c) out.at(offset + i, c) = t.at(offset + perm[i], c);
  return out;
}

const std::vector<std::string> kProjectionsOut{".attn.wo", ".mlp.w2", ".mlp.b2"};

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

}  // namespace

TEST_CASE("encoder output shape and residual identity") {
  std::mt19937_64 rng(1);
  ParameterStore store;
  Bindings b0(store, false);
  auto layers = encoder_layers(store, b0, 3, 7);
  Tensor data = testing::random_matrix(5, kD, rng), pos = testing::random_matrix(5, kD, rng);
  Tensor cls = testing::random_matrix(kC, kD, rng);

  auto trace = encode(Var::constant(data), Var::constant(pos), Var::constant(cls), Modality::points, layers, 2);
  CHECK(trace.final.tokens.rows() == kC + 5);
  CHECK(trace.final.tokens.cols() == kD);
  CHECK(trace.final.n_class == kC);
  REQUIRE(trace.attention.size() == 3);
  for (const auto& a : trace.attention) {
    CHECK(a.shape() == Shape{2, kC + 5, kC + 5});
    for (std::size_t r = 0; r < 2 * (kC + 5); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < kC + 5; ++j) s += a[r * (kC + 5) + j];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }

  testing::zero_params(store, kProjectionsOut);
  Bindings b1(store, false);
  std::vector<EncoderLayerParams> zeroed;
  for (std::size_t i = 0; i < 3; ++i) zeroed.push_back(bind_encoder_layer(b1, "enc.layer" + std::to_string(i)));
  auto id = encode(Var::constant(data), Var::constant(pos), Var::constant(cls), Modality::points, zeroed, 2);
  for (std::size_t c = 0; c < kD; ++c) {
    for (std::size_t r = 0; r < kC; ++r) CHECK(id.final.tokens.value().at(r, c) == cls.at(r, c));
    for (std::size_t r = 0; r < 5; ++r) CHECK(id.final.tokens.value().at(kC + r, c) == data.at(r, c) + pos.at(r, c));
  }
}

TEST_CASE("encoder is equivariant to data-token permutations") {
  std::mt19937_64 rng(2);
  ParameterStore store;
  Bindings b(store, false);
  auto layers = encoder_layers(store, b, 3, 8);
  Tensor data = testing::random_matrix(6, kD, rng), pos = testing::random_matrix(6, kD, rng);
  Var cls = Var::constant(testing::random_matrix(kC, kD, rng));
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};

  auto a = encode(Var::constant(data), Var::constant(pos), cls, Modality::views, layers, 4);
  auto p = encode(Var::constant(permute_rows(data, perm, 0)), Var::constant(permute_rows(pos, perm, 0)), cls,
                  Modality::views, layers, 4);
  CHECK(max_abs_diff(p.final.tokens.value(), permute_rows(a.final.tokens.value(), perm, kC)) < 1e-10);

  // class scores do not see the order either
  Var w = Var::constant(testing::random_matrix(kD, kC, rng)), bias = Var::constant(testing::random_matrix(1, kC, rng));
  CHECK(max_abs_diff(class_token_scores(a.final.class_tokens()).value(),
                     class_token_scores(p.final.class_tokens()).value()) < 1e-10);
  CHECK(max_abs_diff(class_aware_cam(a.final.data_tokens(), w, bias).scores.value(),
                     class_aware_cam(p.final.data_tokens(), w, bias).scores.value()) < 1e-10);
}

TEST_CASE("encoder input validation") {
  std::mt19937_64 rng(3);
  ParameterStore store;
  Bindings b(store, false);
  auto layers = encoder_layers(store, b, 1, 9);
  Var cls = Var::constant(testing::random_matrix(kC, kD, rng));
  Var d4 = Var::constant(testing::random_matrix(4, kD, rng));
  CHECK_THROWS_AS(encode(d4, Var::constant(testing::random_matrix(3, kD, rng)), cls, Modality::points, layers, 2),
                  ShapeError);
  Var none = Var::constant(Tensor::matrix(0, kD));
  CHECK_THROWS_AS(encode(none, none, cls, Modality::points, layers, 2), ShapeError);
  CHECK_THROWS_AS(encode(d4, d4, cls, Modality::points, layers, 3), ConfigError);
}

TEST_CASE("class scores and class-aware activations") {
  auto s = class_token_scores(Var::constant(Tensor::from_rows({{1.0, 3.0}, {0.0, 0.0}}))).value();
  CHECK(s[0] == 2.0);
  CHECK(s[1] == 0.0);
  CHECK(class_token_scores(Var::constant(Tensor::matrix(1, 5, 0.3))).value()[0] == doctest::Approx(0.3));

  std::mt19937_64 rng(4);
  Tensor t = testing::random_matrix(3, 2, rng);
  auto cam = class_aware_cam(Var::constant(t), Var::constant(testing::identity(2)), Var::constant(Tensor::matrix(1, 2)));
  CHECK(cam.cam.value() == t);

  // rows [[1,0],[3,2]] average to [2,1]
  Tensor rows = Tensor::from_rows({{1.0, 0.0}, {3.0, 2.0}});
  auto c2 = class_aware_cam(Var::constant(rows), Var::constant(testing::identity(2)), Var::constant(Tensor::matrix(1, 2)));
  CHECK(c2.scores.value() == Tensor::from_rows({{2.0, 1.0}}));
}

TEST_CASE("multi-label loss") {
  SceneTags one{{1}};
  CHECK(multilabel_loss(Var::constant(Tensor::matrix(1, 1, 0.0)), one).item() == doctest::Approx(std::log(2.0)));
  CHECK(multilabel_loss(Var::constant(Tensor::matrix(1, 1, 20.0)), one).item() < 1e-8);
  CHECK(multilabel_loss(Var::constant(Tensor::matrix(2, 1, 0.0)), SceneTags{{1, 0}}).item() ==
        doctest::Approx(std::log(2.0)));
}

TEST_CASE("encoder loss decomposes into its four terms") {
  std::mt19937_64 rng(5);
  SceneTags y{{1, 0}};
  auto make_trace = [&](Modality m, std::size_t n) {
    EncoderTrace t;
    t.final = tokens(n, m, rng);
    return t;
  };
  auto make_cam = [&](std::size_t n) {
    return class_aware_cam(Var::constant(testing::random_matrix(n, kD, rng)),
                           Var::constant(testing::random_matrix(kD, kC, rng)), Var::constant(Tensor::matrix(1, kC)));
  };
  auto p = make_trace(Modality::points, 5), v = make_trace(Modality::views, 3);
  auto pc = make_cam(5), vc = make_cam(3);
  auto loss = encoder_loss(p, v, pc, vc, y);

  // independent evaluation of each term from the raw logits
  auto bce = [&](const Tensor& logits) {
    double s = 0.0;
    for (std::size_t c = 0; c < kC; ++c) s += y.y[c] ? softplus(-logits[c]) : softplus(logits[c]);
    return s / kC;
  };
  auto row_mean = [](const Tensor& t) {
    Tensor m = Tensor::matrix(t.rows(), 1);
    for (std::size_t r = 0; r < t.rows(); ++r) {
      for (std::size_t c = 0; c < t.cols(); ++c) m[r] += t.at(r, c);
      m[r] /= static_cast<double>(t.cols());
    }
    return m;
  };
  const double c3 = bce(row_mean(p.final.class_tokens().value()));
  const double s3 = bce(pc.scores.value());
  const double c2 = bce(row_mean(v.final.class_tokens().value()));
  const double t2 = bce(vc.scores.value());
  CHECK(loss.class_3d.item() == doctest::Approx(c3).epsilon(1e-12));
  CHECK(loss.cam_3d.item() == doctest::Approx(s3).epsilon(1e-12));
  CHECK(loss.class_2d.item() == doctest::Approx(c2).epsilon(1e-12));
  CHECK(loss.cam_2d.item() == doctest::Approx(t2).epsilon(1e-12));
  CHECK(loss.total.item() == doctest::Approx(c3 + s3 + c2 + t2).epsilon(1e-12));
  CHECK(loss.total.item() >= 0.0);

  // the same trace and cam on both sides gives 4ℓ when every term is ℓ
  EncoderTrace same;
  same.final = {Var::constant(Tensor::matrix(kC + 3, kD, 0.0)), kC, Modality::points};
  auto zero_cam = class_aware_cam(Var::constant(Tensor::matrix(3, kD)), Var::constant(Tensor::matrix(kD, kC)),
                                  Var::constant(Tensor::matrix(1, kC)));
  CHECK(encoder_loss(same, same, zero_cam, zero_cam, y).total.item() == doctest::Approx(4.0 * std::log(2.0)));

  // saturated correct logits
  Tensor sat = Tensor::matrix(kC + 3, kD);
  for (std::size_t c = 0; c < kD; ++c) {
    sat.at(0, c) = 40.0;
    sat.at(1, c) = -40.0;
  }
  EncoderTrace good;
  good.final = {Var::constant(sat), kC, Modality::points};
  auto good_cam = class_aware_cam(Var::constant(Tensor::matrix(3, kD)), Var::constant(Tensor::matrix(kD, kC)),
                                  Var::constant(Tensor::from_rows({{40.0, -40.0}})));
  CHECK(encoder_loss(good, good, good_cam, good_cam, y).total.item() < 1e-7);
}

TEST_CASE("cross attention ignores key-side class tokens") {
  std::mt19937_64 rng(6);
  ParameterStore store;
  Bindings b(store, false);
  auto blk = blocks(store, b, 1, 10);
  TokenSet q = tokens(4, Modality::points, rng), kv = tokens(3, Modality::views, rng);
  auto base = cross_attend_masked(q, kv, blk[0].odd, 2);

  Tensor wild = kv.tokens.value();
  for (std::size_t r = 0; r < kC; ++r)
    for (std::size_t c = 0; c < kD; ++c) wild.at(r, c) = 1e6 * (c % 2 ? 1.0 : -3.0) + 1e5 * static_cast<double>(r);
  auto moved = cross_attend_masked(q, {Var::constant(wild), kC, Modality::views}, blk[0].odd, 2);
  CHECK(max_abs_diff(base.updated.tokens.value(), moved.updated.tokens.value()) < 1e-10);

  CHECK(base.attention.rows() == kC + 4);
  CHECK(base.attention.cols() == kC + 3);
  CHECK(base.class_logits.rows() == kC);
  CHECK(base.class_logits.cols() == kC);
  for (std::size_t i = 0; i < base.attention.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < kC; ++j) CHECK(base.attention.at(i, j) == 0.0);
    for (std::size_t j = kC; j < base.attention.cols(); ++j) s += base.attention.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }

  auto single = cross_attend_masked(q, tokens(1, Modality::views, rng), blk[0].odd, 2);
  for (std::size_t i = 0; i < kC + 4; ++i) CHECK(single.attention.at(i, kC) == 1.0);

  TokenSet other{Var::constant(testing::random_matrix(3 + 3, kD, rng)), 3, Modality::views};
  CHECK_THROWS_AS(cross_attend_masked(q, other, blk[0].odd, 2), ConfigError);
}

TEST_CASE("decoder residual identities") {
  std::mt19937_64 rng(7);
  ParameterStore store;
  Rng init(11);
  for (std::size_t i = 0; i < 2; ++i) register_interlaced_block(store, "dec.block" + std::to_string(i), kD, 12, init);
  testing::zero_params(store, kProjectionsOut);
  Bindings b(store, false);
  std::vector<InterlacedBlock> blk{bind_interlaced_block(b, "dec.block0"), bind_interlaced_block(b, "dec.block1")};
  TokenSet p = tokens(4, Modality::points, rng), v = tokens(3, Modality::views, rng);

  auto layer = cross_attend_masked(p, v, blk[0].odd, 2);
  CHECK(layer.updated.tokens.value() == p.tokens.value());

  auto one = interlaced_block(p, v, blk[0], 2);
  CHECK(one.points.tokens.value() == p.tokens.value());
  CHECK(one.views.tokens.value() == v.tokens.value());

  auto full = decode(p, v, blk, 2);
  CHECK(full.points.tokens.value() == p.tokens.value());
  CHECK(full.views.tokens.value() == v.tokens.value());
}

TEST_CASE("interlaced block wiring and decoder trace") {
  std::mt19937_64 rng(8);
  ParameterStore store;
  Bindings b(store, false);
  auto blk = blocks(store, b, 2, 12);
  TokenSet p = tokens(5, Modality::points, rng), v = tokens(3, Modality::views, rng);

  auto out = interlaced_block(p, v, blk[0], 2);
  CHECK(out.points.tokens.shape() == p.tokens.shape());
  CHECK(out.views.tokens.shape() == v.tokens.shape());
  CHECK(out.odd.query == Modality::points);
  CHECK(out.even.query == Modality::views);
  // the even layer reads the odd layer's output, not the block input
  CHECK(out.even.keyvals.value() == out.points.tokens.value());
  CHECK(max_abs_diff(out.even.keyvals.value(), p.tokens.value()) > 1e-6);
  CHECK(out.odd.keyvals.value() == v.tokens.value());
  CHECK(out.odd.attention.rows() == kC + 5);
  CHECK(out.odd.attention.cols() == kC + 3);
  CHECK(out.even.attention.rows() == kC + 3);
  CHECK(out.even.attention.cols() == kC + 5);

  auto one = decode(p, v, std::span(blk).first(1), 2);
  CHECK(one.layers.size() == 2);
  auto two = decode(p, v, blk, 2);
  REQUIRE(two.layers.size() == 4);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(two.layers[r].layer == r + 1);
    for (std::size_t i = 0; i < two.layers[r].attention.rows(); ++i)
      for (std::size_t j = 0; j < kC; ++j) CHECK(two.layers[r].attention.at(i, j) == 0.0);
  }
  CHECK_THROWS_AS(decode(p, v, std::span<const InterlacedBlock>{}, 2), ConfigError);

  auto swapped = decode(p, v, blk, 2, QueryOrder::views_first);
  CHECK(swapped.points.tokens.shape() == p.tokens.shape());
  CHECK(swapped.views.tokens.shape() == v.tokens.shape());
  CHECK(swapped.layers[0].query == Modality::views);
  CHECK(swapped.layers[0].attention.rows() == kC + 3);
  CHECK(swapped.layers[1].query == Modality::points);
}

TEST_CASE("permuting view tokens permutes odd-layer attention columns") {
  std::mt19937_64 rng(9);
  ParameterStore store;
  Bindings b(store, false);
  auto blk = blocks(store, b, 1, 13);
  TokenSet p = tokens(4, Modality::points, rng), v = tokens(4, Modality::views, rng);
  std::vector<std::size_t> perm{2, 3, 1, 0};
  TokenSet vp{Var::constant(permute_rows(v.tokens.value(), perm, kC)), kC, Modality::views};

  auto a = cross_attend_masked(p, v, blk[0].odd, 2);
  auto c = cross_attend_masked(p, vp, blk[0].odd, 2);
  CHECK(max_abs_diff(a.updated.tokens.value(), c.updated.tokens.value()) < 1e-10);
  for (std::size_t i = 0; i < a.attention.rows(); ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(c.attention.at(i, kC + j) - a.attention.at(i, kC + perm[j])) < 1e-12);
}

TEST_CASE("class contrastive loss over layers") {
  const double l = std::log(3.0);
  Var a = Var::constant(Tensor::from_rows({{l, 0.0}, {0.0, l}}));
  Var ones = Var::constant(Tensor::matrix(2, 2, 0.0));
  std::vector<Var> one{a};
  CHECK(std::abs(class_contrastive_loss(one).item() - (-4.0 * std::log(0.75))) < 1e-12);
  std::vector<Var> both{a, ones};
  CHECK(std::abs(class_contrastive_loss(both).item() - 0.5 * (-4.0 * std::log(0.75) + 4.0 * std::log(2.0))) < 1e-12);
  std::vector<Var> c1{Var::constant(Tensor::matrix(1, 1, -3.0))};
  CHECK(class_contrastive_loss(c1).item() == 0.0);
}

TEST_CASE("decoder loss arithmetic and the alpha knob") {
  // one class pair present; class-token rows chosen so the two tag terms are 1 and 2
  const double s3 = -std::log(std::exp(1.0) - 1.0);
  const double s2 = -std::log(std::exp(2.0) - 1.0);
  const double off = std::log(std::exp(1.0) - 1.0);  // makes the contrastive term 4
  SceneTags y{{1, 1}};
  DecoderTrace t;
  Tensor pt = Tensor::matrix(kC + 2, kD), vt = Tensor::matrix(kC + 2, kD);
  for (std::size_t r = 0; r < kC; ++r)
    for (std::size_t c = 0; c < kD; ++c) {
      pt.at(r, c) = s3;
      vt.at(r, c) = s2;
    }
  t.points = {Var::constant(pt), kC, Modality::points};
  t.views = {Var::constant(vt), kC, Modality::views};
  DecoderLayerRecord rec;
  rec.class_logits = Var::constant(Tensor::from_rows({{0.0, off}, {off, 0.0}}));
  t.layers = {rec};

  auto loss = decoder_loss(t, y, 0.5);
  CHECK(loss.class_3d.item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(loss.class_2d.item() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(loss.contrastive.item() == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(loss.total.item() == doctest::Approx(5.0).epsilon(1e-12));

  const double at_zero = decoder_loss(t, y, 0.0).total.item();
  t.layers[0].class_logits = Var::constant(Tensor::from_rows({{9.0, -2.0}, {4.0, 0.5}}));
  CHECK(decoder_loss(t, y, 0.0).total.item() == at_zero);
  CHECK_THROWS_AS(decoder_loss(t, y, -1.0), ConfigError);
}
