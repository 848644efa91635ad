#include <random>

#include "doctest.h"
#include "spidermesh/gradcheck.hpp"
#include "spidermesh/heads.hpp"
#include "test_util.hpp"

using namespace spidermesh;

TEST_CASE("classify maps decoder channels to per-class logits") {
  std::mt19937_64 rng(3);
  Tensor fe = Tensor::randn({8, 8, 6}, rng, 1.0);
  ModelParams p;
  ParamBank bank(p, ParamBank::Mode::create, 1);
  nn::Var logits = heads::classify(nn::constant(fe), bank, "h", 4);
  CHECK(logits->value.shape() == std::vector<int>{8, 8, 4});
}

TEST_CASE("classify with zero weights emits the bias per class") {
  Tensor fe = Tensor::full({4, 4, 3}, 2.0);
  ModelParams p;
  {
    ParamBank bank(p, ParamBank::Mode::create, 1);
    heads::classify(nn::constant(fe), bank, "h", 2);
  }
  p.at("h.w").fill(0.0);
  p.at("h.b").data()[0] = -1.5;
  p.at("h.b").data()[1] = 0.75;
  ParamBank bank(p, ParamBank::Mode::strict);
  nn::Var logits = heads::classify(nn::constant(fe), bank, "h", 2);
  for (int i = 0; i < 16; ++i) {
    CHECK(logits->value.data()[2 * i] == -1.5);
    CHECK(logits->value.data()[2 * i + 1] == 0.75);
  }
}

TEST_CASE("classify gradients match finite differences") {
  std::mt19937_64 rng(5);
  ModelParams p;
  {
    ParamBank bank(p, ParamBank::Mode::create, 2);
    heads::classify(bank.value("x", {3, 3, 4}), bank, "h", 3);
  }
  p.at("x") = Tensor::randn({3, 3, 4}, rng, 1.0);
  GradCheckReport r = check_gradients(p, [](ParamBank& b) {
    return nn::sum_all(heads::classify(b.value("x", {3, 3, 4}), b, "h", 3));
  });
  CAPTURE(r.worst.path);
  CHECK(r.max_error <= 1e-5);
}

TEST_CASE("head fusion is additive: zero thermal feature leaves main = rgb head") {
  std::mt19937_64 rng(7);
  Tensor fe_rgb = Tensor::randn({4, 4, 5}, rng, 1.0);
  Tensor fe_the = Tensor::zeros({4, 4, 5});
  ModelParams p;
  ParamBank bank(p, ParamBank::Mode::create, 3);
  nn::Var fused = heads::classify(nn::add(nn::constant(fe_rgb), nn::constant(fe_the)), bank, "h", 3);
  ParamBank bank2(p, ParamBank::Mode::strict);
  nn::Var alone = heads::classify(nn::constant(fe_rgb), bank2, "h", 3);
  for (int i = 0; i < fused->value.numel(); ++i)
    REQUIRE(fused->value.data()[i] == alone->value.data()[i]);
}

TEST_CASE("forward_full yields two logit maps at input resolution") {
  for (Variant variant : {Variant::baseline, Variant::dtm, Variant::srm, Variant::full}) {
    CAPTURE(to_string(variant));
    ModelConfig cfg = testutil::micro_config(4, variant);
    RgbtSample s = testutil::random_sample(64, 64, 4, 11);
    ModelParams p;
    ParamBank bank(p, ParamBank::Mode::create, 5);
    heads::ForwardOut out = heads::forward_full(s, bank, cfg);
    CHECK(out.main->value.shape() == std::vector<int>{64, 64, 4});
    CHECK(out.aux->value.shape() == std::vector<int>{64, 64, 4});
  }
}

TEST_CASE("forward_full stays finite with a zeroed thermal input") {
  ModelConfig cfg = testutil::micro_config(3);
  RgbtSample s = testutil::random_sample(32, 32, 3, 13);
  s.thermal.fill(0.0);
  ModelParams p;
  ParamBank bank(p, ParamBank::Mode::create, 5);
  heads::ForwardOut out = heads::forward_full(s, bank, cfg);
  CHECK(out.main->value.all_finite());
  CHECK(out.aux->value.all_finite());
}

TEST_CASE("forward_full is deterministic") {
  ModelConfig cfg = testutil::micro_config(3);
  RgbtSample s = testutil::random_sample(32, 32, 3, 17);
  ModelParams p = heads::init_params(cfg, 21);
  auto run = [&]() {
    ParamBank bank(p, ParamBank::Mode::strict);
    return heads::forward_full(s, bank, cfg);
  };
  heads::ForwardOut a = run(), b = run();
  for (int i = 0; i < a.main->value.numel(); ++i)
    REQUIRE(a.main->value.data()[i] == b.main->value.data()[i]);
  for (int i = 0; i < a.aux->value.numel(); ++i)
    REQUIRE(a.aux->value.data()[i] == b.aux->value.data()[i]);
}

TEST_CASE("meshed decoding rejects inputs not divisible by 32") {
  ModelConfig cfg = testutil::micro_config(3);
  RgbtSample s = testutil::random_sample(40, 40, 3, 19);
  ModelParams p;
  ParamBank bank(p, ParamBank::Mode::create, 5);
  CHECK_THROWS_AS(heads::forward_full(s, bank, cfg), Error);

  // The plain bilinear decoder has no alignment constraint.
  ModelConfig plain = testutil::micro_config(3, Variant::dtm);
  ParamBank bank2(p, ParamBank::Mode::create, 5);
  heads::ForwardOut out = heads::forward_full(s, bank2, plain);
  CHECK(out.main->value.shape() == std::vector<int>{40, 40, 3});
}

TEST_CASE("predict_labels takes per-pixel argmax with smallest-index ties") {
  Tensor logits = Tensor::zeros({1, 2, 3});
  logits.data()[0] = 2.0;
  logits.data()[1] = -1.0;
  logits.data()[2] = 0.5;
  // Second pixel: all equal -> class 0 by the tie rule.
  LabelMap out = heads::predict_labels(logits);
  CHECK(out.at(0, 0) == 0);
  CHECK(out.at(0, 1) == 0);
}

TEST_CASE("predict_labels matches an exhaustive scan on random logits") {
  std::mt19937_64 rng(23);
  Tensor logits = Tensor::randn({8, 8, 3}, rng, 2.0);
  LabelMap out = heads::predict_labels(logits);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      int want = 0;
      for (int c = 0; c < 3; ++c)
        if (logits.at3(y, x, c) > logits.at3(y, x, want)) want = c;
      REQUIRE(out.at(y, x) == want);
    }
}

TEST_CASE("predict_labels is invariant under positive affine logit transforms") {
  std::mt19937_64 rng(29);
  Tensor logits = Tensor::randn({6, 6, 4}, rng, 1.0);
  Tensor scaled = logits;
  for (int i = 0; i < scaled.numel(); ++i) scaled.data()[i] = 3.0 * scaled.data()[i] + 0.7;
  LabelMap a = heads::predict_labels(logits);
  LabelMap b = heads::predict_labels(scaled);
  for (size_t i = 0; i < a.v.size(); ++i) REQUIRE(a.v[i] == b.v[i]);
}

TEST_CASE("init_params is deterministic per seed and complete for its variant") {
  ModelConfig cfg = testutil::micro_config(3);
  ModelParams a = heads::init_params(cfg, 42);
  ModelParams b = heads::init_params(cfg, 42);
  REQUIRE(a.entries.size() == b.entries.size());
  for (const auto& [path, tensor] : a.entries) {
    REQUIRE(b.has(path));
    for (int i = 0; i < tensor.numel(); ++i)
      REQUIRE(tensor.data()[i] == b.at(path).data()[i]);
  }

  // A strict forward over the initialized store must need nothing more.
  RgbtSample s = testutil::random_sample(32, 32, 3, 31);
  ParamBank bank(a, ParamBank::Mode::strict);
  CHECK_NOTHROW(heads::forward_full(s, bank, cfg));
}

TEST_CASE("parameters initialized for one variant cannot drive a richer one") {
  ModelParams p = heads::init_params(testutil::micro_config(3, Variant::baseline), 1);
  ModelConfig full_cfg = testutil::micro_config(3, Variant::full);
  RgbtSample s = testutil::random_sample(32, 32, 3, 37);
  ParamBank bank(p, ParamBank::Mode::strict);
  CHECK_THROWS_AS(heads::forward_full(s, bank, full_cfg), Error);
}

TEST_CASE("variant ladder instantiates strictly growing parameter sets") {
  auto count = [](Variant v) {
    return heads::init_params(testutil::micro_config(3, v), 1).entries.size();
  };
  const size_t baseline = count(Variant::baseline);
  const size_t with_dtm = count(Variant::dtm);
  const size_t with_srm = count(Variant::srm);
  const size_t full = count(Variant::full);
  CHECK(baseline < with_dtm);
  CHECK(with_dtm < with_srm);
  // M-CutOut is purely a training-time change; the graph is the srm one.
  CHECK(with_srm == full);
}
