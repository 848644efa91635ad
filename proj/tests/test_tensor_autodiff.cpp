#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "spidermesh/autodiff.hpp"
#include "spidermesh/gradcheck.hpp"
#include "spidermesh/tensor.hpp"

using namespace spidermesh;

namespace {

constexpr double kGradTol = 1e-5;

ModelParams randn_store(std::initializer_list<std::pair<std::string, std::vector<int>>> specs,
                        unsigned seed = 7) {
  std::mt19937_64 rng(seed);
  ModelParams p;
  for (const auto& [path, shape] : specs) p.entries.emplace(path, Tensor::randn(shape, rng, 1.0));
  return p;
}

// Reduces an arbitrary output to a scalar with fixed mixing weights so every
// output entry influences the loss differently.
nn::Var mix_to_scalar(const nn::Var& v) {
  Tensor weights(v->value.shape());
  for (int i = 0; i < weights.numel(); ++i)
    weights.data()[i] = 0.25 + 0.5 * std::sin(1.0 + 0.37 * i);
  nn::Var out = nn::hadamard(v, nn::constant(weights));
  // Sum all entries by chaining the built-in reductions: flatten via mean ops
  // would lose coverage, so do an explicit full sum.
  return nn::sum_all(out);
}

void expect_gradients_match(ModelParams& params,
                            const std::function<nn::Var(ParamBank&)>& loss) {
  GradCheckReport r = check_gradients(params, loss);
  CAPTURE(r.worst.path);
  CAPTURE(r.worst.index);
  CAPTURE(r.worst.analytic);
  CAPTURE(r.worst.numeric);
  CHECK(r.entries_checked > 0);
  CHECK(r.max_error <= kGradTol);
}

}  // namespace

TEST_CASE("tensor basics: shape bookkeeping and fill") {
  Tensor t = Tensor::zeros({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.shape() == std::vector<int>{2, 3, 4});
  t.fill(1.5);
  CHECK(t.at3(1, 2, 3) == 1.5);
  t.at3(0, 1, 2) = -2.0;
  CHECK(t.data()[0 * 12 + 1 * 4 + 2] == -2.0);
  CHECK(t.all_finite());
  t.at3(1, 0, 0) = std::nan("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("tensor add_scaled rejects shape mismatch") {
  Tensor a = Tensor::zeros({2, 2, 1});
  Tensor b = Tensor::zeros({2, 2, 2});
  CHECK_THROWS_AS(a.add_scaled(b, 1.0), Error);
}

TEST_CASE("elementwise op gradients: add, sub, hadamard, scale") {
  ModelParams p = randn_store({{"a", {3, 4, 2}}, {"b", {3, 4, 2}}});
  expect_gradients_match(p, [](ParamBank& bank) {
    nn::Var a = bank.value("a", {3, 4, 2});
    nn::Var b = bank.value("b", {3, 4, 2});
    nn::Var mixed = nn::add(nn::hadamard(a, b), nn::scale(nn::sub(a, b), 0.75));
    return mix_to_scalar(mixed);
  });
}

TEST_CASE("activation gradients: elu and sigmoid") {
  ModelParams p = randn_store({{"a", {2, 3, 3}}});
  expect_gradients_match(p, [](ParamBank& bank) {
    nn::Var a = bank.value("a", {2, 3, 3});
    return mix_to_scalar(nn::add(nn::elu(a), nn::sigmoid(a)));
  });
}

TEST_CASE("elu forward values") {
  Tensor in({1, 1, 2});
  in.data()[0] = 2.0;
  in.data()[1] = -1.0;
  nn::Var out = nn::elu(nn::constant(in));
  CHECK(out->value.data()[0] == doctest::Approx(2.0));
  CHECK(out->value.data()[1] == doctest::Approx(std::expm1(-1.0)));
}

TEST_CASE("sigmoid forward is stable at extreme inputs") {
  Tensor in({1, 1, 2});
  in.data()[0] = 800.0;
  in.data()[1] = -800.0;
  nn::Var out = nn::sigmoid(nn::constant(in));
  CHECK(out->value.data()[0] == doctest::Approx(1.0));
  CHECK(out->value.data()[1] == doctest::Approx(0.0));
  CHECK(out->value.all_finite());
}

TEST_CASE("broadcast multiply gradients: channel gain and spatial mask") {
  ModelParams p = randn_store({{"x", {3, 2, 4}}, {"gain", {1, 1, 4}}, {"mask", {3, 2, 1}}});
  expect_gradients_match(p, [](ParamBank& bank) {
    nn::Var x = bank.value("x", {3, 2, 4});
    nn::Var gained = nn::mul_channel_gain(x, bank.value("gain", {1, 1, 4}));
    nn::Var masked = nn::mul_spatial_mask(gained, bank.value("mask", {3, 2, 1}));
    return mix_to_scalar(masked);
  });
}

TEST_CASE("concat_channels stacks along the channel axis") {
  Tensor a = Tensor::full({2, 2, 1}, 1.0);
  Tensor b = Tensor::full({2, 2, 2}, 2.0);
  nn::Var joined = nn::concat_channels({nn::constant(a), nn::constant(b)});
  CHECK(joined->value.shape() == std::vector<int>{2, 2, 3});
  CHECK(joined->value.at3(1, 1, 0) == 1.0);
  CHECK(joined->value.at3(1, 1, 1) == 2.0);
  CHECK(joined->value.at3(0, 0, 2) == 2.0);
}

TEST_CASE("concat_channels gradients split back to the right parents") {
  ModelParams p = randn_store({{"a", {2, 2, 2}}, {"b", {2, 2, 3}}});
  expect_gradients_match(p, [](ParamBank& bank) {
    nn::Var joined = nn::concat_channels({bank.value("a", {2, 2, 2}), bank.value("b", {2, 2, 3})});
    return mix_to_scalar(joined);
  });
}

TEST_CASE("reduction gradients: spatial and per-pixel max/mean") {
  // Ties in max reductions have subgradient ambiguity, so draw from a
  // continuous distribution where ties have probability zero.
  ModelParams p = randn_store({{"x", {3, 3, 4}}});
  expect_gradients_match(p, [](ParamBank& bank) {
    nn::Var x = bank.value("x", {3, 3, 4});
    nn::Var parts = nn::concat_channels({nn::channel_max_per_pixel(x), nn::channel_mean_per_pixel(x)});
    nn::Var pooled = nn::add(nn::spatial_max_per_channel(x), nn::spatial_mean_per_channel(x));
    return nn::add(mix_to_scalar(parts), mix_to_scalar(pooled));
  });
}

TEST_CASE("reduction forward values on a hand-built map") {
  Tensor x = Tensor::zeros({2, 1, 2});
  x.at3(0, 0, 0) = 1.0;
  x.at3(0, 0, 1) = 5.0;
  x.at3(1, 0, 0) = 3.0;
  x.at3(1, 0, 1) = -1.0;
  nn::Var v = nn::constant(x);
  Tensor smax = nn::spatial_max_per_channel(v)->value;
  CHECK(smax.shape() == std::vector<int>{1, 1, 2});
  CHECK(smax.at3(0, 0, 0) == 3.0);
  CHECK(smax.at3(0, 0, 1) == 5.0);
  Tensor smean = nn::spatial_mean_per_channel(v)->value;
  CHECK(smean.at3(0, 0, 0) == doctest::Approx(2.0));
  CHECK(smean.at3(0, 0, 1) == doctest::Approx(2.0));
  Tensor cmax = nn::channel_max_per_pixel(v)->value;
  CHECK(cmax.shape() == std::vector<int>{2, 1, 1});
  CHECK(cmax.at3(0, 0, 0) == 5.0);
  CHECK(cmax.at3(1, 0, 0) == 3.0);
  Tensor cmean = nn::channel_mean_per_pixel(v)->value;
  CHECK(cmean.at3(0, 0, 0) == doctest::Approx(3.0));
  CHECK(cmean.at3(1, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("conv2d matches a hand-unrolled 1x1 and known padding behavior") {
  // 1x1 conv is a per-pixel linear map: easy to verify by hand.
  Tensor x = Tensor::zeros({1, 2, 2});
  x.at3(0, 0, 0) = 1.0;
  x.at3(0, 0, 1) = 2.0;
  x.at3(0, 1, 0) = -1.0;
  x.at3(0, 1, 1) = 0.5;
  Tensor w = Tensor::zeros({1, 1, 2, 1});
  w.at4(0, 0, 0, 0) = 3.0;
  w.at4(0, 0, 1, 0) = -2.0;
  Tensor b = Tensor::zeros({1});
  b.data()[0] = 0.25;
  nn::Var out = nn::conv2d(nn::constant(x), nn::constant(w), nn::constant(b), 1, 0);
  CHECK(out->value.shape() == std::vector<int>{1, 2, 1});
  CHECK(out->value.at3(0, 0, 0) == doctest::Approx(1.0 * 3.0 + 2.0 * -2.0 + 0.25));
  CHECK(out->value.at3(0, 1, 0) == doctest::Approx(-1.0 * 3.0 + 0.5 * -2.0 + 0.25));

  // 3x3 over a 1x1 input with pad 1: only the center tap sees data.
  Tensor x2 = Tensor::full({1, 1, 1}, 2.0);
  Tensor w2 = Tensor::zeros({3, 3, 1, 1});
  for (int i = 0; i < 9; ++i) w2.data()[i] = i + 1.0;
  Tensor b2 = Tensor::zeros({1});
  nn::Var out2 = nn::conv2d(nn::constant(x2), nn::constant(w2), nn::constant(b2), 1, 1);
  CHECK(out2->value.shape() == std::vector<int>{1, 1, 1});
  CHECK(out2->value.at3(0, 0, 0) == doctest::Approx(2.0 * 5.0));
}

TEST_CASE("conv2d gradients: stride 1 with padding") {
  ModelParams p = randn_store({{"x", {4, 4, 2}}, {"w", {3, 3, 2, 3}}, {"b", {3}}});
  expect_gradients_match(p, [](ParamBank& bank) {
    nn::Var y = nn::conv2d(bank.value("x", {4, 4, 2}), bank.value("w", {3, 3, 2, 3}),
                           bank.value("b", {3}), 1, 1);
    return mix_to_scalar(y);
  });
}

TEST_CASE("conv2d gradients: stride 2 downsampling") {
  ModelParams p = randn_store({{"x", {5, 5, 2}}, {"w", {3, 3, 2, 2}}, {"b", {2}}});
  expect_gradients_match(p, [](ParamBank& bank) {
    nn::Var y = nn::conv2d(bank.value("x", {5, 5, 2}), bank.value("w", {3, 3, 2, 2}),
                           bank.value("b", {2}), 2, 1);
    return mix_to_scalar(y);
  });
}

TEST_CASE("conv2d gradients: dilation") {
  ModelParams p = randn_store({{"x", {7, 7, 1}}, {"w", {3, 3, 1, 2}}, {"b", {2}}});
  expect_gradients_match(p, [](ParamBank& bank) {
    nn::Var y = nn::conv2d(bank.value("x", {7, 7, 1}), bank.value("w", {3, 3, 1, 2}),
                           bank.value("b", {2}), 1, 2, 2);
    return mix_to_scalar(y);
  });
}

TEST_CASE("conv2d dilation effective footprint") {
  // Dilation 2 with a 3x3 kernel covers a 5x5 span; pad 2 keeps size.
  std::mt19937_64 rng(3);
  Tensor x = Tensor::randn({6, 6, 1}, rng, 1.0);
  Tensor w = Tensor::randn({3, 3, 1, 1}, rng, 1.0);
  Tensor b = Tensor::zeros({1});
  nn::Var y = nn::conv2d(nn::constant(x), nn::constant(w), nn::constant(b), 1, 2, 2);
  CHECK(y->value.shape() == std::vector<int>{6, 6, 1});
  // Manually accumulate the center output pixel.
  double want = 0.0;
  for (int kh = 0; kh < 3; ++kh)
    for (int kw = 0; kw < 3; ++kw) {
      int iy = 3 + (kh - 1) * 2, ix = 3 + (kw - 1) * 2;
      if (iy >= 0 && iy < 6 && ix >= 0 && ix < 6) want += x.at3(iy, ix, 0) * w.at4(kh, kw, 0, 0);
    }
  CHECK(y->value.at3(3, 3, 0) == doctest::Approx(want));
}

TEST_CASE("group_norm output has zero mean and unit variance") {
  std::mt19937_64 rng(11);
  Tensor x = Tensor::randn({4, 5, 3}, rng, 2.5);
  Tensor gamma = Tensor::full({3}, 1.0);
  Tensor beta = Tensor::zeros({3});
  nn::Var y = nn::group_norm(nn::constant(x), nn::constant(gamma), nn::constant(beta));
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < y->value.numel(); ++i) {
    sum += y->value.data()[i];
    sq += y->value.data()[i] * y->value.data()[i];
  }
  const int n = y->value.numel();
  CHECK(std::abs(sum / n) < 1e-10);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("group_norm gradients") {
  ModelParams p = randn_store({{"x", {3, 3, 2}}, {"g", {2}}, {"b", {2}}});
  expect_gradients_match(p, [](ParamBank& bank) {
    nn::Var y = nn::group_norm(bank.value("x", {3, 3, 2}), bank.value("g", {2}),
                               bank.value("b", {2}));
    return mix_to_scalar(y);
  });
}

TEST_CASE("bilinear upsample preserves constant fields exactly") {
  for (int c : {1, 3}) {
    Tensor x = Tensor::full({5, 7, c}, 3.25);
    nn::Var y = nn::upsample_bilinear(nn::constant(x), 10, 14);
    REQUIRE(y->value.shape() == std::vector<int>{10, 14, c});
    for (int i = 0; i < y->value.numel(); ++i)
      CHECK(std::abs(y->value.data()[i] - 3.25) <= 1e-12);
  }
}

TEST_CASE("bilinear upsample interpolates linearly along an axis") {
  // A horizontal ramp stays a ramp under x2 upsampling (away from edges).
  Tensor x = Tensor::zeros({1, 4, 1});
  for (int i = 0; i < 4; ++i) x.at3(0, i, 0) = i;
  nn::Var y = nn::upsample_bilinear(nn::constant(x), 1, 8);
  // Interior samples land at source coords (o + 0.5) / 2 - 0.5.
  CHECK(y->value.at3(0, 2, 0) == doctest::Approx(0.75));
  CHECK(y->value.at3(0, 3, 0) == doctest::Approx(1.25));
  CHECK(y->value.at3(0, 4, 0) == doctest::Approx(1.75));
  // Edges clamp.
  CHECK(y->value.at3(0, 0, 0) == doctest::Approx(0.0));
  CHECK(y->value.at3(0, 7, 0) == doctest::Approx(3.0));
}

TEST_CASE("bilinear upsample gradients") {
  ModelParams p = randn_store({{"x", {3, 4, 2}}});
  expect_gradients_match(p, [](ParamBank& bank) {
    return mix_to_scalar(nn::upsample_bilinear(bank.value("x", {3, 4, 2}), 6, 8));
  });
}

TEST_CASE("softmax cross-entropy matches a brute-force oracle") {
  std::mt19937_64 rng(23);
  Tensor logits = Tensor::randn({2, 3, 4}, rng, 2.0);
  std::vector<int32_t> targets = {0, 3, 2, 255, 1, 0};
  nn::Var loss = nn::softmax_ce_mean(nn::constant(logits), targets, 255);

  // Oracle: direct -log softmax at each labeled pixel, averaged.
  double want = 0.0;
  int labeled = 0;
  for (int p = 0; p < 6; ++p) {
    if (targets[p] == 255) continue;
    double denom = 0.0;
    for (int c = 0; c < 4; ++c) denom += std::exp(logits.data()[p * 4 + c]);
    want += -std::log(std::exp(logits.data()[p * 4 + targets[p]]) / denom);
    ++labeled;
  }
  want /= labeled;
  CHECK(nn::scalar_of(loss) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("softmax cross-entropy is zero when every pixel is ignored") {
  Tensor logits = Tensor::full({1, 2, 3}, 4.0);
  std::vector<int32_t> targets = {255, 255};
  nn::Var loss = nn::softmax_ce_mean(nn::constant(logits), targets, 255);
  CHECK(nn::scalar_of(loss) == 0.0);
  nn::backward(loss);  // must not blow up on the empty average
}

TEST_CASE("softmax cross-entropy rejects out-of-range labels") {
  Tensor logits = Tensor::zeros({1, 1, 3});
  std::vector<int32_t> bad = {3};
  CHECK_THROWS_AS(nn::softmax_ce_mean(nn::constant(logits), bad, 255), Error);
  std::vector<int32_t> negative = {-1};
  CHECK_THROWS_AS(nn::softmax_ce_mean(nn::constant(logits), negative, 255), Error);
}

TEST_CASE("softmax cross-entropy survives extreme logits") {
  Tensor logits = Tensor::zeros({1, 1, 3});
  logits.data()[0] = 1000.0;
  logits.data()[1] = -1000.0;
  logits.data()[2] = 0.0;
  std::vector<int32_t> targets = {0};
  nn::Var loss = nn::softmax_ce_mean(nn::constant(logits), targets, 255);
  CHECK(std::isfinite(nn::scalar_of(loss)));
  CHECK(nn::scalar_of(loss) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("softmax cross-entropy gradients with ignored pixels in the mix") {
  ModelParams p = randn_store({{"logits", {2, 2, 3}}});
  std::vector<int32_t> targets = {1, 255, 0, 2};
  expect_gradients_match(p, [&](ParamBank& bank) {
    return nn::softmax_ce_mean(bank.value("logits", {2, 2, 3}), targets, 255);
  });
}

TEST_CASE("backward accumulates across shared subexpressions") {
  // f(x) = sum(x*x + x*x) -> df/dx = 4x; a graph that reuses one node twice.
  Tensor x0 = Tensor::full({1, 1, 2}, 3.0);
  ModelParams p;
  p.entries.emplace("x", x0);
  ParamBank bank(p, ParamBank::Mode::strict);
  nn::Var x = bank.value("x", {1, 1, 2});
  nn::Var sq = nn::hadamard(x, x);
  nn::Var loss = nn::sum_all(nn::add(sq, sq));
  nn::backward(loss);
  CHECK(x->grad.data()[0] == doctest::Approx(12.0));
  CHECK(x->grad.data()[1] == doctest::Approx(12.0));
}

TEST_CASE("nodes without requires_grad do not receive gradients") {
  Tensor a = Tensor::full({1, 1, 1}, 2.0);
  nn::Var c = nn::constant(a);
  nn::Var loss = nn::sum_all(nn::hadamard(c, c));
  nn::backward(loss);
  CHECK(c->grad.numel() == 0);
}

TEST_CASE("deep graph backward survives without recursion limits") {
  // A long chain would overflow the stack under naive recursive traversal.
  Tensor x0 = Tensor::full({1, 1, 1}, 1.0);
  ModelParams p;
  p.entries.emplace("x", x0);
  ParamBank bank(p, ParamBank::Mode::strict);
  nn::Var v = bank.value("x", {1, 1, 1});
  nn::Var head = v;
  for (int i = 0; i < 60000; ++i) head = nn::scale(head, 1.0);
  nn::backward(nn::sum_all(head));
  CHECK(v->grad.data()[0] == doctest::Approx(1.0));
}

TEST_CASE("parameter bank: create mode materializes, strict mode demands") {
  ModelParams p;
  {
    ParamBank bank(p, ParamBank::Mode::create, 99);
    bank.conv_weight("stem.w", 3, 3, 2, 4);
    bank.conv_bias("stem.b", 4);
    bank.norm_gamma("stem.g", 4);
    bank.norm_beta("stem.beta", 4);
  }
  CHECK(p.entries.size() == 4);
  CHECK(p.at("stem.w").shape() == std::vector<int>{3, 3, 2, 4});
  // Bias starts at zero, gain at one.
  CHECK(p.at("stem.b").data()[0] == 0.0);
  CHECK(p.at("stem.g").data()[2] == 1.0);

  ParamBank strict(p, ParamBank::Mode::strict);
  CHECK_NOTHROW(strict.conv_weight("stem.w", 3, 3, 2, 4));
  CHECK_THROWS_AS(strict.conv_bias("other.b", 4), Error);
  CHECK_THROWS_AS(strict.conv_weight("stem.w", 1, 1, 2, 4), Error);  // shape clash
}

TEST_CASE("parameter bank create mode is deterministic per seed") {
  ModelParams a, b;
  {
    ParamBank ba(a, ParamBank::Mode::create, 5);
    ba.conv_weight("w", 3, 3, 2, 2);
  }
  {
    ParamBank bb(b, ParamBank::Mode::create, 5);
    bb.conv_weight("w", 3, 3, 2, 2);
  }
  for (int i = 0; i < a.at("w").numel(); ++i)
    CHECK(a.at("w").data()[i] == b.at("w").data()[i]);
}

TEST_CASE("gradient checker flags a deliberately wrong gradient") {
  // A bogus op whose backward is off by 2x must be caught, proving the
  // checker can actually fail.
  ModelParams p = randn_store({{"x", {1, 1, 3}}});
  auto broken = [](ParamBank& bank) {
    nn::Var x = bank.value("x", {1, 1, 3});
    nn::Var doubled = nn::scale(x, 2.0);
    // Lie about the chain rule by scaling the value but pretending the
    // derivative is 1: emulate with scale-by-2 forward, scale-by-1 backward.
    nn::Var dishonest = nn::make_raw_node(
        doubled->value, {x}, [](nn::Node& self) {
          self.parents[0]->ensure_grad().add_scaled(self.grad, 1.0);
        });
    return nn::sum_all(dishonest);
  };
  GradCheckReport r = check_gradients(p, broken);
  CHECK(r.max_error > 0.4);
}
