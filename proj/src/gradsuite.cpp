#include "spidermesh/gradsuite.hpp"

#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "spidermesh/dtm.hpp"
#include "spidermesh/heads.hpp"
#include "spidermesh/objectives.hpp"
#include "spidermesh/srm.hpp"

namespace spidermesh {
namespace {

// Deterministic, non-degenerate scalar reduction: a fixed sin-weighted sum,
// scaled by 1/numel so the probe loss is O(1) regardless of output size and
// central differences keep their significant digits.
nn::Var mix_to_scalar(const nn::Var& v) {
  Tensor w(v->value.shape());
  for (size_t i = 0; i < w.numel(); ++i) {
    w[i] = 0.25 + 0.5 * std::sin(1.0 + 0.37 * static_cast<double>(i));
  }
  nn::Var weighted = nn::hadamard(v, nn::constant(std::move(w)));
  return nn::scale(nn::sum_all(weighted), 1.0 / static_cast<double>(v->value.numel()));
}

// Runs `op` once against a create-mode bank so every parameter and probed
// input it touches lands in the store, then overwrites the probed inputs with
// seeded Gaussian data.  The checker later sweeps the whole store, inputs
// included.
template <typename Fn>
ModelParams materialize(Fn&& op, const std::vector<std::pair<std::string, std::vector<int>>>& ins,
                        uint64_t seed) {
  ModelParams p;
  ParamBank bank(p, ParamBank::Mode::create, seed);
  op(bank);
  std::mt19937_64 rng(seed * 7919 + 1);
  for (const auto& [path, shape] : ins) {
    p.at(path) = Tensor::randn(shape, rng, 1.0);
  }
  return p;
}

GradSuiteCase check(const std::string& name, ModelParams params,
                    const std::function<nn::Var(ParamBank&)>& build, double eps) {
  return {name, check_gradients(params, build, eps)};
}

GradSuiteCase case_dtm_forward(double eps) {
  auto op = [](ParamBank& b) {
    dtm::DtmOut out = dtm::dtm_forward(b.value("in.rgb", {6, 6, 3}), b.value("in.the", {6, 6, 3}),
                                       b, "m", 2);
    return nn::add(nn::add(mix_to_scalar(out.rgb), mix_to_scalar(out.the)),
                   mix_to_scalar(out.fm));
  };
  ModelParams p = materialize(op, {{"in.rgb", {6, 6, 3}}, {"in.the", {6, 6, 3}}}, 11);
  return check("dtm_forward", std::move(p), op, eps);
}

GradSuiteCase case_aspp(double eps) {
  srm::AsppSpec spec;
  spec.dilations = {1, 2, 3};
  spec.out_channels = 6;
  auto op = [spec](ParamBank& b) {
    return mix_to_scalar(srm::aspp(b.value("in.f", {4, 4, 5}), spec, b, "a"));
  };
  ModelParams p = materialize(op, {{"in.f", {4, 4, 5}}}, 23);
  return check("aspp", std::move(p), op, eps);
}

GradSuiteCase case_refine_step(double eps) {
  auto op = [](ParamBank& b) {
    return mix_to_scalar(
        srm::refine_step(b.value("in.fu", {3, 3, 4}), b.value("in.fm", {6, 6, 3}), b, "r"));
  };
  ModelParams p = materialize(op, {{"in.fu", {3, 3, 4}}, {"in.fm", {6, 6, 3}}}, 37);
  return check("refine_step", std::move(p), op, eps);
}

GradSuiteCase case_srm_decode(double eps) {
  ModelConfig cfg;
  cfg.aspp_channels = 4;
  cfg.aspp_dilations = {1, 2};
  auto op = [cfg](ParamBank& b) {
    std::vector<nn::Var> fm = {b.value("in.fm0", {8, 8, 2}), b.value("in.fm1", {4, 4, 3}),
                               b.value("in.fm2", {2, 2, 3})};
    return mix_to_scalar(srm::srm_decode(b.value("in.f4", {1, 1, 4}), fm, b, "d", cfg));
  };
  ModelParams p = materialize(op,
                              {{"in.f4", {1, 1, 4}},
                               {"in.fm0", {8, 8, 2}},
                               {"in.fm1", {4, 4, 3}},
                               {"in.fm2", {2, 2, 3}}},
                              41);
  return check("srm_decode", std::move(p), op, eps);
}

GradSuiteCase case_classify(double eps) {
  auto op = [](ParamBank& b) {
    return mix_to_scalar(heads::classify(b.value("in.fe", {5, 7, 4}), b, "h", 3));
  };
  ModelParams p = materialize(op, {{"in.fe", {5, 7, 4}}}, 53);
  return check("classify", std::move(p), op, eps);
}

GradSuiteCase case_supervised_loss(double eps) {
  // Whole-model composition on an 8x8 sample.  The cross-fused variant keeps
  // the graph deep (encoder, attention, demand fusion, both heads) without the
  // meshed decoder's input-size constraint.
  ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.stage_channels = {2, 3, 3, 4, 4};
  cfg.ca_reduction = 2;
  cfg.input_h = 8;
  cfg.input_w = 8;
  cfg.backbone = BackboneKind::tiny;
  cfg.variant = Variant::dtm;
  cfg.validate();

  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RgbtSample s;
  s.id = "probe";
  s.rgb = Tensor::zeros({8, 8, 3});
  s.thermal = Tensor::zeros({8, 8, 1});
  for (size_t i = 0; i < s.rgb.numel(); ++i) s.rgb[i] = unit(rng);
  for (size_t i = 0; i < s.thermal.numel(); ++i) s.thermal[i] = unit(rng);
  LabelMap lab;
  lab.h = 8;
  lab.w = 8;
  lab.v.resize(64);
  for (auto& v : lab.v) v = static_cast<int32_t>(rng() % 3);
  lab.v[5] = kIgnoreIndex;  // the masked-pixel path must stay differentiable
  s.label = lab;
  validate_sample(s, cfg.num_classes);

  ModelParams p = heads::init_params(cfg, 61);
  auto op = [s, cfg](ParamBank& b) { return obj::supervised_loss(s, b, cfg); };
  return check("supervised_loss", std::move(p), op, eps);
}

}  // namespace

std::vector<GradSuiteCase> run_gradient_suite(double eps) {
  std::vector<GradSuiteCase> out;
  out.push_back(case_dtm_forward(eps));
  out.push_back(case_aspp(eps));
  out.push_back(case_refine_step(eps));
  out.push_back(case_srm_decode(eps));
  out.push_back(case_classify(eps));
  out.push_back(case_supervised_loss(eps));
  return out;
}

}  // namespace spidermesh
