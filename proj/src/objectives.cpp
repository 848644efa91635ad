#include "spidermesh/objectives.hpp"

#include <cmath>

namespace spidermesh::obj {

nn::Var ce_loss(const nn::Var& logits, const LabelMap& target) {
  if (logits->value.dim(0) != target.h || logits->value.dim(1) != target.w)
    fail("shape-mismatch", "ce_loss: logits " + Tensor::shape_str(logits->value.shape()) +
                               " vs target " + std::to_string(target.h) + "x" +
                               std::to_string(target.w));
  return nn::softmax_ce_mean(logits, target.v, kIgnoreIndex);
}

nn::Var supervised_loss(const RgbtSample& sample, ParamBank& bank, const ModelConfig& cfg) {
  if (!sample.label)
    fail("missing-label", "supervised_loss: sample '" + sample.id + "' has no label");
  heads::ForwardOut out = heads::forward_full(sample, bank, cfg);
  return nn::add(ce_loss(out.main, *sample.label), ce_loss(out.aux, *sample.label));
}

std::pair<LabelMap, LabelMap> pseudo_labels(const RgbtSample& sample, ModelParams& params,
                                            const ModelConfig& cfg) {
  // Non-trainable bank: the forward records no tape, so nothing downstream
  // can backpropagate into this prediction.
  ParamBank bank(params, ParamBank::Mode::strict, 0, /*trainable=*/false);
  heads::ForwardOut out = heads::forward_full(sample, bank, cfg);
  return {heads::predict_labels(out.main->value), heads::predict_labels(out.aux->value)};
}

nn::Var unsupervised_loss(const RgbtSample& sample, ParamBank& bank, const ModelConfig& cfg,
                          std::mt19937_64& rng, const aug::AugmentConfig& aug_cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RgbtSample weak = (unit(rng) < 0.5) ? aug::hflip(sample) : sample;

  auto [y_main, y_aux] = pseudo_labels(weak, bank.store(), cfg);

  RgbtSample strong = aug::m_cutout(weak, rng, aug_cfg.a_min, aug_cfg.a_max).first;
  heads::ForwardOut out = heads::forward_full(strong, bank, cfg);
  // Crossed supervision: each head learns from the other's prediction.
  return nn::add(ce_loss(out.main, y_aux), ce_loss(out.aux, y_main));
}

double total_loss(double l_s, double l_u) {
  if (!std::isfinite(l_s) || !std::isfinite(l_u))
    fail("non-finite-input", "total_loss: non-finite terms");
  return l_s + l_u;
}

}  // namespace spidermesh::obj
