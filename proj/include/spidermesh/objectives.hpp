#pragma once

#include <random>
#include <utility>

#include "spidermesh/augment.hpp"
#include "spidermesh/heads.hpp"

namespace spidermesh::obj {

struct LossReport {
  double l_s = 0.0;
  double l_u = 0.0;
  double total = 0.0;
};

// Mean cross-entropy over the pixels whose target is not the ignore value;
// zero if every pixel is ignored.
nn::Var ce_loss(const nn::Var& logits, const LabelMap& target);

// CE(label, main head) + CE(label, aux head) on one labeled sample.
nn::Var supervised_loss(const RgbtSample& sample, ParamBank& bank, const ModelConfig& cfg);

// Argmax labels of both heads on the sample as given, no gradient taped:
// (main-head labels, aux-head labels).  Callers apply weak augmentation
// before invoking.
std::pair<LabelMap, LabelMap> pseudo_labels(const RgbtSample& sample, ModelParams& params,
                                            const ModelConfig& cfg);

// Cross-modal pseudo supervision on one unlabeled sample: a shared weak view
// (horizontal flip, p = 1/2) yields pseudo labels from both heads; a strong
// view masks a rectangle out of the weak RGB only; one forward on the strong
// view is then scored with the heads crossed — the fused head against the
// thermal head's labels and vice versa.
nn::Var unsupervised_loss(const RgbtSample& sample, ParamBank& bank, const ModelConfig& cfg,
                          std::mt19937_64& rng, const aug::AugmentConfig& aug_cfg);

// The training objective is the plain unweighted sum.
double total_loss(double l_s, double l_u);

}  // namespace spidermesh::obj
