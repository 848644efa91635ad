#pragma once

#include <string>

#include "spidermesh/datamodel.hpp"
#include "spidermesh/params.hpp"

namespace spidermesh::heads {

// 1x1 conv classifier from decoder channels to k logits per pixel.
nn::Var classify(const nn::Var& fe, ParamBank& bank, const std::string& path, int k);

struct ForwardOut {
  nn::Var main;  // fused-feature head (RGB-branch classifier parameters)
  nn::Var aux;   // thermal-feature head
};

// Whole-model forward: dual encoder, per-branch decoding (recursive meshing
// over the shared multimodal skips when enabled, plain bilinear upsample
// otherwise), then main = classify(fe_rgb + fe_the) and aux = classify(fe_the)
// with per-branch classifier parameters.
ForwardOut forward_full(const RgbtSample& sample, ParamBank& bank, const ModelConfig& cfg);

// Per-pixel argmax over the last axis; ties go to the smallest class index.
LabelMap predict_labels(const Tensor& logits);

// Materializes every parameter the configured architecture uses by running
// one create-mode forward on a dummy sample; returns the populated store.
ModelParams init_params(const ModelConfig& cfg, uint64_t seed);

}  // namespace spidermesh::heads
