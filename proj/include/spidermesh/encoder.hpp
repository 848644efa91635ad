#pragma once

#include <string>
#include <vector>

#include "spidermesh/datamodel.hpp"
#include "spidermesh/params.hpp"

namespace spidermesh::enc {

struct StageSpec {
  int in_channels = 0;
  int out_channels = 0;
  int block_count = 1;  // first block downsamples by 2, the rest keep scale
};

// One encoder stage: halves each spatial axis (ceil) and maps channels
// in -> out.  tiny stages are plain conv/norm/nonlinearity blocks; residual
// backbones use basic residual blocks with projection shortcuts.
nn::Var encode_stage(const nn::Var& x, const StageSpec& spec, ParamBank& bank,
                     const std::string& path, BackboneKind kind);

struct DualEncodeOut {
  // Per-stage outputs fed forward within each branch, scales 1/2 .. 1/32.
  // With cross-modal fusion enabled these are the DTM-refined features.
  std::vector<nn::Var> rgb;
  std::vector<nn::Var> the;
  // Multimodal sums of the raw stage outputs for stages 1..4 (the decoder
  // consumes the first three as skip inputs).
  std::vector<nn::Var> fm;
};

// Five-stage dual-branch encoder.  RGB input (h,w,3), thermal (h,w,1).
// A fusion module sits after every stage when cfg.variant enables it;
// its refined features are what the next stage consumes.
DualEncodeOut dual_encode(const nn::Var& rgb, const nn::Var& thermal, ParamBank& bank,
                          const ModelConfig& cfg);

}  // namespace spidermesh::enc
