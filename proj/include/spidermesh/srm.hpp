#pragma once

#include <string>
#include <vector>

#include "spidermesh/datamodel.hpp"
#include "spidermesh/params.hpp"

namespace spidermesh::srm {

struct AsppSpec {
  std::vector<int> dilations;  // 3x3 atrous branch rates, padding = rate
  int out_channels = 0;
};

// Atrous spatial pyramid: a 1x1 branch plus one 3x3 conv per dilation rate,
// concatenated and projected back to out_channels by a 1x1 conv.  Spatial
// dims preserved.
nn::Var aspp(const nn::Var& f, const AsppSpec& spec, ParamBank& bank, const std::string& path);

// One recursive meshing step: bilinear 2x upsample of f_u, spatial attention
// computed from the upsampled feature, 1x1 channel reduction of the skip
// feature f_m_prev, attention-weighted, concatenated, fused by a 3x3 conv
// back to f_u's channel count.  f_m_prev must be exactly double f_u's size.
nn::Var refine_step(const nn::Var& f_u, const nn::Var& f_m_prev, ParamBank& bank,
                    const std::string& path);

// Full decoder: ASPP on the deepest feature, three refine steps consuming
// f_m[2], f_m[1], f_m[0] (scales 1/16, 1/8, 1/4), then a final 4x bilinear
// upsample to full resolution.  Output channels = cfg.aspp_channels.
nn::Var srm_decode(const nn::Var& f4, const std::vector<nn::Var>& f_m, ParamBank& bank,
                   const std::string& path, const ModelConfig& cfg);

}  // namespace spidermesh::srm
