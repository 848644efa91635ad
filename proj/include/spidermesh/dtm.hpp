#pragma once

#include <map>
#include <string>

#include "spidermesh/autodiff.hpp"
#include "spidermesh/params.hpp"

namespace spidermesh::dtm {

// Demand-guided target masking: each modality denoises itself channel-wise,
// then requests complementary features from the other modality where its own
// spatial demand map says they are needed.

// Per-channel gains in (0,1): spatial max-pool and mean-pool, each through a
// shared two-layer bottleneck (ratio `reduction`, clamped to keep >= 1 hidden
// unit), summed, sigmoid.  Parameters under `path`: w1/b1/w2/b2.
nn::Var channel_attention(const nn::Var& f, ParamBank& bank, const std::string& path,
                          int reduction);

// f scaled by its channel attention; shape preserved.
nn::Var channel_denoise(const nn::Var& f, ParamBank& bank, const std::string& path,
                        int reduction);

// Per-pixel demand in (0,1): channel max and mean stacked to (h,w,2), a 7x7
// conv (pad 3, one output channel), sigmoid.  Parameters under `path`: w/b.
nn::Var demand_map(const nn::Var& fc, ParamBank& bank, const std::string& path);

// While a sink is installed, every demand_map evaluation records its output
// under its parameter path (inference visualization hook).  Single-threaded.
void set_demand_capture(std::map<std::string, Tensor>* sink);

// fc_self + demand(fc_self) * fc_other, the "request" fusion.  The demand
// map's parameters live under `path`.
nn::Var demand_guided_fuse(const nn::Var& fc_self, const nn::Var& fc_other, ParamBank& bank,
                           const std::string& path);

// Raw-input fusion by summation.
nn::Var multimodal_sum(const nn::Var& f_rgb, const nn::Var& f_the);

struct DtmOut {
  nn::Var rgb;  // refined RGB feature
  nn::Var the;  // refined thermal feature
  nn::Var fm;   // sum of the raw inputs
};

// Full module: both modalities denoised (independent channel attentions),
// cross-fused (independent demand maps), plus the raw multimodal sum.
DtmOut dtm_forward(const nn::Var& f_rgb, const nn::Var& f_the, ParamBank& bank,
                   const std::string& path, int reduction);

}  // namespace spidermesh::dtm
