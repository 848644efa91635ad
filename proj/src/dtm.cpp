#include "spidermesh/dtm.hpp"

#include <algorithm>

namespace spidermesh::dtm {
namespace {

std::map<std::string, Tensor>* g_demand_sink = nullptr;

// Two-layer bottleneck applied to a (1,1,c) pooled vector; weights shared
// between the max- and mean-pool paths by construction (same bank paths).
nn::Var bottleneck(const nn::Var& pooled, ParamBank& bank, const std::string& path, int c,
                   int hidden) {
  nn::Var h = nn::conv2d(pooled, bank.conv_weight(path + ".w1", 1, 1, c, hidden),
                         bank.conv_bias(path + ".b1", hidden), 1, 0);
  h = nn::elu(h);
  return nn::conv2d(h, bank.conv_weight(path + ".w2", 1, 1, hidden, c),
                    bank.conv_bias(path + ".b2", c), 1, 0);
}

}  // namespace

nn::Var channel_attention(const nn::Var& f, ParamBank& bank, const std::string& path,
                          int reduction) {
  const int c = f->value.dim(2);
  const int hidden = std::max(1, c / reduction);
  nn::Var from_max = bottleneck(nn::spatial_max_per_channel(f), bank, path, c, hidden);
  nn::Var from_mean = bottleneck(nn::spatial_mean_per_channel(f), bank, path, c, hidden);
  return nn::sigmoid(nn::add(from_max, from_mean));
}

nn::Var channel_denoise(const nn::Var& f, ParamBank& bank, const std::string& path,
                        int reduction) {
  return nn::mul_channel_gain(f, channel_attention(f, bank, path, reduction));
}

nn::Var demand_map(const nn::Var& fc, ParamBank& bank, const std::string& path) {
  nn::Var stats = nn::concat_channels({nn::channel_max_per_pixel(fc), nn::channel_mean_per_pixel(fc)});
  nn::Var mask = nn::sigmoid(nn::conv2d(stats, bank.conv_weight(path + ".w", 7, 7, 2, 1),
                                        bank.conv_bias(path + ".b", 1), 1, 3));
  if (g_demand_sink != nullptr) g_demand_sink->insert_or_assign(path, mask->value);
  return mask;
}

void set_demand_capture(std::map<std::string, Tensor>* sink) { g_demand_sink = sink; }

nn::Var demand_guided_fuse(const nn::Var& fc_self, const nn::Var& fc_other, ParamBank& bank,
                           const std::string& path) {
  if (!fc_self->value.same_shape(fc_other->value))
    fail("shape-mismatch", "demand_guided_fuse: self " + Tensor::shape_str(fc_self->value.shape()) +
                               " vs other " + Tensor::shape_str(fc_other->value.shape()));
  return nn::add(fc_self, nn::mul_spatial_mask(fc_other, demand_map(fc_self, bank, path)));
}

nn::Var multimodal_sum(const nn::Var& f_rgb, const nn::Var& f_the) {
  if (!f_rgb->value.same_shape(f_the->value))
    fail("shape-mismatch", "multimodal_sum: shapes differ");
  return nn::add(f_rgb, f_the);
}

DtmOut dtm_forward(const nn::Var& f_rgb, const nn::Var& f_the, ParamBank& bank,
                   const std::string& path, int reduction) {
  if (!f_rgb->value.same_shape(f_the->value))
    fail("shape-mismatch", "dtm_forward: shapes differ");
  nn::Var fc_rgb = channel_denoise(f_rgb, bank, path + ".rgb.ca", reduction);
  nn::Var fc_the = channel_denoise(f_the, bank, path + ".the.ca", reduction);
  DtmOut out;
  out.rgb = demand_guided_fuse(fc_rgb, fc_the, bank, path + ".rgb.sa");
  out.the = demand_guided_fuse(fc_the, fc_rgb, bank, path + ".the.sa");
  out.fm = multimodal_sum(f_rgb, f_the);
  return out;
}

}  // namespace spidermesh::dtm
