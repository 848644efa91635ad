#include "spidermesh/encoder.hpp"

#include "spidermesh/dtm.hpp"

namespace spidermesh::enc {
namespace {

// conv 3x3 -> single-group norm -> nonlinearity
nn::Var conv_norm_act(const nn::Var& x, ParamBank& bank, const std::string& path, int ci, int co,
                      int stride) {
  nn::Var h = nn::conv2d(x, bank.conv_weight(path + ".w", 3, 3, ci, co),
                         bank.conv_bias(path + ".b", co), stride, 1);
  h = nn::group_norm(h, bank.norm_gamma(path + ".g", co), bank.norm_beta(path + ".beta", co));
  return nn::elu(h);
}

// Basic residual block: two 3x3 convs with norms, shortcut added before the
// final activation; projection shortcut whenever shape changes.
nn::Var residual_block(const nn::Var& x, ParamBank& bank, const std::string& path, int ci, int co,
                       int stride) {
  nn::Var h = conv_norm_act(x, bank, path + ".c1", ci, co, stride);
  h = nn::conv2d(h, bank.conv_weight(path + ".c2.w", 3, 3, co, co),
                 bank.conv_bias(path + ".c2.b", co), 1, 1);
  h = nn::group_norm(h, bank.norm_gamma(path + ".c2.g", co), bank.norm_beta(path + ".c2.beta", co));
  nn::Var shortcut = x;
  if (stride != 1 || ci != co) {
    shortcut = nn::conv2d(x, bank.conv_weight(path + ".sc.w", 1, 1, ci, co),
                          bank.conv_bias(path + ".sc.b", co), stride, 0);
    shortcut = nn::group_norm(shortcut, bank.norm_gamma(path + ".sc.g", co),
                              bank.norm_beta(path + ".sc.beta", co));
  }
  return nn::elu(nn::add(h, shortcut));
}

}  // namespace

nn::Var encode_stage(const nn::Var& x, const StageSpec& spec, ParamBank& bank,
                     const std::string& path, BackboneKind kind) {
  if (x->value.dim(2) != spec.in_channels)
    fail("channel-mismatch", "encode_stage at '" + path + "': input has " +
                                 std::to_string(x->value.dim(2)) + " channels, stage expects " +
                                 std::to_string(spec.in_channels));
  if (spec.block_count < 1) fail("invalid-range", "encode_stage: block_count must be >= 1");

  nn::Var h = x;
  int ci = spec.in_channels;
  for (int b = 0; b < spec.block_count; ++b) {
    const int stride = (b == 0) ? 2 : 1;
    const std::string block_path = path + ".b" + std::to_string(b);
    if (kind == BackboneKind::tiny)
      h = conv_norm_act(h, bank, block_path, ci, spec.out_channels, stride);
    else
      h = residual_block(h, bank, block_path, ci, spec.out_channels, stride);
    ci = spec.out_channels;
  }
  return h;
}

DualEncodeOut dual_encode(const nn::Var& rgb, const nn::Var& thermal, ParamBank& bank,
                          const ModelConfig& cfg) {
  if (rgb->value.dim(2) != 3)
    fail("channel-mismatch", "dual_encode: rgb input must have 3 channels");
  if (thermal->value.dim(2) != 1)
    fail("channel-mismatch", "dual_encode: thermal input must have 1 channel");

  const std::array<int, 5> blocks = block_counts_for(cfg.backbone);
  const bool fuse = cfg.variant != Variant::baseline;

  DualEncodeOut out;
  nn::Var r = rgb, t = thermal;
  for (int i = 0; i < 5; ++i) {
    StageSpec spec_r{i == 0 ? 3 : cfg.stage_channels[i - 1], cfg.stage_channels[i], blocks[i]};
    StageSpec spec_t = spec_r;
    if (i == 0) spec_t.in_channels = 1;
    const std::string si = "s" + std::to_string(i);
    r = encode_stage(r, spec_r, bank, "enc.rgb." + si, cfg.backbone);
    t = encode_stage(t, spec_t, bank, "enc.the." + si, cfg.backbone);
    nn::Var fm;
    if (fuse) {
      dtm::DtmOut refined = dtm::dtm_forward(r, t, bank, "dtm." + si, cfg.ca_reduction);
      fm = refined.fm;
      r = refined.rgb;
      t = refined.the;
    } else {
      fm = dtm::multimodal_sum(r, t);
    }
    out.rgb.push_back(r);
    out.the.push_back(t);
    if (i >= 1) out.fm.push_back(fm);
  }
  return out;
}

}  // namespace spidermesh::enc
