#include "spidermesh/srm.hpp"

#include <algorithm>

#include "spidermesh/dtm.hpp"

namespace spidermesh::srm {

nn::Var aspp(const nn::Var& f, const AsppSpec& spec, ParamBank& bank, const std::string& path) {
  if (spec.out_channels < 1) fail("invalid-range", "aspp: out_channels must be >= 1");
  const int ci = f->value.dim(2);
  const int co = spec.out_channels;
  std::vector<nn::Var> branches;
  branches.push_back(nn::conv2d(f, bank.conv_weight(path + ".p0.w", 1, 1, ci, co),
                                bank.conv_bias(path + ".p0.b", co), 1, 0));
  for (size_t i = 0; i < spec.dilations.size(); ++i) {
    const int d = spec.dilations[i];
    const std::string bp = path + ".d" + std::to_string(i);
    branches.push_back(nn::conv2d(f, bank.conv_weight(bp + ".w", 3, 3, ci, co),
                                  bank.conv_bias(bp + ".b", co), 1, d, d));
  }
  nn::Var cat = nn::concat_channels(branches);
  const int cc = co * static_cast<int>(branches.size());
  return nn::conv2d(cat, bank.conv_weight(path + ".proj.w", 1, 1, cc, co),
                    bank.conv_bias(path + ".proj.b", co), 1, 0);
}

nn::Var refine_step(const nn::Var& f_u, const nn::Var& f_m_prev, ParamBank& bank,
                    const std::string& path) {
  const int h = f_u->value.dim(0), w = f_u->value.dim(1), c = f_u->value.dim(2);
  if (f_m_prev->value.dim(0) != 2 * h || f_m_prev->value.dim(1) != 2 * w)
    fail("scale-mismatch", "refine_step at '" + path + "': skip feature is " +
                               Tensor::shape_str(f_m_prev->value.shape()) +
                               " but must be exactly double " +
                               Tensor::shape_str(f_u->value.shape()));
  const int cm = f_m_prev->value.dim(2);
  const int cr = std::max(1, c / 4);

  nn::Var up = nn::upsample_bilinear(f_u, 2 * h, 2 * w);
  nn::Var mask = dtm::demand_map(up, bank, path + ".sa");
  nn::Var reduced = nn::conv2d(f_m_prev, bank.conv_weight(path + ".reduce.w", 1, 1, cm, cr),
                               bank.conv_bias(path + ".reduce.b", cr), 1, 0);
  nn::Var cat = nn::concat_channels({up, nn::mul_spatial_mask(reduced, mask)});
  return nn::conv2d(cat, bank.conv_weight(path + ".fuse.w", 3, 3, c + cr, c),
                    bank.conv_bias(path + ".fuse.b", c), 1, 1);
}

nn::Var srm_decode(const nn::Var& f4, const std::vector<nn::Var>& f_m, ParamBank& bank,
                   const std::string& path, const ModelConfig& cfg) {
  if (f_m.size() < 3) fail("scale-mismatch", "srm_decode: needs three skip features");
  AsppSpec spec{cfg.aspp_dilations, cfg.aspp_channels};
  nn::Var x = aspp(f4, spec, bank, path + ".aspp");
  x = refine_step(x, f_m[2], bank, path + ".r3");
  x = refine_step(x, f_m[1], bank, path + ".r2");
  x = refine_step(x, f_m[0], bank, path + ".r1");
  return nn::upsample_bilinear(x, 4 * x->value.dim(0), 4 * x->value.dim(1));
}

}  // namespace spidermesh::srm
