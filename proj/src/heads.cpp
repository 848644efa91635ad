#include "spidermesh/heads.hpp"

#include "spidermesh/encoder.hpp"
#include "spidermesh/srm.hpp"

namespace spidermesh::heads {

nn::Var classify(const nn::Var& fe, ParamBank& bank, const std::string& path, int k) {
  const int c = fe->value.dim(2);
  return nn::conv2d(fe, bank.conv_weight(path + ".w", 1, 1, c, k),
                    bank.conv_bias(path + ".b", k), 1, 0);
}

ForwardOut forward_full(const RgbtSample& sample, ParamBank& bank, const ModelConfig& cfg) {
  validate_sample(sample, cfg.num_classes);
  const int h = sample.rgb.dim(0), w = sample.rgb.dim(1);
  const bool meshed = cfg.variant == Variant::srm || cfg.variant == Variant::full;
  // The recursive meshing decoder needs the encoder's ceil-halving chain to
  // be exact doubling in reverse; the plain bilinear decoder has no such
  // constraint.
  if (meshed && (h % 32 != 0 || w % 32 != 0))
    fail("dimension-mismatch", "forward_full: meshed decoding needs dims divisible by 32, got " +
                                   std::to_string(h) + "x" + std::to_string(w));

  enc::DualEncodeOut e = enc::dual_encode(nn::constant(sample.rgb), nn::constant(sample.thermal),
                                          bank, cfg);
  nn::Var fe_rgb, fe_the;
  if (meshed) {
    fe_rgb = srm::srm_decode(e.rgb[4], e.fm, bank, "srm.rgb", cfg);
    fe_the = srm::srm_decode(e.the[4], e.fm, bank, "srm.the", cfg);
  } else {
    fe_rgb = nn::upsample_bilinear(e.rgb[4], h, w);
    fe_the = nn::upsample_bilinear(e.the[4], h, w);
  }
  ForwardOut out;
  out.main = classify(nn::add(fe_rgb, fe_the), bank, "head.rgb", cfg.num_classes);
  out.aux = classify(fe_the, bank, "head.the", cfg.num_classes);
  return out;
}

LabelMap predict_labels(const Tensor& logits) {
  const int h = logits.dim(0), w = logits.dim(1), k = logits.dim(2);
  LabelMap out;
  out.h = h;
  out.w = w;
  out.v.resize(static_cast<size_t>(h) * w);
  const double* p = logits.data();
  for (int64_t px = 0; px < static_cast<int64_t>(h) * w; ++px) {
    int best = 0;
    double best_v = p[px * k];
    for (int c = 1; c < k; ++c)
      if (p[px * k + c] > best_v) {
        best_v = p[px * k + c];
        best = c;
      }
    out.v[px] = best;
  }
  return out;
}

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParams params;
  ParamBank bank(params, ParamBank::Mode::create, seed);
  RgbtSample dummy;
  dummy.rgb = Tensor::zeros({32, 32, 3});
  dummy.thermal = Tensor::zeros({32, 32, 1});
  dummy.id = "init";
  forward_full(dummy, bank, cfg);
  return params;
}

}  // namespace spidermesh::heads
