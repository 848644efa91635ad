#include "spidermesh/datamodel.hpp"

#include <cmath>

namespace spidermesh {

const char* to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::tiny: return "tiny";
    case BackboneKind::residual_small: return "residual-small";
    case BackboneKind::residual_large: return "residual-large";
  }
  return "?";
}

const char* to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::dtm: return "+dtm";
    case Variant::srm: return "+srm";
    case Variant::full: return "+mcutout-full";
  }
  return "?";
}

BackboneKind backbone_from_string(const std::string& s) {
  if (s == "tiny") return BackboneKind::tiny;
  if (s == "residual-small") return BackboneKind::residual_small;
  if (s == "residual-large") return BackboneKind::residual_large;
  fail("invalid-range", "unknown backbone kind '" + s + "'");
}

Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "+dtm") return Variant::dtm;
  if (s == "+srm") return Variant::srm;
  if (s == "+mcutout-full") return Variant::full;
  fail("invalid-range", "unknown variant '" + s + "'");
}

void ModelConfig::validate() const {
  if (num_classes < 2) fail("invalid-range", "num_classes must be >= 2");
  if (aspp_dilations.empty()) fail("invalid-range", "aspp_dilations must be nonempty");
  for (int c : stage_channels)
    if (c < 1) fail("invalid-range", "stage_channels entries must be positive");
  if (aspp_channels < 1) fail("invalid-range", "aspp_channels must be positive");
  if (ca_reduction < 1) fail("invalid-range", "ca_reduction must be positive");
  if (input_h < 1 || input_w < 1) fail("invalid-range", "input size must be positive");
}

std::array<int, 5> stage_channels_for(BackboneKind k) {
  switch (k) {
    case BackboneKind::tiny: return {8, 16, 32, 64, 64};
    case BackboneKind::residual_small: return {16, 32, 64, 128, 128};
    case BackboneKind::residual_large: return {32, 64, 128, 256, 256};
  }
  return {};
}

std::array<int, 5> block_counts_for(BackboneKind k) {
  switch (k) {
    case BackboneKind::tiny: return {1, 1, 1, 1, 1};
    case BackboneKind::residual_small: return {1, 2, 2, 2, 2};
    case BackboneKind::residual_large: return {1, 3, 4, 6, 3};
  }
  return {};
}

void validate_sample(const RgbtSample& s, int k) {
  if (s.rgb.rank() != 3 || s.rgb.dim(2) != 3)
    fail("dimension-mismatch", "sample '" + s.id + "': rgb must be (h,w,3)");
  if (s.thermal.rank() != 3 || s.thermal.dim(2) != 1)
    fail("dimension-mismatch", "sample '" + s.id + "': thermal must be (h,w,1)");
  const int h = s.rgb.dim(0), w = s.rgb.dim(1);
  if (s.thermal.dim(0) != h || s.thermal.dim(1) != w)
    fail("dimension-mismatch", "sample '" + s.id + "': thermal dims " +
                                   std::to_string(s.thermal.dim(0)) + "x" +
                                   std::to_string(s.thermal.dim(1)) + " differ from rgb " +
                                   std::to_string(h) + "x" + std::to_string(w));
  if (!s.rgb.all_finite()) fail("non-finite-value", "sample '" + s.id + "': rgb contains NaN/Inf");
  if (!s.thermal.all_finite())
    fail("non-finite-value", "sample '" + s.id + "': thermal contains NaN/Inf");
  if (s.label) {
    const LabelMap& lm = *s.label;
    if (lm.h != h || lm.w != w)
      fail("dimension-mismatch", "sample '" + s.id + "': label dims differ from rgb");
    for (int32_t v : lm.v)
      if (v != kIgnoreIndex && (v < 0 || v >= k))
        fail("out-of-range-label",
             "sample '" + s.id + "': label value " + std::to_string(v) + " with K=" + std::to_string(k));
  }
}

}  // namespace spidermesh
