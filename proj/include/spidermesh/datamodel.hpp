#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spidermesh/tensor.hpp"

namespace spidermesh {

// Label value meaning "no supervision at this pixel".
constexpr int32_t kIgnoreIndex = 255;

struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<int32_t> v;  // row-major, values in {0..K-1} or kIgnoreIndex

  int32_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  int32_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
};

// One aligned RGB-thermal pair, pixel values normalized to [0,1].
struct RgbtSample {
  Tensor rgb;      // (h,w,3)
  Tensor thermal;  // (h,w,1)
  std::optional<LabelMap> label;
  std::string id;
};

enum class BackboneKind { tiny, residual_small, residual_large };

// Architecture variants, cumulative in this order.
enum class Variant { baseline, dtm, srm, full };

const char* to_string(BackboneKind k);
const char* to_string(Variant v);
BackboneKind backbone_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);

struct ModelConfig {
  int num_classes = 2;
  std::array<int, 5> stage_channels = {8, 16, 32, 64, 64};
  int aspp_channels = 256;
  std::vector<int> aspp_dilations = {2, 4, 8};
  int ca_reduction = 16;
  int input_h = 480;
  int input_w = 640;
  BackboneKind backbone = BackboneKind::tiny;
  // The architecture a parameter set belongs to; needed to rebuild the
  // forward graph from a checkpoint.
  Variant variant = Variant::full;

  void validate() const;
};

// Channel widths and residual block counts per backbone kind.
std::array<int, 5> stage_channels_for(BackboneKind k);
std::array<int, 5> block_counts_for(BackboneKind k);

// Throws unless every RgbtSample invariant holds for K = k:
// matching dims, finite values, labels < k or ignore.
void validate_sample(const RgbtSample& s, int k);

}  // namespace spidermesh
