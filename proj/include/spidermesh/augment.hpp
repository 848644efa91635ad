#pragma once

#include <random>
#include <utility>

#include "spidermesh/datamodel.hpp"

namespace spidermesh::aug {

struct CutoutMask {
  int top = 0, left = 0, height = 0, width = 0;
  double fill = 0.0;
};

struct AugmentConfig {
  double flip_p = 0.5;
  // 0 disables cropping; otherwise crop to (crop_h, crop_w) then resize back.
  int crop_h = 0;
  int crop_w = 0;
  double mcutout_p = 0.5;
  double a_min = 0.1;  // rectangle area as a fraction of the image
  double a_max = 0.4;
  bool enable_mcutout = true;
};

// Masks one uniformly drawn rectangle (area ratio in [a_min, a_max]) in the
// RGB planes only, filling with black; thermal and label are untouched.
// a_max == 0 is the empty mask: the sample is returned unchanged.
std::pair<RgbtSample, CutoutMask> m_cutout(const RgbtSample& s, std::mt19937_64& rng,
                                           double a_min, double a_max);

// Symmetric variant: the same rectangle blanks both RGB and thermal.
// Labels are never masked.
RgbtSample cutout(const RgbtSample& s, std::mt19937_64& rng, double a_min, double a_max);

// Mirrors all planes (and the label, if present) left-right.
RgbtSample hflip(const RgbtSample& s);

// Training pipeline: horizontal flip (p = flip_p), random crop + resize back
// (bilinear for images, nearest for labels), then m_cutout with probability
// mcutout_p when enabled.
RgbtSample augment_pipeline(const RgbtSample& s, std::mt19937_64& rng, const AugmentConfig& cfg);

}  // namespace spidermesh::aug
