#include "spidermesh/augment.hpp"

#include <cmath>

#include "spidermesh/autodiff.hpp"

namespace spidermesh::aug {
namespace {

void check_range(double a_min, double a_max) {
  if (a_min < 0.0 || a_max < a_min || a_max >= 1.0)
    fail("invalid-range", "cutout area bounds must satisfy 0 <= a_min <= a_max < 1");
}

// Uniformly draws a rectangle whose area ratio provably lies in
// [a_min, a_max]: enumerate the heights for which some legal width exists,
// then draw height, width, and position.
CutoutMask draw_rect(int h, int w, std::mt19937_64& rng, double a_min, double a_max,
                     double fill) {
  const double total = static_cast<double>(h) * w;
  std::vector<std::pair<int, std::pair<int, int>>> feasible;  // (rh, [w_lo, w_hi])
  for (int rh = 1; rh <= h; ++rh) {
    const int w_lo = std::max(1, static_cast<int>(std::ceil(a_min * total / rh)));
    const int w_hi = std::min(w, static_cast<int>(std::floor(a_max * total / rh)));
    if (w_lo <= w_hi) feasible.push_back({rh, {w_lo, w_hi}});
  }
  if (feasible.empty())
    fail("invalid-range", "no rectangle fits the requested cutout area bounds");

  std::uniform_int_distribution<size_t> pick(0, feasible.size() - 1);
  const auto& [rh, w_range] = feasible[pick(rng)];
  std::uniform_int_distribution<int> pick_w(w_range.first, w_range.second);
  const int rw = pick_w(rng);
  std::uniform_int_distribution<int> pick_top(0, h - rh);
  std::uniform_int_distribution<int> pick_left(0, w - rw);
  return {pick_top(rng), pick_left(rng), rh, rw, fill};
}

void fill_rect(Tensor& t, const CutoutMask& m) {
  const int c = t.dim(2);
  for (int y = m.top; y < m.top + m.height; ++y)
    for (int x = m.left; x < m.left + m.width; ++x)
      for (int ch = 0; ch < c; ++ch) t.at3(y, x, ch) = m.fill;
}

Tensor mirror_lr(const Tensor& t) {
  const int h = t.dim(0), w = t.dim(1), c = t.dim(2);
  Tensor out({h, w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) out.at3(y, x, ch) = t.at3(y, w - 1 - x, ch);
  return out;
}

Tensor crop(const Tensor& t, int top, int left, int ch_, int cw) {
  const int c = t.dim(2);
  Tensor out({ch_, cw, c});
  for (int y = 0; y < ch_; ++y)
    for (int x = 0; x < cw; ++x)
      for (int k = 0; k < c; ++k) out.at3(y, x, k) = t.at3(top + y, left + x, k);
  return out;
}

// Nearest-neighbor index for resizing `in` samples to `out` positions.
int nearest_src(int o, int in, int out) {
  const int i = static_cast<int>(std::floor((o + 0.5) * in / static_cast<double>(out)));
  return std::min(std::max(i, 0), in - 1);
}

}  // namespace

std::pair<RgbtSample, CutoutMask> m_cutout(const RgbtSample& s, std::mt19937_64& rng,
                                           double a_min, double a_max) {
  check_range(a_min, a_max);
  RgbtSample out = s;
  if (a_max <= 0.0) return {out, CutoutMask{}};
  CutoutMask m = draw_rect(s.rgb.dim(0), s.rgb.dim(1), rng, a_min, a_max, 0.0);
  fill_rect(out.rgb, m);
  return {out, m};
}

RgbtSample cutout(const RgbtSample& s, std::mt19937_64& rng, double a_min, double a_max) {
  check_range(a_min, a_max);
  RgbtSample out = s;
  if (a_max <= 0.0) return out;
  CutoutMask m = draw_rect(s.rgb.dim(0), s.rgb.dim(1), rng, a_min, a_max, 0.0);
  fill_rect(out.rgb, m);
  fill_rect(out.thermal, m);
  return out;
}

RgbtSample hflip(const RgbtSample& s) {
  RgbtSample out = s;
  out.rgb = mirror_lr(s.rgb);
  out.thermal = mirror_lr(s.thermal);
  if (s.label) {
    const int h = s.label->h, w = s.label->w;
    LabelMap flipped = *s.label;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) flipped.at(y, x) = s.label->at(y, w - 1 - x);
    out.label = std::move(flipped);
  }
  return out;
}

RgbtSample augment_pipeline(const RgbtSample& s, std::mt19937_64& rng, const AugmentConfig& cfg) {
  RgbtSample out = s;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  if (cfg.flip_p > 0.0 && unit(rng) < cfg.flip_p) out = hflip(out);

  if (cfg.crop_h > 0 && cfg.crop_w > 0) {
    const int h = out.rgb.dim(0), w = out.rgb.dim(1);
    if (cfg.crop_h > h || cfg.crop_w > w)
      fail("crop-larger-than-image", "crop " + std::to_string(cfg.crop_h) + "x" +
                                         std::to_string(cfg.crop_w) + " exceeds image " +
                                         std::to_string(h) + "x" + std::to_string(w));
    std::uniform_int_distribution<int> pick_top(0, h - cfg.crop_h);
    std::uniform_int_distribution<int> pick_left(0, w - cfg.crop_w);
    const int top = pick_top(rng), left = pick_left(rng);

    // One shared selection: crop every plane identically, then resize back
    // (bilinear for continuous planes, nearest for the label).
    out.rgb = nn::upsample_bilinear(
                  nn::constant(crop(out.rgb, top, left, cfg.crop_h, cfg.crop_w)), h, w)
                  ->value;
    out.thermal = nn::upsample_bilinear(
                      nn::constant(crop(out.thermal, top, left, cfg.crop_h, cfg.crop_w)), h, w)
                      ->value;
    if (out.label) {
      LabelMap resized;
      resized.h = h;
      resized.w = w;
      resized.v.resize(static_cast<size_t>(h) * w);
      for (int y = 0; y < h; ++y) {
        const int sy = top + nearest_src(y, cfg.crop_h, h);
        for (int x = 0; x < w; ++x)
          resized.at(y, x) = out.label->at(sy, left + nearest_src(x, cfg.crop_w, w));
      }
      out.label = std::move(resized);
    }
  }

  if (cfg.enable_mcutout && cfg.mcutout_p > 0.0 && unit(rng) < cfg.mcutout_p)
    out = m_cutout(out, rng, cfg.a_min, cfg.a_max).first;
  return out;
}

}  // namespace spidermesh::aug
