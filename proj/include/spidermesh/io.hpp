#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spidermesh/datamodel.hpp"
#include "spidermesh/trainer.hpp"

namespace spidermesh::io {

// --- Netpbm image files -----------------------------------------------------
// RGB is stored as 8-bit binary PPM, thermal as 16-bit binary PGM (normalized
// by the file's max value on load), labels as 8-bit binary PGM where 255
// means "ignore".

void write_rgb(const std::string& path, const Tensor& rgb);      // (h,w,3) in [0,1]
Tensor read_rgb(const std::string& path);                        // -> (h,w,3) in [0,1]
void write_thermal(const std::string& path, const Tensor& t);    // (h,w,1) in [0,1]
Tensor read_thermal(const std::string& path);                    // -> (h,w,1) in [0,1]
void write_label(const std::string& path, const LabelMap& m);    // ids <= 254
LabelMap read_label(const std::string& path);
// 8-bit grayscale dump of a (h,w,1) map in [0,1] (value = round(255*v),
// clamped); used to export demand maps for inspection.
void write_gray8(const std::string& path, const Tensor& v);

// Splits a 4-channel binary PAM composite (RGB + thermal in one file) into
// the layout above.
void split_composite(const std::string& pam_path, const std::string& rgb_out,
                     const std::string& thermal_out);

// --- synthetic scenes -------------------------------------------------------

struct SynthSpec {
  int num_samples = 16;
  int height = 64;
  int width = 64;
  int num_classes = 4;  // class 0 is background
  int min_shapes = 2;
  int max_shapes = 4;
  // Shape half-extent range as a fraction of the image side.
  double shape_r_min = 0.10;
  double shape_r_max = 0.25;
  // With probability p per sample, one region's RGB is attenuated to near
  // black while thermal is untouched.
  double impairment_p = 0.0;
  double impair_area_min = 0.1;
  double impair_area_max = 0.3;
  double noise_std = 0.02;
  uint64_t seed = 0;

  void validate() const;
};

// Scene synthesis in memory: colored/heated shapes on a textured background
// with pixel-exact labels.  Each class owns two (color, heat) signatures that
// overlap its neighbours' in either channel alone, so telling classes apart
// requires reading color and heat jointly at the pixel.  A pure function of
// the spec.
std::vector<RgbtSample> synth_samples(const SynthSpec& spec);

// (train, val, test) index boundaries for n samples — first ids train, then
// val, the remainder test.
struct SplitSizes {
  int train = 0, val = 0, test = 0;
};
SplitSizes split_sizes(int n, double train_frac, double val_frac);

// Renders synth_samples(spec) to root/{rgb,thermal,labels}/ plus
// train.txt / val.txt / test.txt.
void generate_synthetic(const SynthSpec& spec, const std::string& root, double train_frac = 0.625,
                        double val_frac = 0.25);

// Loads the samples named by root/<split>.txt, in file order.  Samples whose
// label file is absent load with label = none.
std::vector<RgbtSample> load_dataset(const std::string& root, const std::string& split);

// --- experiment configuration ----------------------------------------------

struct RunConfig {
  ModelConfig model;
  train::TrainConfig trainc;
};

// Flat `key = value` text with '#' comments; keys are namespaced
// (model.*, train.*, aug.*); unknown keys are errors.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string render_run_config(const RunConfig& cfg);

// --- checkpoints ------------------------------------------------------------

struct Checkpoint {
  static constexpr int kVersion = 1;
  RunConfig config;
  ModelParams params;
  train::OptState opt;
  int epoch = 0;
  std::string rng_state;  // serialized generator, empty = fresh
  double best_val_miou = -1.0;
  ModelParams best_params;
};

// Textual header + little-endian float64 blobs + trailing checksum; the write
// goes to a temp file first and is renamed into place.  Round trips bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace spidermesh::io
