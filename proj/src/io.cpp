#include "spidermesh/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace spidermesh::io {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian");

namespace fs = std::filesystem;

namespace {

// --- small file + text helpers ---------------------------------------------

std::string slurp(const std::string& path, const char* missing_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(missing_kind, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& bytes, const char* kind) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(kind, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(kind, "short write to '" + path + "'");
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& v, const std::string& what) {
  try {
    size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    fail("parse-error", what + ": '" + v + "' is not a number");
  }
}

int to_int(const std::string& v, const std::string& what) {
  try {
    size_t used = 0;
    long n = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(n);
  } catch (const std::exception&) {
    fail("parse-error", what + ": '" + v + "' is not an integer");
  }
}

uint64_t to_u64(const std::string& v, const std::string& what) {
  try {
    size_t used = 0;
    unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    fail("parse-error", what + ": '" + v + "' is not an unsigned integer");
  }
}

bool to_bool(const std::string& v, const std::string& what) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("parse-error", what + ": '" + v + "' is not a boolean");
}

std::vector<int> to_int_list(const std::string& v, const std::string& what) {
  std::vector<int> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) out.push_back(to_int(trim(item), what));
  if (out.empty()) fail("parse-error", what + ": empty list");
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

// --- CRC32 (IEEE reflected polynomial) --------------------------------------

uint32_t crc32(const char* data, size_t n) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i)
    crc = table[(crc ^ static_cast<unsigned char>(data[i])) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

// --- Netpbm primitives ------------------------------------------------------

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(std::istringstream& in, const std::string& path) {
  std::string tok;
  while (true) {
    int c = in.get();
    if (c == EOF) fail("undecodable-image", "'" + path + "': truncated header");
    if (std::isspace(c)) continue;
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
      continue;
    }
    tok.push_back(static_cast<char>(c));
    while (true) {
      c = in.get();
      if (c == EOF || std::isspace(c)) return tok;
      tok.push_back(static_cast<char>(c));
    }
  }
}

struct PnmImage {
  int w = 0, h = 0, maxval = 0, channels = 0;
  std::vector<int> samples;  // row-major, interleaved
};

PnmImage read_pnm(const std::string& path, const char* want_magic, int channels) {
  const std::string bytes = slurp(path, "missing-file");
  std::istringstream in(bytes);
  if (pnm_token(in, path) != want_magic)
    fail("undecodable-image", "'" + path + "': not a " + want_magic + " file");
  PnmImage img;
  img.channels = channels;
  img.w = to_int(pnm_token(in, path), path);
  img.h = to_int(pnm_token(in, path), path);
  img.maxval = to_int(pnm_token(in, path), path);
  if (img.w < 1 || img.h < 1 || img.maxval < 1 || img.maxval > 65535)
    fail("undecodable-image", "'" + path + "': bad dimensions or max value");
  // pnm_token consumed exactly one whitespace byte after the max value
  const size_t offset = static_cast<size_t>(in.tellg());
  const int bytes_per = img.maxval > 255 ? 2 : 1;
  const size_t need = static_cast<size_t>(img.w) * img.h * channels * bytes_per;
  if (bytes.size() < offset + need)
    fail("undecodable-image", "'" + path + "': truncated pixel data");
  img.samples.resize(static_cast<size_t>(img.w) * img.h * channels);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
  for (size_t i = 0; i < img.samples.size(); ++i) {
    if (bytes_per == 1) {
      img.samples[i] = p[i];
    } else {
      img.samples[i] = (p[2 * i] << 8) | p[2 * i + 1];  // most significant byte first
    }
    if (img.samples[i] > img.maxval)
      fail("undecodable-image", "'" + path + "': sample exceeds max value");
  }
  return img;
}

void write_pnm(const std::string& path, const char* magic, int w, int h, int maxval,
               const std::vector<int>& samples) {
  std::string out = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) +
                    "\n" + std::to_string(maxval) + "\n";
  const int bytes_per = maxval > 255 ? 2 : 1;
  out.reserve(out.size() + samples.size() * static_cast<size_t>(bytes_per));
  for (int s : samples) {
    if (bytes_per == 2) out.push_back(static_cast<char>((s >> 8) & 0xFF));
    out.push_back(static_cast<char>(s & 0xFF));
  }
  spit(path, out, "io-write-failure");
}

int quantize(double v, int maxval) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<int>(std::lround(c * maxval));
}

}  // namespace

// --- image files ------------------------------------------------------------

void write_rgb(const std::string& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) fail("shape-mismatch", "write_rgb: tensor must be (h,w,3)");
  std::vector<int> samples(static_cast<size_t>(rgb.numel()));
  for (int64_t i = 0; i < rgb.numel(); ++i) samples[static_cast<size_t>(i)] = quantize(rgb[i], 255);
  write_pnm(path, "P6", rgb.dim(1), rgb.dim(0), 255, samples);
}

Tensor read_rgb(const std::string& path) {
  PnmImage img = read_pnm(path, "P6", 3);
  Tensor t({img.h, img.w, 3});
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<double>(img.samples[static_cast<size_t>(i)]) / img.maxval;
  return t;
}

void write_thermal(const std::string& path, const Tensor& thermal) {
  if (thermal.rank() != 3 || thermal.dim(2) != 1)
    fail("shape-mismatch", "write_thermal: tensor must be (h,w,1)");
  std::vector<int> samples(static_cast<size_t>(thermal.numel()));
  for (int64_t i = 0; i < thermal.numel(); ++i)
    samples[static_cast<size_t>(i)] = quantize(thermal[i], 65535);
  write_pnm(path, "P5", thermal.dim(1), thermal.dim(0), 65535, samples);
}

Tensor read_thermal(const std::string& path) {
  PnmImage img = read_pnm(path, "P5", 1);
  Tensor t({img.h, img.w, 1});
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<double>(img.samples[static_cast<size_t>(i)]) / img.maxval;
  return t;
}

void write_label(const std::string& path, const LabelMap& m) {
  std::vector<int> samples(m.v.size());
  for (size_t i = 0; i < m.v.size(); ++i) {
    const int32_t v = m.v[i];
    if (v != kIgnoreIndex && (v < 0 || v > 254))
      fail("out-of-range-label", "write_label: id " + std::to_string(v) + " does not fit 8 bits");
    samples[i] = v;
  }
  write_pnm(path, "P5", m.w, m.h, 255, samples);
}

void write_gray8(const std::string& path, const Tensor& v) {
  if (v.rank() != 3 || v.dim(2) != 1) fail("shape-mismatch", "write_gray8: tensor must be (h,w,1)");
  std::vector<int> samples(static_cast<size_t>(v.numel()));
  for (int64_t i = 0; i < v.numel(); ++i) samples[static_cast<size_t>(i)] = quantize(v[i], 255);
  write_pnm(path, "P5", v.dim(1), v.dim(0), 255, samples);
}

LabelMap read_label(const std::string& path) {
  PnmImage img = read_pnm(path, "P5", 1);
  if (img.maxval != 255)
    fail("undecodable-image", "'" + path + "': label files must use max value 255");
  LabelMap m;
  m.h = img.h;
  m.w = img.w;
  m.v.resize(img.samples.size());
  for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = img.samples[i];
  return m;
}

void split_composite(const std::string& pam_path, const std::string& rgb_out,
                     const std::string& thermal_out) {
  const std::string bytes = slurp(pam_path, "missing-file");
  std::istringstream in(bytes);
  if (pnm_token(in, pam_path) != "P7")
    fail("undecodable-image", "'" + pam_path + "': not a PAM file");
  int w = 0, h = 0, depth = 0, maxval = 0;
  while (true) {
    std::string key = pnm_token(in, pam_path);
    if (key == "ENDHDR") break;
    if (key == "WIDTH") w = to_int(pnm_token(in, pam_path), pam_path);
    else if (key == "HEIGHT") h = to_int(pnm_token(in, pam_path), pam_path);
    else if (key == "DEPTH") depth = to_int(pnm_token(in, pam_path), pam_path);
    else if (key == "MAXVAL") maxval = to_int(pnm_token(in, pam_path), pam_path);
    else if (key == "TUPLTYPE") pnm_token(in, pam_path);  // informational
    else fail("undecodable-image", "'" + pam_path + "': unknown header field '" + key + "'");
  }
  if (w < 1 || h < 1 || depth != 4 || maxval < 1 || maxval > 65535)
    fail("undecodable-image", "'" + pam_path + "': need a 4-channel composite");
  const size_t offset = static_cast<size_t>(in.tellg());
  const int bytes_per = maxval > 255 ? 2 : 1;
  const size_t need = static_cast<size_t>(w) * h * 4 * bytes_per;
  if (bytes.size() < offset + need)
    fail("undecodable-image", "'" + pam_path + "': truncated pixel data");

  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
  auto sample_at = [&](size_t i) {
    return bytes_per == 1 ? p[i] : (p[2 * i] << 8) | p[2 * i + 1];
  };
  Tensor rgb({h, w, 3}), thermal({h, w, 1});
  for (int64_t px = 0; px < static_cast<int64_t>(w) * h; ++px) {
    for (int c = 0; c < 3; ++c)
      rgb[px * 3 + c] = static_cast<double>(sample_at(static_cast<size_t>(px * 4 + c))) / maxval;
    thermal[px] = static_cast<double>(sample_at(static_cast<size_t>(px * 4 + 3))) / maxval;
  }
  write_rgb(rgb_out, rgb);
  write_thermal(thermal_out, thermal);
}

// --- synthetic scenes -------------------------------------------------------

void SynthSpec::validate() const {
  if (num_samples < 1) fail("invalid-range", "num_samples must be >= 1");
  if (height < 8 || width < 8) fail("invalid-range", "size must be at least 8x8");
  if (num_classes < 2) fail("invalid-range", "num_classes must be >= 2");
  if (num_classes > 255) fail("invalid-range", "num_classes must fit 8-bit labels");
  if (min_shapes < 1 || max_shapes < min_shapes)
    fail("invalid-range", "shape count range is empty");
  if (shape_r_min <= 0 || shape_r_max < shape_r_min || shape_r_max > 1)
    fail("invalid-range", "shape radius range is invalid");
  if (impairment_p < 0 || impairment_p > 1) fail("invalid-range", "impairment_p must be in [0,1]");
  if (impair_area_min < 0 || impair_area_max < impair_area_min || impair_area_max > 1)
    fail("invalid-range", "impairment area range is invalid");
  if (noise_std < 0) fail("invalid-range", "noise_std must be nonnegative");
}

namespace {

std::array<double, 3> hsv_to_rgb(double hue, double sat, double val) {
  const double h6 = hue * 6.0;
  const int i = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
  switch (i) {
    case 0: return {val, t, p};
    case 1: return {q, val, p};
    case 2: return {p, val, t};
    case 3: return {p, q, val};
    case 4: return {t, p, val};
    default: return {val, p, q};
  }
}

// Fixed per-class appearance: hue-spaced saturated colors and a rising
// thermal intensity, both well separated from the dim gray background.
// Classes are coded jointly across the two modalities.  Every class owns two
// signatures — (hue c, cool) and (hue c+1, hot) — and each painted shape
// draws one of them, so hue sets and heat sets coincide across classes and
// neither modality alone can tell classes apart; only the pixel-level
// color-temperature conjunction can, which is what cross-modal fusion buys.
std::array<double, 3> class_color(int c, int sig, int k) {
  const int hues = std::max(1, k - 1);
  return hsv_to_rgb(static_cast<double>((c - 1 + sig) % hues) / hues, 0.8, 0.85);
}

double class_thermal(int sig) { return sig == 0 ? 0.45 : 0.85; }

}  // namespace

std::vector<RgbtSample> synth_samples(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<RgbtSample> out;
  out.reserve(static_cast<size_t>(spec.num_samples));
  const int h = spec.height, w = spec.width;
  for (int n = 0; n < spec.num_samples; ++n) {
    RgbtSample s;
    s.rgb = Tensor({h, w, 3});
    s.thermal = Tensor({h, w, 1});
    LabelMap label;
    label.h = h;
    label.w = w;
    label.v.assign(static_cast<size_t>(h) * w, 0);

    // textured gray background, cool thermal floor
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double shade = 0.20 + 0.05 * std::sin(0.35 * x) * std::cos(0.25 * y);
        for (int c = 0; c < 3; ++c) s.rgb.at3(y, x, c) = shade;
        s.thermal.at3(y, x, 0) = 0.10;
      }

    const int count = spec.min_shapes +
                      static_cast<int>(rng() % static_cast<uint64_t>(spec.max_shapes -
                                                                     spec.min_shapes + 1));
    for (int i = 0; i < count; ++i) {
      const int cls = 1 + static_cast<int>(rng() % static_cast<uint64_t>(spec.num_classes - 1));
      const int sig = static_cast<int>(rng() % 2);
      const bool circle = (rng() % 2) == 0;
      const double cy = unit(rng) * h, cx = unit(rng) * w;
      const double r_span = spec.shape_r_max - spec.shape_r_min;
      const double ry = (spec.shape_r_min + r_span * unit(rng)) * h;
      const double rx = (spec.shape_r_min + r_span * unit(rng)) * w;
      const std::array<double, 3> color = class_color(cls, sig, spec.num_classes);
      const double heat = class_thermal(sig);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          bool inside;
          if (circle) {
            const double dy = (y - cy) / ry, dx = (x - cx) / rx;
            inside = dy * dy + dx * dx <= 1.0;
          } else {
            inside = std::abs(y - cy) <= ry && std::abs(x - cx) <= rx;
          }
          if (!inside) continue;
          for (int c = 0; c < 3; ++c) s.rgb.at3(y, x, c) = color[static_cast<size_t>(c)];
          s.thermal.at3(y, x, 0) = heat;
          label.at(y, x) = cls;
        }
    }

    for (int64_t i = 0; i < s.rgb.numel(); ++i)
      s.rgb[i] = std::clamp(s.rgb[i] + spec.noise_std * noise(rng), 0.0, 1.0);
    for (int64_t i = 0; i < s.thermal.numel(); ++i)
      s.thermal[i] = std::clamp(s.thermal[i] + spec.noise_std * noise(rng), 0.0, 1.0);

    // regional RGB dropout: the scene stays legible in thermal only
    if (unit(rng) < spec.impairment_p) {
      const double area = spec.impair_area_min +
                          (spec.impair_area_max - spec.impair_area_min) * unit(rng);
      const double aspect = 0.5 + 1.5 * unit(rng);
      int rh = std::clamp(static_cast<int>(std::lround(std::sqrt(area * h * w * aspect))), 1, h);
      int rw = std::clamp(static_cast<int>(std::lround(area * h * w / rh)), 1, w);
      const int top = static_cast<int>(rng() % static_cast<uint64_t>(h - rh + 1));
      const int left = static_cast<int>(rng() % static_cast<uint64_t>(w - rw + 1));
      for (int y = top; y < top + rh; ++y)
        for (int x = left; x < left + rw; ++x)
          for (int c = 0; c < 3; ++c) s.rgb.at3(y, x, c) *= 0.05;
    }

    s.label = std::move(label);
    char id[16];
    std::snprintf(id, sizeof id, "s%04d", n);
    s.id = id;
    validate_sample(s, spec.num_classes);
    out.push_back(std::move(s));
  }
  return out;
}

SplitSizes split_sizes(int n, double train_frac, double val_frac) {
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
    fail("invalid-range", "split fractions must be nonnegative and sum to at most 1");
  SplitSizes s;
  s.train = static_cast<int>(std::lround(train_frac * n));
  s.val = static_cast<int>(std::lround(val_frac * n));
  if (s.train + s.val > n) s.val = n - s.train;
  s.test = n - s.train - s.val;
  return s;
}

void generate_synthetic(const SynthSpec& spec, const std::string& root, double train_frac,
                        double val_frac) {
  const std::vector<RgbtSample> samples = synth_samples(spec);
  std::error_code ec;
  for (const char* sub : {"rgb", "thermal", "labels"}) {
    fs::create_directories(fs::path(root) / sub, ec);
    if (ec) fail("io-write-failure", "cannot create '" + root + "/" + sub + "'");
  }
  for (const RgbtSample& s : samples) {
    write_rgb((fs::path(root) / "rgb" / (s.id + ".ppm")).string(), s.rgb);
    write_thermal((fs::path(root) / "thermal" / (s.id + ".pgm")).string(), s.thermal);
    write_label((fs::path(root) / "labels" / (s.id + ".pgm")).string(), *s.label);
  }
  const SplitSizes sizes = split_sizes(spec.num_samples, train_frac, val_frac);
  auto write_split = [&](const char* name, int begin, int end) {
    std::string text;
    for (int i = begin; i < end; ++i) text += samples[static_cast<size_t>(i)].id + "\n";
    spit((fs::path(root) / (std::string(name) + ".txt")).string(), text, "io-write-failure");
  };
  write_split("train", 0, sizes.train);
  write_split("val", sizes.train, sizes.train + sizes.val);
  write_split("test", sizes.train + sizes.val, spec.num_samples);
}

std::vector<RgbtSample> load_dataset(const std::string& root, const std::string& split) {
  const std::string listing =
      slurp((fs::path(root) / (split + ".txt")).string(), "missing-file");
  std::vector<RgbtSample> out;
  std::istringstream lines(listing);
  std::string line;
  while (std::getline(lines, line)) {
    const std::string id = trim(line);
    if (id.empty()) continue;
    RgbtSample s;
    s.id = id;
    s.rgb = read_rgb((fs::path(root) / "rgb" / (id + ".ppm")).string());
    s.thermal = read_thermal((fs::path(root) / "thermal" / (id + ".pgm")).string());
    if (s.thermal.dim(0) != s.rgb.dim(0) || s.thermal.dim(1) != s.rgb.dim(1))
      fail("size-mismatch", "sample '" + id + "': thermal dims differ from rgb");
    const fs::path label_path = fs::path(root) / "labels" / (id + ".pgm");
    if (fs::exists(label_path)) {
      LabelMap m = read_label(label_path.string());
      if (m.h != s.rgb.dim(0) || m.w != s.rgb.dim(1))
        fail("size-mismatch", "sample '" + id + "': label dims differ from rgb");
      s.label = std::move(m);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// --- experiment configuration ----------------------------------------------

namespace {

void apply_kv(RunConfig& rc, const std::string& key, const std::string& value) {
  ModelConfig& m = rc.model;
  train::TrainConfig& t = rc.trainc;
  aug::AugmentConfig& a = t.aug;

  if (key == "model.num_classes") m.num_classes = to_int(value, key);
  else if (key == "model.stage_channels") {
    const std::vector<int> v = to_int_list(value, key);
    if (v.size() != 5) fail("parse-error", key + ": need exactly 5 entries");
    std::copy(v.begin(), v.end(), m.stage_channels.begin());
  } else if (key == "model.aspp_channels") m.aspp_channels = to_int(value, key);
  else if (key == "model.aspp_dilations") m.aspp_dilations = to_int_list(value, key);
  else if (key == "model.ca_reduction") m.ca_reduction = to_int(value, key);
  else if (key == "model.input_h") m.input_h = to_int(value, key);
  else if (key == "model.input_w") m.input_w = to_int(value, key);
  else if (key == "model.backbone") m.backbone = backbone_from_string(value);
  else if (key == "model.variant") m.variant = variant_from_string(value);
  else if (key == "train.lr0") t.lr0 = to_double(value, key);
  else if (key == "train.momentum") t.momentum = to_double(value, key);
  else if (key == "train.weight_decay") t.weight_decay = to_double(value, key);
  else if (key == "train.epochs") t.epochs = to_int(value, key);
  else if (key == "train.batch_size") t.batch_size = to_int(value, key);
  else if (key == "train.decay_gamma") t.decay_gamma = to_double(value, key);
  else if (key == "train.seed") t.seed = to_u64(value, key);
  else if (key == "train.mode") {
    if (value == "supervised") t.mode = train::TrainConfig::Mode::supervised;
    else if (value == "semi") t.mode = train::TrainConfig::Mode::semi;
    else fail("parse-error", key + ": unknown mode '" + value + "'");
  } else if (key == "aug.flip_p") a.flip_p = to_double(value, key);
  else if (key == "aug.crop_h") a.crop_h = to_int(value, key);
  else if (key == "aug.crop_w") a.crop_w = to_int(value, key);
  else if (key == "aug.mcutout_p") a.mcutout_p = to_double(value, key);
  else if (key == "aug.a_min") a.a_min = to_double(value, key);
  else if (key == "aug.a_max") a.a_max = to_double(value, key);
  else if (key == "aug.enable_mcutout") a.enable_mcutout = to_bool(value, key);
  else fail("unknown-key", "configuration key '" + key + "' is not recognized");
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig rc;
  std::istringstream lines(text);
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail("parse-error", "line " + std::to_string(lineno) + ": expected 'key = value'");
    apply_kv(rc, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  rc.model.validate();
  rc.trainc.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(slurp(path, "missing-file"));
}

std::string render_run_config(const RunConfig& rc) {
  const ModelConfig& m = rc.model;
  const train::TrainConfig& t = rc.trainc;
  const aug::AugmentConfig& a = t.aug;
  std::string s;
  s += "model.num_classes = " + std::to_string(m.num_classes) + "\n";
  s += "model.stage_channels = " +
       join_ints({m.stage_channels.begin(), m.stage_channels.end()}) + "\n";
  s += "model.aspp_channels = " + std::to_string(m.aspp_channels) + "\n";
  s += "model.aspp_dilations = " + join_ints(m.aspp_dilations) + "\n";
  s += "model.ca_reduction = " + std::to_string(m.ca_reduction) + "\n";
  s += "model.input_h = " + std::to_string(m.input_h) + "\n";
  s += "model.input_w = " + std::to_string(m.input_w) + "\n";
  s += std::string("model.backbone = ") + to_string(m.backbone) + "\n";
  s += std::string("model.variant = ") + to_string(m.variant) + "\n";
  s += "train.lr0 = " + fmt_double(t.lr0) + "\n";
  s += "train.momentum = " + fmt_double(t.momentum) + "\n";
  s += "train.weight_decay = " + fmt_double(t.weight_decay) + "\n";
  s += "train.epochs = " + std::to_string(t.epochs) + "\n";
  s += "train.batch_size = " + std::to_string(t.batch_size) + "\n";
  s += "train.decay_gamma = " + fmt_double(t.decay_gamma) + "\n";
  s += "train.seed = " + std::to_string(t.seed) + "\n";
  s += std::string("train.mode = ") +
       (t.mode == train::TrainConfig::Mode::semi ? "semi" : "supervised") + "\n";
  s += "aug.flip_p = " + fmt_double(a.flip_p) + "\n";
  s += "aug.crop_h = " + std::to_string(a.crop_h) + "\n";
  s += "aug.crop_w = " + std::to_string(a.crop_w) + "\n";
  s += "aug.mcutout_p = " + fmt_double(a.mcutout_p) + "\n";
  s += "aug.a_min = " + fmt_double(a.a_min) + "\n";
  s += "aug.a_max = " + fmt_double(a.a_max) + "\n";
  s += std::string("aug.enable_mcutout = ") + (a.enable_mcutout ? "true" : "false") + "\n";
  return s;
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr const char* kMagic = "spidermesh-checkpoint v";

void append_tensor_dir(std::string& header, std::vector<const Tensor*>& order,
                       const std::string& prefix, const std::map<std::string, Tensor>& entries) {
  for (const auto& [path, t] : entries) {
    header += "t " + prefix + path + " " + std::to_string(t.rank());
    for (int d = 0; d < t.rank(); ++d) header += " " + std::to_string(t.dim(d));
    header += "\n";
    order.push_back(&t);
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string header = std::string(kMagic) + std::to_string(Checkpoint::kVersion) + "\n";
  header += "epoch = " + std::to_string(ckpt.epoch) + "\n";
  header += "best_val_miou = " + fmt_double(ckpt.best_val_miou) + "\n";
  header += "rng = " + (ckpt.rng_state.empty() ? "-" : ckpt.rng_state) + "\n";
  header += render_run_config(ckpt.config);

  std::vector<const Tensor*> order;
  std::string dir;
  size_t count = 0;
  append_tensor_dir(dir, order, "p/", ckpt.params.entries);
  append_tensor_dir(dir, order, "v/", ckpt.opt.velocity);
  append_tensor_dir(dir, order, "b/", ckpt.best_params.entries);
  count = order.size();

  int64_t blob_bytes = 0;
  for (const Tensor* t : order) blob_bytes += t->numel() * 8;
  header += "tensors = " + std::to_string(count) + "\n" + dir;
  header += "blobs = " + std::to_string(blob_bytes) + "\n@\n";

  std::string bytes = header;
  bytes.reserve(bytes.size() + static_cast<size_t>(blob_bytes) + 32);
  for (const Tensor* t : order) {
    const size_t at = bytes.size();
    bytes.resize(at + static_cast<size_t>(t->numel()) * 8);
    std::memcpy(bytes.data() + at, t->data(), static_cast<size_t>(t->numel()) * 8);
  }
  char footer[32];
  std::snprintf(footer, sizeof footer, "\ncrc32 = %08x\n", crc32(bytes.data(), bytes.size()));
  bytes += footer;

  const std::string tmp = path + ".tmp";
  spit(tmp, bytes, "io-failure");
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail("io-failure", "cannot move '" + tmp + "' into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = slurp(path, "io-failure");
  const size_t hdr_end = bytes.find("\n@\n");
  if (hdr_end == std::string::npos) fail("corrupt-payload", "'" + path + "': no header terminator");
  std::istringstream header(bytes.substr(0, hdr_end + 1));

  std::string line;
  if (!std::getline(header, line)) fail("corrupt-payload", "'" + path + "': empty header");
  if (line.rfind(kMagic, 0) != 0) fail("corrupt-payload", "'" + path + "': not a checkpoint");
  if (line != std::string(kMagic) + std::to_string(Checkpoint::kVersion))
    fail("version-mismatch", "'" + path + "': got '" + line + "'");

  auto field = [&](const char* key) {
    if (!std::getline(header, line) || line.rfind(std::string(key) + " = ", 0) != 0)
      fail("corrupt-payload", "'" + path + "': expected '" + key + "'");
    return line.substr(std::strlen(key) + 3);
  };
  Checkpoint ckpt;
  ckpt.epoch = to_int(field("epoch"), "epoch");
  ckpt.best_val_miou = to_double(field("best_val_miou"), "best_val_miou");
  ckpt.rng_state = field("rng");
  if (ckpt.rng_state == "-") ckpt.rng_state.clear();

  // configuration lines, then the tensor directory
  size_t tensor_count = 0;
  while (std::getline(header, line)) {
    if (line.rfind("tensors = ", 0) == 0) {
      tensor_count = static_cast<size_t>(to_int(line.substr(10), "tensors"));
      break;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) fail("corrupt-payload", "'" + path + "': bad header line");
    try {
      apply_kv(ckpt.config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error&) {
      fail("corrupt-payload", "'" + path + "': unreadable configuration");
    }
  }

  struct Entry {
    std::string name;
    std::vector<int> shape;
  };
  std::vector<Entry> entries;
  for (size_t i = 0; i < tensor_count; ++i) {
    if (!std::getline(header, line)) fail("corrupt-payload", "'" + path + "': short directory");
    std::istringstream ss(line);
    std::string tag;
    Entry e;
    int rank = 0;
    if (!(ss >> tag >> e.name >> rank) || tag != "t" || rank < 0)
      fail("corrupt-payload", "'" + path + "': bad directory line");
    e.shape.resize(static_cast<size_t>(rank));
    for (int d = 0; d < rank; ++d)
      if (!(ss >> e.shape[static_cast<size_t>(d)]))
        fail("corrupt-payload", "'" + path + "': bad directory line");
    entries.push_back(std::move(e));
  }
  int64_t blob_bytes = 0;
  {
    if (!std::getline(header, line) || line.rfind("blobs = ", 0) != 0)
      fail("corrupt-payload", "'" + path + "': missing blob length");
    blob_bytes = to_int(line.substr(8), "blobs");
  }

  const size_t bin_start = hdr_end + 3;
  const size_t bin_end = bin_start + static_cast<size_t>(blob_bytes);
  const std::string footer_want = "\ncrc32 = ";
  if (bytes.size() < bin_end + footer_want.size() + 9)
    fail("corrupt-payload", "'" + path + "': truncated");
  if (bytes.compare(bin_end, footer_want.size(), footer_want) != 0)
    fail("corrupt-payload", "'" + path + "': missing checksum");
  uint32_t want = 0;
  try {
    size_t used = 0;
    const std::string hex = bytes.substr(bin_end + footer_want.size(), 8);
    want = static_cast<uint32_t>(std::stoul(hex, &used, 16));
    if (used != 8) throw std::invalid_argument(hex);
  } catch (const std::exception&) {
    fail("corrupt-payload", "'" + path + "': unreadable checksum");
  }
  if (crc32(bytes.data(), bin_end) != want)
    fail("corrupt-payload", "'" + path + "': checksum mismatch");

  size_t at = bin_start;
  for (const Entry& e : entries) {
    Tensor t(e.shape);
    if (at + static_cast<size_t>(t.numel()) * 8 > bin_end)
      fail("corrupt-payload", "'" + path + "': blob overruns payload");
    std::memcpy(t.data(), bytes.data() + at, static_cast<size_t>(t.numel()) * 8);
    at += static_cast<size_t>(t.numel()) * 8;
    if (e.name.rfind("p/", 0) == 0) ckpt.params.entries.emplace(e.name.substr(2), std::move(t));
    else if (e.name.rfind("v/", 0) == 0)
      ckpt.opt.velocity.emplace(e.name.substr(2), std::move(t));
    else if (e.name.rfind("b/", 0) == 0)
      ckpt.best_params.entries.emplace(e.name.substr(2), std::move(t));
    else fail("corrupt-payload", "'" + path + "': unknown tensor section '" + e.name + "'");
  }
  if (at != bin_end) fail("corrupt-payload", "'" + path + "': blob length mismatch");
  return ckpt;
}

}  // namespace spidermesh::io
