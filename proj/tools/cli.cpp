#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spidermesh/dtm.hpp"
#include "spidermesh/error.hpp"
#include "spidermesh/gradsuite.hpp"
#include "spidermesh/heads.hpp"
#include "spidermesh/io.hpp"
#include "spidermesh/trainer.hpp"

namespace fs = std::filesystem;
using namespace spidermesh;

namespace {

// "64x48" -> (64, 48)
std::pair<int, int> parse_size(const std::string& s) {
  const size_t x = s.find('x');
  if (x == std::string::npos || x == 0 || x + 1 >= s.size())
    fail("parse-error", "--size expects HxW, got '" + s + "'");
  try {
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
  } catch (const std::exception&) {
    fail("parse-error", "--size expects HxW, got '" + s + "'");
  }
}

// "0.1,0.3" -> (0.1, 0.3)
std::pair<double, double> parse_area(const std::string& s) {
  const size_t c = s.find(',');
  if (c == std::string::npos || c == 0 || c + 1 >= s.size())
    fail("parse-error", "--impair-area expects MIN,MAX, got '" + s + "'");
  try {
    return {std::stod(s.substr(0, c)), std::stod(s.substr(c + 1))};
  } catch (const std::exception&) {
    fail("parse-error", "--impair-area expects MIN,MAX, got '" + s + "'");
  }
}

std::vector<uint64_t> parse_seeds(const std::string& s) {
  std::vector<uint64_t> out;
  size_t pos = 0;
  while (pos <= s.size()) {
    const size_t c = s.find(',', pos);
    const std::string tok = s.substr(pos, c == std::string::npos ? std::string::npos : c - pos);
    try {
      size_t used = 0;
      out.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      fail("parse-error", "--seeds expects comma-separated integers, got '" + s + "'");
    }
    if (c == std::string::npos) break;
    pos = c + 1;
  }
  if (out.empty()) fail("parse-error", "--seeds expects at least one seed");
  return out;
}

std::vector<RgbtSample> load_split_or_empty(const std::string& root, const std::string& split) {
  try {
    return io::load_dataset(root, split);
  } catch (const Error& e) {
    if (e.kind() == "missing-file") return {};
    throw;
  }
}

io::Checkpoint snapshot(const io::RunConfig& rc, train::Trainer& tr) {
  io::Checkpoint ck;
  ck.config = rc;
  ck.params = tr.params();
  ck.opt = tr.opt();
  ck.epoch = tr.epoch();
  ck.rng_state = tr.rng_state();
  ck.best_val_miou = tr.best_val_miou();
  ck.best_params = tr.best_params();
  return ck;
}

void print_epoch(const train::EpochLog& el) {
  std::cout << "epoch=" << el.epoch << " lr=" << std::setprecision(6) << el.lr
            << " l_s=" << el.l_s << " l_u=" << el.l_u << " val_miou=" << el.val_miou << "\n";
}

// Per-class IoU table plus both heads' means, with the dropped modality (if
// any) zeroed out.
void print_eval(ModelParams& params, const std::vector<RgbtSample>& data,
                train::EvalModality modality, const ModelConfig& cfg) {
  const int k = cfg.num_classes;
  train::ConfusionMatrix cm_main(k), cm_aux(k);
  for (const RgbtSample& orig : data) {
    if (!orig.label) fail("missing-label", "sample '" + orig.id + "' has no ground truth");
    RgbtSample s = orig;
    if (modality == train::EvalModality::rgb_only) s.thermal.fill(0.0);
    if (modality == train::EvalModality::thermal_only) s.rgb.fill(0.0);
    ParamBank bank(params, ParamBank::Mode::strict, 0, /*trainable=*/false);
    heads::ForwardOut out = heads::forward_full(s, bank, cfg);
    train::accumulate(cm_main, heads::predict_labels(out.main->value), *orig.label);
    train::accumulate(cm_aux, heads::predict_labels(out.aux->value), *orig.label);
  }
  const train::MiouResult main_r = train::miou(cm_main);
  const train::MiouResult aux_r = train::miou(cm_aux);
  std::printf("%-8s %12s %12s\n", "class", "IoU(main)", "IoU(aux)");
  for (int c = 0; c < k; ++c) {
    std::printf("%-8d", c);
    if (main_r.defined[static_cast<size_t>(c)])
      std::printf(" %12.4f", main_r.per_class[static_cast<size_t>(c)]);
    else
      std::printf(" %12s", "n/a");
    if (aux_r.defined[static_cast<size_t>(c)])
      std::printf(" %12.4f\n", aux_r.per_class[static_cast<size_t>(c)]);
    else
      std::printf(" %12s\n", "n/a");
  }
  std::printf("mIoU(main) = %.4f\n", main_r.mean);
  std::printf("mIoU(aux)  = %.4f\n", aux_r.mean);
}

void run_synth(const std::string& out, int num, const std::string& size, int classes,
               uint64_t seed, double impair, const std::string& area,
               const std::string& radius) {
  io::SynthSpec spec;
  spec.num_samples = num;
  std::tie(spec.height, spec.width) = parse_size(size);
  spec.num_classes = classes;
  spec.seed = seed;
  spec.impairment_p = impair;
  std::tie(spec.impair_area_min, spec.impair_area_max) = parse_area(area);
  if (!radius.empty())
    std::tie(spec.shape_r_min, spec.shape_r_max) = parse_area(radius);
  io::generate_synthetic(spec, out);
  const io::SplitSizes sz = io::split_sizes(spec.num_samples, 0.625, 0.25);
  std::cout << "wrote " << spec.num_samples << " samples (" << spec.height << "x" << spec.width
            << ", " << spec.num_classes << " classes) to " << out << " — train/val/test = "
            << sz.train << "/" << sz.val << "/" << sz.test << "\n";
}

void run_train(const std::string& data, const std::string& config, const std::string& out,
               bool semi, double unlabeled_frac, const std::string& variant,
               const std::string& resume, int save_every, int epochs_override) {
  if (config.empty() && resume.empty())
    fail("parse-error", "train needs --config (fresh run) or --resume (continuation)");
  if (unlabeled_frac < 0.0 || unlabeled_frac > 1.0)
    fail("invalid-range", "--unlabeled-frac must lie in [0,1]");

  io::RunConfig rc;
  io::Checkpoint ck;
  const bool resuming = !resume.empty();
  if (resuming) {
    ck = io::load_checkpoint(resume);
    rc = ck.config;
  } else {
    rc = io::load_run_config(config);
  }
  if (!variant.empty()) {
    rc.model.variant = variant_from_string(variant);
    rc.trainc.aug.enable_mcutout = (rc.model.variant == Variant::full);
  }
  if (semi) rc.trainc.mode = train::TrainConfig::Mode::semi;
  if (epochs_override > 0) rc.trainc.epochs = epochs_override;
  const bool semi_mode = rc.trainc.mode == train::TrainConfig::Mode::semi;

  std::vector<RgbtSample> labeled, unlabeled;
  for (RgbtSample& s : io::load_dataset(data, "train"))
    (s.label ? labeled : unlabeled).push_back(std::move(s));
  if (semi_mode) {
    // Hide the trailing fraction of the labeled pool, mimicking a protocol
    // where part of the training set ships without annotations.
    const size_t hide = static_cast<size_t>(unlabeled_frac * static_cast<double>(labeled.size()));
    for (size_t i = 0; i < hide; ++i) {
      labeled.back().label.reset();
      unlabeled.push_back(std::move(labeled.back()));
      labeled.pop_back();
    }
  } else if (!unlabeled.empty()) {
    std::cout << "note: ignoring " << unlabeled.size() << " unlabeled samples (supervised mode)\n";
  }
  const std::vector<RgbtSample> val = load_split_or_empty(data, "val");
  std::cout << "train: " << labeled.size() << " labeled";
  if (semi_mode) std::cout << " + " << unlabeled.size() << " unlabeled";
  std::cout << ", val: " << val.size() << ", variant=" << to_string(rc.model.variant)
            << ", backbone=" << to_string(rc.model.backbone) << "\n";

  ModelParams params =
      resuming ? std::move(ck.params) : heads::init_params(rc.model, rc.trainc.seed);
  train::Trainer tr(rc.trainc, rc.model, std::move(params));
  if (resuming)
    tr.restore(ck.epoch, std::move(ck.opt), ck.rng_state, ck.best_val_miou,
               std::move(ck.best_params));

  while (tr.epoch() < rc.trainc.epochs) {
    print_epoch(tr.run_epoch(labeled, semi_mode ? &unlabeled : nullptr, val));
    if (save_every > 0 && tr.epoch() % save_every == 0 && tr.epoch() < rc.trainc.epochs) {
      io::save_checkpoint(snapshot(rc, tr), out);
      std::cout << "checkpoint saved at epoch " << tr.epoch() << " -> " << out << "\n";
    }
  }
  io::save_checkpoint(snapshot(rc, tr), out);
  std::cout << "done: " << out;
  if (tr.best_val_miou() >= 0.0)
    std::cout << " (best val mIoU " << std::setprecision(4) << tr.best_val_miou() << ")";
  std::cout << "\n";
}

void run_eval(const std::string& data, const std::string& split, const std::string& ckpt_path,
              const std::string& modality, const std::string& weights) {
  io::Checkpoint ck = io::load_checkpoint(ckpt_path);
  const std::vector<RgbtSample> samples = io::load_dataset(data, split);
  const train::EvalModality mode = train::eval_modality_from_string(modality);
  ModelParams* p = &ck.params;
  if (weights == "best") {
    if (ck.best_params.entries.empty())
      fail("missing-parameter", "'" + ckpt_path + "' stores no best-validation snapshot");
    p = &ck.best_params;
  }
  std::cout << "split=" << split << " samples=" << samples.size() << " modality="
            << train::to_string(mode) << " weights=" << weights << "\n";
  print_eval(*p, samples, mode, ck.config.model);
}

void run_predict(const std::string& ckpt_path, const std::string& rgb_path,
                 const std::string& thermal_path, const std::string& out, bool emit_demand) {
  io::Checkpoint ck = io::load_checkpoint(ckpt_path);
  RgbtSample s;
  s.rgb = io::read_rgb(rgb_path);
  s.thermal = io::read_thermal(thermal_path);
  s.id = fs::path(rgb_path).stem().string();
  if (s.rgb.dim(0) != s.thermal.dim(0) || s.rgb.dim(1) != s.thermal.dim(1))
    fail("size-mismatch", "rgb is " + std::to_string(s.rgb.dim(0)) + "x" +
                              std::to_string(s.rgb.dim(1)) + " but thermal is " +
                              std::to_string(s.thermal.dim(0)) + "x" +
                              std::to_string(s.thermal.dim(1)));
  std::error_code ec;
  fs::create_directories(out, ec);

  std::map<std::string, Tensor> demand;
  if (emit_demand) dtm::set_demand_capture(&demand);
  heads::ForwardOut fwd;
  try {
    ParamBank bank(ck.params, ParamBank::Mode::strict, 0, /*trainable=*/false);
    fwd = heads::forward_full(s, bank, ck.config.model);
  } catch (...) {
    dtm::set_demand_capture(nullptr);
    throw;
  }
  dtm::set_demand_capture(nullptr);

  const std::string main_path = (fs::path(out) / "label.pgm").string();
  const std::string aux_path = (fs::path(out) / "label-aux.pgm").string();
  io::write_label(main_path, heads::predict_labels(fwd.main->value));
  io::write_label(aux_path, heads::predict_labels(fwd.aux->value));
  std::cout << "wrote " << main_path << "\nwrote " << aux_path << "\n";
  for (const auto& [path, map] : demand) {
    std::string name = path;
    for (char& c : name)
      if (c == '.') c = '-';
    const std::string file = (fs::path(out) / ("demand-" + name + ".pgm")).string();
    io::write_gray8(file, map);
    std::cout << "wrote " << file << "\n";
  }
}

void run_ablate(const std::string& data, const std::string& config, const std::string& seeds_s) {
  const io::RunConfig rc = io::load_run_config(config);
  const std::vector<uint64_t> seeds = parse_seeds(seeds_s);
  std::vector<RgbtSample> labeled;
  for (RgbtSample& s : io::load_dataset(data, "train"))
    if (s.label) labeled.push_back(std::move(s));
  const std::vector<RgbtSample> val = io::load_dataset(data, "val");
  const std::vector<Variant> variants = {Variant::baseline, Variant::dtm, Variant::srm,
                                         Variant::full};
  const std::vector<train::AblationRow> rows =
      train::run_ablation(labeled, val, rc.trainc, rc.model, variants, seeds, &std::cerr);

  std::printf("%-16s", "variant");
  for (uint64_t s : seeds) std::printf(" %10s", ("seed" + std::to_string(s)).c_str());
  std::printf(" %10s\n", "mean");
  for (const train::AblationRow& row : rows) {
    std::printf("%-16s", to_string(row.variant));
    for (double m : row.per_seed_miou) std::printf(" %10.4f", m);
    std::printf(" %10.4f\n", row.mean_miou);
  }
}

int run_gradcheck(double eps, double tol) {
  const std::vector<GradSuiteCase> cases = run_gradient_suite(eps);
  bool all_ok = true;
  for (const GradSuiteCase& c : cases) {
    const bool ok = c.report.ok(tol);
    all_ok = all_ok && ok;
    std::printf("%-16s entries=%-5lld max_rel_err=%.3e worst=%s[%d] %s\n", c.name.c_str(),
                static_cast<long long>(c.report.entries_checked), c.report.max_error,
                c.report.worst.path.c_str(), c.report.worst.index, ok ? "ok" : "FAIL");
  }
  std::printf("%s (eps=%g, tol=%g)\n", all_ok ? "all gradients verified" : "GRADIENT CHECK FAILED",
              eps, tol);
  return all_ok ? 0 : 1;
}

void run_flops(const std::string& config) {
  const io::RunConfig rc = io::load_run_config(config);
  const double f = train::estimate_flops(rc.model);
  std::printf("backbone=%s variant=%s input=%dx%d\nflops = %.0f (%.3f GFLOPs)\n",
              to_string(rc.model.backbone), to_string(rc.model.variant), rc.model.input_h,
              rc.model.input_w, f, f / 1e9);
}

void run_convert(const std::string& composite, const std::string& rgb_out,
                 const std::string& thermal_out) {
  io::split_composite(composite, rgb_out, thermal_out);
  std::cout << "wrote " << rgb_out << "\nwrote " << thermal_out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SpiderMesh: demand-guided RGB-thermal semantic segmentation"};
  app.require_subcommand(1);
  int rc = 0;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic bimodal dataset");
  struct {
    std::string out, size = "64x64", area = "0.1,0.3", radius;
    int num = 16, classes = 4;
    uint64_t seed = 0;
    double impair = 0.0;
  } sy;
  synth->add_option("--out", sy.out, "dataset root directory")->required();
  synth->add_option("--num", sy.num, "number of samples");
  synth->add_option("--size", sy.size, "sample size as HxW");
  synth->add_option("--classes", sy.classes, "number of classes incl. background");
  synth->add_option("--seed", sy.seed, "generator seed");
  synth->add_option("--impair", sy.impair, "probability of darkening an RGB region");
  synth->add_option("--impair-area", sy.area, "impaired region area range as MIN,MAX");
  synth->add_option("--shape-radius", sy.radius,
                    "shape half-extent range as image-side fractions, MIN,MAX");
  synth->callback([&] {
    run_synth(sy.out, sy.num, sy.size, sy.classes, sy.seed, sy.impair, sy.area, sy.radius);
  });

  // train
  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  struct {
    std::string data, config, out, variant, resume;
    bool semi = false;
    double unlabeled_frac = 0.5;
    int save_every = 0;
    int epochs = 0;
  } t;
  tr->add_option("--data", t.data, "dataset root directory")->required();
  tr->add_option("--config", t.config, "run config file");
  tr->add_option("--out", t.out, "checkpoint output path")->required();
  tr->add_flag("--semi", t.semi, "cross-modal semi-supervised mode");
  tr->add_option("--unlabeled-frac", t.unlabeled_frac,
                 "fraction of labeled training samples whose labels are hidden in semi mode");
  tr->add_option("--variant", t.variant, "architecture override")
      ->check(CLI::IsMember({"baseline", "+dtm", "+srm", "+mcutout-full"}));
  tr->add_option("--resume", t.resume, "checkpoint to continue from (replaces --config)");
  tr->add_option("--save-every", t.save_every, "also checkpoint every N epochs");
  tr->add_option("--epochs", t.epochs, "override the epoch budget (lets a resumed run continue)");
  tr->callback([&] {
    run_train(t.data, t.config, t.out, t.semi, t.unlabeled_frac, t.variant, t.resume,
              t.save_every, t.epochs);
  });

  // eval
  auto* ev = app.add_subcommand("eval", "per-class IoU and mIoU of a checkpoint on a split");
  struct {
    std::string data, split, ckpt, modality = "both", weights = "current";
  } e;
  ev->add_option("--data", e.data, "dataset root directory")->required();
  ev->add_option("--split", e.split, "dataset split")
      ->required()
      ->check(CLI::IsMember({"val", "test"}));
  ev->add_option("--ckpt", e.ckpt, "checkpoint path")->required();
  ev->add_option("--modality", e.modality, "input modality; the other is zeroed")
      ->check(CLI::IsMember({"both", "rgb-only", "thermal-only"}));
  ev->add_option("--weights", e.weights, "which stored parameters to evaluate")
      ->check(CLI::IsMember({"current", "best"}));
  ev->callback([&] { run_eval(e.data, e.split, e.ckpt, e.modality, e.weights); });

  // predict
  auto* pr = app.add_subcommand("predict", "segment one RGB-thermal pair");
  struct {
    std::string ckpt, rgb, thermal, out;
    bool demand = false;
  } p;
  pr->add_option("--ckpt", p.ckpt, "checkpoint path")->required();
  pr->add_option("--rgb", p.rgb, "RGB image (PPM)")->required();
  pr->add_option("--thermal", p.thermal, "thermal image (PGM)")->required();
  pr->add_option("--out", p.out, "output directory")->required();
  pr->add_flag("--emit-demand-maps", p.demand, "also write per-stage demand maps as grayscale");
  pr->callback([&] { run_predict(p.ckpt, p.rgb, p.thermal, p.out, p.demand); });

  // ablate
  auto* ab = app.add_subcommand("ablate", "train every architecture variant over several seeds");
  struct {
    std::string data, config, seeds;
  } a;
  ab->add_option("--data", a.data, "dataset root directory")->required();
  ab->add_option("--config", a.config, "run config file")->required();
  ab->add_option("--seeds", a.seeds, "comma-separated seeds, e.g. 1,2,3")->required();
  ab->callback([&] { run_ablate(a.data, a.config, a.seeds); });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification of the tape");
  struct {
    double eps = 1e-6, tol = 1e-5;
  } g;
  gc->add_option("--eps", g.eps, "central difference step");
  gc->add_option("--tol", g.tol, "max relative error accepted");
  gc->callback([&] { rc = run_gradcheck(g.eps, g.tol); });

  // flops
  auto* fl = app.add_subcommand("flops", "analytic multiply-add count of one forward");
  struct {
    std::string config;
  } f;
  fl->add_option("--config", f.config, "run config file")->required();
  fl->callback([&] { run_flops(f.config); });

  // convert
  auto* cv = app.add_subcommand("convert", "split a 4-channel RGB+thermal composite (PAM)");
  struct {
    std::string composite, rgb_out, thermal_out;
  } c;
  cv->add_option("--composite", c.composite, "4-channel PAM input")->required();
  cv->add_option("--rgb-out", c.rgb_out, "RGB output path (PPM)")->required();
  cv->add_option("--thermal-out", c.thermal_out, "thermal output path (PGM)")->required();
  cv->callback([&] { run_convert(c.composite, c.rgb_out, c.thermal_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return rc;
}
