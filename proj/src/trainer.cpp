#include "spidermesh/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "spidermesh/heads.hpp"
#include "spidermesh/objectives.hpp"

namespace spidermesh::train {

void TrainConfig::validate() const {
  if (!(lr0 > 0)) fail("invalid-range", "lr0 must be positive");
  if (momentum < 0 || momentum >= 1) fail("invalid-range", "momentum must be in [0,1)");
  if (weight_decay < 0) fail("invalid-range", "weight_decay must be nonnegative");
  if (epochs < 1) fail("invalid-range", "epochs must be >= 1");
  if (batch_size < 1) fail("invalid-range", "batch_size must be >= 1");
  if (!(decay_gamma > 0) || decay_gamma > 1) fail("invalid-range", "decay_gamma must be in (0,1]");
}

void sgd_step(ModelParams& params, const std::map<std::string, Tensor>& grads, OptState& state,
              double lr, const TrainConfig& cfg) {
  for (const auto& [path, g] : grads) {
    Tensor& w = params.at(path);
    if (g.shape() != w.shape())
      fail("shape-mismatch", "sgd_step: gradient for '" + path + "' is " +
                                 Tensor::shape_str(g.shape()) + " but the parameter is " +
                                 Tensor::shape_str(w.shape()));
    if (!g.all_finite()) fail("non-finite-gradient", "sgd_step: gradient for '" + path + "'");

    auto it = state.velocity.find(path);
    if (it == state.velocity.end())
      it = state.velocity.emplace(path, Tensor(w.shape())).first;  // zero-initialized
    Tensor& v = it->second;

    double* wp = w.data();
    double* vp = v.data();
    const double* gp = g.data();
    for (int64_t i = 0; i < w.numel(); ++i) {
      const double adjusted = gp[i] + cfg.weight_decay * wp[i];
      vp[i] = cfg.momentum * vp[i] + adjusted;
      wp[i] -= lr * vp[i];
    }
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) fail("invalid-range", "lr_at: epoch must be >= 0");
  return cfg.lr0 * std::pow(cfg.decay_gamma, epoch);
}

int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), int64_t{0});
}

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    fail("shape-mismatch", "accumulate: prediction is " + std::to_string(pred.h) + "x" +
                               std::to_string(pred.w) + " but ground truth is " +
                               std::to_string(gt.h) + "x" + std::to_string(gt.w));
  for (size_t i = 0; i < gt.v.size(); ++i) {
    const int32_t g = gt.v[i];
    if (g == kIgnoreIndex) continue;
    const int32_t p = pred.v[i];
    if (g < 0 || g >= cm.k || p < 0 || p >= cm.k)
      fail("out-of-range-label", "accumulate: label pair (" + std::to_string(g) + ", " +
                                     std::to_string(p) + ") outside " + std::to_string(cm.k) +
                                     " classes");
    ++cm.at(g, p);
  }
}

MiouResult miou(const ConfusionMatrix& cm) {
  MiouResult r;
  r.per_class.assign(cm.k, 0.0);
  r.defined.assign(cm.k, false);
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < cm.k; ++c) {
    int64_t row = 0, col = 0;
    for (int j = 0; j < cm.k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const int64_t inter = cm.at(c, c);
    const int64_t uni = row + col - inter;
    if (uni == 0) continue;  // class absent from both pred and gt
    r.per_class[c] = static_cast<double>(inter) / static_cast<double>(uni);
    r.defined[c] = true;
    sum += r.per_class[c];
    ++defined;
  }
  if (defined == 0) fail("all-classes-undefined", "miou: every class has zero union");
  r.mean = sum / defined;
  return r;
}

double evaluate_miou(ModelParams& params, const std::vector<RgbtSample>& data,
                     const ModelConfig& cfg, double* aux_miou) {
  if (data.empty()) fail("empty-dataset", "evaluate_miou: no samples");
  ConfusionMatrix cm_main(cfg.num_classes), cm_aux(cfg.num_classes);
  for (const RgbtSample& s : data) {
    if (!s.label) fail("missing-label", "evaluate_miou: sample '" + s.id + "' has no label");
    ParamBank bank(params, ParamBank::Mode::strict, 0, /*trainable=*/false);
    heads::ForwardOut out = heads::forward_full(s, bank, cfg);
    accumulate(cm_main, heads::predict_labels(out.main->value), *s.label);
    if (aux_miou) accumulate(cm_aux, heads::predict_labels(out.aux->value), *s.label);
  }
  if (aux_miou) *aux_miou = miou(cm_aux).mean;
  return miou(cm_main).mean;
}

namespace {

// Shuffle order is a pure function of (seed, epoch) so that runs touching the
// augmentation stream differently (e.g. ablation variants with and without
// masking) still visit samples in the same order.
std::vector<size_t> epoch_order(size_t n, uint64_t seed, int epoch) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<uint64_t>(epoch) + 1)));
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

void add_scaled(std::map<std::string, Tensor>& acc, const std::map<std::string, Tensor>& grads,
                double scale) {
  for (const auto& [path, g] : grads) {
    auto it = acc.find(path);
    if (it == acc.end()) it = acc.emplace(path, Tensor(g.shape())).first;
    it->second.add_scaled(g, scale);
  }
}

}  // namespace

Trainer::Trainer(TrainConfig tcfg, ModelConfig mcfg, ModelParams params)
    : tcfg_(std::move(tcfg)), mcfg_(std::move(mcfg)), params_(std::move(params)),
      rng_(tcfg_.seed) {
  tcfg_.validate();
  mcfg_.validate();
  best_params_ = params_;
}

EpochLog Trainer::run_epoch(const std::vector<RgbtSample>& labeled,
                            const std::vector<RgbtSample>* unlabeled,
                            const std::vector<RgbtSample>& val) {
  if (labeled.empty()) fail("empty-dataset", "run_epoch: no labeled samples");
  const bool semi = tcfg_.mode == TrainConfig::Mode::semi;
  if (semi && (unlabeled == nullptr || unlabeled->empty()))
    fail("empty-dataset", "run_epoch: semi mode needs unlabeled samples");

  const std::vector<size_t> order = epoch_order(labeled.size(), tcfg_.seed, epoch_);
  std::vector<size_t> uorder;
  if (semi) uorder = epoch_order(unlabeled->size(), tcfg_.seed + 1, epoch_);

  EpochLog log;
  log.epoch = epoch_;
  log.lr = lr_at(epoch_, tcfg_);

  const int bs = tcfg_.batch_size;
  const size_t steps = (labeled.size() + bs - 1) / bs;
  size_t ucursor = 0;
  double ls_sum = 0.0, lu_sum = 0.0;
  for (size_t step = 0; step < steps; ++step) {
    std::map<std::string, Tensor> acc;

    const size_t lo = step * bs;
    const size_t hi = std::min(labeled.size(), lo + bs);
    double ls_batch = 0.0;
    for (size_t i = lo; i < hi; ++i) {
      RgbtSample s = aug::augment_pipeline(labeled[order[i]], rng_, tcfg_.aug);
      ParamBank bank(params_, ParamBank::Mode::strict);
      nn::Var loss = obj::supervised_loss(s, bank, mcfg_);
      nn::backward(loss);
      ls_batch += nn::scalar_of(loss);
      add_scaled(acc, bank.grads(), 1.0 / static_cast<double>(hi - lo));
    }
    ls_batch /= static_cast<double>(hi - lo);

    double lu_batch = 0.0;
    if (semi) {
      const int ub = bs;
      for (int i = 0; i < ub; ++i) {
        const RgbtSample& s = (*unlabeled)[uorder[ucursor]];
        ucursor = (ucursor + 1) % uorder.size();
        ParamBank bank(params_, ParamBank::Mode::strict);
        nn::Var loss = obj::unsupervised_loss(s, bank, mcfg_, rng_, tcfg_.aug);
        nn::backward(loss);
        lu_batch += nn::scalar_of(loss);
        add_scaled(acc, bank.grads(), 1.0 / static_cast<double>(ub));
      }
      lu_batch /= static_cast<double>(ub);
    }

    if (!std::isfinite(ls_batch) || !std::isfinite(lu_batch))
      fail("divergence", "run_epoch: non-finite loss at epoch " + std::to_string(epoch_) +
                             " step " + std::to_string(step) + " (l_s=" + std::to_string(ls_batch) +
                             ", l_u=" + std::to_string(lu_batch) + ")");

    sgd_step(params_, acc, opt_, log.lr, tcfg_);
    log.step_losses.emplace_back(ls_batch, lu_batch);
    ls_sum += ls_batch;
    lu_sum += lu_batch;
  }

  log.l_s = ls_sum / static_cast<double>(steps);
  log.l_u = lu_sum / static_cast<double>(steps);
  if (!val.empty()) {
    log.val_miou = evaluate_miou(params_, val, mcfg_);
    if (log.val_miou > best_val_miou_) {
      best_val_miou_ = log.val_miou;
      best_params_ = params_;
    }
  }
  ++epoch_;
  return log;
}

std::string Trainer::rng_state() const {
  std::ostringstream ss;
  ss << rng_;
  return ss.str();
}

void Trainer::restore(int epoch, OptState opt, const std::string& rng_state, double best_val_miou,
                      ModelParams best_params) {
  if (epoch < 0) fail("invalid-range", "restore: epoch must be >= 0");
  std::istringstream ss(rng_state);
  std::mt19937_64 restored;
  if (!(ss >> restored)) fail("corrupt-payload", "restore: unparseable rng state");
  epoch_ = epoch;
  opt_ = std::move(opt);
  rng_ = restored;
  best_val_miou_ = best_val_miou;
  best_params_ = std::move(best_params);
}

TrainResult train(const std::vector<RgbtSample>& labeled,
                  const std::vector<RgbtSample>* unlabeled, const std::vector<RgbtSample>& val,
                  const TrainConfig& tcfg, const ModelConfig& mcfg, ModelParams& params,
                  std::ostream* log) {
  Trainer tr(tcfg, mcfg, std::move(params));
  TrainResult result;
  for (int e = 0; e < tcfg.epochs; ++e) {
    EpochLog el = tr.run_epoch(labeled, unlabeled, val);
    if (log)
      (*log) << "epoch=" << el.epoch << " lr=" << std::setprecision(6) << el.lr
             << " l_s=" << el.l_s << " l_u=" << el.l_u << " val_miou=" << el.val_miou << "\n";
    result.epochs.push_back(std::move(el));
  }
  params = std::move(tr.params());
  result.best_val_miou = tr.best_val_miou();
  result.best_params = tr.best_params();
  return result;
}

EvalModality eval_modality_from_string(const std::string& s) {
  if (s == "both") return EvalModality::both;
  if (s == "rgb-only") return EvalModality::rgb_only;
  if (s == "thermal-only") return EvalModality::thermal_only;
  fail("invalid-range", "unknown eval modality '" + s + "'");
}

const char* to_string(EvalModality m) {
  switch (m) {
    case EvalModality::both: return "both";
    case EvalModality::rgb_only: return "rgb-only";
    case EvalModality::thermal_only: return "thermal-only";
  }
  return "?";
}

RobustnessReport robustness_eval(ModelParams& params, const std::vector<RgbtSample>& data,
                                 EvalModality mode, const ModelConfig& cfg) {
  std::vector<RgbtSample> view = data;
  for (RgbtSample& s : view) {
    if (mode == EvalModality::rgb_only) s.thermal.fill(0.0);
    if (mode == EvalModality::thermal_only) s.rgb.fill(0.0);
  }
  RobustnessReport rep;
  rep.main_miou = evaluate_miou(params, view, cfg, &rep.aux_miou);
  return rep;
}

namespace {

double conv_cost(int k, int ci, int co, int ho, int wo) {
  return 2.0 * k * k * ci * co * static_cast<double>(ho) * static_cast<double>(wo);
}

}  // namespace

double estimate_flops(const ModelConfig& cfg) {
  cfg.validate();
  const std::array<int, 5> blocks = block_counts_for(cfg.backbone);
  const bool fuse = cfg.variant != Variant::baseline;
  const bool meshed = cfg.variant == Variant::srm || cfg.variant == Variant::full;

  double total = 0.0;
  int h = cfg.input_h, w = cfg.input_w;
  std::array<int, 5> sh{}, sw{};
  for (int i = 0; i < 5; ++i) {
    const int ho = (h + 1) / 2, wo = (w + 1) / 2;  // stride-2 first block
    const int co = cfg.stage_channels[i];
    for (int branch_in : {i == 0 ? 3 : cfg.stage_channels[i - 1],
                          i == 0 ? 1 : cfg.stage_channels[i - 1]}) {
      int ci = branch_in;
      for (int b = 0; b < blocks[i]; ++b) {
        if (cfg.backbone == BackboneKind::tiny) {
          total += conv_cost(3, ci, co, ho, wo);
        } else {
          total += conv_cost(3, ci, co, ho, wo);   // first conv
          total += conv_cost(3, co, co, ho, wo);   // second conv
          if (b == 0) total += conv_cost(1, ci, co, ho, wo);  // projection shortcut
        }
        ci = co;
      }
    }
    if (fuse) {
      const int hidden = std::max(1, co / cfg.ca_reduction);
      for (int m = 0; m < 2; ++m) {  // per modality
        // channel attention: max- and mean-pooled paths through one bottleneck
        total += 2.0 * (conv_cost(1, co, hidden, 1, 1) + conv_cost(1, hidden, co, 1, 1));
        // demand map over the stacked per-pixel channel max/mean
        total += conv_cost(7, 2, 1, ho, wo);
      }
    }
    sh[i] = ho;
    sw[i] = wo;
    h = ho;
    w = wo;
  }

  int fe_channels = cfg.stage_channels[4];
  if (meshed) {
    fe_channels = cfg.aspp_channels;
    const int a = cfg.aspp_channels;
    const int c4 = cfg.stage_channels[4];
    const int nd = static_cast<int>(cfg.aspp_dilations.size());
    const int cr = std::max(1, a / 4);
    for (int m = 0; m < 2; ++m) {  // per decoder branch
      total += conv_cost(1, c4, a, sh[4], sw[4]);                 // pointwise branch
      total += nd * conv_cost(3, c4, a, sh[4], sw[4]);            // dilated branches
      total += conv_cost(1, (nd + 1) * a, a, sh[4], sw[4]);       // projection
      int oh = sh[4], ow = sw[4];
      for (int r = 3; r >= 1; --r) {  // refinements at stage-3, -2, -1 scales
        oh *= 2;
        ow *= 2;
        const int cm = cfg.stage_channels[r];
        total += conv_cost(7, 2, 1, oh, ow);           // demand map on upsampled feature
        total += conv_cost(1, cm, cr, oh, ow);         // skip reduction
        total += conv_cost(3, a + cr, a, oh, ow);      // fusion
      }
    }
  }
  // two pixel classifiers at full resolution
  total += 2.0 * conv_cost(1, fe_channels, cfg.num_classes, cfg.input_h, cfg.input_w);
  return total;
}

std::vector<AblationRow> run_ablation(const std::vector<RgbtSample>& labeled,
                                      const std::vector<RgbtSample>& val,
                                      const TrainConfig& base_tcfg, const ModelConfig& base_mcfg,
                                      const std::vector<Variant>& variants,
                                      const std::vector<uint64_t>& seeds,
                                      std::ostream* log) {
  if (variants.empty() || seeds.empty())
    fail("invalid-range", "run_ablation: needs at least one variant and one seed");
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    AblationRow row;
    row.variant = v;
    ModelConfig mcfg = base_mcfg;
    mcfg.variant = v;
    TrainConfig tcfg = base_tcfg;
    tcfg.mode = TrainConfig::Mode::supervised;
    tcfg.aug.enable_mcutout = (v == Variant::full);
    for (uint64_t seed : seeds) {
      tcfg.seed = seed;
      ModelParams params = heads::init_params(mcfg, seed);
      TrainResult res = train(labeled, nullptr, val, tcfg, mcfg, params, nullptr);
      row.per_seed_miou.push_back(res.best_val_miou);
      if (log)
        (*log) << "variant=" << to_string(v) << " seed=" << seed
               << " best_val_miou=" << std::setprecision(6) << res.best_val_miou << "\n";
    }
    row.mean_miou = std::accumulate(row.per_seed_miou.begin(), row.per_seed_miou.end(), 0.0) /
                    static_cast<double>(row.per_seed_miou.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace spidermesh::train
