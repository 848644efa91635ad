#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "spidermesh/augment.hpp"
#include "spidermesh/datamodel.hpp"
#include "spidermesh/params.hpp"

namespace spidermesh::train {

struct TrainConfig {
  double lr0 = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 200;
  int batch_size = 4;
  double decay_gamma = 0.95;
  uint64_t seed = 0;
  enum class Mode { supervised, semi } mode = Mode::supervised;
  aug::AugmentConfig aug;

  void validate() const;
};

// Per-parameter momentum buffers, created lazily on first update.
struct OptState {
  std::map<std::string, Tensor> velocity;
};

// w <- w - lr * v  with  v = momentum * v + (g + weight_decay * w).
void sgd_step(ModelParams& params, const std::map<std::string, Tensor>& grads, OptState& state,
              double lr, const TrainConfig& cfg);

// Exponential decay: lr0 * gamma^epoch.
double lr_at(int epoch, const TrainConfig& cfg);

struct ConfusionMatrix {
  int k = 0;
  std::vector<int64_t> counts;  // k*k, rows = ground truth, cols = prediction

  explicit ConfusionMatrix(int k_ = 0) : k(k_), counts(static_cast<size_t>(k_) * k_, 0) {}
  int64_t& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * k + pred]; }
  int64_t at(int gt, int pred) const { return counts[static_cast<size_t>(gt) * k + pred]; }
  int64_t total() const;
};

// Adds every non-ignored pixel of (gt, pred) into the matrix.
void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt);

struct MiouResult {
  std::vector<double> per_class;  // IoU per class; meaningless where !defined
  std::vector<bool> defined;      // false when the class has zero union
  double mean = 0.0;              // over defined classes only
};

MiouResult miou(const ConfusionMatrix& cm);

// mIoU of the main head over a dataset, plus optionally the aux head's.
double evaluate_miou(ModelParams& params, const std::vector<RgbtSample>& data,
                     const ModelConfig& cfg, double* aux_miou = nullptr);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double l_s = 0.0;  // epoch mean
  double l_u = 0.0;  // epoch mean (0 in supervised mode)
  double val_miou = 0.0;
  std::vector<std::pair<double, double>> step_losses;  // (l_s, l_u) per step
};

// Owns the optimization state so a run can be paused, persisted, and resumed
// without perturbing the trajectory.
class Trainer {
 public:
  Trainer(TrainConfig tcfg, ModelConfig mcfg, ModelParams params);

  // One epoch of shuffled mini-batches; semi mode pairs every labeled batch
  // with an unlabeled one.  Evaluates the validation split afterwards and
  // tracks the best-scoring parameter snapshot.
  EpochLog run_epoch(const std::vector<RgbtSample>& labeled,
                     const std::vector<RgbtSample>* unlabeled,
                     const std::vector<RgbtSample>& val);

  int epoch() const { return epoch_; }
  ModelParams& params() { return params_; }
  const OptState& opt() const { return opt_; }
  double best_val_miou() const { return best_val_miou_; }
  const ModelParams& best_params() const { return best_params_; }

  std::string rng_state() const;
  // Restores a mid-run snapshot (the counterpart of the accessors above).
  void restore(int epoch, OptState opt, const std::string& rng_state, double best_val_miou,
               ModelParams best_params);

 private:
  TrainConfig tcfg_;
  ModelConfig mcfg_;
  ModelParams params_;
  OptState opt_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
  double best_val_miou_ = -1.0;
  ModelParams best_params_;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  double best_val_miou = 0.0;
  ModelParams best_params;
};

// Full training run.  Emits one line per epoch to `log` when given:
// epoch=<n> lr=<f> l_s=<f> l_u=<f> val_miou=<f>
TrainResult train(const std::vector<RgbtSample>& labeled,
                  const std::vector<RgbtSample>* unlabeled, const std::vector<RgbtSample>& val,
                  const TrainConfig& tcfg, const ModelConfig& mcfg, ModelParams& params,
                  std::ostream* log = nullptr);

enum class EvalModality { both, rgb_only, thermal_only };
EvalModality eval_modality_from_string(const std::string& s);
const char* to_string(EvalModality m);

struct RobustnessReport {
  double main_miou = 0.0;
  double aux_miou = 0.0;
};

// Evaluates with the dropped modality's input zeroed; reports both heads.
RobustnessReport robustness_eval(ModelParams& params, const std::vector<RgbtSample>& data,
                                 EvalModality mode, const ModelConfig& cfg);

// Analytic multiply-add count of every convolution the configured model runs
// on one (cfg.input_h, cfg.input_w) input.
double estimate_flops(const ModelConfig& cfg);

struct AblationRow {
  Variant variant;
  std::vector<double> per_seed_miou;
  double mean_miou = 0.0;
};

// Trains each variant from scratch per seed (identical data order and
// initialization per seed across variants) and reports best-val mIoU.
std::vector<AblationRow> run_ablation(const std::vector<RgbtSample>& labeled,
                                      const std::vector<RgbtSample>& val,
                                      const TrainConfig& base_tcfg, const ModelConfig& base_mcfg,
                                      const std::vector<Variant>& variants,
                                      const std::vector<uint64_t>& seeds,
                                      std::ostream* log = nullptr);

}  // namespace spidermesh::train
