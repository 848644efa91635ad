#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "spidermesh/autodiff.hpp"
#include "spidermesh/tensor.hpp"

namespace spidermesh {

// All learnable weights, addressed by hierarchical path
// (e.g. "enc.rgb.stage2.block0.conv1.w").
struct ModelParams {
  std::map<std::string, Tensor> entries;

  bool has(const std::string& path) const { return entries.count(path) != 0; }
  Tensor& at(const std::string& path);
  const Tensor& at(const std::string& path) const;
};

// One forward pass's view of the parameter store. Hands out leaf Vars,
// cached per path so every use of a parameter shares one tape node and
// gradients accumulate. In create mode, missing parameters are
// initialized on first request (He-scaled weights, zero biases,
// unit/zero norm affine), so one dummy forward doubles as init.
class ParamBank {
 public:
  enum class Mode { strict, create };

  // trainable=false hands out non-differentiable nodes: forwards built from
  // such a bank record no backprop closures (cheap inference).
  ParamBank(ModelParams& store, Mode mode, uint64_t seed = 0, bool trainable = true)
      : store_(store), mode_(mode), rng_(seed), trainable_(trainable) {}

  nn::Var conv_weight(const std::string& path, int kh, int kw, int ci, int co);
  nn::Var conv_bias(const std::string& path, int co);
  nn::Var norm_gamma(const std::string& path, int c);
  nn::Var norm_beta(const std::string& path, int c);
  // Arbitrary-shaped entry; lets probed inputs live in the store so the
  // finite-difference checker can sweep them like any parameter.
  nn::Var value(const std::string& path, const std::vector<int>& shape);

  // Gradients accumulated into this bank's leaves by nn::backward.
  std::map<std::string, Tensor> grads() const;

  ModelParams& store() { return store_; }

 private:
  nn::Var fetch(const std::string& path, const std::vector<int>& shape, double init_stddev,
                double init_const, bool random_init);

  ModelParams& store_;
  Mode mode_;
  std::mt19937_64 rng_;
  bool trainable_ = true;
  std::map<std::string, nn::Var> leaves_;
};

}  // namespace spidermesh
