#include "spidermesh/params.hpp"

#include <cmath>

namespace spidermesh {

Tensor& ModelParams::at(const std::string& path) {
  auto it = entries.find(path);
  if (it == entries.end()) fail("missing-parameter", "no parameter at '" + path + "'");
  return it->second;
}

const Tensor& ModelParams::at(const std::string& path) const {
  auto it = entries.find(path);
  if (it == entries.end()) fail("missing-parameter", "no parameter at '" + path + "'");
  return it->second;
}

nn::Var ParamBank::fetch(const std::string& path, const std::vector<int>& shape,
                         double init_stddev, double init_const, bool random_init) {
  auto cached = leaves_.find(path);
  if (cached != leaves_.end()) {
    if (cached->second->value.shape() != shape)
      fail("shape-mismatch", "parameter '" + path + "' has shape " +
                                 Tensor::shape_str(cached->second->value.shape()) +
                                 ", expected " + Tensor::shape_str(shape));
    return cached->second;
  }

  auto it = store_.entries.find(path);
  if (it == store_.entries.end()) {
    if (mode_ == Mode::strict) fail("missing-parameter", "no parameter at '" + path + "'");
    Tensor t = random_init ? Tensor::randn(shape, rng_, init_stddev)
                           : Tensor::full(shape, init_const);
    it = store_.entries.emplace(path, std::move(t)).first;
  } else if (it->second.shape() != shape) {
    fail("shape-mismatch", "parameter '" + path + "' has shape " +
                               Tensor::shape_str(it->second.shape()) + ", expected " +
                               Tensor::shape_str(shape));
  }
  nn::Var v = trainable_ ? nn::leaf(it->second) : nn::constant(it->second);
  leaves_.emplace(path, v);
  return v;
}

nn::Var ParamBank::conv_weight(const std::string& path, int kh, int kw, int ci, int co) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(kh) * kw * ci));
  return fetch(path, {kh, kw, ci, co}, stddev, 0.0, true);
}

nn::Var ParamBank::conv_bias(const std::string& path, int co) {
  return fetch(path, {co}, 0.0, 0.0, false);
}

nn::Var ParamBank::norm_gamma(const std::string& path, int c) {
  return fetch(path, {c}, 0.0, 1.0, false);
}

nn::Var ParamBank::norm_beta(const std::string& path, int c) {
  return fetch(path, {c}, 0.0, 0.0, false);
}

nn::Var ParamBank::value(const std::string& path, const std::vector<int>& shape) {
  return fetch(path, shape, 0.0, 0.0, false);
}

std::map<std::string, Tensor> ParamBank::grads() const {
  std::map<std::string, Tensor> out;
  for (const auto& [path, var] : leaves_) {
    if (var->grad.numel() != 0)
      out.emplace(path, var->grad);
    else
      out.emplace(path, Tensor::zeros(var->value.shape()));
  }
  return out;
}

}  // namespace spidermesh
