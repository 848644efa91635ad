#include "spidermesh/gradcheck.hpp"

#include <cmath>
#include <map>

namespace spidermesh {
namespace {

double eval_loss(ModelParams& params, const std::function<nn::Var(ParamBank&)>& build_loss) {
  ParamBank bank(params, ParamBank::Mode::strict);
  nn::Var loss = build_loss(bank);
  return nn::scalar_of(loss);
}

}  // namespace

GradCheckReport check_gradients(ModelParams& params,
                                const std::function<nn::Var(ParamBank&)>& build_loss,
                                double eps,
                                const std::vector<std::string>& paths) {
  // One analytic pass: forward, backward, collect gradients per store path.
  ParamBank bank(params, ParamBank::Mode::strict);
  nn::Var loss = build_loss(bank);
  nn::backward(loss);
  std::map<std::string, Tensor> analytic = bank.grads();

  std::vector<std::string> sweep = paths;
  if (sweep.empty())
    for (const auto& [path, grad] : analytic) sweep.push_back(path);

  GradCheckReport report;
  for (const std::string& path : sweep) {
    auto it = analytic.find(path);
    if (it == analytic.end())
      fail("missing-parameter", "gradient check asked for '" + path + "', which the loss never used");
    Tensor& stored = params.at(path);
    const Tensor& grad = it->second;
    for (int i = 0; i < stored.numel(); ++i) {
      const double saved = stored.data()[i];
      stored.data()[i] = saved + eps;
      const double up = eval_loss(params, build_loss);
      stored.data()[i] = saved - eps;
      const double down = eval_loss(params, build_loss);
      stored.data()[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = grad.data()[i];
      const double err = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-3});
      ++report.entries_checked;
      if (err > report.max_error) {
        report.max_error = err;
        report.worst = {path, i, a, numeric, err};
      }
    }
  }
  return report;
}

}  // namespace spidermesh
