#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spidermesh/params.hpp"

namespace spidermesh {

// Finite-difference verification of reverse-mode gradients.
//
// The loss under test is expressed as a builder that pulls every tensor it
// depends on — parameters and probed inputs alike — out of a ParamBank, so the
// checker can perturb any entry of the backing store and re-evaluate.

struct GradCheckEntry {
  std::string path;
  int index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

struct GradCheckReport {
  // Largest scaled error seen across all swept entries, and where it was.
  double max_error = 0.0;
  GradCheckEntry worst;
  long long entries_checked = 0;
  bool ok(double tolerance) const { return max_error <= tolerance; }
};

// Compares backward-pass gradients of `build_loss` against central differences
// (f(x+eps) - f(x-eps)) / (2 eps) for every entry of every store tensor, or of
// `paths` only when non-empty.  The builder must produce a scalar node and be a
// pure function of the store contents.
//
// Errors are scaled as |a - n| / max(|a|, |n|, 1e-3): relative for gradients of
// ordinary size, absolute (per mil) for near-zero ones, so finite-difference
// round-off on tiny components cannot drown the signal.
GradCheckReport check_gradients(ModelParams& params,
                                const std::function<nn::Var(ParamBank&)>& build_loss,
                                double eps = 1e-6,
                                const std::vector<std::string>& paths = {});

}  // namespace spidermesh
