#pragma once

#include <string>
#include <vector>

#include "spidermesh/gradcheck.hpp"

namespace spidermesh {

// One named finite-difference comparison over a module's full parameter and
// input space.
struct GradSuiteCase {
  std::string name;
  GradCheckReport report;
};

// Sweeps the fusion block, the decoder pieces, the classifier, and the
// composed supervised loss — every case on inputs no larger than 8x8, with
// probe losses normalized to O(1) so central differences stay conditioned.
std::vector<GradSuiteCase> run_gradient_suite(double eps = 1e-6);

}  // namespace spidermesh
