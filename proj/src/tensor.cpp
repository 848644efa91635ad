#include "spidermesh/tensor.hpp"

#include <cmath>
#include <sstream>

namespace spidermesh {

bool Tensor::all_finite() const {
  for (double x : d_)
    if (!std::isfinite(x)) return false;
  return true;
}

void Tensor::add_scaled(const Tensor& o, double s) {
  if (!same_shape(o)) fail("shape-mismatch", "add_scaled shapes differ");
  const double* src = o.d_.data();
  double* dst = d_.data();
  const size_t n = d_.size();
  for (size_t i = 0; i < n; ++i) dst[i] += s * src[i];
}

int64_t Tensor::numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) fail("shape-mismatch", "negative dimension");
    n *= d;
  }
  return n;
}

std::string Tensor::shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

}  // namespace spidermesh
