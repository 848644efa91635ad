#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include "spidermesh/error.hpp"

namespace spidermesh {

// Dense float64 array, channel-last. Feature maps are (h, w, c),
// conv kernels (kh, kw, c_in, c_out), vectors (n).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    d_.assign(static_cast<size_t>(numel_of(shape_)), 0.0);
  }
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), d_(std::move(data)) {
    if (static_cast<int64_t>(d_.size()) != numel_of(shape_))
      fail("shape-mismatch", "tensor data length does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.d_) x = v;
    return t;
  }
  static Tensor randn(std::vector<int> shape, std::mt19937_64& rng, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& x : t.d_) x = dist(rng);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(d_.size()); }

  double* data() { return d_.data(); }
  const double* data() const { return d_.data(); }
  double& operator[](int64_t i) { return d_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return d_[static_cast<size_t>(i)]; }

  // (h, w, c) indexing
  double& at3(int h, int w, int c) {
    return d_[static_cast<size_t>((static_cast<int64_t>(h) * shape_[1] + w) * shape_[2] + c)];
  }
  double at3(int h, int w, int c) const {
    return d_[static_cast<size_t>((static_cast<int64_t>(h) * shape_[1] + w) * shape_[2] + c)];
  }
  // (kh, kw, ci, co) indexing
  double& at4(int a, int b, int c, int d) {
    return d_[static_cast<size_t>(((static_cast<int64_t>(a) * shape_[1] + b) * shape_[2] + c) *
                                      shape_[3] +
                                  d)];
  }
  double at4(int a, int b, int c, int d) const {
    return d_[static_cast<size_t>(((static_cast<int64_t>(a) * shape_[1] + b) * shape_[2] + c) *
                                      shape_[3] +
                                  d)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  void fill(double v) {
    for (double& x : d_) x = v;
  }
  void add_scaled(const Tensor& o, double s);  // *this += s * o

  static int64_t numel_of(const std::vector<int>& shape);
  static std::string shape_str(const std::vector<int>& shape);

 private:
  std::vector<int> shape_;
  std::vector<double> d_;
};

}  // namespace spidermesh
