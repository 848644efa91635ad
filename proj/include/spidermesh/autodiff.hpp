#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "spidermesh/tensor.hpp"

namespace spidermesh::nn {

// Reverse-mode tape. Ops build a DAG of Nodes; backward() runs the
// recorded closures in reverse topological order. Values are float64.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  Tensor& ensure_grad() {
    if (grad.numel() == 0) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor v);
Var leaf(Tensor v);  // differentiable input (parameter or probed input)

// Escape hatch for composing custom ops (used by tests to build deliberately
// broken nodes): requires_grad is inherited from parents.
Var make_raw_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop);

// Seeds d(root)/d(root) = 1 and accumulates into every reachable
// grad-requiring node. root must be scalar (numel 1).
void backward(const Var& root);

inline double scalar_of(const Var& v) { return v->value[0]; }

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var elu(const Var& x);
Var sigmoid(const Var& x);

// ---- broadcast products ----
// x:(h,w,c) * g:(1,1,c)
Var mul_channel_gain(const Var& x, const Var& g);
// x:(h,w,c) * m:(h,w,1)
Var mul_spatial_mask(const Var& x, const Var& m);

// ---- structure ----
Var concat_channels(const std::vector<Var>& parts);
Var sum_all(const Var& x);  // total over every entry -> (1,1,1)

// ---- reductions over a feature map ----
Var spatial_max_per_channel(const Var& x);   // (h,w,c) -> (1,1,c)
Var spatial_mean_per_channel(const Var& x);  // (h,w,c) -> (1,1,c)
Var channel_max_per_pixel(const Var& x);     // (h,w,c) -> (h,w,1)
Var channel_mean_per_pixel(const Var& x);    // (h,w,c) -> (h,w,1)

// ---- layers ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int dilation = 1);
// Running multiply-add count (2 per MAC) of every conv2d forward since the
// last reset; lets analytic cost models be checked against executed graphs.
int64_t conv_flops();
void reset_conv_flops();
// Single-group normalization: statistics over all of (h,w,c), per-channel affine.
Var group_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// align_corners=false bilinear resize to (out_h, out_w).
Var upsample_bilinear(const Var& x, int out_h, int out_w);

// Mean cross-entropy over pixels whose target != ignore_index; 0 if none.
// targets: row-major h*w ints in {0..k-1} or ignore_index.
Var softmax_ce_mean(const Var& logits, const std::vector<int32_t>& targets, int ignore_index);

}  // namespace spidermesh::nn
