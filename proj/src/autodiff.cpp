#include "spidermesh/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace spidermesh::nn {

namespace {

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const Var& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

void check3(const Var& x, const char* who) {
  if (x->value.rank() != 3) fail("shape-mismatch", std::string(who) + ": expected rank-3 feature map");
}

}  // namespace

Var make_raw_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  return make_node(std::move(value), std::move(parents), std::move(backprop));
}

Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

Var leaf(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

void backward(const Var& root) {
  if (root->value.numel() != 1) fail("shape-mismatch", "backward root must be scalar");
  if (!root->requires_grad) return;

  // Iterative DFS post-order; reversed it is a valid topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.numel() != 0) n->backprop(*n);
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) fail("shape-mismatch", "add operands differ");
  Tensor out = a->value;
  out.add_scaled(b->value, 1.0);
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad().add_scaled(n.grad, 1.0);
    if (b->requires_grad) b->ensure_grad().add_scaled(n.grad, 1.0);
  });
}

Var sub(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) fail("shape-mismatch", "sub operands differ");
  Tensor out = a->value;
  out.add_scaled(b->value, -1.0);
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad().add_scaled(n.grad, 1.0);
    if (b->requires_grad) b->ensure_grad().add_scaled(n.grad, -1.0);
  });
}

Var hadamard(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) fail("shape-mismatch", "hadamard operands differ");
  Tensor out = a->value;
  const int64_t m = out.numel();
  for (int64_t i = 0; i < m; ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, [a, b, m](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (int64_t i = 0; i < m; ++i) ga[i] += n.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int64_t i = 0; i < m; ++i) gb[i] += n.grad[i] * a->value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  const int64_t m = out.numel();
  for (int64_t i = 0; i < m; ++i) out[i] *= s;
  return make_node(std::move(out), {a}, [a, s](Node& n) {
    if (a->requires_grad) a->ensure_grad().add_scaled(n.grad, s);
  });
}

Var elu(const Var& x) {
  Tensor out = x->value;
  const int64_t m = out.numel();
  for (int64_t i = 0; i < m; ++i) {
    const double v = out[i];
    if (v <= 0.0) out[i] = std::expm1(v);
  }
  return make_node(std::move(out), {x}, [x, m](Node& n) {
    Tensor& gx = x->ensure_grad();
    for (int64_t i = 0; i < m; ++i) {
      const double v = x->value[i];
      gx[i] += n.grad[i] * (v > 0.0 ? 1.0 : std::exp(v));
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x->value;
  const int64_t m = out.numel();
  for (int64_t i = 0; i < m; ++i) {
    const double v = out[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return make_node(std::move(out), {x}, [x, m](Node& n) {
    Tensor& gx = x->ensure_grad();
    for (int64_t i = 0; i < m; ++i) {
      const double s = n.value[i];
      gx[i] += n.grad[i] * s * (1.0 - s);
    }
  });
}

// ----------------------------------------------------------------- broadcast

Var mul_channel_gain(const Var& x, const Var& g) {
  check3(x, "mul_channel_gain");
  const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  if (g->value.rank() != 3 || g->value.dim(0) != 1 || g->value.dim(1) != 1 || g->value.dim(2) != c)
    fail("shape-mismatch", "channel gain must be (1,1,c)");
  Tensor out({h, w, c});
  const double* xp = x->value.data();
  const double* gp = g->value.data();
  double* op = out.data();
  const int64_t px = static_cast<int64_t>(h) * w;
  for (int64_t p = 0; p < px; ++p)
    for (int k = 0; k < c; ++k) op[p * c + k] = xp[p * c + k] * gp[k];
  return make_node(std::move(out), {x, g}, [x, g, px, c](Node& n) {
    if (x->requires_grad) {
      Tensor& gx = x->ensure_grad();
      const double* gp = g->value.data();
      for (int64_t p = 0; p < px; ++p)
        for (int k = 0; k < c; ++k) gx[p * c + k] += n.grad[p * c + k] * gp[k];
    }
    if (g->requires_grad) {
      Tensor& gg = g->ensure_grad();
      const double* xp = x->value.data();
      for (int64_t p = 0; p < px; ++p)
        for (int k = 0; k < c; ++k) gg[k] += n.grad[p * c + k] * xp[p * c + k];
    }
  });
}

Var mul_spatial_mask(const Var& x, const Var& m) {
  check3(x, "mul_spatial_mask");
  const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  if (m->value.rank() != 3 || m->value.dim(0) != h || m->value.dim(1) != w || m->value.dim(2) != 1)
    fail("shape-mismatch", "spatial mask must be (h,w,1)");
  Tensor out({h, w, c});
  const double* xp = x->value.data();
  const double* mp = m->value.data();
  double* op = out.data();
  const int64_t px = static_cast<int64_t>(h) * w;
  for (int64_t p = 0; p < px; ++p) {
    const double mv = mp[p];
    for (int k = 0; k < c; ++k) op[p * c + k] = xp[p * c + k] * mv;
  }
  return make_node(std::move(out), {x, m}, [x, m, px, c](Node& n) {
    if (x->requires_grad) {
      Tensor& gx = x->ensure_grad();
      const double* mp = m->value.data();
      for (int64_t p = 0; p < px; ++p) {
        const double mv = mp[p];
        for (int k = 0; k < c; ++k) gx[p * c + k] += n.grad[p * c + k] * mv;
      }
    }
    if (m->requires_grad) {
      Tensor& gm = m->ensure_grad();
      const double* xp = x->value.data();
      for (int64_t p = 0; p < px; ++p) {
        double s = 0.0;
        for (int k = 0; k < c; ++k) s += n.grad[p * c + k] * xp[p * c + k];
        gm[p] += s;
      }
    }
  });
}

// ----------------------------------------------------------------- structure

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) fail("shape-mismatch", "concat_channels: no inputs");
  const int h = parts[0]->value.dim(0), w = parts[0]->value.dim(1);
  int cc = 0;
  std::vector<int> channels;
  for (const Var& p : parts) {
    check3(p, "concat_channels");
    if (p->value.dim(0) != h || p->value.dim(1) != w)
      fail("shape-mismatch", "concat_channels spatial dims differ");
    channels.push_back(p->value.dim(2));
    cc += p->value.dim(2);
  }
  Tensor out({h, w, cc});
  const int64_t px = static_cast<int64_t>(h) * w;
  double* op = out.data();
  int base = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    const double* sp = parts[i]->value.data();
    const int ci = channels[i];
    for (int64_t p = 0; p < px; ++p)
      std::copy(sp + p * ci, sp + (p + 1) * ci, op + p * cc + base);
    base += ci;
  }
  return make_node(std::move(out), parts, [parts, channels, px, cc](Node& n) {
    int off = 0;
    for (size_t i = 0; i < parts.size(); ++i) {
      const int ci = channels[i];
      if (parts[i]->requires_grad) {
        Tensor& g = parts[i]->ensure_grad();
        for (int64_t p = 0; p < px; ++p)
          for (int k = 0; k < ci; ++k) g[p * ci + k] += n.grad[p * cc + off + k];
      }
      off += ci;
    }
  });
}

Var sum_all(const Var& x) {
  Tensor out({1, 1, 1});
  double total = 0.0;
  for (int i = 0; i < x->value.numel(); ++i) total += x->value[i];
  out[0] = total;
  return make_node(std::move(out), {x}, [x](Node& n) {
    Tensor& g = x->ensure_grad();
    const double up = n.grad[0];
    for (int i = 0; i < g.numel(); ++i) g[i] += up;
  });
}

// ---------------------------------------------------------------- reductions

Var spatial_max_per_channel(const Var& x) {
  check3(x, "spatial_max_per_channel");
  const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  Tensor out({1, 1, c});
  auto argmax = std::make_shared<std::vector<int64_t>>(c);
  const int64_t px = static_cast<int64_t>(h) * w;
  const double* xp = x->value.data();
  for (int k = 0; k < c; ++k) {
    double best = xp[k];
    int64_t bi = 0;
    for (int64_t p = 1; p < px; ++p)
      if (xp[p * c + k] > best) {
        best = xp[p * c + k];
        bi = p;
      }
    out[k] = best;
    (*argmax)[k] = bi;
  }
  return make_node(std::move(out), {x}, [x, argmax, c](Node& n) {
    Tensor& gx = x->ensure_grad();
    for (int k = 0; k < c; ++k) gx[(*argmax)[k] * c + k] += n.grad[k];
  });
}

Var spatial_mean_per_channel(const Var& x) {
  check3(x, "spatial_mean_per_channel");
  const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  Tensor out({1, 1, c});
  const int64_t px = static_cast<int64_t>(h) * w;
  const double* xp = x->value.data();
  for (int64_t p = 0; p < px; ++p)
    for (int k = 0; k < c; ++k) out[k] += xp[p * c + k];
  for (int k = 0; k < c; ++k) out[k] /= static_cast<double>(px);
  return make_node(std::move(out), {x}, [x, px, c](Node& n) {
    Tensor& gx = x->ensure_grad();
    const double inv = 1.0 / static_cast<double>(px);
    for (int64_t p = 0; p < px; ++p)
      for (int k = 0; k < c; ++k) gx[p * c + k] += n.grad[k] * inv;
  });
}

Var channel_max_per_pixel(const Var& x) {
  check3(x, "channel_max_per_pixel");
  const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  Tensor out({h, w, 1});
  const int64_t px = static_cast<int64_t>(h) * w;
  auto argmax = std::make_shared<std::vector<int32_t>>(px);
  const double* xp = x->value.data();
  for (int64_t p = 0; p < px; ++p) {
    double best = xp[p * c];
    int32_t bk = 0;
    for (int k = 1; k < c; ++k)
      if (xp[p * c + k] > best) {
        best = xp[p * c + k];
        bk = k;
      }
    out[p] = best;
    (*argmax)[p] = bk;
  }
  return make_node(std::move(out), {x}, [x, argmax, px, c](Node& n) {
    Tensor& gx = x->ensure_grad();
    for (int64_t p = 0; p < px; ++p) gx[p * c + (*argmax)[p]] += n.grad[p];
  });
}

Var channel_mean_per_pixel(const Var& x) {
  check3(x, "channel_mean_per_pixel");
  const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  Tensor out({h, w, 1});
  const int64_t px = static_cast<int64_t>(h) * w;
  const double* xp = x->value.data();
  const double inv = 1.0 / c;
  for (int64_t p = 0; p < px; ++p) {
    double s = 0.0;
    for (int k = 0; k < c; ++k) s += xp[p * c + k];
    out[p] = s * inv;
  }
  return make_node(std::move(out), {x}, [x, px, c, inv](Node& n) {
    Tensor& gx = x->ensure_grad();
    for (int64_t p = 0; p < px; ++p)
      for (int k = 0; k < c; ++k) gx[p * c + k] += n.grad[p] * inv;
  });
}

// -------------------------------------------------------------------- layers

namespace {
int64_t g_conv_flops = 0;
}  // namespace

int64_t conv_flops() { return g_conv_flops; }
void reset_conv_flops() { g_conv_flops = 0; }

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int dilation) {
  check3(x, "conv2d");
  if (w->value.rank() != 4) fail("shape-mismatch", "conv2d weight must be (kh,kw,ci,co)");
  const int h = x->value.dim(0), wd = x->value.dim(1), ci = x->value.dim(2);
  const int kh = w->value.dim(0), kw = w->value.dim(1);
  const int wci = w->value.dim(2), co = w->value.dim(3);
  if (ci != wci)
    fail("channel-mismatch", "conv2d input has " + std::to_string(ci) + " channels, weight expects " +
                                 std::to_string(wci));
  if (b && (b->value.rank() != 1 || b->value.dim(0) != co))
    fail("shape-mismatch", "conv2d bias must be (co)");
  const int eff_kh = (kh - 1) * dilation + 1;
  const int eff_kw = (kw - 1) * dilation + 1;
  const int oh = (h + 2 * pad - eff_kh) / stride + 1;
  const int ow = (wd + 2 * pad - eff_kw) / stride + 1;
  if (oh < 1 || ow < 1) fail("shape-mismatch", "conv2d output would be empty");
  g_conv_flops += 2LL * kh * kw * ci * co * oh * ow;

  Tensor out({oh, ow, co});
  {
    const double* xp = x->value.data();
    const double* wp = w->value.data();
    double* op = out.data();
    for (int y = 0; y < oh; ++y) {
      const int ih0 = y * stride - pad;
      for (int xo = 0; xo < ow; ++xo) {
        const int iw0 = xo * stride - pad;
        double* orow = op + (static_cast<int64_t>(y) * ow + xo) * co;
        if (b) {
          const double* bp = b->value.data();
          std::copy(bp, bp + co, orow);
        }
        for (int a = 0; a < kh; ++a) {
          const int iy = ih0 + a * dilation;
          if (iy < 0 || iy >= h) continue;
          for (int bb = 0; bb < kw; ++bb) {
            const int ix = iw0 + bb * dilation;
            if (ix < 0 || ix >= wd) continue;
            const double* xrow = xp + (static_cast<int64_t>(iy) * wd + ix) * ci;
            const double* wrow = wp + (static_cast<int64_t>(a) * kw + bb) * ci * co;
            for (int k = 0; k < ci; ++k) {
              const double xv = xrow[k];
              const double* wr = wrow + static_cast<int64_t>(k) * co;
              for (int q = 0; q < co; ++q) orow[q] += xv * wr[q];
            }
          }
        }
      }
    }
  }

  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_node(std::move(out), std::move(parents),
                   [x, w, b, stride, pad, dilation, h, wd, ci, kh, kw, co, oh, ow](Node& n) {
    const double* gp = n.grad.data();
    const double* xp = x->value.data();
    const double* wp = w->value.data();
    double* gxp = x->requires_grad ? x->ensure_grad().data() : nullptr;
    double* gwp = w->requires_grad ? w->ensure_grad().data() : nullptr;
    for (int y = 0; y < oh; ++y) {
      const int ih0 = y * stride - pad;
      for (int xo = 0; xo < ow; ++xo) {
        const int iw0 = xo * stride - pad;
        const double* grow = gp + (static_cast<int64_t>(y) * ow + xo) * co;
        for (int a = 0; a < kh; ++a) {
          const int iy = ih0 + a * dilation;
          if (iy < 0 || iy >= h) continue;
          for (int bb = 0; bb < kw; ++bb) {
            const int ix = iw0 + bb * dilation;
            if (ix < 0 || ix >= wd) continue;
            const int64_t xoff = (static_cast<int64_t>(iy) * wd + ix) * ci;
            const int64_t woff = (static_cast<int64_t>(a) * kw + bb) * ci * co;
            if (gxp) {
              for (int k = 0; k < ci; ++k) {
                const double* wr = wp + woff + static_cast<int64_t>(k) * co;
                double s = 0.0;
                for (int q = 0; q < co; ++q) s += grow[q] * wr[q];
                gxp[xoff + k] += s;
              }
            }
            if (gwp) {
              const double* xrow = xp + xoff;
              for (int k = 0; k < ci; ++k) {
                const double xv = xrow[k];
                double* gwr = gwp + woff + static_cast<int64_t>(k) * co;
                for (int q = 0; q < co; ++q) gwr[q] += xv * grow[q];
              }
            }
          }
        }
      }
    }
    if (b && b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      const int64_t px = static_cast<int64_t>(oh) * ow;
      for (int64_t p = 0; p < px; ++p)
        for (int q = 0; q < co; ++q) gb[q] += gp[p * co + q];
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  check3(x, "group_norm");
  const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  if (gamma->value.numel() != c || beta->value.numel() != c)
    fail("shape-mismatch", "group_norm affine params must have c entries");
  const int64_t m = static_cast<int64_t>(h) * w * c;
  const double* xp = x->value.data();
  double mu = 0.0;
  for (int64_t i = 0; i < m; ++i) mu += xp[i];
  mu /= static_cast<double>(m);
  double var = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    const double d = xp[i] - mu;
    var += d * d;
  }
  var /= static_cast<double>(m);
  const double inv_s = 1.0 / std::sqrt(var + eps);

  Tensor out({h, w, c});
  const double* gm = gamma->value.data();
  const double* bt = beta->value.data();
  double* op = out.data();
  const int64_t px = static_cast<int64_t>(h) * w;
  for (int64_t p = 0; p < px; ++p)
    for (int k = 0; k < c; ++k) {
      const double xhat = (xp[p * c + k] - mu) * inv_s;
      op[p * c + k] = gm[k] * xhat + bt[k];
    }

  return make_node(std::move(out), {x, gamma, beta}, [x, gamma, beta, mu, inv_s, px, c, m](Node& n) {
    const double* xp = x->value.data();
    const double* gm = gamma->value.data();
    const double* gp = n.grad.data();
    // g = dy * gamma; dx = inv_s * (g - mean(g) - xhat * mean(g*xhat))
    if (x->requires_grad) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int64_t p = 0; p < px; ++p)
        for (int k = 0; k < c; ++k) {
          const double g = gp[p * c + k] * gm[k];
          const double xhat = (xp[p * c + k] - mu) * inv_s;
          sum_g += g;
          sum_gx += g * xhat;
        }
      const double mg = sum_g / static_cast<double>(m);
      const double mgx = sum_gx / static_cast<double>(m);
      Tensor& gx = x->ensure_grad();
      for (int64_t p = 0; p < px; ++p)
        for (int k = 0; k < c; ++k) {
          const double g = gp[p * c + k] * gm[k];
          const double xhat = (xp[p * c + k] - mu) * inv_s;
          gx[p * c + k] += inv_s * (g - mg - xhat * mgx);
        }
    }
    if (gamma->requires_grad) {
      Tensor& gg = gamma->ensure_grad();
      for (int64_t p = 0; p < px; ++p)
        for (int k = 0; k < c; ++k)
          gg[k] += gp[p * c + k] * (xp[p * c + k] - mu) * inv_s;
    }
    if (beta->requires_grad) {
      Tensor& gb = beta->ensure_grad();
      for (int64_t p = 0; p < px; ++p)
        for (int k = 0; k < c; ++k) gb[k] += gp[p * c + k];
    }
  });
}

namespace {
struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is 1-w1
};

LerpAxis lerp_axis(int in, int out) {
  LerpAxis ax;
  ax.i0.resize(out);
  ax.i1.resize(out);
  ax.w1.resize(out);
  const double r = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * r - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > in - 1) src = in - 1;
    const int lo = static_cast<int>(std::floor(src));
    ax.i0[o] = lo;
    ax.i1[o] = std::min(lo + 1, in - 1);
    ax.w1[o] = src - lo;
  }
  return ax;
}
}  // namespace

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
  check3(x, "upsample_bilinear");
  const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  auto ay = std::make_shared<LerpAxis>(lerp_axis(h, out_h));
  auto ax = std::make_shared<LerpAxis>(lerp_axis(w, out_w));
  Tensor out({out_h, out_w, c});
  const double* xp = x->value.data();
  double* op = out.data();
  for (int oy = 0; oy < out_h; ++oy) {
    const int y0 = ay->i0[oy], y1 = ay->i1[oy];
    const double fy = ay->w1[oy];
    for (int ox = 0; ox < out_w; ++ox) {
      const int x0 = ax->i0[ox], x1 = ax->i1[ox];
      const double fx = ax->w1[ox];
      const double* p00 = xp + (static_cast<int64_t>(y0) * w + x0) * c;
      const double* p01 = xp + (static_cast<int64_t>(y0) * w + x1) * c;
      const double* p10 = xp + (static_cast<int64_t>(y1) * w + x0) * c;
      const double* p11 = xp + (static_cast<int64_t>(y1) * w + x1) * c;
      double* orow = op + (static_cast<int64_t>(oy) * out_w + ox) * c;
      const double w00 = (1.0 - fy) * (1.0 - fx), w01 = (1.0 - fy) * fx;
      const double w10 = fy * (1.0 - fx), w11 = fy * fx;
      for (int k = 0; k < c; ++k)
        orow[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
    }
  }
  return make_node(std::move(out), {x}, [x, ay, ax, w, c, out_h, out_w](Node& n) {
    Tensor& gx = x->ensure_grad();
    const double* gp = n.grad.data();
    for (int oy = 0; oy < out_h; ++oy) {
      const int y0 = ay->i0[oy], y1 = ay->i1[oy];
      const double fy = ay->w1[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        const int x0 = ax->i0[ox], x1 = ax->i1[ox];
        const double fx = ax->w1[ox];
        const double* grow = gp + (static_cast<int64_t>(oy) * out_w + ox) * c;
        double* g00 = gx.data() + (static_cast<int64_t>(y0) * w + x0) * c;
        double* g01 = gx.data() + (static_cast<int64_t>(y0) * w + x1) * c;
        double* g10 = gx.data() + (static_cast<int64_t>(y1) * w + x0) * c;
        double* g11 = gx.data() + (static_cast<int64_t>(y1) * w + x1) * c;
        const double w00 = (1.0 - fy) * (1.0 - fx), w01 = (1.0 - fy) * fx;
        const double w10 = fy * (1.0 - fx), w11 = fy * fx;
        for (int k = 0; k < c; ++k) {
          const double g = grow[k];
          g00[k] += w00 * g;
          g01[k] += w01 * g;
          g10[k] += w10 * g;
          g11[k] += w11 * g;
        }
      }
    }
  });
}

Var softmax_ce_mean(const Var& logits, const std::vector<int32_t>& targets, int ignore_index) {
  check3(logits, "softmax_ce_mean");
  const int h = logits->value.dim(0), w = logits->value.dim(1), k = logits->value.dim(2);
  if (static_cast<int64_t>(targets.size()) != static_cast<int64_t>(h) * w)
    fail("shape-mismatch", "target label map does not match logits spatial dims");
  const int64_t px = static_cast<int64_t>(h) * w;
  const double* lp = logits->value.data();
  int64_t valid = 0;
  double loss = 0.0;
  for (int64_t p = 0; p < px; ++p) {
    const int32_t t = targets[p];
    if (t == ignore_index) continue;
    if (t < 0 || t >= k) fail("out-of-range-label", "target " + std::to_string(t) + " outside 0.." + std::to_string(k - 1));
    ++valid;
    const double* row = lp + p * k;
    double mx = row[0];
    for (int q = 1; q < k; ++q) mx = std::max(mx, row[q]);
    double se = 0.0;
    for (int q = 0; q < k; ++q) se += std::exp(row[q] - mx);
    loss += mx + std::log(se) - row[t];
  }
  Tensor out({1});
  out[0] = valid > 0 ? loss / static_cast<double>(valid) : 0.0;
  auto tgt = std::make_shared<std::vector<int32_t>>(targets);
  return make_node(std::move(out), {logits}, [logits, tgt, ignore_index, px, k, valid](Node& n) {
    if (valid == 0) return;
    Tensor& gx = logits->ensure_grad();
    const double up = n.grad[0] / static_cast<double>(valid);
    const double* lp = logits->value.data();
    for (int64_t p = 0; p < px; ++p) {
      const int32_t t = (*tgt)[p];
      if (t == ignore_index) continue;
      const double* row = lp + p * k;
      double mx = row[0];
      for (int q = 1; q < k; ++q) mx = std::max(mx, row[q]);
      double se = 0.0;
      for (int q = 0; q < k; ++q) se += std::exp(row[q] - mx);
      for (int q = 0; q < k; ++q) {
        const double soft = std::exp(row[q] - mx) / se;
        gx[p * k + q] += up * (soft - (q == t ? 1.0 : 0.0));
      }
    }
  });
}

}  // namespace spidermesh::nn
