#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hypernst/tensor.hpp"

namespace hypernst::ad {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

struct Node;
using Var = std::shared_ptr<Node>;

// Tape node. The graph is built per forward pass; parameters are long-lived
// leaf nodes whose grads accumulate until explicitly zeroed.
struct Node {
  Tensor val;
  Tensor grad;  // allocated on first accumulate
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  Tensor& grad_ref() {
    if (grad.empty()) grad = Tensor(val.shape);
    return grad;
  }

  void accumulate(const Tensor& g) {
    Tensor& gr = grad_ref();
    for (int i = 0; i < gr.numel(); ++i) gr.v[i] += g.v[i];
  }

  void zero_grad() {
    if (!grad.empty()) grad.fill(0.0);
  }
};

inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  return n;
}

inline Var param(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = true;
  return n;
}

inline Var detach(const Var& x) { return constant(x->val); }

inline Var make(Tensor val, std::vector<Var> parents,
                std::function<void(Node&)> bp) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  for (const auto& p : parents)
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(bp);
  }
  return n;
}

// Reverse-mode sweep from a scalar root. Grads accumulate, so several
// backward() calls on overlapping graphs sum their contributions.
inline void backward(const Var& root) {
  if (root->val.numel() != 1)
    throw ShapeError("backward: root must be a scalar");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx].get();
      ++idx;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root->grad_ref().v[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->val.same_shape(b->val))
    throw ShapeError(cat(op, ": shape mismatch ", a->val.shape_str(), " vs ",
                         b->val.shape_str()));
}

inline Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i) out.v[i] = a->val.v[i] + b->val.v[i];
  return make(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->accumulate(n.grad);
    if (b->requires_grad) b->accumulate(n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i) out.v[i] = a->val.v[i] - b->val.v[i];
  return make(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->accumulate(n.grad);
    if (b->requires_grad) {
      Tensor& g = b->grad_ref();
      for (int i = 0; i < g.numel(); ++i) g.v[i] -= n.grad.v[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i) out.v[i] = a->val.v[i] * b->val.v[i];
  return make(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      Tensor& g = a->grad_ref();
      for (int i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[i] * b->val.v[i];
    }
    if (b->requires_grad) {
      Tensor& g = b->grad_ref();
      for (int i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[i] * a->val.v[i];
    }
  });
}

inline Var smul(const Var& a, double s) {
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i) out.v[i] = a->val.v[i] * s;
  return make(std::move(out), {a}, [a, s](Node& n) {
    Tensor& g = a->grad_ref();
    for (int i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[i] * s;
  });
}

inline Var sadd(const Var& a, double s) {
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i) out.v[i] = a->val.v[i] + s;
  return make(std::move(out), {a},
              [a](Node& n) { a->accumulate(n.grad); });
}

inline Var neg(const Var& a) { return smul(a, -1.0); }

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

inline Var lrelu(const Var& a, double alpha = 0.2) {
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i) {
    double x = a->val.v[i];
    out.v[i] = x > 0.0 ? x : alpha * x;
  }
  return make(std::move(out), {a}, [a, alpha](Node& n) {
    Tensor& g = a->grad_ref();
    for (int i = 0; i < g.numel(); ++i)
      g.v[i] += n.grad.v[i] * (a->val.v[i] > 0.0 ? 1.0 : alpha);
  });
}

inline Var vtanh(const Var& a) {
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i) out.v[i] = std::tanh(a->val.v[i]);
  return make(std::move(out), {a}, [a](Node& n) {
    Tensor& g = a->grad_ref();
    for (int i = 0; i < g.numel(); ++i) {
      double y = n.val.v[i];
      g.v[i] += n.grad.v[i] * (1.0 - y * y);
    }
  });
}

inline double softplus_scalar(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Var softplus(const Var& a) {
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i) out.v[i] = softplus_scalar(a->val.v[i]);
  return make(std::move(out), {a}, [a](Node& n) {
    Tensor& g = a->grad_ref();
    for (int i = 0; i < g.numel(); ++i)
      g.v[i] += n.grad.v[i] * sigmoid_scalar(a->val.v[i]);
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i) out.v[i] = sigmoid_scalar(a->val.v[i]);
  return make(std::move(out), {a}, [a](Node& n) {
    Tensor& g = a->grad_ref();
    for (int i = 0; i < g.numel(); ++i) {
      double y = n.val.v[i];
      g.v[i] += n.grad.v[i] * y * (1.0 - y);
    }
  });
}

inline Var vsqrt(const Var& a) {
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i) out.v[i] = std::sqrt(a->val.v[i]);
  return make(std::move(out), {a}, [a](Node& n) {
    Tensor& g = a->grad_ref();
    for (int i = 0; i < g.numel(); ++i)
      g.v[i] += n.grad.v[i] * 0.5 / n.val.v[i];
  });
}

// 1/sqrt(x + eps)
inline Var rsqrt(const Var& a, double eps = 0.0) {
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i)
    out.v[i] = 1.0 / std::sqrt(a->val.v[i] + eps);
  return make(std::move(out), {a}, [a](Node& n) {
    Tensor& g = a->grad_ref();
    for (int i = 0; i < g.numel(); ++i) {
      double y = n.val.v[i];
      g.v[i] += n.grad.v[i] * (-0.5) * y * y * y;
    }
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a->val.sum());
  return make(std::move(out), {a}, [a](Node& n) {
    Tensor& g = a->grad_ref();
    for (int i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[0];
  });
}

inline Var mean(const Var& a) {
  const double inv = 1.0 / a->val.numel();
  Tensor out = Tensor::scalar(a->val.sum() * inv);
  return make(std::move(out), {a}, [a, inv](Node& n) {
    Tensor& g = a->grad_ref();
    for (int i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[0] * inv;
  });
}

inline Var dot(const Var& a, const Var& b) { return sum(mul(a, b)); }

inline Var mse(const Var& a, const Var& b) {
  Var d = sub(a, b);
  return mean(mul(d, d));
}

// log(sum(exp(x))) over a 1-D tensor, max-stabilized
inline Var logsumexp(const Var& a) {
  const Tensor& x = a->val;
  double m = x.max();
  double s = 0.0;
  for (double xi : x.v) s += std::exp(xi - m);
  Tensor out = Tensor::scalar(m + std::log(s));
  return make(std::move(out), {a}, [a, m, s](Node& n) {
    Tensor& g = a->grad_ref();
    for (int i = 0; i < g.numel(); ++i)
      g.v[i] += n.grad.v[0] * std::exp(a->val.v[i] - m) / s;
  });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Var reshape(const Var& a, std::vector<int> shape) {
  Tensor out = a->val.reshaped(shape);
  return make(std::move(out), {a},
              [a](Node& n) { a->accumulate(n.grad); });
}

inline Var flatten(const Var& a) { return reshape(a, {a->val.numel()}); }

// row i of a 2-D tensor -> 1-D
inline Var slice_row(const Var& a, int i) {
  const int cols = a->val.shape[1];
  Tensor out({cols});
  std::copy_n(a->val.v.begin() + i * cols, cols, out.v.begin());
  return make(std::move(out), {a}, [a, i, cols](Node& n) {
    Tensor& g = a->grad_ref();
    for (int j = 0; j < cols; ++j) g.v[i * cols + j] += n.grad.v[j];
  });
}

// concatenate 1-D tensors
inline Var concat_vec(const std::vector<Var>& xs) {
  int n = 0;
  for (const auto& x : xs) n += x->val.numel();
  Tensor out({n});
  int at = 0;
  for (const auto& x : xs) {
    std::copy(x->val.v.begin(), x->val.v.end(), out.v.begin() + at);
    at += x->val.numel();
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return make(std::move(out), parents, [xs](Node& n_) {
    int at = 0;
    for (const auto& x : xs) {
      if (x->requires_grad) {
        Tensor& g = x->grad_ref();
        for (int i = 0; i < g.numel(); ++i) g.v[i] += n_.grad.v[at + i];
      }
      at += x->val.numel();
    }
  });
}

inline Var concat_scalars(const std::vector<Var>& xs) {
  Tensor out({static_cast<int>(xs.size())});
  for (std::size_t i = 0; i < xs.size(); ++i) out.v[i] = xs[i]->val.v[0];
  std::vector<Var> parents(xs.begin(), xs.end());
  return make(std::move(out), parents, [xs](Node& n) {
    for (std::size_t i = 0; i < xs.size(); ++i)
      if (xs[i]->requires_grad) xs[i]->grad_ref().v[0] += n.grad.v[i];
  });
}

// channel concat of two CHW maps
inline Var concat_ch(const Var& a, const Var& b) {
  const auto& sa = a->val.shape;
  const auto& sb = b->val.shape;
  if (sa.size() != 3 || sb.size() != 3 || sa[1] != sb[1] || sa[2] != sb[2])
    throw ShapeError(cat("concat_ch: ", a->val.shape_str(), " vs ",
                         b->val.shape_str()));
  Tensor out({sa[0] + sb[0], sa[1], sa[2]});
  std::copy(a->val.v.begin(), a->val.v.end(), out.v.begin());
  std::copy(b->val.v.begin(), b->val.v.end(), out.v.begin() + a->val.numel());
  return make(std::move(out), {a, b}, [a, b](Node& n) {
    const int na = a->val.numel();
    if (a->requires_grad) {
      Tensor& g = a->grad_ref();
      for (int i = 0; i < na; ++i) g.v[i] += n.grad.v[i];
    }
    if (b->requires_grad) {
      Tensor& g = b->grad_ref();
      for (int i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[na + i];
    }
  });
}

inline Var slice_ch(const Var& a, int c0, int c1) {
  const auto& s = a->val.shape;
  const int hw = s[1] * s[2];
  Tensor out({c1 - c0, s[1], s[2]});
  std::copy_n(a->val.v.begin() + c0 * hw, (c1 - c0) * hw, out.v.begin());
  return make(std::move(out), {a}, [a, c0, hw](Node& n) {
    Tensor& g = a->grad_ref();
    for (int i = 0; i < n.grad.numel(); ++i) g.v[c0 * hw + i] += n.grad.v[i];
  });
}

// square crop from a CHW map
inline Var crop(const Var& a, int y0, int x0, int h, int w) {
  const auto& s = a->val.shape;
  if (y0 < 0 || x0 < 0 || y0 + h > s[1] || x0 + w > s[2])
    throw ShapeError(cat("crop out of bounds at (", y0, ",", x0, ") size ", h,
                         "x", w, " in ", a->val.shape_str()));
  const int C = s[0], H = s[1], W = s[2];
  Tensor out({C, h, w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < h; ++y)
      std::copy_n(a->val.v.begin() + (c * H + y0 + y) * W + x0, w,
                  out.v.begin() + (c * h + y) * w);
  return make(std::move(out), {a}, [a, y0, x0, h, w, C, H, W](Node& n) {
    Tensor& g = a->grad_ref();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          g.v[(c * H + y0 + y) * W + x0 + x] += n.grad.v[(c * h + y) * w + x];
  });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  const auto& sa = a->val.shape;
  const auto& sb = b->val.shape;
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw ShapeError(cat("matmul: ", a->val.shape_str(), " x ",
                         b->val.shape_str()));
  Tensor out({sa[0], sb[1]});
  ECMap A(a->val.v.data(), sa[0], sa[1]);
  ECMap B(b->val.v.data(), sb[0], sb[1]);
  EMap(out.v.data(), sa[0], sb[1]).noalias() = A * B;
  return make(std::move(out), {a, b}, [a, b](Node& n) {
    const auto& sa = a->val.shape;
    const auto& sb = b->val.shape;
    ECMap A(a->val.v.data(), sa[0], sa[1]);
    ECMap B(b->val.v.data(), sb[0], sb[1]);
    ECMap G(n.grad.v.data(), sa[0], sb[1]);
    if (a->requires_grad)
      EMap(a->grad_ref().v.data(), sa[0], sa[1]).noalias() += G * B.transpose();
    if (b->requires_grad)
      EMap(b->grad_ref().v.data(), sb[0], sb[1]).noalias() += A.transpose() * G;
  });
}

// y = W x + b for a 1-D x
inline Var affine(const Var& x, const Var& w, const Var& b) {
  const auto& sw = w->val.shape;
  if (x->val.ndim() != 1 || sw.size() != 2 || sw[1] != x->val.numel() ||
      b->val.numel() != sw[0])
    throw ShapeError(cat("affine: W", w->val.shape_str(), " x",
                         x->val.shape_str(), " b", b->val.shape_str()));
  const int m = sw[0], k = sw[1];
  Tensor out({m});
  ECMap W(w->val.v.data(), m, k);
  Eigen::Map<const Eigen::VectorXd> X(x->val.v.data(), k);
  Eigen::Map<Eigen::VectorXd> Y(out.v.data(), m);
  Y.noalias() = W * X;
  for (int i = 0; i < m; ++i) out.v[i] += b->val.v[i];
  return make(std::move(out), {x, w, b}, [x, w, b, m, k](Node& n) {
    Eigen::Map<const Eigen::VectorXd> G(n.grad.v.data(), m);
    ECMap W(w->val.v.data(), m, k);
    Eigen::Map<const Eigen::VectorXd> X(x->val.v.data(), k);
    if (x->requires_grad)
      Eigen::Map<Eigen::VectorXd>(x->grad_ref().v.data(), k).noalias() +=
          W.transpose() * G;
    if (w->requires_grad)
      EMap(w->grad_ref().v.data(), m, k).noalias() += G * X.transpose();
    if (b->requires_grad)
      Eigen::Map<Eigen::VectorXd>(b->grad_ref().v.data(), m).noalias() += G;
  });
}

// ---------------------------------------------------------------------------
// convolution (CHW, square kernel) via im2col + GEMM
// ---------------------------------------------------------------------------

namespace detail {

inline void im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo,
                   Tensor& col) {
  const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
  double* out = col.v.data();
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* src = x.v.data() + c * H * W;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            *out++ = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                         ? src[iy * W + ix]
                         : 0.0;
          }
        }
      }
}

inline void col2im_add(const Tensor& col, int C, int H, int W, int k,
                       int stride, int pad, int ho, int wo, Tensor& x) {
  const double* in = col.v.data();
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* dst = x.v.data() + c * H * W;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            double v = *in++;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W) dst[iy * W + ix] += v;
          }
        }
      }
}

}  // namespace detail

// x: [C,H,W], w: [O,C,k,k] -> [O,Ho,Wo]. Bias is a separate op.
inline Var conv2d(const Var& x, const Var& w, int stride, int pad) {
  const auto& sx = x->val.shape;
  const auto& sw = w->val.shape;
  if (sx.size() != 3 || sw.size() != 4 || sw[1] != sx[0] || sw[2] != sw[3])
    throw ShapeError(cat("conv2d: x", x->val.shape_str(), " w",
                         w->val.shape_str()));
  const int C = sx[0], H = sx[1], W = sx[2];
  const int O = sw[0], k = sw[2];
  const int ho = (H + 2 * pad - k) / stride + 1;
  const int wo = (W + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0)
    throw ShapeError(cat("conv2d: kernel ", k, " too large for ", H, "x", W));

  auto col = std::make_shared<Tensor>(std::vector<int>{C * k * k, ho * wo});
  detail::im2col(x->val, k, stride, pad, ho, wo, *col);
  Tensor out({O, ho, wo});
  ECMap Wm(w->val.v.data(), O, C * k * k);
  ECMap Cm(col->v.data(), C * k * k, ho * wo);
  EMap(out.v.data(), O, ho * wo).noalias() = Wm * Cm;

  return make(std::move(out), {x, w},
              [x, w, col, C, H, W, O, k, stride, pad, ho, wo](Node& n) {
                ECMap G(n.grad.v.data(), O, ho * wo);
                if (w->requires_grad) {
                  ECMap Cm(col->v.data(), C * k * k, ho * wo);
                  EMap(w->grad_ref().v.data(), O, C * k * k).noalias() +=
                      G * Cm.transpose();
                }
                if (x->requires_grad) {
                  Tensor dcol({C * k * k, ho * wo});
                  ECMap Wm(w->val.v.data(), O, C * k * k);
                  EMap(dcol.v.data(), C * k * k, ho * wo).noalias() =
                      Wm.transpose() * G;
                  detail::col2im_add(dcol, C, H, W, k, stride, pad, ho, wo,
                                     x->grad_ref());
                }
              });
}

// x: [C,H,W] + b: [C]
inline Var add_bias_ch(const Var& x, const Var& b) {
  const auto& s = x->val.shape;
  if (s.size() != 3 || b->val.numel() != s[0])
    throw ShapeError(cat("add_bias_ch: x", x->val.shape_str(), " b",
                         b->val.shape_str()));
  const int C = s[0], hw = s[1] * s[2];
  Tensor out = x->val;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < hw; ++i) out.v[c * hw + i] += b->val.v[c];
  return make(std::move(out), {x, b}, [x, b, C, hw](Node& n) {
    if (x->requires_grad) x->accumulate(n.grad);
    if (b->requires_grad) {
      Tensor& g = b->grad_ref();
      for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int i = 0; i < hw; ++i) s += n.grad.v[c * hw + i];
        g.v[c] += s;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// spatial resampling
// ---------------------------------------------------------------------------

inline Var upsample2(const Var& x) {
  const auto& s = x->val.shape;
  const int C = s[0], H = s[1], W = s[2];
  Tensor out({C, 2 * H, 2 * W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < 2 * H; ++y)
      for (int xx = 0; xx < 2 * W; ++xx)
        out.v[(c * 2 * H + y) * 2 * W + xx] =
            x->val.v[(c * H + y / 2) * W + xx / 2];
  return make(std::move(out), {x}, [x, C, H, W](Node& n) {
    Tensor& g = x->grad_ref();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < 2 * H; ++y)
        for (int xx = 0; xx < 2 * W; ++xx)
          g.v[(c * H + y / 2) * W + xx / 2] +=
              n.grad.v[(c * 2 * H + y) * 2 * W + xx];
  });
}

inline Var avgpool2(const Var& x) {
  const auto& s = x->val.shape;
  const int C = s[0], H = s[1] / 2, W = s[2] / 2;
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        const int base = (c * 2 * H + 2 * y) * 2 * W + 2 * xx;
        out.v[(c * H + y) * W + xx] =
            0.25 * (x->val.v[base] + x->val.v[base + 1] +
                    x->val.v[base + 2 * W] + x->val.v[base + 2 * W + 1]);
      }
  return make(std::move(out), {x}, [x, C, H, W](Node& n) {
    Tensor& g = x->grad_ref();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          const double v = 0.25 * n.grad.v[(c * H + y) * W + xx];
          const int base = (c * 2 * H + 2 * y) * 2 * W + 2 * xx;
          g.v[base] += v;
          g.v[base + 1] += v;
          g.v[base + 2 * W] += v;
          g.v[base + 2 * W + 1] += v;
        }
  });
}

// ---------------------------------------------------------------------------
// channel-structured ops used by modulated convolution and style statistics
// ---------------------------------------------------------------------------

// scale each slice along dim 0: out[o,...] = w[o,...] * v[o]
inline Var mul_outer(const Var& w, const Var& v) {
  const auto& s = w->val.shape;
  const int O = s[0];
  if (v->val.numel() != O)
    throw ShapeError(cat("mul_outer: ", w->val.shape_str(), " with ",
                         v->val.shape_str()));
  const int inner = w->val.numel() / O;
  Tensor out(w->val.shape);
  for (int o = 0; o < O; ++o)
    for (int i = 0; i < inner; ++i)
      out.v[o * inner + i] = w->val.v[o * inner + i] * v->val.v[o];
  return make(std::move(out), {w, v}, [w, v, O, inner](Node& n) {
    if (w->requires_grad) {
      Tensor& g = w->grad_ref();
      for (int o = 0; o < O; ++o)
        for (int i = 0; i < inner; ++i)
          g.v[o * inner + i] += n.grad.v[o * inner + i] * v->val.v[o];
    }
    if (v->requires_grad) {
      Tensor& g = v->grad_ref();
      for (int o = 0; o < O; ++o) {
        double s = 0.0;
        for (int i = 0; i < inner; ++i)
          s += n.grad.v[o * inner + i] * w->val.v[o * inner + i];
        g.v[o] += s;
      }
    }
  });
}

// scale along dim 1 of a 4-D weight: out[o,i,:,:] = w[o,i,:,:] * v[i]
inline Var mul_dim1(const Var& w, const Var& v) {
  const auto& s = w->val.shape;
  if (s.size() != 4 || v->val.numel() != s[1])
    throw ShapeError(cat("mul_dim1: ", w->val.shape_str(), " with ",
                         v->val.shape_str()));
  const int O = s[0], I = s[1], kk = s[2] * s[3];
  Tensor out(w->val.shape);
  for (int o = 0; o < O; ++o)
    for (int i = 0; i < I; ++i)
      for (int j = 0; j < kk; ++j)
        out.v[(o * I + i) * kk + j] = w->val.v[(o * I + i) * kk + j] * v->val.v[i];
  return make(std::move(out), {w, v}, [w, v, O, I, kk](Node& n) {
    if (w->requires_grad) {
      Tensor& g = w->grad_ref();
      for (int o = 0; o < O; ++o)
        for (int i = 0; i < I; ++i)
          for (int j = 0; j < kk; ++j)
            g.v[(o * I + i) * kk + j] += n.grad.v[(o * I + i) * kk + j] * v->val.v[i];
    }
    if (v->requires_grad) {
      Tensor& g = v->grad_ref();
      for (int i = 0; i < I; ++i) {
        double s = 0.0;
        for (int o = 0; o < O; ++o)
          for (int j = 0; j < kk; ++j)
            s += n.grad.v[(o * I + i) * kk + j] * w->val.v[(o * I + i) * kk + j];
        g.v[i] += s;
      }
    }
  });
}

// per-slice sum of squares along dim 0: out[o] = sum(w[o,...]^2)
inline Var sumsq_outer(const Var& w) {
  const int O = w->val.shape[0];
  const int inner = w->val.numel() / O;
  Tensor out({O});
  for (int o = 0; o < O; ++o) {
    double s = 0.0;
    for (int i = 0; i < inner; ++i) {
      double x = w->val.v[o * inner + i];
      s += x * x;
    }
    out.v[o] = s;
  }
  return make(std::move(out), {w}, [w, O, inner](Node& n) {
    Tensor& g = w->grad_ref();
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < inner; ++i)
        g.v[o * inner + i] += 2.0 * w->val.v[o * inner + i] * n.grad.v[o];
  });
}

// per-channel mean over spatial dims: [C,H,W] -> [C]
inline Var ch_mean(const Var& x) {
  const auto& s = x->val.shape;
  const int C = s[0], hw = s[1] * s[2];
  const double inv = 1.0 / hw;
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    double m = 0.0;
    for (int i = 0; i < hw; ++i) m += x->val.v[c * hw + i];
    out.v[c] = m * inv;
  }
  return make(std::move(out), {x}, [x, C, hw, inv](Node& n) {
    Tensor& g = x->grad_ref();
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < hw; ++i) g.v[c * hw + i] += n.grad.v[c] * inv;
  });
}

// LPIPS-style per-position unit normalization over channels
inline Var unit_normalize_ch(const Var& x, double eps = 1e-10) {
  const auto& s = x->val.shape;
  const int C = s[0], hw = s[1] * s[2];
  Tensor out(x->val.shape);
  Tensor r({s[1], s[2]});
  for (int p = 0; p < hw; ++p) {
    double ss = 0.0;
    for (int c = 0; c < C; ++c) {
      double v = x->val.v[c * hw + p];
      ss += v * v;
    }
    r.v[p] = 1.0 / std::sqrt(ss + eps);
    for (int c = 0; c < C; ++c) out.v[c * hw + p] = x->val.v[c * hw + p] * r.v[p];
  }
  auto rp = std::make_shared<Tensor>(std::move(r));
  return make(std::move(out), {x}, [x, rp, C, hw](Node& n) {
    Tensor& g = x->grad_ref();
    for (int p = 0; p < hw; ++p) {
      const double rv = rp->v[p];
      double gy_dot_x = 0.0;
      for (int c = 0; c < C; ++c)
        gy_dot_x += n.grad.v[c * hw + p] * x->val.v[c * hw + p];
      for (int c = 0; c < C; ++c)
        g.v[c * hw + p] += rv * n.grad.v[c * hw + p] -
                           rv * rv * rv * x->val.v[c * hw + p] * gy_dot_x;
    }
  });
}

}  // namespace hypernst::ad
