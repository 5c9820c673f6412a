#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hypernst/autodiff.hpp"

namespace hypernst::nn {

using ad::Var;

// Named parameter registry. Modules expose their leaves through this so the
// optimizer, checkpoint writer and freeze-hash checks all see the same set.
struct ParamMap {
  std::vector<std::pair<std::string, Var>> items;

  void add(std::string name, Var v) { items.push_back({std::move(name), std::move(v)}); }

  void append(const std::string& prefix, const ParamMap& other) {
    for (const auto& [name, v] : other.items) items.push_back({prefix + name, v});
  }

  std::vector<Var> vars() const {
    std::vector<Var> out;
    out.reserve(items.size());
    for (const auto& [_, v] : items) out.push_back(v);
    return out;
  }

  const Var* find(const std::string& name) const {
    for (const auto& [n, v] : items)
      if (n == name) return &v;
    return nullptr;
  }
};

inline void set_requires_grad(const ParamMap& p, bool rg) {
  for (const auto& [_, v] : p.items) v->requires_grad = rg;
}

inline std::uint64_t param_hash(const ParamMap& p) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& [name, v] : p.items) {
    h = fnv1a64(name.data(), name.size(), h);
    h = tensor_hash(v->val, h);
  }
  return h;
}

struct Linear {
  Var w, b;  // w: [out, in]

  static Linear create(int in, int out, Rng& rng, double wscale) {
    Linear l;
    l.w = ad::param(Tensor::randn({out, in}, rng, wscale));
    l.b = ad::param(Tensor({out}));
    return l;
  }

  // He-style init for lrelu stacks
  static Linear create_he(int in, int out, Rng& rng) {
    return create(in, out, rng, std::sqrt(2.0 / in));
  }

  static Linear create_zero(int in, int out) {
    Linear l;
    l.w = ad::param(Tensor({out, in}));
    l.b = ad::param(Tensor({out}));
    return l;
  }

  Var operator()(const Var& x) const { return ad::affine(x, w, b); }

  ParamMap params(const std::string& prefix) const {
    ParamMap p;
    p.add(prefix + "/weight", w);
    p.add(prefix + "/bias", b);
    return p;
  }
};

struct Conv {
  Var w, b;  // w: [O,C,k,k]
  int stride = 1;
  int pad = 1;

  static Conv create(int in_ch, int out_ch, int k, int stride, Rng& rng) {
    Conv c;
    c.w = ad::param(Tensor::randn({out_ch, in_ch, k, k}, rng,
                                  std::sqrt(2.0 / (in_ch * k * k))));
    c.b = ad::param(Tensor({out_ch}));
    c.stride = stride;
    c.pad = k / 2;
    return c;
  }

  Var operator()(const Var& x) const {
    return ad::add_bias_ch(ad::conv2d(x, w, stride, pad), b);
  }

  int out_channels() const { return w->val.shape[0]; }
  int in_channels() const { return w->val.shape[1]; }

  ParamMap params(const std::string& prefix) const {
    ParamMap p;
    p.add(prefix + "/weight", w);
    p.add(prefix + "/bias", b);
    return p;
  }
};

// Downsampling conv encoder: repeated stride-2 lrelu convs from `in_size` to
// `out_size`, channel schedule 16,32,64,... capped, final layer `out_ch`.
struct ConvStack {
  std::vector<Conv> convs;

  static ConvStack create(int in_ch, int in_size, int out_size, int out_ch,
                          Rng& rng) {
    if (in_size < out_size)
      throw ShapeError(cat("ConvStack: ", in_size, " -> ", out_size));
    ConvStack s;
    int n_down = ilog2(in_size / out_size);
    int ch = in_ch;
    if (n_down == 0) {
      s.convs.push_back(Conv::create(ch, out_ch, 3, 1, rng));
      return s;
    }
    for (int i = 0; i < n_down; ++i) {
      int next = (i == n_down - 1) ? out_ch : std::min(16 << i, 64);
      s.convs.push_back(Conv::create(ch, next, 3, 2, rng));
      ch = next;
    }
    return s;
  }

  // lrelu on hidden layers, linear output
  Var operator()(Var x) const {
    for (std::size_t i = 0; i < convs.size(); ++i) {
      x = convs[i](x);
      if (i + 1 < convs.size()) x = ad::lrelu(x);
    }
    return x;
  }

  ParamMap params(const std::string& prefix) const {
    ParamMap p;
    for (std::size_t i = 0; i < convs.size(); ++i)
      p.append("", convs[i].params(prefix + "/conv" + std::to_string(i)));
    return p;
  }
};

}  // namespace hypernst::nn
