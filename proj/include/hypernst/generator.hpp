#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hypernst/nn.hpp"

namespace hypernst {

using ad::Var;
using nn::ParamMap;

enum class LayerKind { mapping, modulated_conv, to_rgb };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::mapping: return "mapping";
    case LayerKind::modulated_conv: return "modulated_conv";
    default: return "toRGB";
  }
}

// Synthesis-order layer enumeration:
//   [0, mapping_depth)                      mapping layers
//   then per block b: conv0, conv1, toRGB   (blocks run 4x4 up to image_size)
// With defaults (mapping_depth 3, 5 blocks) that is 18 layers, indices 0..17.
struct GeneratorSpec {
  int image_size = 64;
  int base_channels = 64;
  int num_synthesis_blocks = 5;
  int latent_dim = 64;
  int mapping_depth = 3;

  static constexpr int convs_per_block = 2;
  static constexpr int min_channels = 8;

  void validate() const {
    if (!is_power_of_two(image_size) || image_size < 8)
      throw ConfigError(cat("image_size must be a power of two >= 8, got ",
                            image_size));
    if (base_channels <= 0 || latent_dim <= 0 || mapping_depth <= 0 ||
        num_synthesis_blocks <= 0)
      throw ConfigError("generator spec requires positive sizes");
    if (resolution(num_synthesis_blocks - 1) != image_size)
      throw ConfigError(cat("num_synthesis_blocks ", num_synthesis_blocks,
                            " does not reach image_size ", image_size,
                            " from 4x4"));
  }

  int resolution(int block) const { return 4 << block; }
  int block_channels(int block) const {
    return std::max(base_channels >> block, min_channels);
  }
  int layer_count() const {
    return mapping_depth + num_synthesis_blocks * (convs_per_block + 1);
  }
  int style_input_count() const {
    return num_synthesis_blocks * (convs_per_block + 1);
  }

  bool operator==(const GeneratorSpec&) const = default;
};

struct GenLayer {
  int index = 0;
  LayerKind kind = LayerKind::mapping;
  Var weight;             // mapping [out,in]; conv [O,I,3,3]; toRGB [3,I,1,1]
  Var bias;               // [out]
  Var affine_w, affine_b; // style affine, conv/toRGB only
  double noise_strength = 0.0;
  int in_channels = 0;
  int out_channels = 0;
  int block = -1;

  bool takes_style() const { return kind != LayerKind::mapping; }
};

// Per-layer style vectors, one per style-consuming layer (w+).
struct LatentCode {
  Tensor ws;  // [style_input_count, latent_dim]

  int rows() const { return ws.ndim() == 2 ? ws.shape[0] : 0; }
};

// Channel-wise multiplicative weight modulation, W_hat[o] = W[o] * (1 + d[o]).
// An additive variant (W + d[o]) is kept behind a flag for ablation.
struct WeightDeltaSet {
  std::map<int, Tensor> deltas;  // layer index -> [out_channels]
  std::vector<int> target_layers;
  bool additive = false;

  bool empty() const { return deltas.empty(); }
};

struct GeneratorParams {
  GeneratorSpec spec;
  std::uint64_t rng_seed = 0;
  Var const_input;  // [ch0, 4, 4]
  std::vector<GenLayer> layers;

  std::vector<int> target_layer_set() const {
    std::vector<int> out;
    for (const auto& l : layers)
      if (l.takes_style()) out.push_back(l.index);
    return out;
  }

  const GenLayer& layer(int index) const {
    for (const auto& l : layers)
      if (l.index == index) return l;
    throw ShapeError(cat("no generator layer with index ", index));
  }

  int out_channels_of(int index) const { return layer(index).out_channels; }

  ParamMap params(const std::string& prefix = "generator") const {
    ParamMap p;
    p.add(prefix + "/const_input", const_input);
    for (const auto& l : layers) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "%02d", l.index);
      const std::string base = prefix + "/layer" + buf;
      p.add(base + "/weight", l.weight);
      p.add(base + "/bias", l.bias);
      if (l.takes_style()) {
        p.add(base + "/affine_w", l.affine_w);
        p.add(base + "/affine_b", l.affine_b);
      }
    }
    return p;
  }
};

// Frozen random-init miniature generator; deterministic per seed. Mapping
// layers use tanh with zero bias so the mapped-latent distribution is
// symmetric around mapping(0).
inline GeneratorParams build_generator(const GeneratorSpec& spec,
                                       std::uint64_t rng_seed) {
  spec.validate();
  Rng rng(rng_seed);
  GeneratorParams g;
  g.spec = spec;
  g.rng_seed = rng_seed;
  g.const_input = ad::constant(Tensor::randn({spec.block_channels(0), 4, 4}, rng));

  int index = 0;
  for (int m = 0; m < spec.mapping_depth; ++m) {
    GenLayer l;
    l.index = index++;
    l.kind = LayerKind::mapping;
    l.in_channels = spec.latent_dim;
    l.out_channels = spec.latent_dim;
    l.weight = ad::constant(Tensor::randn({spec.latent_dim, spec.latent_dim}, rng,
                                          1.0 / std::sqrt(spec.latent_dim)));
    l.bias = ad::constant(Tensor({spec.latent_dim}));
    g.layers.push_back(std::move(l));
  }

  auto make_styled = [&](LayerKind kind, int in_ch, int out_ch, int k, int block) {
    GenLayer l;
    l.index = index++;
    l.kind = kind;
    l.in_channels = in_ch;
    l.out_channels = out_ch;
    const double wscale =
        (kind == LayerKind::to_rgb) ? 1.0 / std::sqrt(double(in_ch) * k * k)
                                    : std::sqrt(2.0 / (double(in_ch) * k * k));
    l.weight = ad::constant(Tensor::randn({out_ch, in_ch, k, k}, rng, wscale));
    l.bias = ad::constant(Tensor({out_ch}));
    l.affine_w = ad::constant(
        Tensor::randn({in_ch, spec.latent_dim}, rng, 1.0 / std::sqrt(spec.latent_dim)));
    l.affine_b = ad::constant(Tensor({in_ch}, 1.0));
    l.noise_strength = (kind == LayerKind::modulated_conv) ? 0.02 : 0.0;
    l.block = block;
    g.layers.push_back(std::move(l));
  };

  for (int b = 0; b < spec.num_synthesis_blocks; ++b) {
    const int in0 = spec.block_channels(b == 0 ? 0 : b - 1);
    const int ch = spec.block_channels(b);
    make_styled(LayerKind::modulated_conv, in0, ch, 3, b);
    make_styled(LayerKind::modulated_conv, ch, ch, 3, b);
    make_styled(LayerKind::to_rgb, ch, 3, 1, b);
  }
  return g;
}

inline void validate_deltas(const GeneratorParams& g, const WeightDeltaSet& d) {
  const auto targets = g.target_layer_set();
  for (const auto& [idx, vec] : d.deltas) {
    if (std::find(targets.begin(), targets.end(), idx) == targets.end())
      throw ShapeError(cat("layer ", idx, " is not delta-eligible"));
    const int oc = g.out_channels_of(idx);
    if (vec.numel() != oc)
      throw ShapeError(cat("delta for layer ", idx, " has length ", vec.numel(),
                           ", expected out_channels ", oc));
    if (!vec.all_finite())
      throw NumericError(cat("delta for layer ", idx, " has non-finite entries"));
  }
}

// Pure: returns new params with modulated weights on keyed layers; layers
// without a delta share the input's storage unchanged.
inline GeneratorParams apply_weight_deltas(const GeneratorParams& g,
                                           const WeightDeltaSet& d) {
  validate_deltas(g, d);
  GeneratorParams out = g;
  for (auto& l : out.layers) {
    auto it = d.deltas.find(l.index);
    if (it == d.deltas.end()) continue;
    Tensor w = l.weight->val;
    const int O = l.out_channels;
    const int inner = w.numel() / O;
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < inner; ++i) {
        if (d.additive)
          w.v[o * inner + i] += it->second.v[o];
        else
          w.v[o * inner + i] *= 1.0 + it->second.v[o];
      }
    l.weight = ad::constant(std::move(w));
  }
  return out;
}

namespace detail {

inline Var modulated_layer_forward(const GenLayer& l, Var x, const Var& wvec,
                                   const Var* delta, bool additive,
                                   Rng* noise_rng) {
  Var w = l.weight;
  if (delta) {
    if ((*delta)->val.numel() != l.out_channels)
      throw ShapeError(cat("delta for layer ", l.index, " has length ",
                           (*delta)->val.numel(), ", expected out_channels ",
                           l.out_channels));
    if (additive) {
      // broadcast-add of delta[o] over each output channel slice
      w = ad::add(w, ad::mul_outer(ad::constant(Tensor(w->val.shape, 1.0)), *delta));
    } else {
      w = ad::mul_outer(w, ad::sadd(*delta, 1.0));
    }
  }
  Var style = ad::affine(wvec, l.affine_w, l.affine_b);
  w = ad::mul_dim1(w, style);
  if (l.kind == LayerKind::modulated_conv)
    w = ad::mul_outer(w, ad::rsqrt(ad::sumsq_outer(w), 1e-8));
  const int k = w->val.shape[2];
  Var y = ad::conv2d(x, w, 1, k / 2);
  if (noise_rng && l.noise_strength > 0.0) {
    Tensor noise(y->val.shape);
    for (auto& v : noise.v) v = l.noise_strength * noise_rng->normal();
    y = ad::add(y, ad::constant(std::move(noise)));
  }
  y = ad::add_bias_ch(y, l.bias);
  if (l.kind == LayerKind::modulated_conv) y = ad::lrelu(y);
  return y;
}

}  // namespace detail

// Core synthesis pass. `wplus` holds one [latent_dim] Var per style input in
// layer order; `deltas` (optional) maps layer index -> [out_channels] Var.
// Differentiable w.r.t. both. Noise injection happens only when a noise RNG
// is supplied (training mode); deterministic mode omits it.
inline Var synthesize_var(const GeneratorParams& g, const std::vector<Var>& wplus,
                          const std::map<int, Var>* deltas = nullptr,
                          Rng* noise_rng = nullptr, bool additive = false) {
  if (static_cast<int>(wplus.size()) != g.spec.style_input_count())
    throw ShapeError(cat("latent arity ", wplus.size(), " != style input count ",
                         g.spec.style_input_count()));
  for (const auto& w : wplus)
    if (w->val.numel() != g.spec.latent_dim)
      throw ShapeError(cat("latent vector length ", w->val.numel(),
                           " != latent_dim ", g.spec.latent_dim));
  if (deltas)
    for (const auto& [idx, dv] : *deltas)
      (void)g.layer(idx);  // throws on unknown index

  Var x = g.const_input;
  Var rgb;
  int style_i = 0;
  for (const auto& l : g.layers) {
    if (l.kind == LayerKind::mapping) continue;
    const Var* delta = nullptr;
    if (deltas) {
      auto it = deltas->find(l.index);
      if (it != deltas->end()) delta = &it->second;
    }
    if (l.kind == LayerKind::modulated_conv) {
      const bool first_of_block = (style_i % 3 == 0);
      if (first_of_block && l.block > 0) x = ad::upsample2(x);
      x = detail::modulated_layer_forward(l, x, wplus[style_i], delta, additive,
                                          noise_rng);
    } else {
      Var t = detail::modulated_layer_forward(l, x, wplus[style_i], delta,
                                              additive, nullptr);
      rgb = rgb ? ad::add(ad::upsample2(rgb), t) : t;
    }
    ++style_i;
  }
  return ad::vtanh(rgb);
}

inline std::vector<Var> latent_rows(const LatentCode& code) {
  Var m = ad::constant(code.ws);
  std::vector<Var> rows;
  for (int i = 0; i < code.ws.shape[0]; ++i) rows.push_back(ad::slice_row(m, i));
  return rows;
}

inline Tensor synthesize(const GeneratorParams& g, const LatentCode& latent,
                         const WeightDeltaSet* deltas = nullptr,
                         Rng* noise_rng = nullptr) {
  if (deltas) validate_deltas(g, *deltas);
  std::map<int, Var> dv;
  bool additive = false;
  if (deltas) {
    additive = deltas->additive;
    for (const auto& [idx, t] : deltas->deltas) dv.emplace(idx, ad::constant(t));
  }
  Var img = synthesize_var(g, latent_rows(latent), deltas ? &dv : nullptr,
                           noise_rng, additive);
  return img->val;
}

inline Var mapping_forward(const GeneratorParams& g, Var z) {
  for (const auto& l : g.layers) {
    if (l.kind != LayerKind::mapping) break;
    z = ad::vtanh(ad::affine(z, l.weight, l.bias));
  }
  return z;
}

// z ~ N(0,I) pushed through the mapping stack; w+ repeats the mapped vector
// for every style input.
inline std::vector<LatentCode> sample_latent(const GeneratorParams& g, Rng& rng,
                                             int n) {
  if (n < 1) throw ConfigError("sample_latent: n must be >= 1");
  std::vector<LatentCode> out;
  out.reserve(n);
  const int rows = g.spec.style_input_count();
  for (int i = 0; i < n; ++i) {
    Var z = ad::constant(Tensor::randn({g.spec.latent_dim}, rng));
    Var w = mapping_forward(g, z);
    LatentCode code;
    code.ws = Tensor({rows, g.spec.latent_dim});
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < g.spec.latent_dim; ++c)
        code.ws.at(r, c) = w->val.v[c];
    out.push_back(std::move(code));
  }
  return out;
}

}  // namespace hypernst
