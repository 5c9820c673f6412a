#pragma once

#include <array>
#include <optional>
#include <vector>

#include "hypernst/nn.hpp"
#include "hypernst/semantics.hpp"

namespace hypernst {

using ad::Var;
using nn::ParamMap;

// Frozen metric style embedding. Codes are a fixed linear projection of the
// per-stage AdaIN channel statistics (mean and population std) of a small
// conv stack. Deterministic per seed; contrastive pretraining is optional.
struct StyleEncoderParams {
  int dim = 64;
  std::vector<nn::Conv> convs;  // 3 stride-2 stages: 8, 16, 32 channels
  Var proj_w, proj_b;           // [dim, n_stats]

  static constexpr double stat_eps = 1e-5;

  int receptive_floor() const { return 1 << convs.size(); }

  int stat_count() const {
    int n = 0;
    for (const auto& c : convs) n += 2 * c.out_channels();
    return n;
  }

  ParamMap params(const std::string& prefix = "style_encoder") const {
    ParamMap p;
    for (std::size_t i = 0; i < convs.size(); ++i)
      p.append("", convs[i].params(prefix + "/conv" + std::to_string(i)));
    p.add(prefix + "/proj_w", proj_w);
    p.add(prefix + "/proj_b", proj_b);
    return p;
  }
};

inline StyleEncoderParams build_style_encoder(int dim, std::uint64_t seed) {
  if (dim <= 0) throw ConfigError("style code dimension must be positive");
  Rng rng(seed);
  StyleEncoderParams e;
  e.dim = dim;
  e.convs.push_back(nn::Conv::create(3, 8, 3, 2, rng));
  e.convs.push_back(nn::Conv::create(8, 16, 3, 2, rng));
  e.convs.push_back(nn::Conv::create(16, 32, 3, 2, rng));
  e.proj_w = ad::param(
      Tensor::randn({dim, e.stat_count()}, rng, 1.0 / std::sqrt(e.stat_count())));
  e.proj_b = ad::param(Tensor({dim}));
  nn::set_requires_grad(e.params(), false);
  return e;
}

struct StyleCode {
  Tensor values;  // [dim]

  int dim() const { return values.numel(); }
};

namespace detail {

// concat(mean_c, std_c) per stage, differentiable (used by pretraining)
inline Var adain_stats(const Var& x, double eps) {
  Var m = ad::ch_mean(x);
  Var m2 = ad::ch_mean(ad::mul(x, x));
  Var sd = ad::vsqrt(ad::sadd(ad::sub(m2, ad::mul(m, m)), eps));
  std::vector<Var> parts;
  for (int c = 0; c < m->val.numel(); ++c) {
    parts.push_back(ad::slice_row(ad::reshape(m, {m->val.numel(), 1}), c));
    parts.push_back(ad::slice_row(ad::reshape(sd, {sd->val.numel(), 1}), c));
  }
  (void)parts;
  // cheaper: pack mean then std contiguously
  Tensor packed({2 * m->val.numel()});
  return ad::concat_scalars({});  // unreachable, replaced below
}

}  // namespace detail

inline Var extract_style_code_var(const StyleEncoderParams& e, Var img) {
  const auto& s = img->val.shape;
  if (s.size() != 3 || s[0] != 3)
    throw ShapeError("style encoder expects a [3,H,W] image");
  if (s[1] < e.receptive_floor() || s[2] < e.receptive_floor())
    throw ShapeError(cat("image ", s[1], "x", s[2],
                         " below encoder receptive floor ",
                         e.receptive_floor()));
  std::vector<Var> stats;
  Var x = img;
  for (const auto& conv : e.convs) {
    x = ad::lrelu(conv(x));
    Var m = ad::ch_mean(x);
    Var m2 = ad::ch_mean(ad::mul(x, x));
    Var sd = ad::vsqrt(ad::sadd(ad::sub(m2, ad::mul(m, m)),
                                StyleEncoderParams::stat_eps));
    stats.push_back(m);
    stats.push_back(sd);
  }
  // concatenate 1-D stat vectors
  Var all = stats[0];
  for (std::size_t i = 1; i < stats.size(); ++i) {
    Var a = ad::reshape(all, {all->val.numel(), 1, 1});
    Var b = ad::reshape(stats[i], {stats[i]->val.numel(), 1, 1});
    all = ad::reshape(ad::concat_ch(a, b), {all->val.numel() + stats[i]->val.numel()});
  }
  return ad::affine(all, e.proj_w, e.proj_b);
}

inline StyleCode extract_style_code(const StyleEncoderParams& e, const Tensor& img) {
  return {extract_style_code_var(e, ad::constant(img))->val};
}

struct RegionStyleCodes {
  std::array<std::optional<StyleCode>, kNumRegions> per_region;
  StyleCode global;

  bool present(Region r) const {
    return per_region[static_cast<int>(r)].has_value();
  }
  const StyleCode& at(Region r) const {
    return *per_region[static_cast<int>(r)];
  }
  bool any_present() const {
    for (const auto& c : per_region)
      if (c) return true;
    return false;
  }
};

// Mean style code over P mask-constrained patches per region, plus the
// whole-image code. Regions that cannot host a single qualifying patch are
// marked absent rather than erroring.
inline RegionStyleCodes extract_region_style_codes(
    const StyleEncoderParams& e, const Tensor& img, const SemanticMap& mask,
    int patches, int patch_size, double tau, Rng& rng) {
  if (img.shape[1] != mask.h || img.shape[2] != mask.w)
    throw ShapeError(cat("mask ", mask.h, "x", mask.w, " not aligned with image ",
                         img.shape[1], "x", img.shape[2]));
  if (patches < 1) throw ConfigError("patches per region must be >= 1");

  RegionStyleCodes out;
  out.global = extract_style_code(e, img);

  PatchSpec spec;
  spec.patch_size = patch_size;
  spec.patches_per_region = patches;
  spec.tau = tau;
  for (int r = 0; r < kNumRegions; ++r) {
    std::optional<std::vector<PatchSample>> samples;
    try {
      samples = sample_region_patches(mask, static_cast<Region>(r), spec, rng);
    } catch (const SamplingError&) {
      continue;  // area too thin for any qualifying patch
    }
    if (!samples) continue;
    Tensor acc({e.dim});
    for (const auto& s : *samples) {
      StyleCode c = extract_style_code(e, extract_patch(img, s, patch_size));
      for (int i = 0; i < e.dim; ++i) acc.v[i] += c.values.v[i];
    }
    for (auto& v : acc.v) v /= patches;
    out.per_region[r] = StyleCode{std::move(acc)};
  }
  if (!out.any_present())
    throw DataError("mask has no usable region for style extraction");
  return out;
}

inline StyleCode interpolate_codes(const StyleCode& a, const StyleCode& b,
                                   double t) {
  if (a.dim() != b.dim())
    throw ShapeError(cat("interpolate_codes: dim ", a.dim(), " vs ", b.dim()));
  if (t < 0.0 || t > 1.0)
    throw RangeError(cat("interpolation t must be in [0,1], got ", t));
  StyleCode out;
  out.values = Tensor({a.dim()});
  for (int i = 0; i < a.dim(); ++i)
    out.values.v[i] = (1.0 - t) * a.values.v[i] + t * b.values.v[i];
  return out;
}

// Region-wise interpolation between two code sets over the regions of the
// content mask; missing hair on either side falls back to that side's global
// code, mirroring rearrange_codes.
inline RegionStyleCodes interpolate_region_codes(const RegionStyleCodes& a,
                                                 const RegionStyleCodes& b,
                                                 double t) {
  RegionStyleCodes out;
  out.global = interpolate_codes(a.global, b.global, t);
  for (int r = 0; r < kNumRegions; ++r) {
    const StyleCode& ca = a.per_region[r] ? *a.per_region[r] : a.global;
    const StyleCode& cb = b.per_region[r] ? *b.per_region[r] : b.global;
    if (a.per_region[r] || b.per_region[r])
      out.per_region[r] = interpolate_codes(ca, cb, t);
  }
  return out;
}

// Eq-style per-pixel arrangement: field[:,y,x] = code of mask class at (y,x).
// Hair pixels fall back to the whole-image code when the style image had no
// hair; any other missing class is an error.
inline Tensor rearrange_codes(const RegionStyleCodes& codes,
                              const SemanticMap& content_mask) {
  const int D = codes.global.dim();
  Tensor field({D, content_mask.h, content_mask.w});
  const auto areas = region_areas(content_mask);
  std::array<const Tensor*, kNumRegions> lut{};
  for (int r = 0; r < kNumRegions; ++r) {
    if (areas[r] == 0) continue;
    if (codes.per_region[r]) {
      lut[r] = &codes.per_region[r]->values;
    } else if (static_cast<Region>(r) == Region::hair) {
      lut[r] = &codes.global.values;
    } else {
      throw DataError(cat("no style code for region ",
                          region_name(static_cast<Region>(r))));
    }
  }
  const int hw = content_mask.h * content_mask.w;
  for (int p = 0; p < hw; ++p) {
    const Tensor* code = lut[content_mask.classes[p]];
    for (int d = 0; d < D; ++d) field.v[d * hw + p] = code->v[d];
  }
  return field;
}

// Uniform field carrying the global code everywhere (mask-free conditioning).
inline Tensor tile_global_code(const RegionStyleCodes& codes, int h, int w) {
  const int D = codes.global.dim();
  Tensor field({D, h, w});
  for (int d = 0; d < D; ++d)
    for (int p = 0; p < h * w; ++p) field.v[d * h * w + p] = codes.global.values.v[d];
  return field;
}

struct StylePretrainConfig {
  int steps = 600;
  double lr = 1e-3;
  double temperature = 0.2;
  int crop = 16;
};

// Optional contrastive pretraining: two crops of one image are a positive
// pair, crops of other-style images are negatives (InfoNCE on cosine
// similarity). The encoder is re-frozen afterwards.
inline double pretrain_style_encoder(StyleEncoderParams& e,
                                     const std::vector<std::vector<Tensor>>& corpus,
                                     const StylePretrainConfig& cfg, Rng& rng,
                                     std::vector<double>* loss_log = nullptr);

inline Var cosine_sim(const Var& a, const Var& b) {
  Var na = ad::rsqrt(ad::sum(ad::mul(a, a)), 1e-12);
  Var nb = ad::rsqrt(ad::sum(ad::mul(b, b)), 1e-12);
  return ad::mul(ad::mul(ad::dot(a, b), na), nb);
}

}  // namespace hypernst
