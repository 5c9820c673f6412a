#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "hypernst/image.hpp"
#include "hypernst/rng.hpp"
#include "hypernst/tensor.hpp"

namespace hypernst {

// Grouped semantic classes. Finer-grained parse maps are collapsed onto these
// three before anything downstream sees them.
enum class Region : int { background = 0, face = 1, hair = 2 };
constexpr int kNumRegions = 3;

inline const char* region_name(Region r) {
  switch (r) {
    case Region::background: return "background";
    case Region::face: return "face";
    default: return "hair";
  }
}

struct SemanticMap {
  int h = 0, w = 0;
  std::vector<std::uint8_t> classes;  // row-major, values in {0,1,2}

  SemanticMap() = default;
  SemanticMap(int h_, int w_) : h(h_), w(w_), classes(h_ * w_, 0) {}

  std::uint8_t& at(int y, int x) { return classes[y * w + x]; }
  std::uint8_t at(int y, int x) const { return classes[y * w + x]; }

  void validate() const {
    for (auto c : classes)
      if (c >= kNumRegions)
        throw DataError(cat("semantic map contains ungrouped class ", int(c)));
  }
};

inline void write_mask_png(const std::string& path, const SemanticMap& m) {
  write_png_gray(path, m.classes, m.h, m.w);
}

inline SemanticMap read_mask_png(const std::string& path) {
  SemanticMap m;
  m.classes = read_png_gray(path, m.h, m.w);
  m.validate();
  return m;
}

struct PatchSpec {
  int patch_size = 8;
  int patches_per_region = 3;
  double tau = 0.75;  // minimum fraction of patch pixels in the region
  int max_attempts = 200;
};

inline std::array<int, kNumRegions> region_areas(const SemanticMap& mask) {
  std::array<int, kNumRegions> areas{0, 0, 0};
  for (auto c : mask.classes) ++areas[c];
  return areas;
}

// Relabel a raw parse map onto the three grouped classes. Every raw class
// observed in the map must appear in `grouping`.
inline SemanticMap group_classes(const std::vector<int>& raw, int h, int w,
                                 const std::map<int, Region>& grouping) {
  if (static_cast<int>(raw.size()) != h * w)
    throw ShapeError(cat("group_classes: ", raw.size(), " values for ", h, "x", w));
  SemanticMap out(h, w);
  for (int i = 0; i < h * w; ++i) {
    auto it = grouping.find(raw[i]);
    if (it == grouping.end())
      throw DataError(cat("raw class ", raw[i], " missing from grouping"));
    out.classes[i] = static_cast<std::uint8_t>(it->second);
  }
  return out;
}

struct PatchSample {
  int y = 0, x = 0;       // top-left offset
  double coverage = 0.0;  // fraction of patch pixels in the requested region
  double effective_tau = 0.0;
};

inline double patch_coverage(const SemanticMap& mask, Region region, int y0,
                             int x0, int ps) {
  int inside = 0;
  for (int y = y0; y < y0 + ps; ++y)
    for (int x = x0; x < x0 + ps; ++x)
      if (mask.at(y, x) == static_cast<std::uint8_t>(region)) ++inside;
  return inside / static_cast<double>(ps * ps);
}

// Rejection-samples patches whose region coverage is at least tau; after
// max_attempts the threshold relaxes in 0.05 steps down to a 0.25 floor.
// Returns nullopt when the region has no pixels at all (absent-region
// signal); throws SamplingError when coverage is unachievable at the floor.
inline std::optional<std::vector<PatchSample>> sample_region_patches(
    const SemanticMap& mask, Region region, const PatchSpec& spec, Rng& rng) {
  if (spec.patch_size > mask.h || spec.patch_size > mask.w)
    throw ShapeError(cat("patch size ", spec.patch_size, " exceeds mask ",
                         mask.h, "x", mask.w));
  if (spec.tau <= 0.0 || spec.tau > 1.0)
    throw RangeError(cat("tau must be in (0,1], got ", spec.tau));

  const auto areas = region_areas(mask);
  if (areas[static_cast<int>(region)] == 0) return std::nullopt;

  const int ps = spec.patch_size;
  const int ymax = mask.h - ps;
  const int xmax = mask.w - ps;
  std::vector<PatchSample> out;
  out.reserve(spec.patches_per_region);
  for (int p = 0; p < spec.patches_per_region; ++p) {
    bool found = false;
    for (double tau = spec.tau; !found; tau -= 0.05) {
      for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
        int y = static_cast<int>(rng.uniform_int(0, ymax));
        int x = static_cast<int>(rng.uniform_int(0, xmax));
        double cov = patch_coverage(mask, region, y, x, ps);
        if (cov >= tau) {
          out.push_back({y, x, cov, tau});
          found = true;
          break;
        }
      }
      if (!found && tau - 0.05 < 0.25 - 1e-12)
        throw SamplingError(cat("cannot place a ", ps, "x", ps, " patch in ",
                                region_name(region), " even at tau=0.25"));
    }
  }
  return out;
}

inline Tensor extract_patch(const Tensor& img, const PatchSample& s, int ps) {
  Tensor out({img.shape[0], ps, ps});
  for (int c = 0; c < img.shape[0]; ++c)
    for (int y = 0; y < ps; ++y)
      for (int x = 0; x < ps; ++x)
        out.at(c, y, x) = img.at(c, s.y + y, s.x + x);
  return out;
}

}  // namespace hypernst
