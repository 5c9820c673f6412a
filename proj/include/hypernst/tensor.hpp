#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "hypernst/common.hpp"
#include "hypernst/rng.hpp"

namespace hypernst {

// Dense row-major double tensor with value semantics. Shapes are small
// (desk-scale images and weights), so plain copies are fine.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;

  explicit Tensor(std::vector<int> s, double fill = 0.0)
      : shape(std::move(s)), v(count(shape), fill) {}

  static Tensor scalar(double x) {
    Tensor t({1});
    t.v[0] = x;
    return t;
  }

  static Tensor from(std::vector<int> s, std::vector<double> data) {
    Tensor t;
    t.shape = std::move(s);
    t.v = std::move(data);
    assert(static_cast<int>(t.v.size()) == count(t.shape));
    return t;
  }

  static Tensor randn(std::vector<int> s, Rng& rng, double stddev = 1.0,
                      double mean = 0.0) {
    Tensor t(std::move(s));
    for (auto& x : t.v) x = mean + stddev * rng.normal();
    return t;
  }

  static int count(const std::vector<int>& s) {
    int n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int numel() const { return static_cast<int>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[i]; }
  bool empty() const { return v.empty(); }

  double& operator[](int i) { return v[i]; }
  const double& operator[](int i) const { return v[i]; }

  double& at(int i, int j) {
    assert(ndim() == 2);
    return v[i * shape[1] + j];
  }
  const double& at(int i, int j) const {
    assert(ndim() == 2);
    return v[i * shape[1] + j];
  }
  double& at(int i, int j, int k) {
    assert(ndim() == 3);
    return v[(i * shape[1] + j) * shape[2] + k];
  }
  const double& at(int i, int j, int k) const {
    assert(ndim() == 3);
    return v[(i * shape[1] + j) * shape[2] + k];
  }
  double& at(int i, int j, int k, int l) {
    assert(ndim() == 4);
    return v[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  const double& at(int i, int j, int k, int l) const {
    assert(ndim() == 4);
    return v[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  Tensor reshaped(std::vector<int> s) const {
    if (count(s) != numel())
      throw ShapeError(cat("reshape ", numel(), " elements to ", count(s)));
    Tensor t;
    t.shape = std::move(s);
    t.v = v;
    return t;
  }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  double min() const { return *std::min_element(v.begin(), v.end()); }
  double max() const { return *std::max_element(v.begin(), v.end()); }
  double sum() const { return std::accumulate(v.begin(), v.end(), 0.0); }
  double mean() const { return v.empty() ? 0.0 : sum() / numel(); }

  double abs_max() const {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (int i = 0; i < ndim(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + ")";
  }
};

inline bool bytes_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.v.data(), b.v.data(), a.v.size() * sizeof(double)) == 0;
}

inline std::uint64_t tensor_hash(const Tensor& t, std::uint64_t h = 14695981039346656037ull) {
  h = fnv1a64(t.shape.data(), t.shape.size() * sizeof(int), h);
  return fnv1a64(t.v.data(), t.v.size() * sizeof(double), h);
}

}  // namespace hypernst
