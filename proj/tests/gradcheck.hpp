#pragma once

// Finite-difference oracle shared by the unit and acceptance suites. Lives in
// test code so the checks stay independent of the autodiff implementation.

#include <cmath>
#include <functional>
#include <string>

#include "hypernst/autodiff.hpp"

namespace testutil {

using hypernst::Tensor;
using hypernst::ad::Var;

struct GradCheckResult {
  double max_rel_err = 0.0;
  int worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central differences on a scalar-valued function of one leaf tensor.
// `loss_fn` must be deterministic in everything but `leaf`.
inline GradCheckResult gradcheck(
    const Var& leaf, const std::function<double()>& loss_fn,
    const Tensor& analytic_grad, double h = 1e-5, double floor = 1e-6) {
  GradCheckResult r;
  for (int i = 0; i < leaf->val.numel(); ++i) {
    const double orig = leaf->val.v[i];
    leaf->val.v[i] = orig + h;
    const double fp = loss_fn();
    leaf->val.v[i] = orig - h;
    const double fm = loss_fn();
    leaf->val.v[i] = orig;
    const double num = (fp - fm) / (2.0 * h);
    const double e = rel_err(analytic_grad.v[i], num, floor);
    if (e > r.max_rel_err) {
      r.max_rel_err = e;
      r.worst_index = i;
      r.analytic = analytic_grad.v[i];
      r.numeric = num;
    }
  }
  return r;
}

// Same but only for a chosen subset of indices.
inline GradCheckResult gradcheck_indices(
    const Var& leaf, const std::function<double()>& loss_fn,
    const Tensor& analytic_grad, const std::vector<int>& indices,
    double h = 1e-5, double floor = 1e-6) {
  GradCheckResult r;
  for (int i : indices) {
    const double orig = leaf->val.v[i];
    leaf->val.v[i] = orig + h;
    const double fp = loss_fn();
    leaf->val.v[i] = orig - h;
    const double fm = loss_fn();
    leaf->val.v[i] = orig;
    const double num = (fp - fm) / (2.0 * h);
    const double e = rel_err(analytic_grad.v[i], num, floor);
    if (e > r.max_rel_err) {
      r.max_rel_err = e;
      r.worst_index = i;
      r.analytic = analytic_grad.v[i];
      r.numeric = num;
    }
  }
  return r;
}

}  // namespace testutil
