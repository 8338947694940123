#pragma once

// Central finite-difference oracle for the autodiff tape. Independent of the
// backward closures: it only re-runs forward passes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gatescale/numerics/graph.hpp"

namespace gatescale {

/// Builds a scalar loss from parameter leaves created on the given graph.
using LossBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

struct GradCheckResult {
  /// Floor kGradFloor · max(1, |loss|): central differences carry round-off
  /// of order eps·|loss|/h, so smaller components cannot be resolved.
  double max_rel_error = 0.0;
  /// Same with the fixed floor kGradFloor, for reporting.
  double max_rel_error_fixed_floor = 0.0;
  std::size_t checked = 0;
  // The entry behind max_rel_error.
  std::size_t worst_param = 0, worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

inline constexpr double kGradFloor = 1e-6;

/// Relative error |a-n| / max(|a|, |n|, floor); the floor keeps entries whose
/// true gradient is ~0 from dividing round-off by round-off.
inline double relative_error(double analytic, double numeric, double floor = kGradFloor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckResult gradcheck(const LossBuilder& build, const std::vector<Tensor>& params, double h = 1e-5) {
  auto eval = [&](const std::vector<Tensor>& ps) {
    Graph g;
    std::vector<Var> vars;
    for (const Tensor& p : ps) vars.push_back(g.constant(p));
    return g.value(build(g, vars))[0];
  };

  Graph g;
  std::vector<Var> vars;
  for (const Tensor& p : params) vars.push_back(g.param(p));
  const Var loss = build(g, vars);
  const Gradients grads = g.grad(loss);
  const double floor = kGradFloor * std::max(1.0, std::abs(g.value(loss)[0]));

  GradCheckResult result;
  std::vector<Tensor> work = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    // A parameter the loss never reaches has no recorded gradient; its
    // finite differences must then vanish too.
    const Tensor analytic = grads.has(vars[k]) ? grads[vars[k]] : Tensor(params[k].shape(), 0.0);
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double orig = work[k][i];
      work[k][i] = orig + h;
      const double fp = eval(work);
      work[k][i] = orig - h;
      const double fm = eval(work);
      work[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric, floor);
      result.max_rel_error_fixed_floor =
          std::max(result.max_rel_error_fixed_floor, relative_error(analytic[i], numeric));
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = k;
        result.worst_index = i;
        result.worst_analytic = analytic[i];
        result.worst_numeric = numeric;
      }
      ++result.checked;
    }
  }
  return result;
}

}  // namespace gatescale
