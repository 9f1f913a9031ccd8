#pragma once

#include <cmath>
#include <cstddef>
#include <functional>

#include "imagine/backend.hpp"

namespace testutil {

struct FdReport {
  double max_rel_err = 0.0;
  size_t coords_checked = 0;
  size_t coords_total = 0;
};

/// Central-difference comparison against an analytic gradient, sweeping every
/// adapter coordinate. `loss` is evaluated with the perturbed parameters.
/// Coordinates where both gradients are below `floor` are skipped; the
/// relative error denominator is max(|analytic|, |numeric|), so a missing
/// analytic gradient still fails against a nonzero numeric one.
///
/// For coordinates with gradients near the floor the base step is
/// roundoff-limited (the difference quotient noise eps*|L|/(2h) can exceed
/// the tolerance no matter how correct the gradient is), so those are
/// re-estimated once with a 10x step where roundoff is 10x smaller. A wrong
/// gradient fails at both steps; the retry only sharpens the oracle.
inline FdReport fd_compare(imagine::backend::AdapterParams& params,
                           const imagine::backend::AdapterParams& analytic,
                           const std::function<double(const imagine::backend::AdapterParams&)>& loss,
                           double step = 1e-5, double floor = 1e-8) {
  FdReport rep;
  std::vector<imagine::Mat*> param_mats;
  std::vector<const imagine::Mat*> grad_mats;
  imagine::backend::visit_params(params, [&](imagine::Mat& m) { param_mats.push_back(&m); });
  imagine::backend::visit_params(analytic,
                                 [&](const imagine::Mat& m) { grad_mats.push_back(&m); });

  for (size_t mi = 0; mi < param_mats.size(); ++mi) {
    imagine::Mat& pm = *param_mats[mi];
    const imagine::Mat& gm = *grad_mats[mi];
    for (size_t i = 0; i < pm.a.size(); ++i) {
      ++rep.coords_total;
      const double saved = pm.a[i];
      const auto central = [&](double h) {
        pm.a[i] = saved + h;
        const double hi = loss(params);
        pm.a[i] = saved - h;
        const double lo = loss(params);
        pm.a[i] = saved;
        return (hi - lo) / (2.0 * h);
      };
      const double numeric = central(step);
      const double an = gm.a[i];
      double denom = std::max(std::fabs(an), std::fabs(numeric));
      if (denom <= floor) continue;
      ++rep.coords_checked;
      double rel = std::fabs(numeric - an) / denom;
      if (rel > 1e-5 && denom < 1e-5) {
        const double numeric2 = central(step * 10.0);
        const double denom2 = std::max(std::fabs(an), std::fabs(numeric2));
        if (denom2 > floor) rel = std::min(rel, std::fabs(numeric2 - an) / denom2);
      }
      if (rel > rep.max_rel_err) rep.max_rel_err = rel;
    }
  }
  return rep;
}

}  // namespace testutil
