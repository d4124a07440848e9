#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "poecf/matrix.hpp"

namespace poecf {

// Central-difference check of an analytic gradient. Returns the maximum over
// coordinates of |numeric - analytic| / max(1, |analytic|).
inline double grad_check(const std::function<double(const Vec&)>& f, const Vec& analytic,
                         const Vec& point, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: h must be positive");
  if (analytic.size() != point.size())
    throw std::invalid_argument("grad_check: gradient/point size mismatch");
  Vec p = point;
  double max_rel = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    const double fp = f(p);
    p[i] = saved - h;
    const double fm = f(p);
    p[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: non-finite function value at probe point");
    const double numeric = (fp - fm) / (2.0 * h);
    const double rel = std::abs(numeric - analytic[i]) / std::max(1.0, std::abs(analytic[i]));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace poecf
