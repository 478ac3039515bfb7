// Small least-squares helpers shared by the rate-fit diagnostics.
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace tnls {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  if (n < 2 || y.size() != n) throw std::invalid_argument("fit_line: need >= 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
    syy += y[i] * y[i];
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
  LineFit f;
  f.slope = (n * sxy - sx * sy) / den;
  f.intercept = (sy - f.slope * sx) / n;
  double ss_res = 0.0, ss_tot = 0.0;
  const double ybar = sy / n;
  for (size_t i = 0; i < n; ++i) {
    const double pred = f.slope * x[i] + f.intercept;
    ss_res += (y[i] - pred) * (y[i] - pred);
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
  }
  f.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

/// Log-linear fit of y ~ C exp(slope * t); y must be positive.
inline LineFit fit_loglinear(const std::vector<double>& t, const std::vector<double>& y) {
  std::vector<double> ly(y.size());
  for (size_t i = 0; i < y.size(); ++i) {
    if (y[i] <= 0.0) throw std::invalid_argument("fit_loglinear: nonpositive sample");
    ly[i] = std::log(y[i]);
  }
  return fit_line(t, ly);
}

}  // namespace tnls
