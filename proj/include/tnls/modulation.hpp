// Decomposition u_[theta,mu] = (1+alpha) W + utilde with the two
// orthogonality conditions, trajectory tracking, and decay-rate extraction.
#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tnls/dynamics.hpp"
#include "tnls/fitting.hpp"
#include "tnls/grid.hpp"
#include "tnls/ground_state.hpp"

namespace tnls {

/// Parameters of the symmetry element such that
/// u ~ rescale_phase((1+alpha) W + utilde, theta, mu), with utilde orthogonal
/// to iW, W1 and W in the plain H1-dot product. dee_* are measured on the
/// normalized side against the grid-sampled W, so they vanish identically at
/// convergence.
struct ModulationState {
  double theta = 0.0;
  double mu = 1.0;
  double alpha = 0.0;
  ComplexField utilde;
  double dee_signed = 0.0;
  double dee_mag = 0.0;
  double ortho_residual = 0.0;
  bool ok = false;
};

/// lambda(u): the largest scale with int_{r <= 1/lambda} |grad u|^2 = E(W),
/// by inverting the cumulative gradient integral. The cumulative uses smooth
/// trapezoid weights (a Simpson prefix oscillates node-to-node) and the
/// crossing cell is inverted with a linear-density model.
inline double concentration_scale(const ComplexField& u, const GroundStateBundle& b) {
  const auto& g = *u.grid;
  const auto du = nodal_derivative(u);
  const double target = b.energy_W;
  const double area = sphere_area(g.dim);

  // densities d(r) = |u'|^2 r^{N-1} |S| in the radial variable
  std::vector<double> dens(g.size);
  for (int i = 0; i < g.size; ++i)
    dens[i] = std::norm(du[i]) * area * std::pow(g.r[i], g.dim - 1);

  if (h1_norm_sq(u) < 2.0 * b.energy_W * (1.0 - 1e-12)) throw std::runtime_error("unsolvable");

  double acc = 0.0, r_prev = 0.0, d_prev = 0.0;
  for (int i = 0; i < g.size; ++i) {
    const double cell = 0.5 * (d_prev + dens[i]) * (g.r[i] - r_prev);
    if (acc + cell >= target) {
      // invert the linear-density model a + b(rho - r_prev) on the cell
      const double h = g.r[i] - r_prev;
      const double slope = (dens[i] - d_prev) / h;
      const double rem = target - acc;
      double rho;
      if (std::abs(slope) < 1e-14 * (std::abs(d_prev) + 1.0)) {
        rho = r_prev + rem / std::max(d_prev, 1e-300);
      } else {
        const double disc = d_prev * d_prev + 2.0 * slope * rem;
        rho = r_prev + (std::sqrt(std::max(disc, 0.0)) - d_prev) / slope;
      }
      rho = std::min(std::max(rho, r_prev), g.r[i]);
      if (rho <= 0.0) throw std::runtime_error("unsolvable");
      return 1.0 / rho;
    }
    acc += cell;
    r_prev = g.r[i];
    d_prev = dens[i];
  }
  throw std::runtime_error("unsolvable");
}

namespace detail {

struct OrthoResidual {
  double f_iW;
  double f_W1;
};

// Tail-completed products: against the slowly decaying directions iW and W1
// the plain truncated product carries an O(r_max^{2-N}) bias that would shift
// the fitted mu by percent.
inline OrthoResidual ortho_residuals(const ComplexField& u_norm, const GroundStateBundle& b) {
  const ComplexField Wc = to_complex(b.W);
  const ComplexField iW = Complex(0, 1) * Wc;
  const ComplexField W1c = to_complex(b.W1);
  return OrthoResidual{h1_inner_tail(u_norm, iW), h1_inner_tail(u_norm, W1c)};
}

}  // namespace detail

/// Newton iteration in (theta, mu) for the two orthogonality conditions,
/// seeded from the phase at the field's peak and the concentration scale.
/// Throws "not-near-W" outside the trust region and "newton-stall" when the
/// iteration fails to converge.
inline ModulationState fit_modulation(const ComplexField& u, const GroundStateBundle& b,
                                      double delta0 = 0.1,
                                      std::optional<std::pair<double, double>> warm = {}) {
  const DeeResult d = dee(u, b);
  if (d.magnitude >= delta0 * b.h1_W) throw std::runtime_error("not-near-W");

  double theta, mu;
  if (warm) {
    theta = warm->first;
    mu = warm->second;
  } else {
    int peak = 0;
    double pv = 0.0;
    for (int i = 0; i < u.grid->size; ++i)
      if (std::abs(u.v[i]) > pv) {
        pv = std::abs(u.v[i]);
        peak = i;
      }
    theta = std::arg(u.v[peak]);
    mu = 1.0;
    try {
      mu = concentration_scale(to_complex(b.W), b) / concentration_scale(u, b);
    } catch (const std::runtime_error&) {
      // keep mu = 1 when the concentration integral is not solvable
    }
  }

  auto normalized = [&](double th, double m) { return rescale_phase(u, -th, 1.0 / m); };
  const double scale = b.h1_W_grid;

  ComplexField u_norm = normalized(theta, mu);
  detail::OrthoResidual F = detail::ortho_residuals(u_norm, b);
  bool converged = false;
  for (int it = 0; it < 50; ++it) {
    if (std::hypot(F.f_iW, F.f_W1) < 1e-10 * scale) {
      converged = true;
      break;
    }
    // finite-difference Jacobian
    const double hth = 1e-6, hmu = 1e-6 * mu;
    const auto Fp_th = detail::ortho_residuals(normalized(theta + hth, mu), b);
    const auto Fm_th = detail::ortho_residuals(normalized(theta - hth, mu), b);
    const auto Fp_mu = detail::ortho_residuals(normalized(theta, mu + hmu), b);
    const auto Fm_mu = detail::ortho_residuals(normalized(theta, mu - hmu), b);
    const double J00 = (Fp_th.f_iW - Fm_th.f_iW) / (2 * hth);
    const double J01 = (Fp_mu.f_iW - Fm_mu.f_iW) / (2 * hmu);
    const double J10 = (Fp_th.f_W1 - Fm_th.f_W1) / (2 * hth);
    const double J11 = (Fp_mu.f_W1 - Fm_mu.f_W1) / (2 * hmu);
    const double det = J00 * J11 - J01 * J10;
    if (det == 0.0 || !std::isfinite(det)) break;
    double dth = -(J11 * F.f_iW - J01 * F.f_W1) / det;
    double dmu = -(-J10 * F.f_iW + J00 * F.f_W1) / det;
    // keep mu positive and the step sane
    if (std::abs(dmu) > 0.3 * mu) dmu *= 0.3 * mu / std::abs(dmu);
    theta += dth;
    mu += dmu;
    u_norm = normalized(theta, mu);
    F = detail::ortho_residuals(u_norm, b);
  }
  if (!converged && std::hypot(F.f_iW, F.f_W1) >= 1e-10 * scale)
    throw std::runtime_error("newton-stall");

  ModulationState st;
  st.theta = std::remainder(theta, 2.0 * std::numbers::pi);
  st.mu = mu;
  const ComplexField Wc = to_complex(b.W);
  st.alpha = h1_inner(u_norm, Wc) / b.h1_W_grid - 1.0;
  st.utilde = u_norm - (1.0 + st.alpha) * Wc;
  const auto res = detail::ortho_residuals(st.utilde, b);
  const double nu = std::sqrt(std::max(h1_norm_sq(st.utilde), 0.0));
  // relative to |W| |utilde|; degenerate when utilde is numerically zero
  st.ortho_residual =
      nu > 1e-12 * std::sqrt(b.h1_W_grid)
          ? std::max(std::abs(res.f_iW), std::abs(res.f_W1)) / (std::sqrt(b.h1_W_grid) * nu)
          : 0.0;
  // criticality gap from the decomposition identity
  //   |u_norm|^2 - |W|^2 = 2 alpha |W|^2 + |v|^2, v = u_norm - W;
  // grid-consistent and vanishing exactly at convergence.
  const ComplexField v = u_norm - Wc;
  st.dee_signed = 2.0 * st.alpha * b.h1_W_grid + h1_norm_sq(v);
  st.dee_mag = std::abs(st.dee_signed);
  st.ok = d.magnitude < delta0 * b.h1_W;
  return st;
}

struct TrackedSeries {
  std::vector<double> times;
  std::vector<ModulationState> states;
};

/// Per-snapshot modulation fits along a trajectory, warm-started from the
/// previous time. Snapshots outside the trust region are kept with ok=false.
inline TrackedSeries track(const TrajectoryRecord& rec, const GroundStateBundle& b,
                           double delta0 = 0.1) {
  if (rec.fields.empty()) throw std::invalid_argument("track: record has no stored fields");
  TrackedSeries out;
  std::optional<std::pair<double, double>> warm;
  for (size_t i = 0; i < rec.fields.size(); ++i) {
    const double t = i < rec.samples.size() ? rec.samples[i].t : 0.0;
    try {
      ModulationState st = fit_modulation(rec.fields[i], b, delta0, warm);
      warm = std::make_pair(st.theta, st.mu);
      out.times.push_back(t);
      out.states.push_back(std::move(st));
    } catch (const std::runtime_error&) {
      ModulationState bad;
      bad.ok = false;
      out.times.push_back(t);
      out.states.push_back(std::move(bad));
      warm.reset();
    }
  }
  return out;
}

struct RateFit {
  double rate = 0.0;     // |slope| of log dee_mag vs t
  double quality = 0.0;  // R^2
  int n_points = 0;
};

/// Least squares on log dee_mag over the window where dee_mag lies in
/// [1e-8, 1e-2] |W|^2, truncated at the global dee minimum: past it the
/// scheme's rounding floor re-excites the unstable direction and the orbit
/// leaves W again. Throws "window-empty" when no samples qualify.
inline RateFit fit_rate(const TrackedSeries& series, const GroundStateBundle& b,
                        double win_lo = 1e-8, double win_hi = 1e-2) {
  double t_min = std::numeric_limits<double>::infinity();
  double dee_min = std::numeric_limits<double>::infinity();
  double dee_after = 0.0;
  for (size_t i = 0; i < series.states.size(); ++i) {
    if (!series.states[i].ok) continue;
    if (series.states[i].dee_mag < dee_min) {
      dee_min = series.states[i].dee_mag;
      t_min = series.times[i];
      dee_after = dee_min;
    } else if (series.times[i] > t_min) {
      dee_after = std::max(dee_after, series.states[i].dee_mag);
    }
  }
  // A pronounced regrowth after the minimum marks the rounding floor; keep a
  // safety band above it so the flattening near the bottom does not bias the
  // slope.
  const bool floored = dee_after > 3.0 * dee_min;
  const double floor_cut = floored ? 20.0 * dee_min : 0.0;

  std::vector<double> ts, ys;
  for (size_t i = 0; i < series.states.size(); ++i) {
    const auto& st = series.states[i];
    if (!st.ok || series.times[i] > t_min) continue;
    if (st.dee_mag < floor_cut) continue;
    const double rel = st.dee_mag / b.h1_W_grid;
    if (rel < win_lo || rel > win_hi) continue;
    ts.push_back(series.times[i]);
    ys.push_back(st.dee_mag);
  }
  if (ts.size() < 3) throw std::runtime_error("window-empty");
  const LineFit lf = fit_loglinear(ts, ys);
  return RateFit{std::abs(lf.slope), lf.r_squared, static_cast<int>(ts.size())};
}

}  // namespace tnls
