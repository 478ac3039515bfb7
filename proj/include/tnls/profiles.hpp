// Recursive construction of the approximate solutions W_k^a = W + sum_j
// e^{-j e0 t} Phi_j and evaluation of their residuals.
#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "tnls/grid.hpp"
#include "tnls/ground_state.hpp"
#include "tnls/linearized.hpp"

namespace tnls {

/// R(v) = -i |W+v|^{pc-1}(W+v) + i W^pc + i pc W^{pc-1} v1 - W^{pc-1} v2,
/// the nonlinear remainder of the flow linearized at W. Pointwise; R(0) = 0.
inline ComplexField nonlinear_R(const ComplexField& v) {
  if (!all_finite(v)) throw std::invalid_argument("nonlinear_R: non-finite field");
  const auto& g = *v.grid;
  const double pc = p_critical(g.dim);
  ComplexField out{v.grid, std::vector<Complex>(g.size)};
  for (int i = 0; i < g.size; ++i) {
    const double W = W_value(g.dim, g.r[i]);
    const double Wpc = std::pow(W, pc);
    const double Vv = Wpc / W;  // W^{pc-1}
    const Complex u = W + v.v[i];
    const Complex full = -Complex(0, 1) * std::pow(std::abs(u), pc - 1.0) * u;
    out.v[i] = full + Complex(0, 1) * Wpc +
               Complex(0, 1) * pc * Vv * v.v[i].real() - Vv * v.v[i].imag();
  }
  return out;
}

/// Coefficients of the approximate solution family; phis[j-1] = Phi_j with
/// Phi_1 = a Y+. Construction state (operator, eigenvalue) rides along so the
/// residual and extraction routines are self-contained.
struct ProfileSet {
  double a = 0.0;
  int k = 0;
  std::vector<ComplexField> phis;
  std::vector<ComplexField> psis;  // stored sources; psis[j-1] satisfies
                                   // (L - (j+1) e0) Phi_{j+1} = -Psi_j
  double e0 = 0.0;
  std::shared_ptr<const LinearizedOperator> op;
};

inline ComplexField assemble_v(const ProfileSet& ps, double s) {
  ComplexField v{ps.phis.empty() ? nullptr : ps.phis[0].grid, {}};
  if (ps.phis.empty()) throw std::invalid_argument("empty profile set");
  const int M = v.grid->size;
  v.v.assign(M, Complex(0, 0));
  double sj = 1.0;
  for (int j = 0; j < static_cast<int>(ps.phis.size()); ++j) {
    sj *= s;
    for (int i = 0; i < M; ++i) v.v[i] += sj * ps.phis[j].v[i];
  }
  return v;
}

/// W + sum_j e^{-j e0 t} Phi_j evaluated at time t.
inline ComplexField assemble_Wka(const ProfileSet& ps, double t) {
  const double s = std::exp(-ps.e0 * t);
  ComplexField out = assemble_v(ps, s);
  for (int i = 0; i < out.grid->size; ++i) out.v[i] += W_value(out.grid->dim, out.grid->r[i]);
  return out;
}

namespace detail {

// Largest s such that |v(s)| <= frac * W pointwise (the smallness that keeps
// the nonlinear series inside its convergence region), by bisection.
inline double amplitude_bound_s(const ProfileSet& ps, double frac) {
  const auto& g = *ps.phis[0].grid;
  std::vector<double> Wv(g.size);
  for (int i = 0; i < g.size; ++i) Wv[i] = W_value(g.dim, g.r[i]);
  auto ratio = [&](double s) {
    const ComplexField v = assemble_v(ps, s);
    double m = 0.0;
    for (int i = 0; i < g.size; ++i) m = std::max(m, std::abs(v.v[i]) / Wv[i]);
    return m;
  };
  double hi = 1.0;
  while (ratio(hi) > frac && hi > 1e-12) hi *= 0.5;
  if (hi >= 1.0) return 1.0;
  double lo = hi, hi2 = 2.0 * hi;
  for (int it = 0; it < 60 && hi2 - lo > 1e-12 * hi2; ++it) {
    const double mid = 0.5 * (lo + hi2);
    (ratio(mid) <= frac ? lo : hi2) = mid;
  }
  return lo;
}

}  // namespace detail

/// eps_k(t) = d/dt v_k + L v_k + R(v_k), with the time derivative taken
/// analytically from the exponential ansatz.
inline ComplexField eval_residual(const ProfileSet& ps, double t) {
  if (!ps.op) throw std::invalid_argument("eval_residual: profile set has no operator");
  const auto& g = *ps.phis[0].grid;
  const double s = std::exp(-ps.e0 * t);
  ComplexField v = assemble_v(ps, s);
  for (int i = 0; i < g.size; ++i)
    if (std::abs(v.v[i]) > 0.5 * W_value(g.dim, g.r[i]))
      throw std::runtime_error("amplitude-too-large");

  ComplexField eps = apply_L(*ps.op, v) + nonlinear_R(v);
  double sj = 1.0;
  for (int j = 0; j < static_cast<int>(ps.phis.size()); ++j) {
    sj *= s;
    const double c = -(j + 1) * ps.e0 * sj;
    for (int i = 0; i < g.size; ++i) eps.v[i] += c * ps.phis[j].v[i];
  }
  return eps;
}

/// Extracts Psi_k, the coefficient of s^{k+1} (s = e^{-e0 t}) in eps_k.
/// The linear-in-s part of eps_k telescopes exactly against the stored
/// sources, so only R contributes new orders. The coefficient is the s -> 0
/// limit of eps_k(s)/s^{k+1}, read off a Chebyshev-sampled interpolant in
/// (0, s0] evaluated at 0 by the barycentric formula. The amplification
/// (s0/s_min)^{k+1} of the smallest sample serves as the condition estimate.
inline ComplexField extract_next_source(const ProfileSet& ps, int n_samples = 0) {
  if (ps.phis.empty()) throw std::invalid_argument("extract_next_source: empty set");
  const auto& gp = ps.phis[0].grid;
  const int M = gp->size;
  const int m = static_cast<int>(ps.phis.size());
  const bool auto_n = n_samples <= 0;
  if (auto_n) n_samples = m + 12;
  if (n_samples < m + 2) throw std::invalid_argument("extract_next_source: too few samples");

  const double s0 = detail::amplitude_bound_s(ps, 0.25);
  // Samples cluster to 0 for the first extraction; for deeper orders the
  // window keeps clear of 0, where dividing by s^{m+1} amplifies the rounding
  // floor of the nonlinearity, and the interpolant is extrapolated instead.
  const double s_lo = m == 1 ? 0.0 : s0 / 8.0;

  auto build_nodes = [&](int n, std::vector<double>& sv, std::vector<double>& xi,
                         std::vector<double>& bw, std::vector<double>& lam, double& lam_sum,
                         double& lebesgue) {
    sv.resize(n);
    xi.resize(n);
    bw.resize(n);
    lam.resize(n);
    lam_sum = 0.0;
    double lam_abs = 0.0;
    const double mid = 0.5 * (s_lo + s0), half = 0.5 * (s0 - s_lo);
    const double x_at_0 = (0.0 - mid) / half;
    for (int i = 0; i < n; ++i) {
      const double th = (2.0 * i + 1.0) * std::numbers::pi / (2.0 * n);
      xi[i] = std::cos(th);
      sv[i] = mid + half * xi[i];
      bw[i] = (i % 2 == 0 ? 1.0 : -1.0) * std::sin(th);
      lam[i] = bw[i] / (x_at_0 - xi[i]);
      lam_sum += lam[i];
      lam_abs += std::abs(lam[i]);
    }
    lebesgue = lam_abs / std::abs(lam_sum);
  };

  std::vector<double> sv, xi, bw, lam;
  double lam_sum = 0.0, lebesgue = 1.0;
  int n = n_samples;
  build_nodes(n, sv, xi, bw, lam, lam_sum, lebesgue);
  auto cond_est = [&]() { return lebesgue * std::pow(s0 / sv.back(), m + 1); };
  while (auto_n && n > m + 2 && cond_est() > 1e12) {
    --n;
    build_nodes(n, sv, xi, bw, lam, lam_sum, lebesgue);
  }
  if (cond_est() > 1e12) throw std::runtime_error("ill-conditioned extraction");

  ComplexField Psi{gp, std::vector<Complex>(M, Complex(0, 0))};
  for (int i = 0; i < n; ++i) {
    ComplexField v = assemble_v(ps, sv[i]);
    ComplexField e = nonlinear_R(v);
    double sj = sv[i];
    for (int j = 2; j <= m; ++j) {
      sj *= sv[i];
      for (int q = 0; q < M; ++q) e.v[q] -= sj * ps.psis[j - 2].v[q];
    }
    const double c = lam[i] / lam_sum / std::pow(sv[i], m + 1);
    for (int q = 0; q < M; ++q) Psi.v[q] += c * e.v[q];
  }
  return Psi;
}

/// Builds Phi_1 = a Y+ and Phi_{j+1} = -(L - (j+1) e0)^{-1} Psi_j for
/// j = 1..k-1. With a = 0 every profile vanishes.
inline ProfileSet build_profiles(double a, int k, std::shared_ptr<const LinearizedOperator> op,
                                 const EigenPair& pair) {
  if (k < 1) throw std::invalid_argument("build_profiles: k must be >= 1");
  ProfileSet ps;
  ps.a = a;
  ps.k = k;
  ps.e0 = pair.e0;
  ps.op = op;
  ps.phis.push_back(a * pair.Yplus);
  if (a == 0.0) {
    // zero family: all higher profiles vanish identically
    for (int j = 1; j < k; ++j) {
      ps.psis.push_back(ComplexField{pair.Yplus.grid,
                                     std::vector<Complex>(pair.Yplus.grid->size, Complex(0, 0))});
      ps.phis.push_back(ps.psis.back());
    }
    return ps;
  }
  for (int j = 1; j < k; ++j) {
    ComplexField Psi = extract_next_source(ps);
    ComplexField Phi = Complex(-1.0, 0.0) * resolvent_solve(*op, (j + 1) * pair.e0, Psi, pair.e0);
    ps.psis.push_back(std::move(Psi));
    ps.phis.push_back(std::move(Phi));
    ps.k = j + 1;
  }
  ps.k = k;
  return ps;
}

}  // namespace tnls
