// Localized virial quantities G_R, A_R, the cutoff constructions, the mass
// localization F_R, and the numerical check of the virial identity.
#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "tnls/grid.hpp"
#include "tnls/ground_state.hpp"

namespace tnls {

enum class CutoffKind { sec3, sec4, mass };

namespace detail {

// Sparse Laurent polynomial sum c_k r^k; radial Laplacian maps
// c_k r^k -> c_k k (k + N - 2) r^{k-2}, staying in the class.
using Laurent = std::map<int, double>;

inline double laurent_eval(const Laurent& p, double r) {
  double acc = 0.0;
  for (const auto& [k, c] : p) acc += c * std::pow(r, k);
  return acc;
}

inline Laurent laurent_derivative(const Laurent& p) {
  Laurent out;
  for (const auto& [k, c] : p)
    if (k != 0) out[k - 1] += c * k;
  return out;
}

inline Laurent laurent_laplacian(const Laurent& p, int dim) {
  Laurent out;
  for (const auto& [k, c] : p) {
    const double f = static_cast<double>(k) * (k + dim - 2);
    if (f != 0.0) out[k - 2] += c * f;
  }
  return out;
}

// Expand q((r-a)/L) for a polynomial q given by coefficients in z.
inline Laurent shifted_poly(const std::vector<double>& qz, double a, double L) {
  // z^m = sum_j binom(m,j) (r/L)^j (-a/L)^{m-j}
  Laurent out;
  const int deg = static_cast<int>(qz.size()) - 1;
  for (int m = 0; m <= deg; ++m) {
    if (qz[m] == 0.0) continue;
    double binom = 1.0;
    for (int j = 0; j <= m; ++j) {
      const double coef = qz[m] * binom * std::pow(-a / L, m - j) / std::pow(L, j);
      out[j] += coef;
      binom *= static_cast<double>(m - j) / (j + 1);
    }
  }
  return out;
}

struct CutoffPiece {
  double lo, hi;  // in the unscaled variable rho = r / R
  Laurent phi, dphi, ddphi, lap, bilap;
};

inline CutoffPiece make_piece(Laurent phi, double lo, double hi, int dim) {
  CutoffPiece p;
  p.lo = lo;
  p.hi = hi;
  p.dphi = laurent_derivative(phi);
  p.ddphi = laurent_derivative(p.dphi);
  p.lap = laurent_laplacian(phi, dim);
  p.bilap = laurent_laplacian(p.lap, dim);
  p.phi = std::move(phi);
  return p;
}

// Degree-7 blend on [1,2] matching value and first three derivatives of r^2
// at 1 and of 0 at 2; closed by an 8x8 solve.
inline Laurent sec3_blend() {
  double A[8][9] = {};
  // rows: p^(k)(1) = d^k(r^2) at 1 for k=0..3, then p^(k)(2) = 0
  auto fill = [&](int row, double x, int k, double rhs) {
    for (int j = 0; j < 8; ++j) {
      double c = 1.0;
      for (int q = 0; q < k; ++q) c *= (j - q);
      A[row][j] = j - k >= 0 ? c * std::pow(x, j - k) : 0.0;
    }
    A[row][8] = rhs;
  };
  fill(0, 1.0, 0, 1.0);
  fill(1, 1.0, 1, 2.0);
  fill(2, 1.0, 2, 2.0);
  fill(3, 1.0, 3, 0.0);
  fill(4, 2.0, 0, 0.0);
  fill(5, 2.0, 1, 0.0);
  fill(6, 2.0, 2, 0.0);
  fill(7, 2.0, 3, 0.0);
  for (int c = 0; c < 8; ++c) {
    int p = c;
    for (int i = c + 1; i < 8; ++i)
      if (std::abs(A[i][c]) > std::abs(A[p][c])) p = i;
    std::swap_ranges(A[c], A[c] + 9, A[p]);
    for (int i = 0; i < 8; ++i) {
      if (i == c) continue;
      const double f = A[i][c] / A[c][c];
      for (int j = c; j < 9; ++j) A[i][j] -= f * A[c][j];
    }
  }
  Laurent out;
  for (int j = 0; j < 8; ++j) out[j] = A[j][8] / A[j][j];
  return out;
}

}  // namespace detail

/// Piecewise-polynomial cutoff with all derivative fields precomputed on the
/// grid for phi_R(x) = R^2 phi(x/R). support_end is in units of R.
struct Cutoff {
  CutoffKind kind;
  double R = 1.0;
  double support_end = 2.0;  // in units of R
  GridPtr grid;
  RealField phi, dphi, ddphi, lap, bilap;
};

inline Cutoff make_cutoff(CutoffKind kind, double R, const GridPtr& g) {
  if (R <= 0.0) throw std::invalid_argument("make_cutoff: R must be positive");
  const int dim = g->dim;
  std::vector<detail::CutoffPiece> pieces;
  double support_end = 2.0;

  if (kind == CutoffKind::sec3) {
    pieces.push_back(detail::make_piece(detail::Laurent{{2, 1.0}}, 0.0, 1.0, dim));
    pieces.push_back(detail::make_piece(detail::sec3_blend(), 1.0, 2.0, dim));
    support_end = 2.0;
  } else if (kind == CutoffKind::sec4) {
    // phi = r^2 on [0,1]; phi'' then descends from 2 to 0 on [1,3] through the
    // cubic Hermite of phi' (phi'(1)=2, phi''(1)=2, phi'(3)=0, phi''(3)=0);
    // a quintic-smoothstep taper brings phi to 0 keeping phi'' <= 2. The
    // taper length is set by the accumulated plateau value, since phi'' <= 2
    // caps how fast phi may come down.
    pieces.push_back(detail::make_piece(detail::Laurent{{2, 1.0}}, 0.0, 1.0, dim));
    // phi'(r) = H(z), z = (r-1)/2: H = 8z^3 - 14z^2 + 4z + 2; integrate to phi
    // phi(r) = 1 + 2 int_0^z H = 1 + 2(2z^4 - 14 z^3/3 + 2z^2 + 2z)
    const std::vector<double> phi_z{1.0, 4.0, 4.0, -28.0 / 3.0, 4.0};
    detail::Laurent mid = detail::shifted_poly(phi_z, 1.0, 2.0);
    pieces.push_back(detail::make_piece(mid, 1.0, 3.0, dim));
    const double plateau = detail::laurent_eval(mid, 3.0);
    const double taper_len = std::ceil(10.0 * std::sqrt(5.9 * plateau / 2.0) * 1.06) / 10.0;
    // phi = plateau (1 - S5(z)), S5 = 10z^3 - 15z^4 + 6z^5, z = (r-3)/L
    const std::vector<double> taper_z{plateau, 0.0, 0.0, -10.0 * plateau, 15.0 * plateau,
                                      -6.0 * plateau};
    pieces.push_back(
        detail::make_piece(detail::shifted_poly(taper_z, 3.0, taper_len), 3.0, 3.0 + taper_len, dim));
    support_end = 3.0 + taper_len;
  } else {
    // mass cutoff psi: 1 on [0,1], quintic smoothstep down on [1,2]
    pieces.push_back(detail::make_piece(detail::Laurent{{0, 1.0}}, 0.0, 1.0, dim));
    const std::vector<double> down{1.0, 0.0, 0.0, -10.0, 15.0, -6.0};
    pieces.push_back(detail::make_piece(detail::shifted_poly(down, 1.0, 1.0), 1.0, 2.0, dim));
    support_end = 2.0;
  }

  if (support_end * R > g->r_max) throw std::runtime_error("support-exceeds-grid");

  Cutoff c;
  c.kind = kind;
  c.R = R;
  c.support_end = support_end;
  c.grid = g;
  const int M = g->size;
  c.phi = RealField{g, std::vector<double>(M, 0.0)};
  c.dphi = RealField{g, std::vector<double>(M, 0.0)};
  c.ddphi = RealField{g, std::vector<double>(M, 0.0)};
  c.lap = RealField{g, std::vector<double>(M, 0.0)};
  c.bilap = RealField{g, std::vector<double>(M, 0.0)};
  for (int i = 0; i < M; ++i) {
    const double rho = g->r[i] / R;
    if (rho >= support_end) continue;
    for (const auto& p : pieces) {
      if (rho < p.lo || rho > p.hi) continue;
      c.phi.v[i] = R * R * detail::laurent_eval(p.phi, rho);
      c.dphi.v[i] = R * detail::laurent_eval(p.dphi, rho);
      c.ddphi.v[i] = detail::laurent_eval(p.ddphi, rho);
      c.lap.v[i] = detail::laurent_eval(p.lap, rho);
      c.bilap.v[i] = detail::laurent_eval(p.bilap, rho) / (R * R);
      break;
    }
  }

  // constraint sampling at every node
  const double tol = 1e-12;
  for (int i = 0; i < M; ++i) {
    if (kind == CutoffKind::sec4) {
      if (c.phi.v[i] < -tol || c.ddphi.v[i] > 2.0 + tol)
        throw std::runtime_error("constraint-violated");
    } else if (kind == CutoffKind::mass) {
      const double psi = c.phi.v[i] / (R * R);
      if (psi < -tol || psi > 1.0 + tol) throw std::runtime_error("constraint-violated");
    }
  }
  return c;
}

/// G_R(u) = 2 Im int conj(u) u' phi_R'.
inline double G_R(const ComplexField& u, const Cutoff& c) {
  check_same_grid(u.grid, c.grid);
  const auto du = nodal_derivative(u);
  double acc = 0.0;
  for (int i = 0; i < u.grid->size; ++i)
    acc += u.grid->w[i] * (std::conj(u.v[i]) * du[i]).imag() * c.dphi.v[i];
  return 2.0 * acc;
}

/// F_R(u) = int |u|^2 psi(r/R) for the mass cutoff.
inline double F_R(const ComplexField& u, const Cutoff& c) {
  check_same_grid(u.grid, c.grid);
  if (c.kind != CutoffKind::mass) throw std::invalid_argument("F_R: needs a mass cutoff");
  double acc = 0.0;
  for (int i = 0; i < u.grid->size; ++i)
    acc += u.grid->w[i] * std::norm(u.v[i]) * (c.phi.v[i] / (c.R * c.R));
  return acc;
}

/// A_R(u): the localized virial error term. The first two integrands vanish
/// identically for r < R by the cutoff construction.
inline double A_R(const ComplexField& u, const Cutoff& c) {
  check_same_grid(u.grid, c.grid);
  const auto& g = *u.grid;
  const double ts = two_star(g.dim);
  const auto du = nodal_derivative(u);
  double acc = 0.0;
  for (int i = 0; i < g.size; ++i) {
    const double grad2 = std::norm(du[i]);
    const double u2s = std::pow(std::norm(u.v[i]), 0.5 * ts);
    double term = -std::norm(u.v[i]) * c.bilap.v[i];
    if (g.r[i] >= c.R) {
      term += grad2 * (4.0 * c.ddphi.v[i] - 8.0);
      term += u2s * (-4.0 / g.dim * c.lap.v[i] + 8.0);
    }
    acc += g.w[i] * term;
  }
  return acc;
}

struct VirialSample {
  double t = 0.0;
  double G = 0.0;
  double dGdt_fd = 0.0;  // centered difference, interior samples only
  double rhs = 0.0;      // threshold form when applicable, else general form
  double A = 0.0;
  double mismatch = 0.0;
  bool interior = false;
};

struct VirialReport {
  bool threshold = false;  // E(u0) = E(W) within tolerance; sign form applied
  double scale = 0.0;      // magnitude of the identity's leading term
  double max_mismatch = 0.0;
  double rms_mismatch = 0.0;
  std::vector<VirialSample> rows;
};

/// Compares centered differences of G_R(t) against the virial identity along
/// stored trajectory snapshots. At threshold energy the signed form
/// -(16/(N-2)) dee_signed + A_R applies; otherwise the sign-free form
/// 8(int |grad u|^2 - int |u|^{2*}) + A_R is checked instead.
inline VirialReport virial_identity_check(const std::vector<double>& times,
                                          const std::vector<ComplexField>& fields, const Cutoff& c,
                                          double threshold_rel_tol = 1e-5) {
  if (times.size() != fields.size() || times.size() < 3)
    throw std::invalid_argument("virial_identity_check: need >= 3 aligned snapshots");
  const auto& g = *fields[0].grid;
  const double ts = two_star(g.dim);
  const ComplexField Wc = to_complex(eval_W(fields[0].grid));
  const double h1W = h1_norm_sq(Wc);
  const double EW = 0.5 * h1W - integrate(abs_two_star(Wc)) / ts;

  const size_t n = times.size();
  std::vector<double> G(n), A(n), rhs(n);
  bool threshold = true;
  for (size_t i = 0; i < n; ++i) {
    G[i] = G_R(fields[i], c);
    A[i] = A_R(fields[i], c);
    const double h1 = h1_norm_sq(fields[i]);
    const double pot = integrate(abs_two_star(fields[i]));
    const double E = 0.5 * h1 - pot / ts;
    if (i == 0) threshold = std::abs(E - EW) <= threshold_rel_tol * std::abs(EW);
    if (threshold) {
      const double dee_signed = h1 - h1W;
      rhs[i] = -16.0 / (g.dim - 2.0) * dee_signed + A[i];
    } else {
      rhs[i] = 8.0 * (h1 - pot) + A[i];
    }
  }

  VirialReport rep;
  rep.threshold = threshold;
  double ss = 0.0;
  int cnt = 0;
  for (size_t i = 0; i < n; ++i) {
    VirialSample s;
    s.t = times[i];
    s.G = G[i];
    s.A = A[i];
    s.rhs = rhs[i];
    if (i > 0 && i + 1 < n) {
      s.dGdt_fd = (G[i + 1] - G[i - 1]) / (times[i + 1] - times[i - 1]);
      s.mismatch = s.dGdt_fd - rhs[i];
      s.interior = true;
      rep.max_mismatch = std::max(rep.max_mismatch, std::abs(s.mismatch));
      ss += s.mismatch * s.mismatch;
      ++cnt;
      rep.scale = std::max(rep.scale, std::abs(rhs[i]));
    }
    rep.rows.push_back(s);
  }
  rep.rms_mismatch = cnt > 0 ? std::sqrt(ss / cnt) : 0.0;
  return rep;
}

}  // namespace tnls
