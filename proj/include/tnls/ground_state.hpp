// The explicit stationary bubble W, its scaling generator W1, energy and
// criticality functionals, and the variational inequalities they satisfy.
#pragma once

#include <cmath>
#include <stdexcept>

#include "tnls/grid.hpp"

namespace tnls {

inline double p_critical(int dim) { return (dim + 2.0) / (dim - 2.0); }
inline double two_star(int dim) { return 2.0 * dim / (dim - 2.0); }

/// W(r) = (1 + r^2/(N(N-2)))^{-(N-2)/2}
inline double W_value(int dim, double r) {
  const double kap = dim * (dim - 2.0);
  return std::pow(1.0 + r * r / kap, -0.5 * (dim - 2.0));
}

/// W1 = (N-2)/2 W + r dW/dr, the scaling generator; closed form derivative.
inline double W1_value(int dim, double r) {
  const double kap = dim * (dim - 2.0);
  const double s = r * r / kap;
  return 0.5 * (dim - 2.0) * (1.0 - s) * std::pow(1.0 + s, -0.5 * dim);
}

inline double dW_dr(int dim, double r) {
  const double kap = dim * (dim - 2.0);
  return -((dim - 2.0) / kap) * r * std::pow(1.0 + r * r / kap, -0.5 * dim);
}

inline RealField eval_W(const GridPtr& g) {
  return sample_real(g, [dim = g->dim](double r) { return W_value(dim, r); });
}

inline RealField eval_W1(const GridPtr& g) {
  return sample_real(g, [dim = g->dim](double r) { return W1_value(dim, r); });
}

/// |f|^{2*} sampled pointwise (principal real power of the modulus).
inline RealField abs_two_star(const ComplexField& f) {
  const double e = two_star(f.grid->dim) / 2.0;
  RealField out{f.grid, std::vector<double>(f.v.size())};
  for (size_t i = 0; i < f.v.size(); ++i) out.v[i] = std::pow(std::norm(f.v[i]), e);
  return out;
}

/// E(f) = 1/2 |f|_{H1}^2 - (1/2*) int |f|^{2*}, with tail-completed quadrature
/// so the whole-space identities hold at reference resolution.
inline double energy(const ComplexField& f) {
  if (!all_finite(f)) throw std::invalid_argument("energy: non-finite field");
  const double kin = 0.5 * h1_norm_sq_tail(f);
  const double pot = integrate_tail(abs_two_star(f)) / two_star(f.grid->dim);
  return kin - pot;
}

/// Ground-state data measured on a grid. h1_W/energy_W/l2star_W carry the
/// tail completion (whole-space values); h1_W_grid is the plain truncated
/// norm used by trajectory diagnostics that need grid-consistent zeros.
struct GroundStateBundle {
  GridPtr grid;
  RealField W;
  RealField W1;
  double h1_W = 0.0;
  double h1_W_grid = 0.0;
  double h1_W1 = 0.0;
  double l2star_W = 0.0;
  double energy_W = 0.0;
  double sobolev_CN = 0.0;
};

inline GroundStateBundle make_ground_state(const GridPtr& g) {
  GroundStateBundle b;
  b.grid = g;
  b.W = eval_W(g);
  b.W1 = eval_W1(g);
  const ComplexField Wc = to_complex(b.W);
  const ComplexField W1c = to_complex(b.W1);
  b.h1_W = h1_norm_sq_tail(Wc);
  b.h1_W_grid = h1_norm_sq(Wc);
  b.h1_W1 = h1_norm_sq_tail(W1c);
  b.l2star_W = integrate_tail(abs_two_star(Wc));
  b.energy_W = 0.5 * b.h1_W - b.l2star_W / two_star(g->dim);
  b.sobolev_CN = std::pow(b.l2star_W, 1.0 / two_star(g->dim)) / std::sqrt(b.h1_W);
  return b;
}

struct DeeResult {
  double signed_value;
  double magnitude;
};

/// d(f) = | |f|_{H1}^2 - |W|_{H1}^2 | with the sign kept alongside; the
/// subcritical/supercritical virial identities need the sign convention.
inline DeeResult dee(const ComplexField& f, const GroundStateBundle& b) {
  const double s = h1_norm_sq_tail(f) - b.h1_W;
  return DeeResult{s, std::abs(s)};
}

struct VariationalReport {
  bool subcritical = false;      // |f|_H1 <= |W|_H1 held (precondition)
  double norm_ratio_sq = 0.0;    // |f|^2 / |W|^2
  double energy_ratio = 0.0;     // E(f) / E(W)
  bool variational_ok = false;   // norm_ratio_sq <= energy_ratio + tol
  double l2star_norm = 0.0;      // |f|_{L^{2*}}
  double sobolev_rhs = 0.0;      // C_N |f|_{H1}
  bool sobolev_ok = false;
};

/// Checks |f|^2/|W|^2 <= E(f)/E(W) for subcritical f, plus the Sobolev
/// inequality with the measured best constant. A supercritical input is
/// reported as not-subcritical rather than an error.
inline VariationalReport variational_check(const ComplexField& f, const GroundStateBundle& b,
                                           double tol = 1e-8) {
  VariationalReport rep;
  const double h1f = h1_norm_sq_tail(f);
  rep.norm_ratio_sq = h1f / b.h1_W;
  rep.subcritical = h1f <= b.h1_W * (1.0 + tol);
  rep.energy_ratio = energy(f) / b.energy_W;
  rep.variational_ok = rep.subcritical && (rep.norm_ratio_sq <= rep.energy_ratio + tol);
  rep.l2star_norm = std::pow(integrate_tail(abs_two_star(f)), 1.0 / two_star(f.grid->dim));
  rep.sobolev_rhs = b.sobolev_CN * std::sqrt(h1f);
  rep.sobolev_ok = rep.l2star_norm <= rep.sobolev_rhs * (1.0 + tol) + tol;
  return rep;
}

}  // namespace tnls
