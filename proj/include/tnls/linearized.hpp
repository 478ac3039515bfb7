// The linearized operator around W, the forms B and Q, the (e0, Y+-)
// eigenpair, resolvent solves and coercivity probes on the stable subspace.
#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "tnls/banded.hpp"
#include "tnls/grid.hpp"
#include "tnls/ground_state.hpp"

namespace tnls {

/// L = [[0, Delta+V], [-(Delta+pc V), 0]] with V = W^{pc-1}, assembled as the
/// two real banded blocks. Two closures are kept: the decay-matched one for
/// applying L to slowly decaying W-type fields, and a Dirichlet one whose
/// spectrum is clean of boundary artifacts for eigen and resolvent work
/// (eigenfields and resolvent images decay fast, so Dirichlet is their
/// natural closure). A factorization-free value type; safe to share.
struct LinearizedOperator {
  GridPtr grid;
  RealField V;                     // W^{pc-1}
  BandedMatrix<double> A_minus;    // Delta + V, decay closure
  BandedMatrix<double> A_plus;     // Delta + pc V, decay closure
  BandedMatrix<double> A_minus_d;  // Dirichlet closure
  BandedMatrix<double> A_plus_d;
};

inline LinearizedOperator make_linearized(const GridPtr& g) {
  const double pc = p_critical(g->dim);
  RealField V = sample_real(g, [dim = g->dim, pc](double r) {
    return std::pow(W_value(dim, r), pc - 1.0);
  });
  BandedMatrix<double> lap = assemble_laplacian(*g, OuterBC::decay);
  BandedMatrix<double> lap_d = assemble_laplacian(*g, OuterBC::dirichlet);
  BandedMatrix<double> Am = lap, Ap = lap, Amd = lap_d, Apd = lap_d;
  for (int i = 0; i < g->size; ++i) {
    Am.add(i, i, V.v[i]);
    Ap.add(i, i, pc * V.v[i]);
    Amd.add(i, i, V.v[i]);
    Apd.add(i, i, pc * V.v[i]);
  }
  return LinearizedOperator{g,           std::move(V),  std::move(Am),
                            std::move(Ap), std::move(Amd), std::move(Apd)};
}

/// L f = ( (Delta+V) f2 , -(Delta+pc V) f1 ) as re + i im.
inline ComplexField apply_L(const LinearizedOperator& op, const ComplexField& f) {
  check_same_grid(op.grid, f.grid);
  const int M = op.grid->size;
  std::vector<double> f1(M), f2(M);
  for (int i = 0; i < M; ++i) {
    f1[i] = f.v[i].real();
    f2[i] = f.v[i].imag();
  }
  const auto top = op.A_minus.apply(f2);
  const auto bot = op.A_plus.apply(f1);
  ComplexField out{f.grid, std::vector<Complex>(M)};
  for (int i = 0; i < M; ++i) out.v[i] = Complex(top[i], -bot[i]);
  return out;
}

/// B(f,g) = 1/2 int grad f1 grad g1 - pc/2 int V f1 g1
///        + 1/2 int grad f2 grad g2 - 1/2 int V f2 g2,
/// from the explicit integral form (tail-completed), not through L.
inline double bilinear_B(const LinearizedOperator& op, const ComplexField& f, const ComplexField& g) {
  check_same_grid(op.grid, f.grid);
  check_same_grid(op.grid, g.grid);
  const int M = op.grid->size;
  const double pc = p_critical(op.grid->dim);
  const auto df = nodal_derivative(f);
  const auto dg = nodal_derivative(g);
  // gradient terms, tail-completed per component
  std::vector<double> p11(M), p22(M), pot(M);
  for (int i = 0; i < M; ++i) {
    p11[i] = df[i].real() * dg[i].real();
    p22[i] = df[i].imag() * dg[i].imag();
    pot[i] = op.V.v[i] * (pc * f.v[i].real() * g.v[i].real() + f.v[i].imag() * g.v[i].imag());
  }
  const RealField f11{op.grid, std::move(p11)};
  const RealField f22{op.grid, std::move(p22)};
  const RealField fpot{op.grid, std::move(pot)};
  return 0.5 * (integrate_tail(f11) + integrate_tail(f22)) - 0.5 * integrate_tail(fpot);
}

inline double quadratic_Q(const LinearizedOperator& op, const ComplexField& f) {
  return bilinear_B(op, f, f);
}

struct EigenPair {
  double e0 = 0.0;
  ComplexField Yplus;   // Y1 + i Y2, |Y+|_{H1} = 1, (W, Y1)_{H1} > 0
  double residual = 0.0;  // |L Y+ - e0 Y+|_{H1}
};

namespace detail {

inline double weighted_dot(const RadialGrid& g, const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (int i = 0; i < g.size; ++i) acc += g.w[i] * a[i] * b[i];
  return acc;
}

struct InverseIterationResult {
  bool converged = false;
  double lambda = 0.0;
  std::vector<double> vec;
};

// Weighted mass fraction of a vector in the outer part of the grid; spurious
// boundary-closure modes concentrate there, physical modes do not.
inline double outer_mass_fraction(const RadialGrid& g, const std::vector<double>& x) {
  double outer = 0.0, total = 0.0;
  for (int i = 0; i < g.size; ++i) {
    const double m = g.w[i] * x[i] * x[i];
    total += m;
    if (g.r[i] > 0.8 * g.r_max) outer += m;
  }
  return total > 0.0 ? outer / total : 1.0;
}

// Inverse iteration on (M - sigma)^{-1}; converges to the eigenvalue of M
// nearest sigma. Rayleigh quotients taken in the quadrature inner product.
// Acceptance is by eigen-residual, so Rayleigh-quotient stagnation at its
// rounding floor does not block convergence.
inline InverseIterationResult inverse_iteration(const RadialGrid& g, const BandedMatrix<double>& M,
                                                double sigma, std::vector<double> x,
                                                int max_iter = 400, double tol = 1e-12) {
  InverseIterationResult res;
  BandedMatrix<double> Ms = M;
  for (int i = 0; i < g.size; ++i) Ms.add(i, i, -sigma);
  BandedLU<double> lu(std::move(Ms));

  double rho = 0.0, rho_prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    x = lu.solve(std::move(x));
    double nrm = std::sqrt(weighted_dot(g, x, x));
    if (!std::isfinite(nrm) || nrm == 0.0) return res;
    for (auto& xi : x) xi /= nrm;
    const auto Mx = M.apply(x);
    rho = weighted_dot(g, x, Mx);
    if (it > 4 && std::abs(rho - rho_prev) <= tol * std::abs(rho)) break;
    rho_prev = rho;
  }
  const auto Mx = M.apply(x);
  double rr = 0.0;
  for (int i = 0; i < g.size; ++i) {
    const double d = Mx[i] - rho * x[i];
    rr += g.w[i] * d * d;
  }
  res.converged = std::sqrt(rr) < 1e-6 * std::max(1.0, std::abs(rho));
  res.lambda = rho;
  res.vec = std::move(x);
  return res;
}

}  // namespace detail

/// Computes the unstable eigenpair by eliminating Y2: the fourth-order real
/// composition (Delta+V)(Delta+pc V) Y1 = -e0^2 Y1 has a single negative
/// eigenvalue, found by shift-scanned inverse iteration and polished with a
/// Rayleigh shift; then Y2 = -(Delta+pc V) Y1 / e0.
inline EigenPair eigenpair(const LinearizedOperator& op) {
  const auto& g = *op.grid;
  const int M = g.size;
  const BandedMatrix<double> Mop = multiply(op.A_minus_d, op.A_plus_d);

  std::vector<double> x0(M);
  for (int i = 0; i < M; ++i) x0[i] = std::exp(-0.5 * g.r[i] * g.r[i]) + W1_value(g.dim, g.r[i]);

  double best_lambda = 0.0;
  std::vector<double> best_vec;
  for (double s = 0.02; s <= 64.0; s *= 4.0) {
    auto res = detail::inverse_iteration(g, Mop, -s, x0);
    if (!res.converged) continue;
    if (res.lambda >= -1e-8) continue;                             // near-kernel
    if (detail::outer_mass_fraction(g, res.vec) > 1e-2) continue;  // boundary artifact
    if (best_vec.empty() || res.lambda < best_lambda) {
      best_lambda = res.lambda;
      best_vec = std::move(res.vec);
    }
    if (s > 2.0 * std::abs(best_lambda)) break;
  }
  if (best_vec.empty()) throw std::runtime_error("no-negative-mode");

  // Rayleigh polish
  for (int k = 0; k < 2; ++k) {
    auto res = detail::inverse_iteration(g, Mop, best_lambda * (1.0 + 1e-8), best_vec, 60);
    if (res.converged && res.lambda < -1e-8 &&
        detail::outer_mass_fraction(g, res.vec) <= 1e-2) {
      best_lambda = res.lambda;
      best_vec = std::move(res.vec);
    }
  }

  const double e0 = std::sqrt(-best_lambda);
  const auto ApY1 = op.A_plus_d.apply(best_vec);
  ComplexField Y{op.grid, std::vector<Complex>(M)};
  for (int i = 0; i < M; ++i) Y.v[i] = Complex(best_vec[i], -ApY1[i] / e0);

  // normalization and sign convention
  const double nrm = std::sqrt(h1_norm_sq(Y));
  if (nrm == 0.0) throw std::runtime_error("no-negative-mode");
  const ComplexField Wc = to_complex(eval_W(op.grid));
  ComplexField Y1only{op.grid, std::vector<Complex>(M)};
  for (int i = 0; i < M; ++i) Y1only.v[i] = Complex(Y.v[i].real(), 0.0);
  const double sgn = h1_inner(Wc, Y1only) >= 0.0 ? 1.0 : -1.0;
  for (auto& v : Y.v) v *= sgn / nrm;

  // L-residual in H1
  const auto LY = apply_L(op, Y);
  ComplexField resf{op.grid, std::vector<Complex>(M)};
  for (int i = 0; i < M; ++i) resf.v[i] = LY.v[i] - e0 * Y.v[i];
  const double residual = std::sqrt(std::max(0.0, h1_norm_sq(resf)));

  return EigenPair{e0, std::move(Y), residual};
}

/// Probes M for any second negative eigenvalue with shifts away from -e0^2.
/// Returns the most negative eigenvalue found that is distinct from -e0^2
/// (0.0 when none is found below -1e-6).
inline double second_negative_probe(const LinearizedOperator& op, double e0) {
  const auto& g = *op.grid;
  const BandedMatrix<double> Mop = multiply(op.A_minus_d, op.A_plus_d);
  std::vector<double> x0(g.size);
  for (int i = 0; i < g.size; ++i) x0[i] = g.r[i] * std::exp(-0.3 * g.r[i] * g.r[i]);
  double worst = 0.0;
  for (double f : {1.5, 2.5}) {
    const double sigma = -(f * e0) * (f * e0);
    auto res = detail::inverse_iteration(g, Mop, sigma, x0);
    if (!res.converged) continue;
    if (detail::outer_mass_fraction(g, res.vec) > 1e-2) continue;
    if (res.lambda < -1e-6 && std::abs(res.lambda + e0 * e0) > 1e-3 * e0 * e0)
      worst = std::min(worst, res.lambda);
  }
  return worst;
}

/// Solves (L - c) Phi = Psi as the coupled 2x2 real block system with a
/// banded direct solve. c must keep a margin from the real spectrum.
inline ComplexField resolvent_solve(const LinearizedOperator& op, double c, const ComplexField& Psi,
                                    double e0) {
  check_same_grid(op.grid, Psi.grid);
  const double margin = 1e-6 * e0;
  if (std::abs(c) < margin || std::abs(c - e0) < margin || std::abs(c + e0) < margin)
    throw std::runtime_error("spectral-collision");

  const int M = op.grid->size;
  const int n = 2 * M;
  // interleaved ordering (f1_0, f2_0, f1_1, f2_1, ...): bandwidth 2*2+1.
  // Dirichlet closure: resolvent images of decaying sources decay.
  BandedMatrix<double> S(n, 5, 5);
  for (int i = 0; i < M; ++i) {
    // row 2i: (A_minus f2)_i - c f1_i = Psi1_i
    S.add(2 * i, 2 * i, -c);
    for (int j = std::max(0, i - 2); j <= std::min(M - 1, i + 2); ++j) {
      const double v = op.A_minus_d.get(i, j);
      if (v != 0.0) S.add(2 * i, 2 * j + 1, v);
    }
    // row 2i+1: -(A_plus f1)_i - c f2_i = Psi2_i
    S.add(2 * i + 1, 2 * i + 1, -c);
    for (int j = std::max(0, i - 2); j <= std::min(M - 1, i + 2); ++j) {
      const double v = op.A_plus_d.get(i, j);
      if (v != 0.0) S.add(2 * i + 1, 2 * j, -v);
    }
  }

  std::vector<double> rhs(n);
  for (int i = 0; i < M; ++i) {
    rhs[2 * i] = Psi.v[i].real();
    rhs[2 * i + 1] = Psi.v[i].imag();
  }
  BandedLU<double> lu(S);
  const auto sol = lu.solve(rhs);

  ComplexField Phi{op.grid, std::vector<Complex>(M)};
  for (int i = 0; i < M; ++i) Phi.v[i] = Complex(sol[2 * i], sol[2 * i + 1]);

  // round-trip residual against the same assembly that was solved
  const auto res = S.apply(sol);
  double rr = 0.0, pp = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = res[i] - rhs[i];
    rr += d * d;
    pp += rhs[i] * rhs[i];
  }
  if (pp > 0.0 && std::sqrt(rr) > 1e-8 * std::sqrt(pp)) throw std::runtime_error("singular-solve");
  return Phi;
}

/// Removes the Y+- components (B-pairing) and then the iW, W1 components
/// (H1-orthogonal). B(iW,.) = B(W1,.) = 0, so the later projections do not
/// disturb the earlier ones.
inline ComplexField project_Gperp(const LinearizedOperator& op, const EigenPair& pair,
                                  const ComplexField& f) {
  const ComplexField Ym = conj(pair.Yplus);
  const double beta = bilinear_B(op, pair.Yplus, Ym);
  if (std::abs(beta) < 1e-8) throw std::runtime_error("degenerate projection: B(Y+,Y-) ~ 0");

  const double a = bilinear_B(op, Ym, f) / beta;       // coefficient of Y+
  const double b = bilinear_B(op, pair.Yplus, f) / beta;  // coefficient of Y-
  ComplexField out = f - a * pair.Yplus - b * Ym;

  const ComplexField Wc = to_complex(eval_W(op.grid));
  const ComplexField W1c = to_complex(eval_W1(op.grid));
  const ComplexField iW = Complex(0.0, 1.0) * Wc;
  const double niW = h1_norm_sq_tail(iW);
  const double nW1 = h1_norm_sq_tail(W1c);
  const double ciW = h1_inner_tail(out, iW) / niW;
  const double cW1 = h1_inner_tail(out, W1c) / nW1;
  out = out - ciW * iW - cW1 * W1c;
  return out;
}

/// Draws seeded random smooth fields, projects them into G_perp and returns
/// the minimum Rayleigh quotient Q(f)/|f|^2_{H1} over the trials.
inline double coercivity_probe(const LinearizedOperator& op, const EigenPair& pair, int trials,
                               unsigned seed) {
  if (trials < 1) throw std::invalid_argument("coercivity_probe: trials must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto& g = *op.grid;
  const std::array<double, 6> widths{0.5, 1.0, 2.0, 3.5, 5.5, 8.0};

  double min_q = std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    ComplexField f{op.grid, std::vector<Complex>(g.size, Complex(0, 0))};
    std::array<Complex, 6> coefs;
    for (auto& c : coefs) c = Complex(gauss(rng), gauss(rng));
    for (int i = 0; i < g.size; ++i) {
      Complex acc(0, 0);
      for (size_t k = 0; k < widths.size(); ++k) {
        const double z = g.r[i] / widths[k];
        acc += coefs[k] * std::exp(-z * z);
      }
      f.v[i] = acc;
    }
    ComplexField fp = project_Gperp(op, pair, f);
    const double nn = h1_norm_sq(fp);
    if (nn < 1e-14) continue;
    min_q = std::min(min_q, quadratic_Q(op, fp) / nn);
  }
  return min_q;
}

}  // namespace tnls
