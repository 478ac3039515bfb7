// Radial discretization of R^N (N = 3,4,5): stretched grid, Simpson quadrature
// with Jacobian weights, nodal derivatives, finite-difference Laplacian,
// H^1-dot inner products and the phase/scaling symmetry transform.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tnls/banded.hpp"

namespace tnls {

using Complex = std::complex<double>;

inline double sphere_area(int dim) {
  switch (dim) {
    case 3: return 4.0 * std::numbers::pi;
    case 4: return 2.0 * std::numbers::pi * std::numbers::pi;
    case 5: return 8.0 * std::numbers::pi * std::numbers::pi / 3.0;
    default: throw std::invalid_argument("dim must be 3, 4 or 5");
  }
}

/// Outer boundary treatment for difference operators. `decay` closes the
/// stencil with a three-term power-law extrapolation r^{2-N}(a + b/r^2 + c/r^4)
/// fitted to the last three nodes; it keeps slowly decaying fields from seeing
/// an artificial wall.
enum class OuterBC { dirichlet, decay };

class RadialGrid;
using GridPtr = std::shared_ptr<const RadialGrid>;

/// Fornberg finite-difference weights: weights[k][j] approximates the k-th
/// derivative at z from values at nodes x[0..n-1], exact on polynomials.
inline std::vector<std::vector<double>> fd_weights(double z, const std::vector<double>& x, int max_order) {
  const int n = static_cast<int>(x.size());
  std::vector<std::vector<double>> c(max_order + 1, std::vector<double>(n, 0.0));
  double c1 = 1.0, c4 = x[0] - z;
  c[0][0] = 1.0;
  for (int i = 1; i < n; ++i) {
    const int mn = std::min(i, max_order);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = x[i] - z;
    for (int j = 0; j < i; ++j) {
      const double c3 = x[i] - x[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k) c[k][i] = c1 * (k * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
        c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
      }
      for (int k = mn; k >= 1; --k) c[k][j] = (c4 * c[k][j] - k * c[k - 1][j]) / c3;
      c[0][j] = c4 * c[0][j] / c3;
    }
    c1 = c2;
  }
  return c;
}

/// Immutable radial grid. Nodes are the images of a uniform grid in xi under
/// r(xi) = r_max * xi * (1+stretch) / (1 + stretch*xi), xi in (0,1]; the map
/// concentrates nodes near the origin and still resolves the power-law tail.
/// Quadrature is composite Simpson in xi times the Jacobian
/// r^{N-1} * |S^{N-1}| * r'(xi); the xi=0 endpoint carries a vanishing
/// integrand and is dropped.
class RadialGrid : public std::enable_shared_from_this<RadialGrid> {
 public:
  int dim;
  int size;          // M, number of nodes
  double r_max;
  double stretch;
  std::vector<double> r;        // nodes, strictly increasing, r.back() == r_max
  std::vector<double> w;        // quadrature weights incl. Jacobian and sphere area
  std::vector<double> xi;       // mapped coordinate of each node
  std::vector<double> map_d;    // r'(xi) at nodes
  std::vector<double> map_dd;   // r''(xi) at nodes
  double h_xi;                  // uniform xi spacing
  // first-derivative stencils per node, (node index, weight), origin fold applied
  std::vector<std::vector<std::pair<int, double>>> d1;

  double map(double x) const { return r_max * x * (1.0 + stretch) / (1.0 + stretch * x); }
  double map_deriv(double x) const {
    const double d = 1.0 + stretch * x;
    return r_max * (1.0 + stretch) / (d * d);
  }
  double map_deriv2(double x) const {
    const double d = 1.0 + stretch * x;
    return -2.0 * stretch * r_max * (1.0 + stretch) / (d * d * d);
  }
};

struct RealField {
  GridPtr grid;
  std::vector<double> v;
};

struct ComplexField {
  GridPtr grid;
  std::vector<Complex> v;
};

inline GridPtr make_grid(int dim, double r_max, int M, double stretch) {
  if (dim < 3 || dim > 5) throw std::invalid_argument("make_grid: dim must be 3, 4 or 5");
  if (r_max <= 0.0) throw std::invalid_argument("make_grid: r_max must be positive");
  if (M < 16) throw std::invalid_argument("make_grid: M must be at least 16");
  if (M % 2 != 0) throw std::invalid_argument("make_grid: M must be even (composite Simpson)");
  if (stretch < 0.0) throw std::invalid_argument("make_grid: stretch must be nonnegative");

  auto g = std::make_shared<RadialGrid>();
  g->dim = dim;
  g->size = M;
  g->r_max = r_max;
  g->stretch = stretch;
  g->h_xi = 1.0 / M;
  g->r.resize(M);
  g->w.resize(M);
  g->xi.resize(M);
  g->map_d.resize(M);
  g->map_dd.resize(M);

  const double area = sphere_area(dim);
  for (int i = 0; i < M; ++i) {
    const double x = static_cast<double>(i + 1) / M;
    g->xi[i] = x;
    g->r[i] = g->map(x);
    g->map_d[i] = g->map_deriv(x);
    g->map_dd[i] = g->map_deriv2(x);
    // Simpson coefficient for point i+1 of 0..M: 4 on odd, 2 on interior even, 1 at M.
    double c;
    if (i == M - 1) c = 1.0;
    else c = ((i + 1) % 2 == 1) ? 4.0 : 2.0;
    g->w[i] = (g->h_xi / 3.0) * c * area * std::pow(g->r[i], dim - 1) * g->map_d[i];
  }

  // nodal d/dr stencils: uniform 7-point in xi inside, Fornberg in r with an
  // even fold at the origin, one-sided at the outer edge
  g->d1.resize(M);
  auto fold_push = [](std::vector<std::pair<int, double>>& row, int j, double wgt) {
    for (auto& e : row)
      if (e.first == j) {
        e.second += wgt;
        return;
      }
    row.emplace_back(j, wgt);
  };
  for (int i = 0; i < M; ++i) {
    auto& row = g->d1[i];
    if (i >= 3 && i <= M - 4) {
      const double c = 1.0 / (60.0 * g->h_xi * g->map_d[i]);
      fold_push(row, i - 3, -c);
      fold_push(row, i - 2, 9.0 * c);
      fold_push(row, i - 1, -45.0 * c);
      fold_push(row, i + 1, 45.0 * c);
      fold_push(row, i + 2, -9.0 * c);
      fold_push(row, i + 3, c);
    } else if (i < 3) {
      std::vector<double> xs;
      std::vector<int> js;
      for (int k = i - 3; k <= i + 3; ++k) {
        if (k >= 0) {
          xs.push_back(g->r[k]);
          js.push_back(k);
        } else {
          xs.push_back(-g->r[-k - 1]);
          js.push_back(-k - 1);
        }
      }
      auto wts = fd_weights(g->r[i], xs, 1);
      for (size_t k = 0; k < xs.size(); ++k) fold_push(row, js[k], wts[1][k]);
    } else {
      std::vector<double> xs;
      std::vector<int> js;
      for (int k = M - 7; k < M; ++k) {
        xs.push_back(g->r[k]);
        js.push_back(k);
      }
      auto wts = fd_weights(g->r[i], xs, 1);
      for (size_t k = 0; k < xs.size(); ++k) fold_push(row, js[k], wts[1][k]);
    }
  }
  return g;
}

template <typename F>
RealField sample_real(const GridPtr& g, F&& f) {
  RealField out{g, std::vector<double>(g->size)};
  for (int i = 0; i < g->size; ++i) out.v[i] = f(g->r[i]);
  return out;
}

template <typename F>
ComplexField sample_complex(const GridPtr& g, F&& f) {
  ComplexField out{g, std::vector<Complex>(g->size)};
  for (int i = 0; i < g->size; ++i) out.v[i] = f(g->r[i]);
  return out;
}

inline ComplexField to_complex(const RealField& f) {
  ComplexField out{f.grid, std::vector<Complex>(f.v.size())};
  for (size_t i = 0; i < f.v.size(); ++i) out.v[i] = Complex(f.v[i], 0.0);
  return out;
}

inline RealField real_part(const ComplexField& f) {
  RealField out{f.grid, std::vector<double>(f.v.size())};
  for (size_t i = 0; i < f.v.size(); ++i) out.v[i] = f.v[i].real();
  return out;
}

inline RealField imag_part(const ComplexField& f) {
  RealField out{f.grid, std::vector<double>(f.v.size())};
  for (size_t i = 0; i < f.v.size(); ++i) out.v[i] = f.v[i].imag();
  return out;
}

inline void check_same_grid(const GridPtr& a, const GridPtr& b) {
  if (a.get() != b.get()) {
    if (!a || !b || a->dim != b->dim || a->size != b->size || a->r_max != b->r_max ||
        a->stretch != b->stretch)
      throw std::invalid_argument("grid mismatch");
  }
}

template <typename FieldT>
bool all_finite(const FieldT& f) {
  for (const auto& x : f.v)
    if (!std::isfinite(std::abs(x))) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

inline double integrate(const RealField& f) {
  if (!f.grid || f.v.size() != static_cast<size_t>(f.grid->size))
    throw std::invalid_argument("integrate: invalid field");
  double acc = 0.0;
  for (int i = 0; i < f.grid->size; ++i) acc += f.grid->w[i] * f.v[i];
  return acc;
}

/// Least-squares power-law tail model
///   g(r) ~ r^{-beta} (a0 + a1/r^2 + a2/r^4 + a3/r^6)
/// fitted over the outer part of the grid. Used to complete integrals of
/// decaying fields beyond r_max.
struct TailFit {
  bool ok = false;
  double beta = 0.0;
  std::array<double, 4> a{0.0, 0.0, 0.0, 0.0};
};

inline TailFit fit_even_power_tail(const RadialGrid& g, const std::vector<double>& vals) {
  TailFit out;
  const double r_lo = 0.6 * g.r_max;
  std::vector<int> idx;
  for (int i = 0; i < g.size; ++i)
    if (g.r[i] >= r_lo) idx.push_back(i);
  if (idx.size() < 12) return out;

  // All samples must share a sign; oscillating tails get no completion.
  const double sgn = vals[idx[0]] > 0 ? 1.0 : (vals[idx[0]] < 0 ? -1.0 : 0.0);
  if (sgn == 0.0) return out;
  double vmax = 0.0;
  for (int i : idx) {
    if (sgn * vals[i] <= 0.0) return out;
    vmax = std::max(vmax, std::abs(vals[i]));
  }

  // Slope of log|g| vs log r; snap to the nearest integer when close.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i : idx) {
    const double X = std::log(g.r[i]), Y = std::log(std::abs(vals[i]));
    sx += X; sy += Y; sxx += X * X; sxy += X * Y;
  }
  const double n = static_cast<double>(idx.size());
  double beta = -(n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double snapped = std::round(beta);
  if (std::abs(beta - snapped) < 0.25) beta = snapped;
  if (beta <= g.dim + 0.25) return out;

  // Linear LS for the even-correction coefficients at fixed beta. Columns are
  // scaled to unit diagonal to keep the normal equations tame.
  constexpr int K = 4;
  double A[K][K] = {{0}}, b[K] = {0};
  for (int i : idx) {
    const double p = std::pow(g.r[i], -beta);
    const double u = (g.r_max * g.r_max) / (g.r[i] * g.r[i]);  // O(1) over the window
    double phi[K];
    phi[0] = p;
    for (int k = 1; k < K; ++k) phi[k] = phi[k - 1] * u;
    for (int a0 = 0; a0 < K; ++a0) {
      b[a0] += phi[a0] * vals[i];
      for (int a1 = 0; a1 < K; ++a1) A[a0][a1] += phi[a0] * phi[a1];
    }
  }
  double m[K][K + 1];
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) m[i][j] = A[i][j];
    m[i][K] = b[i];
  }
  for (int c = 0; c < K; ++c) {
    int p = c;
    for (int i = c + 1; i < K; ++i)
      if (std::abs(m[i][c]) > std::abs(m[p][c])) p = i;
    if (std::abs(m[p][c]) < 1e-300) return out;
    std::swap_ranges(m[c], m[c] + K + 1, m[p]);
    for (int i = 0; i < K; ++i) {
      if (i == c) continue;
      const double f = m[i][c] / m[c][c];
      for (int j = c; j <= K; ++j) m[i][j] -= f * m[c][j];
    }
  }
  std::array<double, 4> coef{};
  for (int k = 0; k < K; ++k) coef[k] = m[k][K] / m[k][k] * std::pow(g.r_max, 2.0 * k);

  // Fit quality: relative RMS over the window.
  double rss = 0.0;
  for (int i : idx) {
    const double p = std::pow(g.r[i], -beta);
    const double u = 1.0 / (g.r[i] * g.r[i]);
    const double model = p * (coef[0] + u * (coef[1] + u * (coef[2] + u * coef[3])));
    rss += (model - vals[i]) * (model - vals[i]);
  }
  if (std::sqrt(rss / n) > 1e-3 * vmax) return out;

  out.ok = true;
  out.beta = beta;
  out.a = coef;
  return out;
}

inline double tail_integral(const RadialGrid& g, const TailFit& t) {
  if (!t.ok) return 0.0;
  const double area = sphere_area(g.dim);
  double acc = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double expo = t.beta + 2 * k - g.dim;
    if (expo <= 0.0) continue;
    acc += t.a[k] * std::pow(g.r_max, -expo) / expo;
  }
  return area * acc;
}

/// Quadrature over the grid plus a fitted power-law completion of the tail
/// beyond r_max. Falls back to the plain truncated sum whenever the tail is
/// not a clean single-sign decaying power law.
inline double integrate_tail(const RealField& f) {
  const double core = integrate(f);
  const TailFit t = fit_even_power_tail(*f.grid, f.v);
  return core + tail_integral(*f.grid, t);
}

// ---------------------------------------------------------------------------
// Nodal derivatives
// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> nodal_derivative(const RadialGrid& g, const std::vector<T>& v) {
  std::vector<T> out(g.size, T(0));
  for (int i = 0; i < g.size; ++i) {
    T acc(0);
    for (const auto& [j, wgt] : g.d1[i]) acc += wgt * v[j];
    out[i] = acc;
  }
  return out;
}

inline std::vector<Complex> nodal_derivative(const ComplexField& f) { return nodal_derivative(*f.grid, f.v); }
inline std::vector<double> nodal_derivative(const RealField& f) { return nodal_derivative(*f.grid, f.v); }

// ---------------------------------------------------------------------------
// H^1-dot inner product: Re sum w_i f'(r_i) conj(g'(r_i))
// ---------------------------------------------------------------------------

inline double h1_inner(const ComplexField& f, const ComplexField& g) {
  check_same_grid(f.grid, g.grid);
  const auto df = nodal_derivative(f);
  const auto dg = nodal_derivative(g);
  double acc = 0.0;
  for (int i = 0; i < f.grid->size; ++i) acc += f.grid->w[i] * (df[i] * std::conj(dg[i])).real();
  return acc;
}

inline double h1_norm_sq(const ComplexField& f) { return h1_inner(f, f); }

/// Tail-completed variant: the pointwise product Re f' conj(g') gets the same
/// power-law completion as integrate_tail. Needed for identities on W-type
/// fields whose gradient tail carries O(r_max^{2-N}) of the norm.
inline double h1_inner_tail(const ComplexField& f, const ComplexField& g) {
  check_same_grid(f.grid, g.grid);
  const auto df = nodal_derivative(f);
  const auto dg = nodal_derivative(g);
  std::vector<double> prod(f.grid->size);
  double acc = 0.0;
  for (int i = 0; i < f.grid->size; ++i) {
    prod[i] = (df[i] * std::conj(dg[i])).real();
    acc += f.grid->w[i] * prod[i];
  }
  const TailFit t = fit_even_power_tail(*f.grid, prod);
  return acc + tail_integral(*f.grid, t);
}

inline double h1_norm_sq_tail(const ComplexField& f) { return h1_inner_tail(f, f); }

inline double h1_inner(const RealField& f, const RealField& g) { return h1_inner(to_complex(f), to_complex(g)); }

// ---------------------------------------------------------------------------
// Radial Laplacian
// ---------------------------------------------------------------------------

namespace detail {

// Decay-matched ghost values: interpolate a r^{2-N} + b r^{-N} through the
// last two nodes and evaluate at the ghost radii. Two terms through two
// adjacent nodes keep the extrapolation weights O(1); more terms over such a
// short span are numerically collinear.
inline std::array<std::array<double, 2>, 2> decay_ghost_coeffs(const RadialGrid& g,
                                                               const std::array<double, 2>& r_ghost) {
  const int M = g.size;
  const double p0 = static_cast<double>(g.dim - 2);
  const double r1 = g.r[M - 2], r2 = g.r[M - 1];
  const double v11 = std::pow(r1, -p0), v12 = std::pow(r1, -p0 - 2);
  const double v21 = std::pow(r2, -p0), v22 = std::pow(r2, -p0 - 2);
  const double det = v11 * v22 - v12 * v21;
  if (det == 0.0) throw std::runtime_error("decay ghost fit singular");
  std::array<std::array<double, 2>, 2> out{};
  for (int gi = 0; gi < 2; ++gi) {
    const double rr = r_ghost[gi];
    const double p1 = std::pow(rr, -p0), p2 = std::pow(rr, -p0 - 2);
    // ghost = p1*a + p2*b with (a,b) solving the 2x2 interpolation
    out[gi][0] = (p1 * v22 - p2 * v21) / det;   // weight of f[M-2]
    out[gi][1] = (-p1 * v12 + p2 * v11) / det;  // weight of f[M-1]
  }
  return out;
}

}  // namespace detail

/// Assemble the radial Laplacian Delta f = f'' + (N-1)/r f' as a banded
/// matrix (kl = ku = 2). The even fold at the origin encodes f'(0) = 0;
/// the outer closure is Dirichlet or decay-matched per `bc`.
inline BandedMatrix<double> assemble_laplacian(const RadialGrid& g, OuterBC bc) {
  const int M = g.size;
  BandedMatrix<double> A(M, 2, 2);
  const double h = g.h_xi;

  auto fold_add = [&](int i, int j, double wgt) {
    if (j < 0) j = -j - 1;  // even fold through the origin
    if (j >= M) return;     // handled by ghost logic before calling
    A.add(i, j, wgt);
  };

  // ghost radii past r_max at uniform xi extension
  const std::array<double, 2> r_ghost{g.map(1.0 + h), g.map(1.0 + 2.0 * h)};
  std::array<std::array<double, 2>, 2> gc{};
  if (bc == OuterBC::decay) gc = detail::decay_ghost_coeffs(g, r_ghost);

  for (int i = 0; i < M; ++i) {
    if (i < 2) {
      // Fornberg in r on folded nodes
      std::vector<double> xs;
      std::vector<int> js;
      for (int k = i - 2; k <= i + 2; ++k) {
        if (k >= 0) {
          xs.push_back(g.r[k]);
          js.push_back(k);
        } else {
          xs.push_back(-g.r[-k - 1]);
          js.push_back(-k - 1);
        }
      }
      auto wts = fd_weights(g.r[i], xs, 2);
      const double cr = (g.dim - 1) / g.r[i];
      for (size_t k = 0; k < xs.size(); ++k) A.add(i, js[k], wts[2][k] + cr * wts[1][k]);
    } else {
      // uniform xi stencils; ghost columns j >= M get folded into the last
      // three columns (decay) or dropped (Dirichlet).
      const double md = g.map_d[i], mdd = g.map_dd[i];
      const double c2 = 1.0 / (12.0 * h * h);
      const double c1 = 1.0 / (12.0 * h);
      // f'' in r = f_xx/md^2 - f_x * mdd/md^3 ; f' in r = f_x/md
      const double a2 = 1.0 / (md * md);
      const double a1 = -mdd / (md * md * md) + (g.dim - 1) / (g.r[i] * md);
      const int off[5] = {-2, -1, 0, 1, 2};
      const double w2[5] = {-1.0, 16.0, -30.0, 16.0, -1.0};
      const double w1[5] = {1.0, -8.0, 0.0, 8.0, -1.0};
      for (int k = 0; k < 5; ++k) {
        const int j = i + off[k];
        const double wgt = a2 * c2 * w2[k] + a1 * c1 * w1[k];
        if (j < M) {
          fold_add(i, j, wgt);
        } else if (bc == OuterBC::decay) {
          const auto& coeff = gc[j - M];
          A.add(i, M - 2, wgt * coeff[0]);
          A.add(i, M - 1, wgt * coeff[1]);
        }
        // Dirichlet: ghost value zero, nothing to add
      }
    }
  }
  return A;
}

inline ComplexField radial_laplacian(const ComplexField& f, OuterBC bc = OuterBC::dirichlet) {
  if (!all_finite(f)) throw std::invalid_argument("radial_laplacian: non-finite field");
  const auto A = assemble_laplacian(*f.grid, bc);
  // real banded matrix applied to complex data
  std::vector<double> re(f.grid->size), im(f.grid->size);
  for (int i = 0; i < f.grid->size; ++i) {
    re[i] = f.v[i].real();
    im[i] = f.v[i].imag();
  }
  const auto Are = A.apply(re);
  const auto Aim = A.apply(im);
  ComplexField out{f.grid, std::vector<Complex>(f.grid->size)};
  for (int i = 0; i < f.grid->size; ++i) out.v[i] = Complex(Are[i], Aim[i]);
  return out;
}

inline RealField radial_laplacian(const RealField& f, OuterBC bc = OuterBC::dirichlet) {
  const auto A = assemble_laplacian(*f.grid, bc);
  return RealField{f.grid, A.apply(f.v)};
}

// ---------------------------------------------------------------------------
// Cubic Hermite interpolation with externally supplied slopes, used by the
// symmetry transform. High-order nodal slopes keep the resample error at the
// interpolation (not limiter) level; smooth radial fields need no shape
// limiting.
// ---------------------------------------------------------------------------

class CubicHermite {
 public:
  CubicHermite(std::vector<double> x, std::vector<double> y, std::vector<double> d)
      : x_(std::move(x)), y_(std::move(y)), d_(std::move(d)) {
    if (x_.size() < 2 || y_.size() != x_.size() || d_.size() != x_.size())
      throw std::invalid_argument("CubicHermite: inconsistent sizes");
  }

  double operator()(double xq) const {
    const size_t n = x_.size();
    if (xq <= x_.front()) return hermite(0, xq);
    if (xq >= x_.back()) return hermite(n - 2, xq);
    size_t lo = std::upper_bound(x_.begin(), x_.end(), xq) - x_.begin();
    if (lo > 0) --lo;
    if (lo > n - 2) lo = n - 2;
    return hermite(lo, xq);
  }

 private:
  double hermite(size_t i, double xq) const {
    const double h = x_[i + 1] - x_[i];
    const double t = (xq - x_[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return y_[i] * (2 * t3 - 3 * t2 + 1) + h * d_[i] * (t3 - 2 * t2 + t) +
           y_[i + 1] * (-2 * t3 + 3 * t2) + h * d_[i + 1] * (t3 - t2);
  }

  std::vector<double> x_, y_, d_;
};

// ---------------------------------------------------------------------------
// Symmetry transform: e^{i theta} mu^{-(N-2)/2} f(r/mu)
// ---------------------------------------------------------------------------

inline ComplexField rescale_phase(const ComplexField& f, double theta, double mu) {
  if (mu <= 0.0) throw std::invalid_argument("rescale_phase: mu must be positive");
  const auto& g = *f.grid;
  const int M = g.size;

  if (theta == 0.0 && mu == 1.0) return f;  // identity transform, bit-exact

  // interpolants on evenly extended data (handles r/mu below the first node);
  // slopes from the grid's high-order stencils, odd-extended at the origin
  const auto df = nodal_derivative(f);
  std::vector<double> xs, yre, yim, dre, dim_;
  xs.reserve(M + 2);
  auto push = [&](double x, Complex y, Complex d) {
    xs.push_back(x);
    yre.push_back(y.real());
    yim.push_back(y.imag());
    dre.push_back(d.real());
    dim_.push_back(d.imag());
  };
  push(-g.r[1], f.v[1], -df[1]);
  push(-g.r[0], f.v[0], -df[0]);
  for (int i = 0; i < M; ++i) push(g.r[i], f.v[i], df[i]);
  const CubicHermite ire(xs, yre, dre), iim(xs, yim, dim_);

  // Power-law tail a r^{2-N} + b r^{-N} + c r^{-N-2} fitted over the last
  // decade of samples. Relative weighting keeps the fit honest across the
  // decade and sends the extrapolated values to ~0 for super-power-law decay.
  const double p0 = static_cast<double>(g.dim - 2);
  double A[3][3] = {{0}};
  Complex bv[3] = {Complex(0, 0), Complex(0, 0), Complex(0, 0)};
  const double rs = g.r_max;  // scale the basis to O(1) columns
  for (int i = 0; i < M; ++i) {
    if (g.r[i] < g.r_max / 10.0) continue;
    const double scale = std::abs(f.v[i]);
    if (scale == 0.0) continue;
    const double wgt = 1.0 / (scale * scale);
    const double q[3] = {std::pow(g.r[i] / rs, -p0), std::pow(g.r[i] / rs, -p0 - 2),
                         std::pow(g.r[i] / rs, -p0 - 4)};
    for (int a = 0; a < 3; ++a) {
      bv[a] += wgt * q[a] * f.v[i];
      for (int c = 0; c < 3; ++c) A[a][c] += wgt * q[a] * q[c];
    }
  }
  Complex tail_c[3] = {Complex(0, 0), Complex(0, 0), Complex(0, 0)};
  {
    double m[3][3];
    Complex rhs[3];
    for (int i = 0; i < 3; ++i) {
      rhs[i] = bv[i];
      for (int j = 0; j < 3; ++j) m[i][j] = A[i][j];
    }
    bool ok = true;
    for (int c = 0; c < 3 && ok; ++c) {
      int p = c;
      for (int i = c + 1; i < 3; ++i)
        if (std::abs(m[i][c]) > std::abs(m[p][c])) p = i;
      if (std::abs(m[p][c]) < 1e-14 * (std::abs(m[0][0]) + 1e-300)) {
        ok = false;
        break;
      }
      std::swap_ranges(m[c], m[c] + 3, m[p]);
      std::swap(rhs[c], rhs[p]);
      for (int i = c + 1; i < 3; ++i) {
        const double fac = m[i][c] / m[c][c];
        for (int j = c; j < 3; ++j) m[i][j] -= fac * m[c][j];
        rhs[i] -= fac * rhs[c];
      }
    }
    if (ok) {
      for (int i = 2; i >= 0; --i) {
        Complex acc = rhs[i];
        for (int j = i + 1; j < 3; ++j) acc -= m[i][j] * tail_c[j];
        tail_c[i] = acc / m[i][i];
      }
    }
  }

  const Complex phase = std::polar(1.0, theta);
  const double amp = std::pow(mu, -0.5 * (g.dim - 2));
  ComplexField out{f.grid, std::vector<Complex>(M)};
  for (int i = 0; i < M; ++i) {
    const double rq = g.r[i] / mu;
    Complex val;
    if (rq <= g.r_max) {
      val = Complex(ire(rq), iim(rq));
    } else {
      val = tail_c[0] * std::pow(rq / rs, -p0) + tail_c[1] * std::pow(rq / rs, -p0 - 2) +
            tail_c[2] * std::pow(rq / rs, -p0 - 4);
    }
    out.v[i] = phase * amp * val;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Field arithmetic helpers
// ---------------------------------------------------------------------------

inline ComplexField operator+(const ComplexField& a, const ComplexField& b) {
  check_same_grid(a.grid, b.grid);
  ComplexField out{a.grid, a.v};
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
  return out;
}

inline ComplexField operator-(const ComplexField& a, const ComplexField& b) {
  check_same_grid(a.grid, b.grid);
  ComplexField out{a.grid, a.v};
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.v[i];
  return out;
}

inline ComplexField operator*(Complex c, const ComplexField& a) {
  ComplexField out{a.grid, a.v};
  for (auto& x : out.v) x *= c;
  return out;
}

inline ComplexField operator*(double c, const ComplexField& a) { return Complex(c, 0.0) * a; }

inline ComplexField conj(const ComplexField& a) {
  ComplexField out{a.grid, a.v};
  for (auto& x : out.v) x = std::conj(x);
  return out;
}

inline double max_abs(const ComplexField& a) {
  double m = 0.0;
  for (const auto& x : a.v) m = std::max(m, std::abs(x));
  return m;
}

// ---------------------------------------------------------------------------
// CSV serialization: header records dim, r_max, M, stretch; then r, re, im.
// ---------------------------------------------------------------------------

inline void write_field_csv(const std::string& path, const ComplexField& f) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  const auto& g = *f.grid;
  os.precision(17);
  os << "# dim=" << g.dim << " r_max=" << g.r_max << " M=" << g.size << " stretch=" << g.stretch
     << "\n";
  os << "r,re,im\n";
  for (int i = 0; i < g.size; ++i)
    os << g.r[i] << "," << f.v[i].real() << "," << f.v[i].imag() << "\n";
}

inline ComplexField read_field_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(is, line) || line.empty() || line[0] != '#')
    throw std::runtime_error("field csv: missing header: " + path);
  int dim = 0, M = 0;
  double r_max = 0.0, stretch = 0.0;
  {
    std::istringstream hs(line.substr(1));
    std::string tok;
    while (hs >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq);
      const double val = std::stod(tok.substr(eq + 1));
      if (key == "dim") dim = static_cast<int>(val);
      else if (key == "r_max") r_max = val;
      else if (key == "M") M = static_cast<int>(val);
      else if (key == "stretch") stretch = val;
    }
  }
  std::getline(is, line);  // column header
  auto g = make_grid(dim, r_max, M, stretch);
  ComplexField out{g, std::vector<Complex>(M)};
  for (int i = 0; i < M; ++i) {
    if (!std::getline(is, line)) throw std::runtime_error("field csv: truncated: " + path);
    std::istringstream ls(line);
    std::string cell;
    double vals[3] = {0, 0, 0};
    for (int c = 0; c < 3 && std::getline(ls, cell, ','); ++c) vals[c] = std::stod(cell);
    out.v[i] = Complex(vals[1], vals[2]);
  }
  return out;
}

}  // namespace tnls
