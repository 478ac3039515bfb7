// Banded LU factorization with partial pivoting (LAPACK gbtrf-style storage).
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace tnls {

/// General banded matrix with kl sub- and ku super-diagonals.
/// Entry (i,j) is stored when |i-j| is inside the band; assignment outside
/// the band throws. Storage is column-major band format with kl extra upper
/// rows for pivoting fill-in, so a factorization can happen in place.
template <typename Scalar>
class BandedMatrix {
 public:
  BandedMatrix(int n, int kl, int ku)
      : n_(n), kl_(kl), ku_(ku), ld_(2 * kl + ku + 1), a_(static_cast<size_t>(ld_) * n, Scalar(0)) {
    if (n <= 0 || kl < 0 || ku < 0) throw std::invalid_argument("BandedMatrix: bad shape");
  }

  int rows() const { return n_; }
  int lower_bandwidth() const { return kl_; }
  int upper_bandwidth() const { return ku_; }

  Scalar& at(int i, int j) {
    check(i, j);
    return a_[idx(i, j)];
  }
  Scalar get(int i, int j) const {
    if (i < 0 || j < 0 || i >= n_ || j >= n_ || j - i > ku_ || i - j > kl_) return Scalar(0);
    return a_[idx(i, j)];
  }
  void add(int i, int j, Scalar v) { at(i, j) += v; }

  std::vector<Scalar> apply(const std::vector<Scalar>& x) const {
    if (static_cast<int>(x.size()) != n_) throw std::invalid_argument("BandedMatrix::apply: size mismatch");
    std::vector<Scalar> y(n_, Scalar(0));
    for (int i = 0; i < n_; ++i) {
      const int j0 = std::max(0, i - kl_), j1 = std::min(n_ - 1, i + ku_);
      Scalar acc(0);
      for (int j = j0; j <= j1; ++j) acc += a_[idx(i, j)] * x[j];
      y[i] = acc;
    }
    return y;
  }

  /// C = A*B. Result bandwidths add.
  friend BandedMatrix multiply(const BandedMatrix& A, const BandedMatrix& B) {
    if (A.n_ != B.n_) throw std::invalid_argument("BandedMatrix multiply: size mismatch");
    BandedMatrix C(A.n_, A.kl_ + B.kl_, A.ku_ + B.ku_);
    for (int i = 0; i < A.n_; ++i) {
      const int k0 = std::max(0, i - A.kl_), k1 = std::min(A.n_ - 1, i + A.ku_);
      for (int k = k0; k <= k1; ++k) {
        const Scalar aik = A.a_[A.idx(i, k)];
        if (aik == Scalar(0)) continue;
        const int j0 = std::max(0, k - B.kl_), j1 = std::min(A.n_ - 1, k + B.ku_);
        for (int j = j0; j <= j1; ++j) C.a_[C.idx(i, j)] += aik * B.a_[B.idx(k, j)];
      }
    }
    return C;
  }

 private:
  template <typename T>
  friend class BandedLU;

  void check(int i, int j) const {
    if (i < 0 || j < 0 || i >= n_ || j >= n_) throw std::out_of_range("BandedMatrix: index");
    if (j - i > ku_ || i - j > kl_) throw std::out_of_range("BandedMatrix: outside band");
  }
  // Row kl_+ku_+i-j of column j (band storage with pivot headroom).
  size_t idx(int i, int j) const { return static_cast<size_t>(j) * ld_ + (kl_ + ku_ + i - j); }

  int n_, kl_, ku_, ld_;
  std::vector<Scalar> a_;
};

/// LU factorization of a banded matrix with partial pivoting.
/// Row interchanges stay within the kl-neighborhood, so U gains at most
/// kl extra superdiagonals (classic band fill-in).
template <typename Scalar>
class BandedLU {
 public:
  explicit BandedLU(BandedMatrix<Scalar> A) : m_(std::move(A)), piv_(m_.n_) {
    factor();
  }

  int size() const { return m_.n_; }

  std::vector<Scalar> solve(std::vector<Scalar> b) const {
    const int n = m_.n_, kl = m_.kl_, ku = m_.ku_ + m_.kl_;
    if (static_cast<int>(b.size()) != n) throw std::invalid_argument("BandedLU::solve: size mismatch");
    // forward substitution with the recorded pivots
    for (int j = 0; j < n - 1; ++j) {
      if (piv_[j] != j) std::swap(b[j], b[piv_[j]]);
      const int i1 = std::min(n - 1, j + kl);
      for (int i = j + 1; i <= i1; ++i) b[i] -= lfac(i, j) * b[j];
    }
    // back substitution on U (bandwidth ku+kl)
    for (int j = n - 1; j >= 0; --j) {
      b[j] /= m_.a_[m_.idx(j, j)];
      const int i0 = std::max(0, j - ku);
      for (int i = i0; i < j; ++i) b[i] -= m_.a_[m_.idx(i, j)] * b[j];
    }
    return b;
  }

 private:
  Scalar& lfac(int i, int j) { return m_.a_[m_.idx(i, j)]; }
  Scalar lfac(int i, int j) const { return m_.a_[m_.idx(i, j)]; }

  void factor() {
    const int n = m_.n_, kl = m_.kl_;
    for (int j = 0; j < n; ++j) {
      const int i1 = std::min(n - 1, j + kl);
      int p = j;
      double best = std::abs(m_.a_[m_.idx(j, j)]);
      for (int i = j + 1; i <= i1; ++i) {
        const double v = std::abs(m_.a_[m_.idx(i, j)]);
        if (v > best) {
          best = v;
          p = i;
        }
      }
      piv_[j] = p;
      if (best == 0.0) throw std::runtime_error("singular-solve");
      if (p != j) swap_rows(j, p);
      const Scalar pivot = m_.a_[m_.idx(j, j)];
      for (int i = j + 1; i <= i1; ++i) {
        const Scalar l = m_.a_[m_.idx(i, j)] / pivot;
        m_.a_[m_.idx(i, j)] = l;
        const int j1 = std::min(n - 1, j + m_.ku_ + kl);
        for (int k = j + 1; k <= j1; ++k) m_.a_[m_.idx(i, k)] -= l * m_.a_[m_.idx(j, k)];
      }
    }
  }

  // Swap the stored parts of rows r1 < r2 over the reachable column range.
  void swap_rows(int r1, int r2) {
    const int n = m_.n_;
    const int j0 = r1;  // columns left of the pivot are already factored
    const int j1 = std::min(n - 1, r1 + m_.ku_ + m_.kl_);
    for (int j = j0; j <= j1; ++j) std::swap(m_.a_[m_.idx(r1, j)], m_.a_[m_.idx(r2, j)]);
  }

  BandedMatrix<Scalar> m_;
  std::vector<int> piv_;
};

}  // namespace tnls
