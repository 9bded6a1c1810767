// Per-entry bodies shared by the serial reference kernels and the OpenMP
// entry points.  Keeping the summation order in one place is what makes the
// two lanes bit-identical.
#pragma once

#include <algorithm>

#include "bandgm/banded.hpp"
#include "bandgm/errors.hpp"

namespace bandgm::ops::detail {

using Index = BandedMatrix::Index;

// One output column of C = A * B, restricted to the band of `out`.
inline void product_column(const BandedMatrix& a, const BandedMatrix& b, BandedMatrix& out,
                           Index j) {
  const Index n = a.n();
  const Index i0 = std::max<Index>(0, j - out.upper());
  const Index i1 = std::min<Index>(n - 1, j + out.lower());
  for (Index i = i0; i <= i1; ++i) {
    const Index k0 = std::max({Index(0), i - a.lower(), j - b.upper()});
    const Index k1 = std::min({n - 1, i + a.upper(), j + b.lower()});
    double s = 0.0;
    for (Index k = k0; k <= k1; ++k) s += a(i, k) * b(k, j);
    out(i, j) = s;
  }
}

// One entry of B * v or B^T * v.
inline double band_vec_entry(const BandedMatrix& b, const Eigen::VectorXd& v, Index i,
                             bool transpose_b) {
  const Index n = b.n();
  double s = 0.0;
  if (!transpose_b) {
    const Index j0 = std::max<Index>(0, i - b.lower());
    const Index j1 = std::min<Index>(n - 1, i + b.upper());
    for (Index j = j0; j <= j1; ++j) s += b(i, j) * v(j);
  } else {
    const Index j0 = std::max<Index>(0, i - b.upper());
    const Index j1 = std::min<Index>(n - 1, i + b.lower());
    for (Index j = j0; j <= j1; ++j) s += b(j, i) * v(j);
  }
  return s;
}

// One output column of the band of m v^T.
inline void outer_column(const Eigen::VectorXd& m, const Eigen::VectorXd& v, BandedMatrix& out,
                         Index j) {
  const Index n = out.n();
  const Index i0 = std::max<Index>(0, j - out.upper());
  const Index i1 = std::min<Index>(n - 1, j + out.lower());
  for (Index i = i0; i <= i1; ++i) out(i, j) = m(i) * v(j);
}

// One entry of the band-restricted triangular solve, on diagonal k = i - j.
// All entries the recursion consumes live on previously finished diagonals.
inline void solve_mat_entry(const BandedMatrix& l, const BandedMatrix& r, BandedMatrix& out,
                            Index i, Index j, bool transpose_l) {
  const Index n = l.n();
  const double piv = l(i, i);
  if (std::abs(piv) < 1e-300) throw SingularDiagonal(i);
  double s = 0.0;
  if (!transpose_l) {
    const Index m0 = std::max<Index>(0, i - l.lower());
    for (Index m = m0; m < i; ++m) s += l(i, m) * out.at_or_zero(m, j);
  } else {
    const Index m1 = std::min<Index>(n - 1, i + l.lower());
    for (Index m = i + 1; m <= m1; ++m) s += l(m, i) * out.at_or_zero(m, j);
  }
  out(i, j) = (r.at_or_zero(i, j) - s) / piv;
}

}  // namespace bandgm::ops::detail
