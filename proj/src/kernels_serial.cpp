// Serial reference implementations.  These are the ground truth the OpenMP
// entry points are tested against.
#include <cmath>

#include "bandgm/kernels.hpp"
#include "kernels_detail.hpp"

namespace bandgm::ops::serial {

using Index = BandedMatrix::Index;

BandedMatrix cholesky_ref(const SymmetricBandedMatrix& q) {
  const Index n = q.n(), bw = q.bandwidth();
  BandedMatrix l(n, bw, 0);
  const BandedMatrix& qs = q.lower_store();
  for (Index i = 0; i < n; ++i) {
    const Index j0 = std::max<Index>(0, i - bw);
    for (Index j = j0; j <= i; ++j) {
      const Index m0 = j0;  // entries of row i (and hence row j >= i - bw) start here
      double s = 0.0;
      for (Index m = m0; m < j; ++m) s += l(i, m) * l(j, m);
      if (i == j) {
        const double piv = qs(i, i) - s;
        if (!(piv > kPivotFloor)) throw NotPositiveDefinite(i);
        l(i, i) = std::sqrt(piv);
      } else {
        l(i, j) = (qs(i, j) - s) / l(j, j);
      }
    }
  }
  return l;
}

Eigen::VectorXd solve_vec_ref(const BandedMatrix& l, const Eigen::VectorXd& v, bool transpose_l) {
  const Index n = l.n(), bw = l.lower();
  if (l.upper() != 0) throw DimensionMismatch("solve_vec: factor must be lower triangular");
  if (v.size() != n) throw DimensionMismatch("solve_vec: vector length mismatch");
  Eigen::VectorXd x(n);
  if (!transpose_l) {
    for (Index i = 0; i < n; ++i) {
      double s = 0.0;
      const Index k0 = std::max<Index>(0, i - bw);
      for (Index k = k0; k < i; ++k) s += l(i, k) * x(k);
      const double piv = l(i, i);
      if (std::abs(piv) < kPivotFloor) throw SingularDiagonal(i);
      x(i) = (v(i) - s) / piv;
    }
  } else {
    // Backward sweep on the rows of L read column-wise: no transpose is built.
    for (Index i = n - 1; i >= 0; --i) {
      double s = 0.0;
      const Index k1 = std::min<Index>(n - 1, i + bw);
      for (Index k = i + 1; k <= k1; ++k) s += l(k, i) * x(k);
      const double piv = l(i, i);
      if (std::abs(piv) < kPivotFloor) throw SingularDiagonal(i);
      x(i) = (v(i) - s) / piv;
    }
  }
  return x;
}

BandedMatrix solve_mat_ref(const BandedMatrix& l, const BandedMatrix& r, Index out_lower,
                           Index out_upper, bool transpose_l) {
  const Index n = l.n();
  if (l.upper() != 0) throw DimensionMismatch("solve_mat: factor must be lower triangular");
  if (r.n() != n) throw DimensionMismatch("solve_mat: size mismatch");
  BandedMatrix out(n, std::min(out_lower, n - 1), std::min(out_upper, n - 1));
  if (!transpose_l) {
    for (Index k = -out.upper(); k <= out.lower(); ++k)
      for (Index i = std::max<Index>(0, k); i <= std::min(n - 1, n - 1 + k); ++i)
        detail::solve_mat_entry(l, r, out, i, i - k, false);
  } else {
    for (Index k = out.lower(); k >= -out.upper(); --k)
      for (Index i = std::max<Index>(0, k); i <= std::min(n - 1, n - 1 + k); ++i)
        detail::solve_mat_entry(l, r, out, i, i - k, true);
  }
  return out;
}

SymmetricBandedMatrix sparse_inverse_subset_ref(const BandedMatrix& l) {
  const Index n = l.n(), bw = l.lower();
  if (l.upper() != 0)
    throw DimensionMismatch("sparse_inverse_subset: factor must be lower triangular");
  Eigen::VectorXd vec(n);
  for (Index i = 0; i < n; ++i) {
    vec(i) = l(i, i);
    if (std::abs(vec(i)) < kPivotFloor) throw SingularDiagonal(i);
  }
  SymmetricBandedMatrix sym(n, bw);
  BandedMatrix& store = sym.lower_store();
  // Backward recursion on U = (L diag(L)^{-1})^T, which is never formed:
  // U(i, m) = L(m, i) / vec(i) for m in (i, i + bw].
  for (Index j = n - 1; j >= 0; --j) {
    for (Index i = j; i >= std::max<Index>(0, j - bw); --i) {
      double s = 0.0;
      const Index m1 = std::min<Index>(n - 1, i + bw);
      for (Index m = i + 1; m <= m1; ++m) s += (l(m, i) / vec(i)) * sym(m, j);
      double val = -s;
      if (i == j) val += 1.0 / (vec(i) * vec(i));
      store(j, i) = val;
    }
  }
  return sym;
}

BandedMatrix product_band_band_restricted_ref(const BandedMatrix& a, const BandedMatrix& b,
                                              Index out_lower, Index out_upper) {
  const Index n = a.n();
  if (b.n() != n) throw DimensionMismatch("product_band_band: size mismatch");
  BandedMatrix out(n, std::min(out_lower, n - 1), std::min(out_upper, n - 1));
  for (Index j = 0; j < n; ++j) detail::product_column(a, b, out, j);
  return out;
}

Eigen::VectorXd product_band_vec_ref(const BandedMatrix& b, const Eigen::VectorXd& v,
                                     bool transpose_b) {
  const Index n = b.n();
  if (v.size() != n) throw DimensionMismatch("product_band_vec: vector length mismatch");
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) y(i) = detail::band_vec_entry(b, v, i, transpose_b);
  return y;
}

BandedMatrix outer_band_ref(const Eigen::VectorXd& m, const Eigen::VectorXd& v, Index lower,
                            Index upper) {
  const Index n = m.size();
  if (v.size() != n) throw DimensionMismatch("outer_band: vector length mismatch");
  BandedMatrix out(n, std::min(lower, n - 1), std::min(upper, n - 1));
  for (Index j = 0; j < n; ++j) detail::outer_column(m, v, out, j);
  return out;
}

}  // namespace bandgm::ops::serial
