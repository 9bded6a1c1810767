// Public kernel entry points.  The data-parallel kernels fan out across
// OpenMP threads above a small work threshold; everything else forwards to
// the serial reference.  Work is split by output column (or by position
// along a diagonal for solve_mat), so each thread computes disjoint entries
// with the reference summation order and the result matches the serial lane
// bit for bit.
#include <cmath>

#include "bandgm/kernels.hpp"
#include "kernels_detail.hpp"

namespace bandgm::ops {

using Index = BandedMatrix::Index;

namespace {
// Entries below this much total work are not worth a parallel region.
constexpr Index kParallelGrain = 1 << 14;

inline bool parallel_worth(Index units) {
#ifdef _OPENMP
  return units >= kParallelGrain;
#else
  (void)units;
  return false;
#endif
}
}  // namespace

BandedMatrix cholesky(const SymmetricBandedMatrix& q) { return serial::cholesky_ref(q); }

Eigen::VectorXd solve_vec(const BandedMatrix& l, const Eigen::VectorXd& v, bool transpose_l) {
  return serial::solve_vec_ref(l, v, transpose_l);
}

BandedMatrix solve_mat(const BandedMatrix& l, const BandedMatrix& r, Index out_lower,
                       Index out_upper, bool transpose_l) {
  const Index n = l.n();
  if (l.upper() != 0) throw DimensionMismatch("solve_mat: factor must be lower triangular");
  if (r.n() != n) throw DimensionMismatch("solve_mat: size mismatch");
  if (!parallel_worth(n * (std::min(out_lower, n - 1) + std::min(out_upper, n - 1) + 1)))
    return serial::solve_mat_ref(l, r, out_lower, out_upper, transpose_l);
  // Exceptions must not cross the parallel region, so pivots are vetted here.
  for (Index i = 0; i < n; ++i)
    if (std::abs(l(i, i)) < kPivotFloor) throw SingularDiagonal(i);
  BandedMatrix out(n, std::min(out_lower, n - 1), std::min(out_upper, n - 1));
  // Diagonals are sequential; entries within one diagonal are independent.
  if (!transpose_l) {
    for (Index k = -out.upper(); k <= out.lower(); ++k) {
      const Index lo = std::max<Index>(0, k), hi = std::min(n - 1, n - 1 + k);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
      for (Index i = lo; i <= hi; ++i) detail::solve_mat_entry(l, r, out, i, i - k, false);
    }
  } else {
    for (Index k = out.lower(); k >= -out.upper(); --k) {
      const Index lo = std::max<Index>(0, k), hi = std::min(n - 1, n - 1 + k);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
      for (Index i = lo; i <= hi; ++i) detail::solve_mat_entry(l, r, out, i, i - k, true);
    }
  }
  return out;
}

SymmetricBandedMatrix sparse_inverse_subset(const BandedMatrix& l) {
  return serial::sparse_inverse_subset_ref(l);
}

BandedMatrix product_band_band(const BandedMatrix& a, const BandedMatrix& b) {
  return product_band_band_restricted(a, b, a.lower() + b.lower(), a.upper() + b.upper());
}

BandedMatrix product_band_band_restricted(const BandedMatrix& a, const BandedMatrix& b,
                                          Index out_lower, Index out_upper) {
  const Index n = a.n();
  if (b.n() != n) throw DimensionMismatch("product_band_band: size mismatch");
  const Index ol = std::min(out_lower, n > 0 ? n - 1 : 0);
  const Index ou = std::min(out_upper, n > 0 ? n - 1 : 0);
  const Index work = n * (ol + ou + 1) * (std::min(a.lower() + a.upper(), b.lower() + b.upper()) + 1);
  if (!parallel_worth(work)) return serial::product_band_band_restricted_ref(a, b, ol, ou);
  BandedMatrix out(n, ol, ou);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (Index j = 0; j < n; ++j) detail::product_column(a, b, out, j);
  return out;
}

Eigen::VectorXd product_band_vec(const BandedMatrix& b, const Eigen::VectorXd& v,
                                 bool transpose_b) {
  const Index n = b.n();
  if (v.size() != n) throw DimensionMismatch("product_band_vec: vector length mismatch");
  if (!parallel_worth(n * (b.lower() + b.upper() + 1)))
    return serial::product_band_vec_ref(b, v, transpose_b);
  Eigen::VectorXd y(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (Index i = 0; i < n; ++i) y(i) = detail::band_vec_entry(b, v, i, transpose_b);
  return y;
}

BandedMatrix outer_band(const Eigen::VectorXd& m, const Eigen::VectorXd& v, Index lower,
                        Index upper) {
  const Index n = m.size();
  if (v.size() != n) throw DimensionMismatch("outer_band: vector length mismatch");
  const Index ol = std::min(lower, n > 0 ? n - 1 : 0);
  const Index ou = std::min(upper, n > 0 ? n - 1 : 0);
  if (!parallel_worth(n * (ol + ou + 1))) return serial::outer_band_ref(m, v, ol, ou);
  BandedMatrix out(n, ol, ou);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (Index j = 0; j < n; ++j) detail::outer_column(m, v, out, j);
  return out;
}

double log_det_from_cholesky(const BandedMatrix& l) {
  double s = 0.0;
  for (Index i = 0; i < l.n(); ++i) {
    const double d = l(i, i);
    if (!(d > 0.0)) throw NonPositiveDiagonal(i);
    s += std::log(d);
  }
  return s;
}

}  // namespace bandgm::ops
