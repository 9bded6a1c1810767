// Forward kernels on banded matrices.
//
// Everything here runs in O(n * bandwidth^2) time or better and allocates
// O(n * bandwidth) memory.  The recursive kernels (cholesky, triangular
// solves against a vector, sparse_inverse_subset) carry loop-to-loop data
// dependencies and are serial.  The product family and the per-diagonal
// sweeps of solve_mat are data parallel; the entry points in bandgm::ops use
// OpenMP on large inputs while bandgm::ops::serial always runs the plain
// reference loops.  Parallel and serial lanes compute every output entry
// with the same summation order, so their results are bit-identical.
#pragma once

#include <Eigen/Dense>

#include "bandgm/banded.hpp"

namespace bandgm::ops {

/// Pivots smaller than this are treated as a breakdown.
inline constexpr double kPivotFloor = 1e-300;

/// Lower Cholesky factor of a symmetric positive definite banded matrix.
/// The factor keeps the bandwidth of `q`.  Throws NotPositiveDefinite at the
/// first non-positive pivot.
BandedMatrix cholesky(const SymmetricBandedMatrix& q);

/// Solves L x = v (or L^T x = v when transpose_l is set) for lower
/// triangular banded L.  The transposed path is a dedicated backward sweep;
/// no transpose is materialized.
Eigen::VectorXd solve_vec(const BandedMatrix& l, const Eigen::VectorXd& v,
                          bool transpose_l = false);

/// Band-restricted triangular matrix solve: the entries of L^{-1} R (or
/// L^{-T} R) on the band (out_lower, out_upper), computed diagonal by
/// diagonal.  Entries of the true product outside the requested band are
/// treated as zero by the recursion, so the result is exact whenever the
/// band it would spill into is genuinely zero: for the plain solve that
/// holds when out_upper >= r.upper(), for the transposed solve when
/// out_lower >= r.lower().
BandedMatrix solve_mat(const BandedMatrix& l, const BandedMatrix& r,
                       BandedMatrix::Index out_lower, BandedMatrix::Index out_upper,
                       bool transpose_l = false);

/// Entries of (L L^T)^{-1} within the band of L, from the factor alone.
/// Runs the classic backward recursion on the scaled transpose of L; cost
/// O(n * bandwidth^2), never forming the dense inverse.
SymmetricBandedMatrix sparse_inverse_subset(const BandedMatrix& l);

/// C = A * B on the full product band (lower sums, upper sums).
BandedMatrix product_band_band(const BandedMatrix& a, const BandedMatrix& b);

/// C = A * B restricted to the band (out_lower, out_upper).  Restriction is
/// exact: each computed entry equals the corresponding entry of the full
/// product.
BandedMatrix product_band_band_restricted(const BandedMatrix& a, const BandedMatrix& b,
                                          BandedMatrix::Index out_lower,
                                          BandedMatrix::Index out_upper);

/// B * v, or B^T * v when transpose_b is set (computed column-wise, without
/// materializing the transpose).
Eigen::VectorXd product_band_vec(const BandedMatrix& b, const Eigen::VectorXd& v,
                                 bool transpose_b = false);

/// The band (lower, upper) of the rank-one matrix m v^T.  Cost is
/// proportional to the number of stored cells.
BandedMatrix outer_band(const Eigen::VectorXd& m, const Eigen::VectorXd& v,
                        BandedMatrix::Index lower, BandedMatrix::Index upper);

/// Sum of log diagonal entries of a triangular factor: log det L, which is
/// half the log determinant of L L^T.  Throws NonPositiveDiagonal if any
/// diagonal entry is not strictly positive.
double log_det_from_cholesky(const BandedMatrix& l);

namespace serial {
BandedMatrix cholesky_ref(const SymmetricBandedMatrix& q);
Eigen::VectorXd solve_vec_ref(const BandedMatrix& l, const Eigen::VectorXd& v, bool transpose_l);
BandedMatrix solve_mat_ref(const BandedMatrix& l, const BandedMatrix& r,
                           BandedMatrix::Index out_lower, BandedMatrix::Index out_upper,
                           bool transpose_l);
SymmetricBandedMatrix sparse_inverse_subset_ref(const BandedMatrix& l);
BandedMatrix product_band_band_restricted_ref(const BandedMatrix& a, const BandedMatrix& b,
                                              BandedMatrix::Index out_lower,
                                              BandedMatrix::Index out_upper);
Eigen::VectorXd product_band_vec_ref(const BandedMatrix& b, const Eigen::VectorXd& v,
                                     bool transpose_b);
BandedMatrix outer_band_ref(const Eigen::VectorXd& m, const Eigen::VectorXd& v,
                            BandedMatrix::Index lower, BandedMatrix::Index upper);
}  // namespace serial

}  // namespace bandgm::ops
