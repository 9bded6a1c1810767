// Reverse-mode derivatives of the banded kernels.
//
// Each vjp_* takes the forward inputs and outputs it needs plus the adjoint
// of the output, and returns adjoints of the inputs.  Adjoints of symmetric
// matrices follow the lower-band convention: the matrix is stored as its
// lower band, and an off-diagonal adjoint cell carries the combined
// sensitivity of the (i, j) and (j, i) entries.  Finite-difference checks
// must therefore perturb stored cells (which moves both mirrored entries).
//
// Every routine here costs a constant multiple of its forward kernel and
// keeps all intermediates banded.
#pragma once

#include <Eigen/Dense>
#include <functional>

#include "bandgm/banded.hpp"
#include "bandgm/kernels.hpp"

namespace bandgm::grad {

/// Adjoint of q -> cholesky(q).  `l_bar` is taken by value because the sweep
/// consumes it; callers keep their copy.
SymmetricBandedMatrix vjp_cholesky(const BandedMatrix& l, BandedMatrix l_bar);

struct SolveVecVjp {
  BandedMatrix l_bar;
  Eigen::VectorXd v_bar;
};
/// Adjoint of s = solve_vec(l, v, transpose_l); `s` is the forward output.
SolveVecVjp vjp_solve_vec(const BandedMatrix& l, const Eigen::VectorXd& s,
                          const Eigen::VectorXd& s_bar, bool transpose_l);

struct SolveMatVjp {
  BandedMatrix l_bar;
  BandedMatrix r_bar;
};
/// Adjoint of s = solve_mat(l, r, out_lower, out_upper, transpose_l).
/// `r_band_lower/upper` restate the band of the r argument.
SolveMatVjp vjp_solve_mat(const BandedMatrix& l, const BandedMatrix& s, const BandedMatrix& s_bar,
                          BandedMatrix::Index r_band_lower, BandedMatrix::Index r_band_upper,
                          bool transpose_l);

/// Adjoint of s = sparse_inverse_subset(l).  `s_bar` holds one adjoint per
/// stored (lower-band) cell of the forward output.
BandedMatrix vjp_sparse_inverse_subset(const BandedMatrix& l, const SymmetricBandedMatrix& s,
                                       const SymmetricBandedMatrix& s_bar);

struct ProductVjp {
  BandedMatrix a_bar;
  BandedMatrix b_bar;
};
/// Adjoint of p = product_band_band[_restricted](a, b, ...): the adjoint
/// products land on the operand bands exactly.
ProductVjp vjp_product_band_band(const BandedMatrix& a, const BandedMatrix& b,
                                 const BandedMatrix& p_bar);

struct ProductVecVjp {
  BandedMatrix b_bar;
  Eigen::VectorXd v_bar;
};
ProductVecVjp vjp_product_band_vec(const BandedMatrix& b, const Eigen::VectorXd& v,
                                   const Eigen::VectorXd& p_bar, bool transpose_b);

struct OuterVjp {
  Eigen::VectorXd m_bar;
  Eigen::VectorXd v_bar;
};
OuterVjp vjp_outer_band(const Eigen::VectorXd& m, const Eigen::VectorXd& v,
                        const BandedMatrix& o_bar);

/// Adjoint of c = log_det_from_cholesky(l): c_bar / diag(l) on the diagonal.
BandedMatrix vjp_log_det_from_cholesky(const BandedMatrix& l, double c_bar);

// --- finite differences -----------------------------------------------------

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  Eigen::Index worst_index = -1;
  Eigen::VectorXd fd;        // central-difference gradient
  Eigen::VectorXd analytic;  // gradient under test
  Eigen::VectorXd rel;       // per-coordinate relative error
  bool pass(double tol) const { return max_rel_err < tol; }
};

/// Central-difference check of `analytic_grad` against f around x0.  Steps
/// are scaled per coordinate by eps * (|x| + 1); relative errors use an
/// absolute floor so near-zero coordinates do not blow up the ratio.
FiniteDiffReport finite_diff_check(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x0, const Eigen::VectorXd& analytic_grad,
                                   double eps = 1e-5, double abs_floor = 1e-8);

}  // namespace bandgm::grad
