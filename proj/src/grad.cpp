#include "bandgm/grad.hpp"

#include <cmath>

#include "bandgm/errors.hpp"

namespace bandgm::grad {

using Index = BandedMatrix::Index;

SymmetricBandedMatrix vjp_cholesky(const BandedMatrix& l, BandedMatrix l_bar) {
  const Index n = l.n(), bw = l.lower();
  if (l.upper() != 0 || l_bar.upper() != 0 || l_bar.lower() != bw || l_bar.n() != n)
    throw DimensionMismatch("vjp_cholesky: factor and adjoint must share a lower band");
  SymmetricBandedMatrix q_bar(n, bw);
  BandedMatrix& qb = q_bar.lower_store();
  // Backward factorization sweep.  l_bar is consumed as the recursion clears
  // each processed entry out of it.
  for (Index i = n - 1; i >= 0; --i) {
    const Index j_stop = std::max<Index>(0, i - bw);
    for (Index j = i; j >= j_stop; --j) {
      if (j == i) {
        qb(i, i) = 0.5 * l_bar(i, i) / l(i, i);
      } else {
        qb(i, j) = l_bar(i, j) / l(j, j);
        l_bar(j, j) -= l_bar(i, j) * l(i, j) / l(j, j);
      }
      const double q = qb(i, j);
      for (Index k = j - 1; k >= j_stop; --k) {
        l_bar(i, k) -= q * l(j, k);
        l_bar(j, k) -= q * l(i, k);
      }
    }
  }
  return q_bar;
}

SolveVecVjp vjp_solve_vec(const BandedMatrix& l, const Eigen::VectorXd& s,
                          const Eigen::VectorXd& s_bar, bool transpose_l) {
  SolveVecVjp out;
  out.v_bar = ops::solve_vec(l, s_bar, !transpose_l);
  // s = L^{-1} v:   L_bar = -(L^{-T} s_bar) s^T;  transposed solve swaps the
  // outer factors.
  const Eigen::VectorXd& row = transpose_l ? s : out.v_bar;
  const Eigen::VectorXd& col = transpose_l ? out.v_bar : s;
  out.l_bar = ops::outer_band(row, col, l.lower(), 0);
  out.l_bar.storage() *= -1.0;
  return out;
}

SolveMatVjp vjp_solve_mat(const BandedMatrix& l, const BandedMatrix& s, const BandedMatrix& s_bar,
                          Index r_band_lower, Index r_band_upper, bool transpose_l) {
  const Index n = l.n();
  SolveMatVjp out;
  if (!transpose_l) {
    // t = L^{-T} s_bar carries r_bar on band(r); its upper band is widened to
    // cover both band(r) and band(s_bar) so the restricted products below
    // lose no true term.
    const BandedMatrix t = ops::solve_mat(l, s_bar, s_bar.lower(),
                                          std::max(s_bar.upper(), r_band_upper), true);
    out.r_bar = BandedMatrix(n, std::min(r_band_lower, n - 1), std::min(r_band_upper, n - 1));
    for (Index j = 0; j < n; ++j) {
      const Index i0 = std::max<Index>(0, j - out.r_bar.upper());
      const Index i1 = std::min<Index>(n - 1, j + out.r_bar.lower());
      for (Index i = i0; i <= i1; ++i) out.r_bar(i, j) = t.at_or_zero(i, j);
    }
    out.l_bar = ops::product_band_band_restricted(t, transpose(s), l.lower(), 0);
    out.l_bar.storage() *= -1.0;
  } else {
    const BandedMatrix t = ops::solve_mat(l, s_bar, std::max(s_bar.lower(), r_band_lower),
                                          s_bar.upper(), false);
    out.r_bar = BandedMatrix(n, std::min(r_band_lower, n - 1), std::min(r_band_upper, n - 1));
    for (Index j = 0; j < n; ++j) {
      const Index i0 = std::max<Index>(0, j - out.r_bar.upper());
      const Index i1 = std::min<Index>(n - 1, j + out.r_bar.lower());
      for (Index i = i0; i <= i1; ++i) out.r_bar(i, j) = t.at_or_zero(i, j);
    }
    out.l_bar = ops::product_band_band_restricted(s, transpose(t), l.lower(), 0);
    out.l_bar.storage() *= -1.0;
  }
  return out;
}

BandedMatrix vjp_sparse_inverse_subset(const BandedMatrix& l, const SymmetricBandedMatrix& s,
                                       const SymmetricBandedMatrix& s_bar) {
  const Index n = l.n(), bw = l.lower();
  if (l.upper() != 0) throw DimensionMismatch("vjp_sparse_inverse_subset: lower factor expected");
  if (s.n() != n || s.bandwidth() != bw || s_bar.n() != n || s_bar.bandwidth() != bw)
    throw DimensionMismatch("vjp_sparse_inverse_subset: shape mismatch");
  // All scratch shares one column-major block so a sweep over column j touches
  // one contiguous strip.  Rows [0, 2bw] hold the working adjoint of the
  // symmetric intermediate, with both triangles in their own cells while the
  // sweep shuttles values across the diagonal; the seed sits in the lower
  // triangle (storage rows bw..2bw, the lower-store layout), mirroring the
  // forward pass, whose last act is to publish the lower band.  Rows
  // [2bw+1, 3bw+1] hold the adjoint of U = (L / diag)^T, strictly upper; the
  // last two rows hold pivot reciprocals and the diagonal-cell adjoints.
  const Index r_bu = 2 * bw + 1, r_inv = 3 * bw + 2, r_bvec = r_inv + 1;
  Eigen::MatrixXd ws(r_bvec + 1, n);
  ws.topRows(bw).setZero();
  ws.middleRows(bw, bw + 1) = s_bar.lower_store().storage();
  ws.middleRows(r_bu, bw + 1).setZero();
  for (Index i = 0; i < n; ++i) {
    const double piv = l(i, i);
    if (std::abs(piv) < ops::kPivotFloor) throw SingularDiagonal(i);
    ws(r_inv, i) = 1.0 / piv;
  }
  const auto bs = [&](Index i, Index j) -> double& { return ws(i - j + bw, j); };
  const auto bu = [&](Index i, Index m) -> double& { return ws(r_bu + i - m + bw, m); };

  // Exact reversal of the forward recursion's loop nest.
  for (Index j = 0; j < n; ++j) {
    for (Index i = std::max<Index>(0, j - bw); i <= j; ++i) {
      if (i == j) ws(r_bvec, i) = bs(i, i);
      // Reverse of the mirror write sym(j, i) = sym(i, j).
      const double tmp = bs(j, i);
      bs(j, i) = 0.0;
      bs(i, j) += tmp;
      // Reverse of sym(i, j) = -sum_m U(i, m) sym(m, j).
      const double cur = bs(i, j);
      const double scale = cur * ws(r_inv, i);
      const Index m1 = std::min<Index>(n - 1, i + bw);
      for (Index m = i + 1; m <= m1; ++m) {
        bu(i, m) -= s(m, j) * cur;
        bs(m, j) -= l(m, i) * scale;
      }
      bs(i, j) = 0.0;
    }
  }

  BandedMatrix l_bar(n, bw, 0);
  for (Index c = 0; c < n; ++c) {
    const double iv = ws(r_inv, c);
    const Index r1 = std::min<Index>(n - 1, c + bw);
    double diag_sum = 0.0;  // sum_r bu(c, r) * l(r, c), the U = L/diag coupling
    for (Index r = c + 1; r <= r1; ++r) {
      l_bar(r, c) = bu(c, r) * iv;
      diag_sum += bu(c, r) * l(r, c);
    }
    l_bar(c, c) = (-2.0 * ws(r_bvec, c) * iv - diag_sum) * (iv * iv);
  }
  return l_bar;
}

ProductVjp vjp_product_band_band(const BandedMatrix& a, const BandedMatrix& b,
                                 const BandedMatrix& p_bar) {
  ProductVjp out;
  out.a_bar = ops::product_band_band_restricted(p_bar, transpose(b), a.lower(), a.upper());
  out.b_bar = ops::product_band_band_restricted(transpose(a), p_bar, b.lower(), b.upper());
  return out;
}

ProductVecVjp vjp_product_band_vec(const BandedMatrix& b, const Eigen::VectorXd& v,
                                   const Eigen::VectorXd& p_bar, bool transpose_b) {
  ProductVecVjp out;
  out.v_bar = ops::product_band_vec(b, p_bar, !transpose_b);
  if (!transpose_b)
    out.b_bar = ops::outer_band(p_bar, v, b.lower(), b.upper());
  else
    out.b_bar = ops::outer_band(v, p_bar, b.lower(), b.upper());
  return out;
}

OuterVjp vjp_outer_band(const Eigen::VectorXd& m, const Eigen::VectorXd& v,
                        const BandedMatrix& o_bar) {
  OuterVjp out;
  out.m_bar = ops::product_band_vec(o_bar, v, false);
  out.v_bar = ops::product_band_vec(o_bar, m, true);
  return out;
}

BandedMatrix vjp_log_det_from_cholesky(const BandedMatrix& l, double c_bar) {
  BandedMatrix l_bar(l.n(), l.lower(), 0);
  for (Index i = 0; i < l.n(); ++i) l_bar(i, i) = c_bar / l(i, i);
  return l_bar;
}

FiniteDiffReport finite_diff_check(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x0, const Eigen::VectorXd& analytic_grad,
                                   double eps, double abs_floor) {
  const Eigen::Index dim = x0.size();
  if (analytic_grad.size() != dim)
    throw DimensionMismatch("finite_diff_check: gradient length mismatch");
  FiniteDiffReport rep;
  rep.fd.resize(dim);
  rep.analytic = analytic_grad;
  rep.rel.resize(dim);
  Eigen::VectorXd x = x0;
  for (Eigen::Index i = 0; i < dim; ++i) {
    const double h = eps * (std::abs(x0(i)) + 1.0);
    x(i) = x0(i) + h;
    const double fp = f(x);
    x(i) = x0(i) - h;
    const double fm = f(x);
    x(i) = x0(i);
    rep.fd(i) = (fp - fm) / (2.0 * h);
    const double abs_err = std::abs(rep.fd(i) - analytic_grad(i));
    rep.rel(i) = abs_err / std::max({std::abs(rep.fd(i)), std::abs(analytic_grad(i)), abs_floor});
    if (abs_err > rep.max_abs_err) rep.max_abs_err = abs_err;
    if (rep.rel(i) > rep.max_rel_err) {
      rep.max_rel_err = rep.rel(i);
      rep.worst_index = i;
    }
  }
  return rep;
}

}  // namespace bandgm::grad
