#include "bandgm/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "bandgm/errors.hpp"

namespace bandgm::gradcheck {

using Index = Eigen::Index;

BandedMatrix random_band(std::mt19937_64& rng, Index n, Index lower, Index upper) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  BandedMatrix out(n, lower, upper);
  for (Index j = 0; j < n; ++j) {
    const Index i0 = std::max<Index>(0, j - upper);
    const Index i1 = std::min<Index>(n - 1, j + lower);
    for (Index i = i0; i <= i1; ++i) out(i, j) = u(rng);
  }
  return out;
}

SymmetricBandedMatrix random_spd_band(std::mt19937_64& rng, Index n, Index bw) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> margin(0.5, 1.5);
  SymmetricBandedMatrix q(n, bw);
  BandedMatrix& s = q.lower_store();
  for (Index j = 0; j < n; ++j)
    for (Index i = j + 1; i <= std::min(n - 1, j + bw); ++i) s(i, j) = u(rng);
  // Diagonal dominance keeps every instance safely positive definite.
  for (Index i = 0; i < n; ++i) {
    double row = 0.0;
    for (Index j = std::max<Index>(0, i - bw); j <= std::min(n - 1, i + bw); ++j)
      if (j != i) row += std::abs(q(i, j));
    s(i, i) = row + margin(rng);
  }
  return q;
}

BandedMatrix random_cholesky_factor(std::mt19937_64& rng, Index n, Index bw) {
  std::uniform_real_distribution<double> off(-0.5, 0.5);
  std::uniform_real_distribution<double> diag(0.6, 1.6);
  BandedMatrix l(n, bw, 0);
  for (Index j = 0; j < n; ++j) {
    l(j, j) = diag(rng);
    for (Index i = j + 1; i <= std::min(n - 1, j + bw); ++i) l(i, j) = off(rng);
  }
  return l;
}

Eigen::VectorXd random_vec(std::mt19937_64& rng, Index n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

Eigen::VectorXd flatten_band(const BandedMatrix& a) {
  std::vector<double> cells;
  cells.reserve(static_cast<size_t>(a.rows_stored() * a.n()));
  for (Index j = 0; j < a.n(); ++j) {
    const Index i0 = std::max<Index>(0, j - a.upper());
    const Index i1 = std::min<Index>(a.n() - 1, j + a.lower());
    for (Index i = i0; i <= i1; ++i) cells.push_back(a(i, j));
  }
  return Eigen::Map<Eigen::VectorXd>(cells.data(), static_cast<Index>(cells.size()));
}

void unflatten_band(const Eigen::VectorXd& x, BandedMatrix& into) {
  Index k = 0;
  for (Index j = 0; j < into.n(); ++j) {
    const Index i0 = std::max<Index>(0, j - into.upper());
    const Index i1 = std::min<Index>(into.n() - 1, j + into.lower());
    for (Index i = i0; i <= i1; ++i) into(i, j) = x(k++);
  }
  if (k != x.size()) throw DimensionMismatch("unflatten_band: cell count mismatch");
}

namespace {

double weighted_sum(const BandedMatrix& a, const BandedMatrix& w) {
  double s = 0.0;
  for (Index j = 0; j < a.n(); ++j) {
    const Index i0 = std::max<Index>(0, j - a.upper());
    const Index i1 = std::min<Index>(a.n() - 1, j + a.lower());
    for (Index i = i0; i <= i1; ++i) s += a(i, j) * w(i, j);
  }
  return s;
}

Eigen::VectorXd concat(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd out(a.size() + b.size());
  out << a, b;
  return out;
}

struct Sizes {
  Index n, bw, rl, ru;
};

Sizes draw_sizes(std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> n_d(5, 40), bw_d(0, 4), r_d(0, 3);
  Sizes s;
  s.n = n_d(rng);
  s.bw = std::min(bw_d(rng), s.n - 1);
  s.rl = std::min(r_d(rng), s.n - 1);
  s.ru = std::min(r_d(rng), s.n - 1);
  return s;
}

grad::FiniteDiffReport fd_cholesky(std::mt19937_64& rng, double eps) {
  const Sizes sz = draw_sizes(rng);
  const SymmetricBandedMatrix q0 = random_spd_band(rng, sz.n, sz.bw);
  BandedMatrix w(sz.n, sz.bw, 0);
  auto wv = random_vec(rng, flatten_band(w).size());
  unflatten_band(wv, w);
  auto f = [&](const Eigen::VectorXd& x) {
    BandedMatrix cells(sz.n, sz.bw, 0);
    unflatten_band(x, cells);
    const BandedMatrix l = ops::cholesky(SymmetricBandedMatrix::from_lower(cells));
    return weighted_sum(l, w);
  };
  const BandedMatrix l = ops::cholesky(q0);
  const SymmetricBandedMatrix q_bar = grad::vjp_cholesky(l, w);
  return grad::finite_diff_check(f, flatten_band(q0.lower_store()),
                                 flatten_band(q_bar.lower_store()), eps);
}

grad::FiniteDiffReport fd_solve_vec(std::mt19937_64& rng, double eps, bool transpose_l) {
  const Sizes sz = draw_sizes(rng);
  const BandedMatrix l0 = random_cholesky_factor(rng, sz.n, sz.bw);
  const Eigen::VectorXd v0 = random_vec(rng, sz.n);
  const Eigen::VectorXd w = random_vec(rng, sz.n);
  const Index nl = flatten_band(l0).size();
  auto f = [&](const Eigen::VectorXd& x) {
    BandedMatrix l(sz.n, sz.bw, 0);
    unflatten_band(x.head(nl), l);
    const Eigen::VectorXd s = ops::solve_vec(l, x.tail(sz.n), transpose_l);
    return w.dot(s);
  };
  const Eigen::VectorXd s = ops::solve_vec(l0, v0, transpose_l);
  const auto vjp = grad::vjp_solve_vec(l0, s, w, transpose_l);
  return grad::finite_diff_check(f, concat(flatten_band(l0), v0),
                                 concat(flatten_band(vjp.l_bar), vjp.v_bar), eps);
}

grad::FiniteDiffReport fd_solve_mat(std::mt19937_64& rng, double eps, bool transpose_l) {
  const Sizes sz = draw_sizes(rng);
  const BandedMatrix l0 = random_cholesky_factor(rng, sz.n, sz.bw);
  const BandedMatrix r0 = random_band(rng, sz.n, sz.rl, sz.ru);
  // Output bands under which the recursion reproduces the true restricted
  // solve; the adjoint formulas assume this regime.
  const Index ol = transpose_l ? sz.rl : std::min(sz.rl + sz.bw, sz.n - 1);
  const Index ou = transpose_l ? std::min(sz.ru + sz.bw, sz.n - 1) : sz.ru;
  BandedMatrix w(sz.n, ol, ou);
  auto wv = random_vec(rng, flatten_band(w).size());
  unflatten_band(wv, w);
  const Index nl = flatten_band(l0).size(), nr = flatten_band(r0).size();
  auto f = [&](const Eigen::VectorXd& x) {
    BandedMatrix l(sz.n, sz.bw, 0), r(sz.n, sz.rl, sz.ru);
    unflatten_band(x.head(nl), l);
    unflatten_band(x.tail(nr), r);
    return weighted_sum(ops::solve_mat(l, r, ol, ou, transpose_l), w);
  };
  const BandedMatrix s = ops::solve_mat(l0, r0, ol, ou, transpose_l);
  const auto vjp = grad::vjp_solve_mat(l0, s, w, sz.rl, sz.ru, transpose_l);
  return grad::finite_diff_check(f, concat(flatten_band(l0), flatten_band(r0)),
                                 concat(flatten_band(vjp.l_bar), flatten_band(vjp.r_bar)), eps);
}

grad::FiniteDiffReport fd_sparse_inverse_subset(std::mt19937_64& rng, double eps) {
  const Sizes sz = draw_sizes(rng);
  const BandedMatrix l0 = random_cholesky_factor(rng, sz.n, sz.bw);
  SymmetricBandedMatrix w(sz.n, sz.bw);
  auto wv = random_vec(rng, flatten_band(w.lower_store()).size());
  unflatten_band(wv, w.lower_store());
  auto f = [&](const Eigen::VectorXd& x) {
    BandedMatrix l(sz.n, sz.bw, 0);
    unflatten_band(x, l);
    const SymmetricBandedMatrix s = ops::sparse_inverse_subset(l);
    return weighted_sum(s.lower_store(), w.lower_store());
  };
  const SymmetricBandedMatrix s = ops::sparse_inverse_subset(l0);
  const BandedMatrix l_bar = grad::vjp_sparse_inverse_subset(l0, s, w);
  return grad::finite_diff_check(f, flatten_band(l0), flatten_band(l_bar), eps);
}

grad::FiniteDiffReport fd_product_band_band(std::mt19937_64& rng, double eps, bool restricted) {
  const Sizes sz = draw_sizes(rng);
  std::uniform_int_distribution<Index> b_d(0, 3);
  const Index al = std::min(b_d(rng), sz.n - 1), au = std::min(b_d(rng), sz.n - 1);
  const BandedMatrix a0 = random_band(rng, sz.n, al, au);
  const BandedMatrix b0 = random_band(rng, sz.n, sz.rl, sz.ru);
  const Index full_l = std::min(al + sz.rl, sz.n - 1), full_u = std::min(au + sz.ru, sz.n - 1);
  const Index ol = restricted ? std::min(full_l, Index(1)) : full_l;
  const Index ou = restricted ? std::min(full_u, Index(1)) : full_u;
  BandedMatrix w(sz.n, ol, ou);
  auto wv = random_vec(rng, flatten_band(w).size());
  unflatten_band(wv, w);
  const Index na = flatten_band(a0).size(), nb = flatten_band(b0).size();
  auto f = [&](const Eigen::VectorXd& x) {
    BandedMatrix a(sz.n, al, au), b(sz.n, sz.rl, sz.ru);
    unflatten_band(x.head(na), a);
    unflatten_band(x.tail(nb), b);
    return weighted_sum(ops::product_band_band_restricted(a, b, ol, ou), w);
  };
  const auto vjp = grad::vjp_product_band_band(a0, b0, w);
  return grad::finite_diff_check(f, concat(flatten_band(a0), flatten_band(b0)),
                                 concat(flatten_band(vjp.a_bar), flatten_band(vjp.b_bar)), eps);
}

grad::FiniteDiffReport fd_product_band_vec(std::mt19937_64& rng, double eps, bool transpose_b) {
  const Sizes sz = draw_sizes(rng);
  const BandedMatrix b0 = random_band(rng, sz.n, sz.rl, sz.ru);
  const Eigen::VectorXd v0 = random_vec(rng, sz.n);
  const Eigen::VectorXd w = random_vec(rng, sz.n);
  const Index nb = flatten_band(b0).size();
  auto f = [&](const Eigen::VectorXd& x) {
    BandedMatrix b(sz.n, sz.rl, sz.ru);
    unflatten_band(x.head(nb), b);
    return w.dot(ops::product_band_vec(b, x.tail(sz.n), transpose_b));
  };
  const auto vjp = grad::vjp_product_band_vec(b0, v0, w, transpose_b);
  return grad::finite_diff_check(f, concat(flatten_band(b0), v0),
                                 concat(flatten_band(vjp.b_bar), vjp.v_bar), eps);
}

grad::FiniteDiffReport fd_outer_band(std::mt19937_64& rng, double eps) {
  const Sizes sz = draw_sizes(rng);
  const Eigen::VectorXd m0 = random_vec(rng, sz.n), v0 = random_vec(rng, sz.n);
  BandedMatrix w(sz.n, sz.rl, sz.ru);
  auto wv = random_vec(rng, flatten_band(w).size());
  unflatten_band(wv, w);
  auto f = [&](const Eigen::VectorXd& x) {
    return weighted_sum(ops::outer_band(x.head(sz.n), x.tail(sz.n), sz.rl, sz.ru), w);
  };
  const auto vjp = grad::vjp_outer_band(m0, v0, w);
  return grad::finite_diff_check(f, concat(m0, v0), concat(vjp.m_bar, vjp.v_bar), eps);
}

grad::FiniteDiffReport fd_log_det(std::mt19937_64& rng, double eps) {
  const Sizes sz = draw_sizes(rng);
  const BandedMatrix l0 = random_cholesky_factor(rng, sz.n, sz.bw);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double w = u(rng);
  auto f = [&](const Eigen::VectorXd& x) {
    BandedMatrix l(sz.n, sz.bw, 0);
    unflatten_band(x, l);
    return w * ops::log_det_from_cholesky(l);
  };
  const BandedMatrix l_bar = grad::vjp_log_det_from_cholesky(l0, w);
  return grad::finite_diff_check(f, flatten_band(l0), flatten_band(l_bar), eps);
}

}  // namespace

std::vector<std::string> op_names() {
  return {"cholesky",
          "solve_vec",
          "solve_vec_transposed",
          "solve_mat",
          "solve_mat_transposed",
          "sparse_inverse_subset",
          "product_band_band",
          "product_band_band_restricted",
          "product_band_vec",
          "product_band_vec_transposed",
          "outer_band",
          "log_det_from_cholesky"};
}

grad::FiniteDiffReport check_op(const std::string& which, std::mt19937_64& rng, double eps) {
  if (which == "cholesky") return fd_cholesky(rng, eps);
  if (which == "solve_vec") return fd_solve_vec(rng, eps, false);
  if (which == "solve_vec_transposed") return fd_solve_vec(rng, eps, true);
  if (which == "solve_mat") return fd_solve_mat(rng, eps, false);
  if (which == "solve_mat_transposed") return fd_solve_mat(rng, eps, true);
  if (which == "sparse_inverse_subset") return fd_sparse_inverse_subset(rng, eps);
  if (which == "product_band_band") return fd_product_band_band(rng, eps, false);
  if (which == "product_band_band_restricted") return fd_product_band_band(rng, eps, true);
  if (which == "product_band_vec") return fd_product_band_vec(rng, eps, false);
  if (which == "product_band_vec_transposed") return fd_product_band_vec(rng, eps, true);
  if (which == "outer_band") return fd_outer_band(rng, eps);
  if (which == "log_det_from_cholesky") return fd_log_det(rng, eps);
  throw std::invalid_argument("unknown op '" + which + "'");
}

std::vector<OpReport> run_suite(std::uint64_t seed, int instances, double eps, double tol) {
  std::vector<OpReport> out;
  for (const auto& name : op_names()) {
    std::mt19937_64 rng(seed ^ std::hash<std::string>{}(name));
    OpReport rep;
    rep.op = name;
    rep.instances = instances;
    rep.tol = tol;
    for (int k = 0; k < instances; ++k) {
      const auto r = check_op(name, rng, eps);
      rep.max_rel_err = std::max(rep.max_rel_err, r.max_rel_err);
    }
    rep.pass = rep.max_rel_err < tol;
    out.push_back(rep);
  }
  return out;
}

}  // namespace bandgm::gradcheck
