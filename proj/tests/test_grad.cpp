#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "bandgm/grad.hpp"
#include "bandgm/gradcheck.hpp"
#include "test_util.hpp"

using namespace bandgm;
using gradcheck::random_band;
using gradcheck::random_cholesky_factor;
using gradcheck::random_spd_band;
using gradcheck::random_vec;
using testutil::bits_equal;
using testutil::max_rel_err;

TEST_SUITE("grad") {
  TEST_CASE("finite_diff_check accepts correct gradients and rejects broken ones") {
    auto f = [](const Eigen::VectorXd& x) { return std::sin(x(0)) * x(1) + 0.5 * x(1) * x(1); };
    Eigen::VectorXd x0(2);
    x0 << 0.7, -1.3;
    Eigen::VectorXd g(2);
    g << std::cos(x0(0)) * x0(1), std::sin(x0(0)) + x0(1);
    CHECK(grad::finite_diff_check(f, x0, g).pass(1e-7));
    Eigen::VectorXd g_bad = g;
    g_bad(0) *= 1.01;
    CHECK_FALSE(grad::finite_diff_check(f, x0, g_bad).pass(1e-5));
  }

  TEST_CASE("every reverse kernel passes randomized finite differences") {
    const auto reports = gradcheck::run_suite(/*seed=*/1234, /*instances=*/10);
    CHECK(reports.size() == gradcheck::op_names().size());
    for (const auto& r : reports) {
      INFO(r.op, " worst rel err ", r.max_rel_err);
      CHECK(r.pass);
      CHECK(r.max_rel_err < 1e-5);
    }
  }

  TEST_CASE("factorization adjoint matches the dense reverse sweep") {
    std::mt19937_64 rng(41);
    for (int rep = 0; rep < 20; ++rep) {
      std::uniform_int_distribution<Eigen::Index> nd(1, 12), bd(0, 3);
      const Eigen::Index n = nd(rng);
      const Eigen::Index bw = std::min(bd(rng), n - 1);
      const SymmetricBandedMatrix q = random_spd_band(rng, n, bw);
      const BandedMatrix l = ops::cholesky(q);
      const BandedMatrix l_bar = random_band(rng, n, bw, 0);
      const SymmetricBandedMatrix q_bar = grad::vjp_cholesky(l, l_bar);
      const Eigen::MatrixXd oracle = testutil::dense_cholesky_adjoint(l.dense(), l_bar.dense());
      const Eigen::MatrixXd oracle_band =
          BandedMatrix::from_dense(oracle, bw, 0, /*strict=*/false).dense();
      CHECK(max_rel_err(q_bar.lower_store().dense(), oracle_band) < 1e-9);
    }
  }

  TEST_CASE("inverse-subset adjoint matches the dense matrix-calculus formula") {
    std::mt19937_64 rng(42);
    for (int rep = 0; rep < 20; ++rep) {
      std::uniform_int_distribution<Eigen::Index> nd(1, 10), bd(0, 3);
      const Eigen::Index n = nd(rng);
      const Eigen::Index bw = std::min(bd(rng), n - 1);
      const BandedMatrix l = random_cholesky_factor(rng, n, bw);
      const BandedMatrix w = random_band(rng, n, bw, 0);
      const SymmetricBandedMatrix s = ops::sparse_inverse_subset(l);
      const BandedMatrix l_bar =
          grad::vjp_sparse_inverse_subset(l, s, SymmetricBandedMatrix::from_lower(w));

      // Dense route: c = <W, band of Sigma>, Sigma = (L L^T)^{-1}, so with the
      // symmetrized seed Xi the input adjoint is -2 Sigma Xi L^{-T}.
      const Eigen::MatrixXd ld = l.dense();
      const Eigen::MatrixXd sigma = (ld * ld.transpose()).inverse();
      Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(n, n);
      for (Eigen::Index j = 0; j < n; ++j) {
        xi(j, j) = w(j, j);
        for (Eigen::Index i = j + 1; i <= std::min(n - 1, j + bw); ++i)
          xi(i, j) = xi(j, i) = 0.5 * w(i, j);
      }
      const Eigen::MatrixXd linv_t =
          ld.transpose().triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(n, n));
      const Eigen::MatrixXd oracle = -2.0 * sigma * xi * linv_t;
      const Eigen::MatrixXd oracle_band =
          BandedMatrix::from_dense(oracle, bw, 0, /*strict=*/false).dense();
      CHECK(max_rel_err(l_bar.dense(), oracle_band) < 1e-9);
    }
  }

  TEST_CASE("adjoint sweeps are exactly linear in the seed") {
    std::mt19937_64 rng(43);
    const Eigen::Index n = 60, bw = 3;
    const SymmetricBandedMatrix q = random_spd_band(rng, n, bw);
    const BandedMatrix l = ops::cholesky(q);
    const BandedMatrix seed = random_band(rng, n, bw, 0);
    {
      const BandedMatrix a = grad::vjp_cholesky(l, seed).lower_store();
      const BandedMatrix b = grad::vjp_cholesky(l, scale(seed, 2.0)).lower_store();
      CHECK(bits_equal(scale(a, 2.0), b));
    }
    {
      const SymmetricBandedMatrix s = ops::sparse_inverse_subset(l);
      const BandedMatrix a =
          grad::vjp_sparse_inverse_subset(l, s, SymmetricBandedMatrix::from_lower(seed));
      const BandedMatrix b = grad::vjp_sparse_inverse_subset(
          l, s, SymmetricBandedMatrix::from_lower(scale(seed, 2.0)));
      CHECK(bits_equal(scale(a, 2.0), b));
    }
  }

  TEST_CASE("adjoint shape mismatches are rejected") {
    const BandedMatrix l(6, 2, 0);
    CHECK_THROWS_AS(grad::vjp_cholesky(l, BandedMatrix(6, 1, 0)), DimensionMismatch);
    CHECK_THROWS_AS(grad::vjp_cholesky(l, BandedMatrix(5, 2, 0)), DimensionMismatch);
    const SymmetricBandedMatrix s(6, 2), s_bad(6, 1);
    CHECK_THROWS_AS(grad::vjp_sparse_inverse_subset(l, s, s_bad), DimensionMismatch);
  }

  TEST_CASE("reverse passes cost a small multiple of their forward kernels") {
    std::mt19937_64 rng(44);
    const Eigen::Index n = 10000;
    for (const Eigen::Index bw : {Eigen::Index(1), Eigen::Index(5), Eigen::Index(15)}) {
      const SymmetricBandedMatrix q = random_spd_band(rng, n, bw);
      const BandedMatrix l = ops::cholesky(q);
      const BandedMatrix seed = random_band(rng, n, bw, 0);
      const double floor_ms = 0.05;

      const double t_chol = testutil::median_ms([&] { ops::cholesky(q); }, 9);
      const double t_chol_vjp = testutil::median_ms([&] { grad::vjp_cholesky(l, seed); }, 9);
      INFO("bw ", bw, " cholesky fwd ", t_chol, "ms vjp ", t_chol_vjp, "ms");
      CHECK(t_chol_vjp <= 5.0 * std::max(t_chol, floor_ms));

      const SymmetricBandedMatrix s = ops::sparse_inverse_subset(l);
      const SymmetricBandedMatrix sseed = SymmetricBandedMatrix::from_lower(seed);
      const double t_inv = testutil::median_ms([&] { ops::sparse_inverse_subset(l); }, 9);
      const double t_inv_vjp =
          testutil::median_ms([&] { grad::vjp_sparse_inverse_subset(l, s, sseed); }, 9);
      INFO("bw ", bw, " inverse subset fwd ", t_inv, "ms vjp ", t_inv_vjp, "ms");
      CHECK(t_inv_vjp <= 5.0 * std::max(t_inv, floor_ms));

      const Eigen::VectorXd v = random_vec(rng, n);
      const Eigen::VectorXd sol = ops::solve_vec(l, v, false);
      const double t_solve = testutil::median_ms([&] { ops::solve_vec(l, v, false); }, 9);
      const double t_solve_vjp =
          testutil::median_ms([&] { grad::vjp_solve_vec(l, sol, v, false); }, 9);
      INFO("bw ", bw, " solve fwd ", t_solve, "ms vjp ", t_solve_vjp, "ms");
      CHECK(t_solve_vjp <= 5.0 * std::max(t_solve, floor_ms));
    }
  }
}
