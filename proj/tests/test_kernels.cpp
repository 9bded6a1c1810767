#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "bandgm/gradcheck.hpp"
#include "bandgm/kernels.hpp"
#include "test_util.hpp"

using namespace bandgm;
using gradcheck::random_band;
using gradcheck::random_cholesky_factor;
using gradcheck::random_spd_band;
using gradcheck::random_vec;
using testutil::bits_equal;
using testutil::max_rel_err;

namespace {

// Storage cells that map outside the matrix must never pick up mass.
bool corners_zero(const BandedMatrix& a) {
  for (Eigen::Index r = 0; r < a.rows_stored(); ++r)
    for (Eigen::Index j = 0; j < a.n(); ++j) {
      const Eigen::Index i = r - a.upper() + j;
      if ((i < 0 || i >= a.n()) && a.storage()(r, j) != 0.0) return false;
    }
  return true;
}

Eigen::MatrixXd band_part(const Eigen::MatrixXd& d, Eigen::Index lower, Eigen::Index upper) {
  return BandedMatrix::from_dense(d, lower, upper, /*strict=*/false).dense();
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("cholesky of a diagonal matrix takes square roots") {
    SymmetricBandedMatrix q(2, 0);
    q.set(0, 0, 4.0);
    q.set(1, 1, 9.0);
    const BandedMatrix l = ops::cholesky(q);
    CHECK(l(0, 0) == 2.0);
    CHECK(l(1, 1) == 3.0);
    CHECK(l.lower() == 0);
    CHECK(l.upper() == 0);
  }

  TEST_CASE("cholesky reports the row of the first bad pivot") {
    SymmetricBandedMatrix q(4, 0);
    for (int i = 0; i < 4; ++i) q.set(i, i, 1.0);
    q.set(2, 2, -1.0);
    CHECK_THROWS_AS(ops::cholesky(q), NotPositiveDefinite);
    try {
      ops::cholesky(q);
    } catch (const NotPositiveDefinite& e) {
      CHECK(e.row == 2);
    }

    SymmetricBandedMatrix ind(2, 1);
    ind.set(0, 0, 1.0);
    ind.set(1, 1, 1.0);
    ind.set(1, 0, 2.0);
    try {
      ops::cholesky(ind);
      CHECK(false);
    } catch (const NotPositiveDefinite& e) {
      CHECK(e.row == 1);
    }
  }

  TEST_CASE("cholesky matches the dense factorization") {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 40; ++rep) {
      std::uniform_int_distribution<Eigen::Index> nd(1, 40), bd(0, 5);
      const Eigen::Index n = nd(rng);
      const Eigen::Index bw = std::min(bd(rng), n - 1);
      const SymmetricBandedMatrix q = random_spd_band(rng, n, bw);
      const BandedMatrix l = ops::cholesky(q);
      CHECK(l.lower() == bw);
      CHECK(l.upper() == 0);
      CHECK(corners_zero(l));
      CHECK(max_rel_err(l.dense(), testutil::dense_cholesky(q.dense())) < 1e-12);
      CHECK(max_rel_err((l.dense() * l.dense().transpose()).eval(), q.dense()) < 1e-12);
    }
  }

  TEST_CASE("solve_vec matches dense triangular solves in both directions") {
    std::mt19937_64 rng(22);
    for (int rep = 0; rep < 40; ++rep) {
      std::uniform_int_distribution<Eigen::Index> nd(1, 50), bd(0, 4);
      const Eigen::Index n = nd(rng);
      const Eigen::Index bw = std::min(bd(rng), n - 1);
      const BandedMatrix l = random_cholesky_factor(rng, n, bw);
      const Eigen::VectorXd v = random_vec(rng, n);
      CHECK(max_rel_err(ops::solve_vec(l, v, false), testutil::dense_lower_solve(l.dense(), v)) <
            1e-11);
      CHECK(max_rel_err(ops::solve_vec(l, v, true), testutil::dense_upper_solve(l.dense(), v)) <
            1e-11);
    }
  }

  TEST_CASE("solve_vec refuses a zero diagonal and reports the row") {
    BandedMatrix l(3, 1, 0);
    l(0, 0) = 1.0;
    l(1, 1) = 0.0;
    l(2, 2) = 1.0;
    const Eigen::VectorXd v = Eigen::VectorXd::Ones(3);
    try {
      ops::solve_vec(l, v, false);
      CHECK(false);
    } catch (const SingularDiagonal& e) {
      CHECK(e.row == 1);
    }
    CHECK_THROWS_AS(ops::solve_vec(l, Eigen::VectorXd::Ones(5), false), DimensionMismatch);
  }

  TEST_CASE("solve_mat is exact when the result band can hold the true product") {
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 30; ++rep) {
      std::uniform_int_distribution<Eigen::Index> nd(2, 40), bd(0, 3);
      const Eigen::Index n = nd(rng);
      const Eigen::Index bw = std::min(bd(rng), n - 1);
      const Eigen::Index rl = std::min(bd(rng), n - 1), ru = std::min(bd(rng), n - 1);
      const BandedMatrix l = random_cholesky_factor(rng, n, bw);
      const BandedMatrix r = random_band(rng, n, rl, ru);
      const Eigen::MatrixXd linv_r =
          l.dense().triangularView<Eigen::Lower>().solve(r.dense());
      const Eigen::MatrixXd linvt_r =
          l.dense().transpose().triangularView<Eigen::Upper>().solve(r.dense());

      // Plain solve: exact on any band whose upper side covers r's.
      const Eigen::Index ol = std::min<Eigen::Index>(n - 1, rl + bw);
      const BandedMatrix s = ops::solve_mat(l, r, ol, ru, false);
      CHECK(max_rel_err(s.dense(), band_part(linv_r, ol, ru)) < 1e-10);
      const Eigen::Index ou_wide = std::min<Eigen::Index>(n - 1, ru + 1);
      const BandedMatrix s_wide = ops::solve_mat(l, r, std::min<Eigen::Index>(n - 1, 1), ou_wide,
                                                 false);
      CHECK(max_rel_err(s_wide.dense(), band_part(linv_r, std::min<Eigen::Index>(n - 1, 1),
                                                  ou_wide)) < 1e-10);

      // Transposed solve: exact on any band whose lower side covers r's.
      const Eigen::Index ot = std::min<Eigen::Index>(n - 1, ru + bw);
      const BandedMatrix st = ops::solve_mat(l, r, rl, ot, true);
      CHECK(max_rel_err(st.dense(), band_part(linvt_r, rl, ot)) < 1e-10);
    }
  }

  TEST_CASE("solve_mat against the identity reads off the in-band inverse factor") {
    std::mt19937_64 rng(24);
    const Eigen::Index n = 30, bw = 3;
    const BandedMatrix l = random_cholesky_factor(rng, n, bw);
    BandedMatrix eye(n, 0, 0);
    for (Eigen::Index i = 0; i < n; ++i) eye(i, i) = 1.0;
    const BandedMatrix s = ops::solve_mat(l, eye, 2 * bw, 0, false);
    const Eigen::MatrixXd linv =
        l.dense().triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
    CHECK(max_rel_err(s.dense(), band_part(linv, 2 * bw, 0)) < 1e-10);
  }

  TEST_CASE("sparse inverse subset on one-by-one factors") {
    BandedMatrix l1(1, 0, 0);
    l1(0, 0) = 1.0;
    CHECK(ops::sparse_inverse_subset(l1)(0, 0) == 1.0);
    l1(0, 0) = 2.0;
    CHECK(ops::sparse_inverse_subset(l1)(0, 0) == 0.25);
  }

  TEST_CASE("sparse inverse subset matches the band of the dense inverse") {
    std::mt19937_64 rng(25);
    for (int rep = 0; rep < 40; ++rep) {
      std::uniform_int_distribution<Eigen::Index> nd(1, 40), bd(0, 5);
      const Eigen::Index n = nd(rng);
      const Eigen::Index bw = std::min(bd(rng), n - 1);
      const SymmetricBandedMatrix q = random_spd_band(rng, n, bw);
      const BandedMatrix l = ops::cholesky(q);
      const SymmetricBandedMatrix s = ops::sparse_inverse_subset(l);
      CHECK(s.bandwidth() == bw);
      const Eigen::MatrixXd qinv = q.dense().inverse();
      CHECK(max_rel_err(s.dense(), band_part(qinv, bw, bw)) < 1e-9);
    }
  }

  TEST_CASE("band products match dense products") {
    std::mt19937_64 rng(26);
    for (int rep = 0; rep < 40; ++rep) {
      std::uniform_int_distribution<Eigen::Index> nd(1, 35), bd(0, 4);
      const Eigen::Index n = nd(rng);
      const BandedMatrix a =
          random_band(rng, n, std::min(bd(rng), n - 1), std::min(bd(rng), n - 1));
      const BandedMatrix b =
          random_band(rng, n, std::min(bd(rng), n - 1), std::min(bd(rng), n - 1));
      const BandedMatrix p = ops::product_band_band(a, b);
      CHECK(p.lower() == std::min(n - 1, a.lower() + b.lower()));
      CHECK(p.upper() == std::min(n - 1, a.upper() + b.upper()));
      CHECK(max_rel_err(p.dense(), (a.dense() * b.dense()).eval()) < 1e-12);
      CHECK(corners_zero(p));

      // Restriction keeps exactly the entries of the full product.
      const Eigen::Index ol = std::min<Eigen::Index>(n - 1, 1);
      const Eigen::Index ou = std::min<Eigen::Index>(n - 1, 2);
      const BandedMatrix pr = ops::product_band_band_restricted(a, b, ol, ou);
      CHECK(max_rel_err(pr.dense(), band_part(a.dense() * b.dense(), ol, ou)) < 1e-12);
    }
  }

  TEST_CASE("band-vector products match dense in both orientations") {
    std::mt19937_64 rng(27);
    for (int rep = 0; rep < 40; ++rep) {
      std::uniform_int_distribution<Eigen::Index> nd(1, 45), bd(0, 4);
      const Eigen::Index n = nd(rng);
      const BandedMatrix b =
          random_band(rng, n, std::min(bd(rng), n - 1), std::min(bd(rng), n - 1));
      const Eigen::VectorXd v = random_vec(rng, n);
      CHECK(max_rel_err(ops::product_band_vec(b, v, false), (b.dense() * v).eval()) < 1e-12);
      CHECK(max_rel_err(ops::product_band_vec(b, v, true),
                        (b.dense().transpose() * v).eval()) < 1e-12);
    }
  }

  TEST_CASE("outer_band carries the rank-one product restricted to the band") {
    std::mt19937_64 rng(28);
    const Eigen::Index n = 20;
    const Eigen::VectorXd m = random_vec(rng, n), v = random_vec(rng, n);
    const BandedMatrix o = ops::outer_band(m, v, 2, 1);
    CHECK(max_rel_err(o.dense(), band_part(m * v.transpose(), 2, 1)) == 0.0);
    CHECK(corners_zero(o));
  }

  TEST_CASE("log_det_from_cholesky sums log pivots") {
    std::mt19937_64 rng(29);
    const SymmetricBandedMatrix q = random_spd_band(rng, 25, 2);
    const BandedMatrix l = ops::cholesky(q);
    const double half_logdet = ops::log_det_from_cholesky(l);
    const double expect = 0.5 * std::log(q.dense().determinant());
    CHECK(testutil::rel_err(half_logdet, expect) < 1e-10);

    BandedMatrix bad(2, 0, 0);
    bad(0, 0) = 1.0;
    bad(1, 1) = -2.0;
    try {
      ops::log_det_from_cholesky(bad);
      CHECK(false);
    } catch (const NonPositiveDiagonal& e) {
      CHECK(e.row == 1);
    }
  }

  TEST_CASE("factor and inverse subset allocate linearly in n") {
    const Eigen::Index n = 4000, bw = 3;
    std::mt19937_64 rng(30);
    const SymmetricBandedMatrix q = random_spd_band(rng, n, bw);
    const auto before = detail::banded_alloc_count();
    const BandedMatrix l = ops::cholesky(q);
    const SymmetricBandedMatrix s = ops::sparse_inverse_subset(l);
    const auto used = detail::banded_alloc_count() - before;
    CHECK(used <= static_cast<std::uint64_t>(8 * (bw + 1) * n));
    CHECK(s.bandwidth() == bw);
  }

  TEST_CASE("parallel entry points agree bit for bit with the serial lane") {
    std::mt19937_64 rng(31);
    {
      const Eigen::Index n = 6000;
      const BandedMatrix l = random_cholesky_factor(rng, n, 3);
      const BandedMatrix r = random_band(rng, n, 1, 1);
      for (const bool t : {false, true}) {
        const Eigen::Index ol = t ? 1 : 4, ou = t ? 4 : 1;
        CHECK(bits_equal(ops::solve_mat(l, r, ol, ou, t),
                         ops::serial::solve_mat_ref(l, r, ol, ou, t)));
      }
    }
    {
      const Eigen::Index n = 8192;
      const BandedMatrix a = random_band(rng, n, 2, 1);
      const BandedMatrix b = random_band(rng, n, 1, 2);
      CHECK(bits_equal(ops::product_band_band_restricted(a, b, 2, 2),
                       ops::serial::product_band_band_restricted_ref(a, b, 2, 2)));
    }
    {
      const Eigen::Index n = 40000;
      const BandedMatrix b = random_band(rng, n, 2, 1);
      const Eigen::VectorXd v = random_vec(rng, n);
      for (const bool t : {false, true})
        CHECK(bits_equal(ops::product_band_vec(b, v, t),
                         ops::serial::product_band_vec_ref(b, v, t)));
      const Eigen::VectorXd m = random_vec(rng, n);
      CHECK(bits_equal(ops::outer_band(m, v, 1, 2), ops::serial::outer_band_ref(m, v, 1, 2)));
    }
  }

  TEST_CASE("kernel shape mismatches are rejected") {
    const BandedMatrix a(5, 1, 1), b(6, 1, 1);
    CHECK_THROWS_AS(ops::product_band_band(a, b), DimensionMismatch);
    CHECK_THROWS_AS(ops::product_band_vec(a, Eigen::VectorXd::Ones(4), false), DimensionMismatch);
    CHECK_THROWS_AS(ops::solve_mat(a, b, 1, 1, false), DimensionMismatch);
    CHECK_THROWS_AS(ops::outer_band(Eigen::VectorXd::Ones(3), Eigen::VectorXd::Ones(4), 1, 1),
                    DimensionMismatch);
  }
}
