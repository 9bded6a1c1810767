// Shared helpers for the test binaries: dense oracles built on Eigen and a
// few comparison utilities.  Oracles here deliberately take the dense route
// (full factorizations, full inverses) so they share no code with the banded
// kernels under test.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "bandgm/banded.hpp"

namespace testutil {

inline double rel_err(double a, double b, double floor_ = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_});
}

inline double max_rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          double floor_ = 1e-12) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      worst = std::max(worst, rel_err(a(i, j), b(i, j), floor_));
  return worst;
}

inline double max_abs_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline bool bits_equal(const bandgm::BandedMatrix& a, const bandgm::BandedMatrix& b) {
  return a.same_shape(b) &&
         std::memcmp(a.storage().data(), b.storage().data(),
                     sizeof(double) * static_cast<size_t>(a.storage().size())) == 0;
}

inline bool bits_equal(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

// Dense oracles.

inline Eigen::MatrixXd dense_cholesky(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  return Eigen::MatrixXd(llt.matrixL());
}

inline Eigen::VectorXd dense_lower_solve(const Eigen::MatrixXd& l, const Eigen::VectorXd& v) {
  return l.triangularView<Eigen::Lower>().solve(v);
}

inline Eigen::VectorXd dense_upper_solve(const Eigen::MatrixXd& l, const Eigen::VectorXd& v) {
  return l.transpose().triangularView<Eigen::Upper>().solve(v);
}

// Reverse-mode sweep for a dense Cholesky factorization.  Uses the blocked
// vector form so n in the low thousands stays affordable; consumed as the
// dense baseline in timing comparisons and as an independent adjoint oracle.
inline Eigen::MatrixXd dense_cholesky_adjoint(const Eigen::MatrixXd& l, Eigen::MatrixXd l_bar) {
  const Eigen::Index n = l.rows();
  for (Eigen::Index j = n - 1; j >= 0; --j) {
    const Eigen::Index m = n - j - 1;  // rows strictly below j
    if (m > 0)
      l_bar(j, j) -= l.col(j).tail(m).dot(l_bar.col(j).tail(m)) / l(j, j);
    l_bar.col(j).tail(m + 1) /= l(j, j);
    if (j > 0) {
      l_bar.row(j).head(j) -=
          l_bar.col(j).tail(m + 1).transpose() * l.block(j, 0, m + 1, j);
      if (m > 0)
        l_bar.block(j + 1, 0, m, j) -= l_bar.col(j).tail(m) * l.row(j).head(j);
    }
    l_bar(j, j) *= 0.5;
  }
  // Lower-band convention: the lower triangle carries the full symmetric
  // sensitivity, so nothing is halved off the diagonal.
  return l_bar.triangularView<Eigen::Lower>();
}

// Timing.

template <class F>
double median_ms(F&& f, int reps = 7) {
  f();  // warm-up, discarded
  std::vector<double> t;
  t.reserve(reps);
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    t.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::nth_element(t.begin(), t.begin() + t.size() / 2, t.end());
  return t[t.size() / 2];
}

}  // namespace testutil
