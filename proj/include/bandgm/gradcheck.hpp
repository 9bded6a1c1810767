// Randomized finite-difference validation of every reverse-mode kernel.
// The same suite backs the unit tests and the command-line `check-grads`
// report.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bandgm/grad.hpp"

namespace bandgm::gradcheck {

struct OpReport {
  std::string op;
  int instances = 0;
  double max_rel_err = 0.0;
  double tol = 1e-5;
  bool pass = false;
};

// Deterministic random inputs used across the test suites.
BandedMatrix random_band(std::mt19937_64& rng, Eigen::Index n, Eigen::Index lower,
                         Eigen::Index upper);
SymmetricBandedMatrix random_spd_band(std::mt19937_64& rng, Eigen::Index n, Eigen::Index bw);
/// Lower banded factor with diagonal bounded away from zero, so solves and
/// inverse subsets stay well conditioned under finite-difference steps.
BandedMatrix random_cholesky_factor(std::mt19937_64& rng, Eigen::Index n, Eigen::Index bw);
Eigen::VectorXd random_vec(std::mt19937_64& rng, Eigen::Index n);

/// In-band cells in column-major band order as a flat vector.
Eigen::VectorXd flatten_band(const BandedMatrix& a);
void unflatten_band(const Eigen::VectorXd& x, BandedMatrix& into);

std::vector<std::string> op_names();

/// One random finite-difference check of the named op's adjoint.
grad::FiniteDiffReport check_op(const std::string& which, std::mt19937_64& rng, double eps = 1e-5);

/// Runs `instances` checks per op.  Fails an op on the worst instance.
std::vector<OpReport> run_suite(std::uint64_t seed, int instances, double eps = 1e-5,
                                double tol = 1e-5);

}  // namespace bandgm::gradcheck
