// Inference on banded Gaussian models: marginal likelihoods, a variational
// objective with its KL term, a whitened log-joint for HMC, the sampler, and
// gradient-based fitting.  Dense Kalman and GPR likelihoods are kept as
// reference oracles.
//
// Every differentiable objective has a tape-builder form returning the node
// of the scalar; plain overloads evaluate the same graph on a throwaway tape
// so both routes share one definition.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>
#include <variant>
#include <vector>

#include "bandgm/banded.hpp"
#include "bandgm/models.hpp"
#include "bandgm/tape.hpp"

namespace bandgm::infer {

using Index = Eigen::Index;

/// Observation model for a latent vector F restricted to observed entries.
/// Gaussian: y_i = F_i + noise of variance tau2.  Poisson: counts with rate
/// exp(F_i) * weight_i; `weight` is aligned with the observed entries.
struct GaussianLik {
  double tau2 = 1.0;
};
struct PoissonLik {
  Eigen::VectorXd weight;
};
using Likelihood = std::variant<GaussianLik, PoissonLik>;

/// F ~ N(m_p, (L_p L_p')^{-1}); l_p is the banded Cholesky factor of the
/// precision.
struct GaussianPrior {
  Eigen::VectorXd m_p;
  BandedMatrix l_p;
};

/// Factorizes the precision.  Throws NotPositiveDefinite.
GaussianPrior make_prior(Eigen::VectorXd mean, const SymmetricBandedMatrix& precision);

/// q(F) = N(m_q, (L_q L_q')^{-1}).  diag(L_q) must stay positive; the
/// optimizer enforces this through a softplus reparameterization and the
/// struct stores the actual factor values.
struct VariationalState {
  Eigen::VectorXd m_q;
  BandedMatrix l_q;
};

/// Nodes and weights for integrals of g against exp(-x^2): sum w_k g(x_k).
/// E[g(F)] for F ~ N(m, v) is (1/sqrt(pi)) sum w_k g(m + sqrt(2 v) x_k).
struct GaussHermite {
  Eigen::VectorXd x;
  Eigen::VectorXd w;
};
GaussHermite gauss_hermite(Index points);

// --- marginal likelihoods ---------------------------------------------------

/// log p(y) for F ~ N(0, Q^{-1}) observed as y = E F + noise(tau2) on the
/// entries selected by `sel`; all solves banded.  The tape form takes the
/// precision and tau2 as recorded nodes.
tape::NodeRef marginal_likelihood_partial(tape::Tape& t, tape::NodeRef q,
                                          const models::SelectionIndex& sel,
                                          const Eigen::VectorXd& y, tape::NodeRef tau2);
double marginal_likelihood_partial(const SymmetricBandedMatrix& q,
                                   const models::SelectionIndex& sel, const Eigen::VectorXd& y,
                                   double tau2);

/// log p(Y) for a state-space prior with Gaussian observations, computed by
/// composing the normalizers of the prior, likelihood, and posterior natural
/// parameters; only banded factorizations of the joint precision are used.
/// y holds one observation row per step.
double gpr_banded_loglik(const models::StateSpaceModel& ssm, const Eigen::MatrixXd& y);

/// Same quantity by forward filtering with dense d x d blocks; reference
/// oracle.  Throws SingularInnovation if an innovation covariance fails to
/// factorize.
double kalman_loglik(const models::StateSpaceModel& ssm, const Eigen::MatrixXd& y);

/// Same quantity from a dense gram matrix: log N(y; 0, K + sigma2 I).
/// O(n^3) reference oracle.
double dense_gpr_loglik(const Eigen::MatrixXd& k, const Eigen::VectorXd& y, double sigma2);

// --- variational objective --------------------------------------------------

/// KL(q || p) between banded Gaussians.  The trace term reads the subset
/// inverse of L_q only inside band(Q_p), which is exact when band(L_q)
/// covers band(Q_p).
tape::NodeRef kl_divergence(tape::Tape& t, tape::NodeRef m_q, tape::NodeRef l_q,
                            const GaussianPrior& p);
double kl_banded(const VariationalState& q, const GaussianPrior& p);

/// Evidence lower bound: sum_i E_q log p(y_i | F_i) - KL(q || p).  Marginal
/// means come from m_q, marginal variances from the subset inverse of L_q.
/// Gaussian expectations are closed form; Poisson expectations use
/// Gauss-Hermite quadrature with `quad_points` nodes.
tape::NodeRef elbo(tape::Tape& t, tape::NodeRef m_q, tape::NodeRef l_q, const GaussianPrior& p,
                   const Likelihood& lik, const models::SelectionIndex& sel,
                   const Eigen::VectorXd& y, Index quad_points = 20);
double vi_objective(const VariationalState& q, const GaussianPrior& p, const Likelihood& lik,
                    const models::SelectionIndex& sel, const Eigen::VectorXd& y,
                    Index quad_points = 20);

// --- HMC --------------------------------------------------------------------

/// Hyperparameters enter through a map from the log-parameter vector to the
/// latent precision and the likelihood; the log-parameters carry a standard
/// normal prior.
struct ThetaMap {
  std::function<SymmetricBandedMatrix(const Eigen::VectorXd&)> precision;
  std::function<Likelihood(const Eigen::VectorXd&)> likelihood;
};

struct LogJoint {
  double value = 0.0;
  Eigen::VectorXd grad_v;
  Eigen::VectorXd grad_theta;
};

/// log p(v, theta, y) with whitened latents F = L^{-T} v, L = chol(Q(theta)),
/// so v carries a standard normal prior.  Latent and observation gradients
/// come off the tape; the theta gradient composes the tape's precision and
/// variance adjoints with central finite differences of the assembly maps
/// (step fd_eps), plus the analytic log-prior term.
LogJoint hmc_log_joint(const ThetaMap& map, const models::SelectionIndex& sel,
                       const Eigen::VectorXd& y, const Eigen::VectorXd& v,
                       const Eigen::VectorXd& theta_log, double fd_eps = 1e-6);

struct HmcConfig {
  double step = 0.01;
  Index leapfrog = 20;
  Index iters = 1000;
  Index burn_in = 500;
  std::uint64_t seed = 0;
};

struct HmcResult {
  Eigen::MatrixXd samples;        // one kept state per row
  double accept_rate = 0.0;
  Eigen::VectorXd energy_errors;  // |Delta H| per trajectory, all iterations
};

/// (log density, gradient) of the target at a point.
using TargetGrad = std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&)>;

/// Leapfrog HMC with Metropolis correction over the full parameter vector.
/// Deterministic per seed.  A non-finite energy inside a trajectory rejects
/// that proposal; a non-finite target at x0 throws NonFiniteEnergy.
HmcResult hmc_sample(const HmcConfig& cfg, const TargetGrad& target, const Eigen::VectorXd& x0);

// --- fitting ----------------------------------------------------------------

struct FitConfig {
  Index max_iters = 200;
  double grad_tol = 1e-6;
  double step0 = 0.05;
};

struct FitResult {
  Eigen::VectorXd x;
  double value = 0.0;
  std::vector<double> trace;  // accepted objective values, non-decreasing
  bool converged = false;
  Index iters = 0;
};

/// Maximizes the objective by moment-scaled gradient steps with backtracking;
/// only improving steps are accepted and the best iterate is returned.
/// Positivity constraints belong in the objective's own parameterization
/// (optimize log-parameters).  Throws NonFiniteObjective if x0 does not
/// evaluate finite.
FitResult fit_mle(const TargetGrad& objective, Eigen::VectorXd x0, const FitConfig& cfg = {});

/// Chains a precision adjoint (stored-cell convention: off-diagonal cells
/// carry both mirror sensitivities) through central finite differences of an
/// assembly map, giving d(objective)/d(theta).  The band must not change
/// with theta.
Eigen::VectorXd compose_precision_gradient(
    const SymmetricBandedMatrix& q_bar,
    const std::function<SymmetricBandedMatrix(const Eigen::VectorXd&)>& assemble,
    const Eigen::VectorXd& theta, double fd_eps = 1e-6);

struct VariationalFit {
  VariationalState state;
  double elbo = 0.0;
  std::vector<double> trace;
};

/// Maximizes the evidence lower bound over (m_q, L_q) starting from q =
/// prior.  band(L_q) = band(L_p); diagonal cells are optimized through a
/// softplus bijection to stay positive.
VariationalFit fit_vi(const GaussianPrior& p, const Likelihood& lik,
                      const models::SelectionIndex& sel, const Eigen::VectorXd& y,
                      const FitConfig& cfg = {}, Index quad_points = 20);

}  // namespace bandgm::infer
