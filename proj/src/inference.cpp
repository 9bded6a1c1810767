#include "bandgm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "bandgm/grad.hpp"
#include "bandgm/kernels.hpp"

namespace bandgm::infer {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double softplus_inv(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Lower band of L L' as a symmetric matrix; exact since the product of a
/// lower factor with its transpose has the factor's bandwidth.
SymmetricBandedMatrix precision_from_factor(const BandedMatrix& l) {
  return SymmetricBandedMatrix::from_lower(
      ops::product_band_band_restricted(l, transpose(l), l.lower(), 0));
}

void check_selection(const models::SelectionIndex& sel, Eigen::Index n_latent,
                     const Eigen::VectorXd& y) {
  if (sel.n_total != n_latent)
    throw DimensionMismatch("selection covers a different latent size");
  if (y.size() != sel.count()) throw DimensionMismatch("observation length != selection size");
}

struct LikTerms {
  double value = 0.0;
  Eigen::VectorXd d_mean;  // full-length, nonzero at observed entries
  Eigen::VectorXd d_var;
  double d_tau2 = 0.0;
};

/// Sum_i E_{N(m_i, v_i)} log p(y_i | F_i) with partial derivatives in the
/// marginal means and variances (and tau2 for the Gaussian case).  Pass
/// zero variances for plain (non-expected) log-likelihood terms.
LikTerms expected_loglik(const Likelihood& lik, const models::SelectionIndex& sel,
                         const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& var, Index quad_points) {
  const Index big = sel.n_total;
  LikTerms out;
  out.d_mean = Eigen::VectorXd::Zero(big);
  out.d_var = Eigen::VectorXd::Zero(big);
  if (const auto* g = std::get_if<GaussianLik>(&lik)) {
    if (g->tau2 <= 0.0) throw NonPositiveParam("tau2");
    const double t2 = g->tau2;
    for (Index i = 0; i < sel.count(); ++i) {
      const Index at = sel.observed[static_cast<std::size_t>(i)];
      const double r = y(i) - mean(at);
      out.value += -0.5 * (std::log(t2) + kLog2Pi) - (r * r + var(at)) / (2.0 * t2);
      out.d_mean(at) = r / t2;
      out.d_var(at) = -0.5 / t2;
      out.d_tau2 += (r * r + var(at)) / (2.0 * t2 * t2) - 0.5 / t2;
    }
    return out;
  }
  const auto& p = std::get<PoissonLik>(lik);
  if (p.weight.size() != sel.count())
    throw DimensionMismatch("poisson weights != selection size");
  const GaussHermite gh = gauss_hermite(quad_points);
  const double norm = 1.0 / std::sqrt(M_PI);
  for (Index i = 0; i < sel.count(); ++i) {
    const double w = p.weight(i);
    if (w <= 0.0) throw NonPositiveParam("weight");
    const Index at = sel.observed[static_cast<std::size_t>(i)];
    const double m = mean(at), v = var(at);
    const double base = y(i) * std::log(w) - std::lgamma(y(i) + 1.0);
    if (v <= 0.0) {
      out.value += y(i) * m + base - w * std::exp(m);
      out.d_mean(at) = y(i) - w * std::exp(m);
      continue;
    }
    const double spread = std::sqrt(2.0 * v);
    double ev = 0.0, dm = 0.0, dv = 0.0;
    for (Index k = 0; k < gh.x.size(); ++k) {
      const double f = m + spread * gh.x(k);
      const double rate = w * std::exp(f);
      ev += gh.w(k) * (y(i) * f - rate);
      const double gprime = y(i) - rate;
      dm += gh.w(k) * gprime;
      dv += gh.w(k) * gprime * gh.x(k) / spread;
    }
    out.value += norm * ev + base;
    out.d_mean(at) = norm * dm;
    out.d_var(at) = norm * dv;
  }
  return out;
}

/// log N(y; mean, cov) with a fresh dense factorization.
double dense_gaussian_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                             const Eigen::MatrixXd& cov, long what) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw SingularInnovation(what);
  const Eigen::VectorXd r = y - mean;
  const double quad = r.dot(llt.solve(r));
  const double logdet =
      2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * (quad + logdet + static_cast<double>(y.size()) * kLog2Pi);
}

}  // namespace

GaussianPrior make_prior(Eigen::VectorXd mean, const SymmetricBandedMatrix& precision) {
  if (mean.size() != precision.n()) throw DimensionMismatch("prior mean length != precision size");
  GaussianPrior p;
  p.m_p = std::move(mean);
  p.l_p = ops::cholesky(precision);
  return p;
}

GaussHermite gauss_hermite(Index points) {
  if (points < 1) throw NonPositiveParam("quad_points");
  GaussHermite out;
  if (points == 1) {
    out.x = Eigen::VectorXd::Zero(1);
    out.w = Eigen::VectorXd::Constant(1, std::sqrt(M_PI));
    return out;
  }
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(points, points);
  for (Index k = 1; k < points; ++k) {
    const double off = std::sqrt(0.5 * static_cast<double>(k));
    jacobi(k, k - 1) = off;
    jacobi(k - 1, k) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  out.x = es.eigenvalues();
  out.w = std::sqrt(M_PI) * es.eigenvectors().row(0).transpose().array().square();
  return out;
}

tape::NodeRef marginal_likelihood_partial(tape::Tape& t, tape::NodeRef q,
                                          const models::SelectionIndex& sel,
                                          const Eigen::VectorXd& y, tape::NodeRef tau2) {
  const SymmetricBandedMatrix& qv = t.symmetric(q);
  check_selection(sel, qv.n(), y);
  if (t.scalar(tau2) <= 0.0) throw NonPositiveParam("tau2");
  const double n = static_cast<double>(sel.count());

  const Eigen::VectorXd mask =
      models::scatter(sel, Eigen::VectorXd::Ones(sel.count()));
  const Eigen::VectorXd ety = models::scatter(sel, y);

  const tape::NodeRef inv_tau = t.div(t.constant(1.0), tau2);
  const tape::NodeRef l =
      t.cholesky(t.add_diagonal_sym(q, t.scale_vec(t.constant(mask), inv_tau)));
  const tape::NodeRef w = t.solve_vec(l, t.constant(ety));
  tape::NodeRef obj = t.constant(-0.5 * n * kLog2Pi);
  obj = t.add(obj, t.neg(t.log_det_from_cholesky(l)));
  obj = t.add(obj, t.log_det_from_cholesky(t.cholesky(q)));
  obj = t.add(obj, t.mul(t.constant(-0.5 * n), t.log(tau2)));
  obj = t.add(obj, t.mul(t.constant(-0.5 * y.squaredNorm()), inv_tau));
  obj = t.add(obj, t.mul(t.constant(0.5), t.mul(t.dot(w, w), t.mul(inv_tau, inv_tau))));
  return obj;
}

double marginal_likelihood_partial(const SymmetricBandedMatrix& q,
                                   const models::SelectionIndex& sel, const Eigen::VectorXd& y,
                                   double tau2) {
  tape::Tape t;
  return t.scalar(marginal_likelihood_partial(t, t.constant(q), sel, y, t.constant(tau2)));
}

double gpr_banded_loglik(const models::StateSpaceModel& ssm, const Eigen::MatrixXd& y) {
  const Index steps = ssm.steps();
  if (y.rows() != steps || y.cols() != ssm.e)
    throw DimensionMismatch("gpr_banded_loglik: observation shape mismatch");
  const models::NaturalParams prior = models::prior_natural_params(ssm);
  const models::NaturalParams lik = models::likelihood_natural_params(ssm, y);
  const double dim = static_cast<double>(ssm.joint_dim());

  const BandedMatrix l0 = ops::cholesky(prior.lambda);
  const double a0 = ops::log_det_from_cholesky(l0) - 0.5 * dim * kLog2Pi -
                    0.5 * ops::solve_vec(l0, prior.eta, false).squaredNorm();

  // The observation block is degenerate as a Gaussian over the full state, so
  // its normalizer uses the observation-space closed form instead.
  Eigen::LLT<Eigen::MatrixXd> rf(ssm.r);
  if (rf.info() != Eigen::Success) throw NotPositiveDefinite(0);
  const double logdet_r =
      2.0 * Eigen::MatrixXd(rf.matrixL()).diagonal().array().log().sum();
  double quad_r = 0.0;
  for (Index s = 0; s < steps; ++s) {
    const Eigen::VectorXd resid = y.row(s).transpose() - ssm.c;
    quad_r += resid.dot(rf.solve(resid));
  }
  const double t_count = static_cast<double>(steps);
  const double a1 =
      -0.5 * (t_count * logdet_r + t_count * static_cast<double>(ssm.e) * kLog2Pi + quad_r);

  SymmetricBandedMatrix post = prior.lambda;
  post.lower_store().storage().topRows(lik.lambda.bandwidth() + 1) +=
      lik.lambda.lower_store().storage();
  const Eigen::VectorXd eta2 = prior.eta + lik.eta;
  const BandedMatrix l2 = ops::cholesky(post);
  const double a2 = ops::log_det_from_cholesky(l2) - 0.5 * dim * kLog2Pi -
                    0.5 * ops::solve_vec(l2, eta2, false).squaredNorm();
  return a0 + a1 - a2;
}

double kalman_loglik(const models::StateSpaceModel& ssm, const Eigen::MatrixXd& y) {
  const Index steps = ssm.steps();
  if (y.rows() != steps || y.cols() != ssm.e)
    throw DimensionMismatch("kalman_loglik: observation shape mismatch");
  Eigen::VectorXd mu = ssm.a[0] * ssm.mu0 + ssm.b[0];
  Eigen::MatrixXd cov = ssm.a[0] * ssm.sigma0 * ssm.a[0].transpose() + ssm.q[0];
  double loglik = 0.0;
  for (Index s = 0; s < steps; ++s) {
    const Eigen::MatrixXd innov_cov =
        ssm.h * cov * ssm.h.transpose() + ssm.r;
    loglik += dense_gaussian_loglik(y.row(s).transpose(), ssm.h * mu + ssm.c, innov_cov, s);
    Eigen::LLT<Eigen::MatrixXd> llt(innov_cov);
    if (llt.info() != Eigen::Success) throw SingularInnovation(s);
    const Eigen::MatrixXd gain = llt.solve(ssm.h * cov).transpose();
    const Eigen::VectorXd resid = y.row(s).transpose() - (ssm.h * mu + ssm.c);
    mu += gain * resid;
    cov -= gain * ssm.h * cov;
    if (s + 1 < steps) {
      mu = ssm.a[s + 1] * mu + ssm.b[s + 1];
      cov = ssm.a[s + 1] * cov * ssm.a[s + 1].transpose() + ssm.q[s + 1];
    }
  }
  return loglik;
}

double dense_gpr_loglik(const Eigen::MatrixXd& k, const Eigen::VectorXd& y, double sigma2) {
  if (k.rows() != k.cols() || k.rows() != y.size())
    throw DimensionMismatch("dense_gpr_loglik: shape mismatch");
  Eigen::MatrixXd cov = k;
  cov.diagonal().array() += sigma2;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite(0);
  const double quad = y.dot(llt.solve(y));
  const double logdet =
      2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * (quad + logdet + static_cast<double>(y.size()) * kLog2Pi);
}

tape::NodeRef kl_divergence(tape::Tape& t, tape::NodeRef m_q, tape::NodeRef l_q,
                            const GaussianPrior& p) {
  const BandedMatrix& lq = t.banded(l_q);
  const Index big = p.l_p.n();
  if (lq.n() != big || t.vector(m_q).size() != big || p.m_p.size() != big)
    throw DimensionMismatch("kl: size mismatch");
  if (lq.lower() < p.l_p.lower())
    throw DimensionMismatch("kl: variational band must cover the prior band");

  const SymmetricBandedMatrix qp = precision_from_factor(p.l_p);
  const double logdet_p = ops::log_det_from_cholesky(p.l_p);

  const tape::NodeRef trace = t.trace_product_sym(t.sparse_inverse_subset(l_q), t.constant(qp));
  const tape::NodeRef logdets =
      t.mul(t.constant(2.0), t.sub(t.log_det_from_cholesky(l_q), t.constant(logdet_p)));
  const tape::NodeRef diff = t.sub_vec(t.constant(p.m_p), m_q);
  const tape::NodeRef white = t.product_band_vec(t.constant(p.l_p), diff, true);
  const tape::NodeRef quad = t.dot(white, white);
  tape::NodeRef inner = t.add(trace, logdets);
  inner = t.add(inner, quad);
  inner = t.add(inner, t.constant(-static_cast<double>(big)));
  return t.mul(t.constant(0.5), inner);
}

double kl_banded(const VariationalState& q, const GaussianPrior& p) {
  tape::Tape t;
  return t.scalar(kl_divergence(t, t.constant(q.m_q), t.constant(q.l_q), p));
}

tape::NodeRef elbo(tape::Tape& t, tape::NodeRef m_q, tape::NodeRef l_q, const GaussianPrior& p,
                   const Likelihood& lik, const models::SelectionIndex& sel,
                   const Eigen::VectorXd& y, Index quad_points) {
  const BandedMatrix& lq = t.banded(l_q);
  check_selection(sel, lq.n(), y);
  const tape::NodeRef marg_var = t.diag_sym(t.sparse_inverse_subset(l_q));
  const LikTerms ve =
      expected_loglik(lik, sel, y, t.vector(m_q), t.vector(marg_var), quad_points);
  const tape::NodeRef ve_node =
      t.linearized_scalar(ve.value, {{m_q, ve.d_mean}, {marg_var, ve.d_var}});
  return t.sub(ve_node, kl_divergence(t, m_q, l_q, p));
}

double vi_objective(const VariationalState& q, const GaussianPrior& p, const Likelihood& lik,
                    const models::SelectionIndex& sel, const Eigen::VectorXd& y,
                    Index quad_points) {
  tape::Tape t;
  return t.scalar(elbo(t, t.constant(q.m_q), t.constant(q.l_q), p, lik, sel, y, quad_points));
}

LogJoint hmc_log_joint(const ThetaMap& map, const models::SelectionIndex& sel,
                       const Eigen::VectorXd& y, const Eigen::VectorXd& v,
                       const Eigen::VectorXd& theta_log, double fd_eps) {
  const SymmetricBandedMatrix q = map.precision(theta_log);
  const Likelihood lik = map.likelihood(theta_log);
  check_selection(sel, q.n(), y);
  if (v.size() != q.n()) throw DimensionMismatch("hmc_log_joint: latent length mismatch");

  tape::Tape t;
  const tape::NodeRef qn = t.leaf("q", q);
  const tape::NodeRef vn = t.leaf("v", v);
  const tape::NodeRef f = t.solve_vec(t.cholesky(qn), vn, true);

  const Eigen::VectorXd zero_var = Eigen::VectorXd::Zero(q.n());
  const LikTerms terms = expected_loglik(lik, sel, y, t.vector(f), zero_var, 1);
  std::vector<std::pair<tape::NodeRef, double>> scalar_grads;
  tape::NodeRef tau_node{};
  const bool has_tau = std::holds_alternative<GaussianLik>(lik);
  if (has_tau) {
    tau_node = t.leaf("tau2", std::get<GaussianLik>(lik).tau2);
    scalar_grads.push_back({tau_node, terms.d_tau2});
  }
  const tape::NodeRef ll = t.linearized_scalar(terms.value, {{f, terms.d_mean}}, scalar_grads);
  const tape::NodeRef latent_prior =
      t.add(t.mul(t.constant(-0.5), t.dot(vn, vn)),
            t.constant(-0.5 * static_cast<double>(q.n()) * kLog2Pi));
  const tape::NodeRef total = t.add(ll, latent_prior);

  LogJoint out;
  out.value = t.scalar(total);
  auto grads = t.backward(total);
  out.grad_v = std::get<Eigen::VectorXd>(grads.at("v"));
  const auto& q_bar = std::get<SymmetricBandedMatrix>(grads.at("q"));
  const double tau_bar = has_tau ? std::get<double>(grads.at("tau2")) : 0.0;

  const Index k = theta_log.size();
  out.grad_theta = compose_precision_gradient(q_bar, map.precision, theta_log, fd_eps);
  for (Index j = 0; j < k; ++j) {
    Eigen::VectorXd lo = theta_log, hi = theta_log;
    hi(j) += fd_eps;
    lo(j) -= fd_eps;
    double slope = 0.0;
    if (has_tau) {
      const double t_hi = std::get<GaussianLik>(map.likelihood(hi)).tau2;
      const double t_lo = std::get<GaussianLik>(map.likelihood(lo)).tau2;
      slope += tau_bar * (t_hi - t_lo) / (2.0 * fd_eps);
    } else {
      const Eigen::VectorXd w_hi = std::get<PoissonLik>(map.likelihood(hi)).weight;
      const Eigen::VectorXd w_lo = std::get<PoissonLik>(map.likelihood(lo)).weight;
      const Eigen::VectorXd fv = t.vector(f);
      for (Index i = 0; i < sel.count(); ++i) {
        const Index at = sel.observed[static_cast<std::size_t>(i)];
        const double w = std::get<PoissonLik>(lik).weight(i);
        const double dldw = y(i) / w - std::exp(fv(at));
        slope += dldw * (w_hi(i) - w_lo(i)) / (2.0 * fd_eps);
      }
    }
    out.grad_theta(j) += slope - theta_log(j);
  }
  if (k > 0)
    out.value += -0.5 * theta_log.squaredNorm() - 0.5 * static_cast<double>(k) * kLog2Pi;
  return out;
}

Eigen::VectorXd compose_precision_gradient(
    const SymmetricBandedMatrix& q_bar,
    const std::function<SymmetricBandedMatrix(const Eigen::VectorXd&)>& assemble,
    const Eigen::VectorXd& theta, double fd_eps) {
  if (fd_eps <= 0.0) throw NonPositiveParam("fd_eps");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(theta.size());
  for (Index j = 0; j < theta.size(); ++j) {
    Eigen::VectorXd lo = theta, hi = theta;
    hi(j) += fd_eps;
    lo(j) -= fd_eps;
    const SymmetricBandedMatrix q_hi = assemble(hi), q_lo = assemble(lo);
    if (q_hi.n() != q_bar.n() || q_hi.bandwidth() != q_bar.bandwidth() ||
        q_lo.n() != q_bar.n() || q_lo.bandwidth() != q_bar.bandwidth())
      throw MalformedInput("compose_precision_gradient: band changes with theta");
    out(j) = (q_bar.lower_store().storage().array() *
              (q_hi.lower_store().storage() - q_lo.lower_store().storage()).array())
                 .sum() /
             (2.0 * fd_eps);
  }
  return out;
}

HmcResult hmc_sample(const HmcConfig& cfg, const TargetGrad& target, const Eigen::VectorXd& x0) {
  if (cfg.step <= 0.0) throw NonPositiveParam("step");
  if (cfg.leapfrog < 1) throw NonPositiveParam("leapfrog");
  if (cfg.iters < 1) throw NonPositiveParam("iters");
  if (cfg.burn_in < 0 || cfg.burn_in > cfg.iters)
    throw MalformedInput("hmc_sample: burn_in must lie in [0, iters]");

  const Index dim = x0.size();
  auto [logp, grad] = target(x0);
  if (!std::isfinite(logp) || !grad.allFinite()) throw NonFiniteEnergy();

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;

  Eigen::VectorXd cur = x0;
  HmcResult out;
  out.samples.resize(cfg.iters - cfg.burn_in, dim);
  out.energy_errors.resize(cfg.iters);
  Index accepted = 0;
  for (Index it = 0; it < cfg.iters; ++it) {
    Eigen::VectorXd mom(dim);
    for (Index i = 0; i < dim; ++i) mom(i) = normal(rng);
    const double h0 = -logp + 0.5 * mom.squaredNorm();

    Eigen::VectorXd x = cur, g = grad;
    double lp = logp;
    bool diverged = false;
    mom += 0.5 * cfg.step * g;
    for (Index l = 0; l < cfg.leapfrog; ++l) {
      x += cfg.step * mom;
      auto [lp_new, g_new] = target(x);
      if (!std::isfinite(lp_new) || !g_new.allFinite()) {
        diverged = true;
        break;
      }
      lp = lp_new;
      g = g_new;
      mom += (l + 1 < cfg.leapfrog ? cfg.step : 0.5 * cfg.step) * g;
    }
    const double h1 = -lp + 0.5 * mom.squaredNorm();
    const double dh = h1 - h0;
    out.energy_errors(it) =
        diverged ? std::numeric_limits<double>::infinity() : std::abs(dh);
    if (!diverged && uniform(rng) < std::exp(-dh)) {
      cur = x;
      logp = lp;
      grad = g;
      ++accepted;
    }
    if (it >= cfg.burn_in) out.samples.row(it - cfg.burn_in) = cur;
  }
  out.accept_rate = static_cast<double>(accepted) / static_cast<double>(cfg.iters);
  return out;
}

FitResult fit_mle(const TargetGrad& objective, Eigen::VectorXd x0, const FitConfig& cfg) {
  auto [value, grad] = objective(x0);
  if (!std::isfinite(value) || !grad.allFinite()) throw NonFiniteObjective("fit_mle");

  const Index dim = x0.size();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(dim);
  const double beta1 = 0.9, beta2 = 0.999, jitter = 1e-8;

  FitResult out;
  out.x = x0;
  out.value = value;
  out.trace.push_back(value);
  Eigen::VectorXd cur = std::move(x0);
  for (Index it = 1; it <= cfg.max_iters; ++it) {
    out.iters = it;
    if (grad.cwiseAbs().maxCoeff() < cfg.grad_tol) {
      out.converged = true;
      break;
    }
    m1 = beta1 * m1 + (1.0 - beta1) * grad;
    m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(it));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(it));
    const Eigen::VectorXd dir =
        (m1 / c1).array() / ((m2 / c2).array().sqrt() + jitter);

    const auto backtrack = [&](const Eigen::VectorXd& d) {
      double step = cfg.step0;
      for (int tries = 0; tries < 60; ++tries) {
        const Eigen::VectorXd cand = cur + step * d;
        auto [cand_value, cand_grad] = objective(cand);
        if (std::isfinite(cand_value) && cand_grad.allFinite() && cand_value > value) {
          cur = cand;
          value = cand_value;
          grad = cand_grad;
          return true;
        }
        step *= 0.5;
      }
      return false;
    };
    bool moved = backtrack(dir);
    // Stale momentum can stop being an ascent direction; the raw gradient
    // always is, so fall back to it before giving up.
    if (!moved) moved = backtrack(grad / std::max(1.0, grad.norm()));
    if (!moved) break;
    out.trace.push_back(value);
    if (value > out.value) {
      out.value = value;
      out.x = cur;
    }
  }
  return out;
}

VariationalFit fit_vi(const GaussianPrior& p, const Likelihood& lik,
                      const models::SelectionIndex& sel, const Eigen::VectorXd& y,
                      const FitConfig& cfg, Index quad_points) {
  const Index big = p.l_p.n(), bw = p.l_p.lower();

  // Parameter layout: the mean, then the in-band factor cells column by
  // column with diagonal cells passed through softplus.
  std::vector<std::pair<Index, Index>> cells;
  for (Index j = 0; j < big; ++j)
    for (Index i = j; i <= std::min(big - 1, j + bw); ++i) cells.push_back({i, j});
  const Index n_cells = static_cast<Index>(cells.size());

  const auto unpack = [&](const Eigen::VectorXd& x) {
    VariationalState q;
    q.m_q = x.head(big);
    q.l_q = BandedMatrix(big, bw, 0);
    for (Index c = 0; c < n_cells; ++c) {
      const auto [i, j] = cells[static_cast<std::size_t>(c)];
      const double raw = x(big + c);
      q.l_q(i, j) = i == j ? softplus(raw) : raw;
    }
    return q;
  };

  const auto objective = [&](const Eigen::VectorXd& x) {
    const VariationalState q = unpack(x);
    tape::Tape t;
    const tape::NodeRef mn = t.leaf("m", q.m_q);
    const tape::NodeRef ln = t.leaf("l", q.l_q);
    const tape::NodeRef obj = elbo(t, mn, ln, p, lik, sel, y, quad_points);
    const double value = t.scalar(obj);
    auto grads = t.backward(obj);
    const auto& gl = std::get<BandedMatrix>(grads.at("l"));
    Eigen::VectorXd gx(big + n_cells);
    gx.head(big) = std::get<Eigen::VectorXd>(grads.at("m"));
    for (Index c = 0; c < n_cells; ++c) {
      const auto [i, j] = cells[static_cast<std::size_t>(c)];
      gx(big + c) = i == j ? gl(i, j) * sigmoid(x(big + c)) : gl(i, j);
    }
    return std::make_pair(value, gx);
  };

  Eigen::VectorXd x0(big + n_cells);
  x0.head(big) = p.m_p;
  for (Index c = 0; c < n_cells; ++c) {
    const auto [i, j] = cells[static_cast<std::size_t>(c)];
    x0(big + c) = i == j ? softplus_inv(p.l_p(i, j)) : p.l_p(i, j);
  }

  const FitResult fit = fit_mle(objective, std::move(x0), cfg);
  VariationalFit out;
  out.state = unpack(fit.x);
  out.elbo = fit.value;
  out.trace = fit.trace;
  return out;
}

}  // namespace bandgm::infer
