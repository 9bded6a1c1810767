// Command-line harness over the banded-Gaussian library: gradient
// verification, scaling benchmarks, hyperparameter fitting, variational and
// HMC inference on graphs, and cross-route likelihood comparison.  Every
// command is deterministic given --seed and emits one JSON document with the
// fields {command, seed, params, results, timings, version}.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bandgm/gradcheck.hpp"
#include "bandgm/inference.hpp"
#include "bandgm/kernels.hpp"
#include "bandgm/models.hpp"

using namespace bandgm;
using nlohmann::json;
using Index = Eigen::Index;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr Index kDenseCap = 3000;

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

template <class F>
double median_ms(F&& f, int reps) {
  f();  // warm-up, discarded
  std::vector<double> t;
  t.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const Stopwatch sw;
    f();
    t.push_back(sw.ms());
  }
  std::nth_element(t.begin(), t.begin() + t.size() / 2, t.end());
  return t[t.size() / 2];
}

json base_doc(const std::string& command, std::uint64_t seed) {
  return json{{"command", command},       {"seed", seed},
              {"params", json::object()}, {"results", json::object()},
              {"timings", json::object()}, {"version", kVersion}};
}

void emit(const json& doc, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << doc.dump(2) << "\n";
    return;
  }
  std::ofstream f(out_path);
  if (!f) throw MalformedInput("cannot open output path " + out_path);
  f << doc.dump(2) << "\n";
}

models::StateSpaceModel build_ssm(const std::string& kernel, const Eigen::VectorXd& times,
                                  double variance, double lengthscale) {
  if (kernel == "matern12") return models::matern12_ssm(times, variance, lengthscale);
  if (kernel == "matern32") return models::matern32_ssm(times, variance, lengthscale);
  throw MalformedInput("unknown kernel " + kernel);
}

double kernel_value(const std::string& kernel, double r, double variance, double lengthscale) {
  if (kernel == "matern12") return variance * std::exp(-r / lengthscale);
  const double s = std::sqrt(3.0) / lengthscale;
  return variance * (1.0 + s * r) * std::exp(-s * r);
}

// Joint coordinates carrying the latent function value at blocks 1..T.
models::SelectionIndex first_coord_selection(const models::StateSpaceModel& ssm) {
  std::vector<Index> obs;
  for (Index t = 1; t <= ssm.steps(); ++t) obs.push_back(t * ssm.d);
  return models::SelectionIndex::from_nodes(ssm.joint_dim(), std::move(obs));
}

// Marginal-likelihood objective over (log variance, log lengthscale,
// log noise); the hyperparameter gradient chains the tape's precision and
// noise adjoints through the model assembly.
infer::TargetGrad marginal_objective(const std::string& kernel, const Eigen::VectorXd& times,
                                     const Eigen::VectorXd& y) {
  const auto assemble = [kernel, times](const Eigen::VectorXd& th) {
    return models::prior_natural_params(
               build_ssm(kernel, times, std::exp(th(0)), std::exp(th(1))))
        .lambda;
  };
  const auto sel = first_coord_selection(build_ssm(kernel, times, 1.0, 1.0));
  return [assemble, sel, y](const Eigen::VectorXd& th) {
    tape::Tape t;
    const auto qn = t.leaf("q", assemble(th));
    const auto taun = t.leaf("tau2", std::exp(th(2)));
    const auto node = infer::marginal_likelihood_partial(t, qn, sel, y, taun);
    const double value = t.scalar(node);
    auto grads = t.backward(node);
    Eigen::VectorXd g = infer::compose_precision_gradient(
        std::get<SymmetricBandedMatrix>(grads.at("q")), assemble, th);
    g(2) += std::get<double>(grads.at("tau2")) * std::exp(th(2));
    return std::make_pair(value, g);
  };
}

struct CountsFile {
  std::vector<Index> nodes;
  Eigen::VectorXd counts;
};

// Lines `i count`; `#` starts a comment.
CountsFile read_counts_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open counts file " + path);
  CountsFile out;
  std::vector<double> counts;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    long node = 0;
    double count = 0.0;
    if (!(row >> node)) continue;
    if (!(row >> count) || node < 0)
      throw MalformedInput("counts file line: " + line);
    out.nodes.push_back(node);
    counts.push_back(count);
  }
  out.counts = Eigen::Map<Eigen::VectorXd>(counts.data(), static_cast<Index>(counts.size()));
  return out;
}

// A graph model reordered for bandwidth, with observations mapped into the
// new labels and sorted.
struct GraphModel {
  models::GraphSpec ordered;
  std::vector<Index> perm;      // perm[new] = old
  std::vector<Index> inv_perm;  // inv_perm[old] = new
  SymmetricBandedMatrix precision;
  Eigen::VectorXd weights_new;  // exposure per new label
  models::SelectionIndex sel;   // observed new labels
  Eigen::VectorXd counts;       // aligned with sel.observed
};

GraphModel build_graph_model(const std::string& graph_path, const std::string& counts_path,
                             double variance, double lengthscale, models::GraphForm form) {
  models::GraphData gd = models::read_graph_file(graph_path);
  if (!counts_path.empty()) {
    const CountsFile cf = read_counts_file(counts_path);
    gd.observed_nodes = cf.nodes;
    gd.counts = cf.counts;
  }
  if (gd.observed_nodes.empty()) throw MalformedInput("no observed counts supplied");

  GraphModel m;
  m.perm = models::rcm_ordering(gd.graph);
  m.inv_perm = models::inverse_permutation(m.perm);
  m.ordered = models::apply_ordering(gd.graph, m.perm);
  m.precision = models::graph_precision(m.ordered, variance, lengthscale, form);

  const Eigen::VectorXd weights_old = models::auto_weights(gd.graph);
  m.weights_new.resize(weights_old.size());
  for (Index k = 0; k < weights_old.size(); ++k)
    m.weights_new(k) = weights_old(m.perm[static_cast<std::size_t>(k)]);

  std::vector<std::pair<Index, double>> obs;
  for (std::size_t i = 0; i < gd.observed_nodes.size(); ++i) {
    const Index old = gd.observed_nodes[i];
    if (old < 0 || old >= gd.graph.num_nodes) throw IndexOutOfRange(old);
    obs.push_back({m.inv_perm[static_cast<std::size_t>(old)], gd.counts(static_cast<Index>(i))});
  }
  std::sort(obs.begin(), obs.end());
  std::vector<Index> nodes;
  m.counts.resize(static_cast<Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) {
    nodes.push_back(obs[i].first);
    m.counts(static_cast<Index>(i)) = obs[i].second;
  }
  m.sel = models::SelectionIndex::from_nodes(gd.graph.num_nodes, std::move(nodes));
  return m;
}

double log_poisson(double y, double rate) {
  if (rate <= 0.0) return y == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return y * std::log(rate) - rate - std::lgamma(y + 1.0);
}

// log E_q p(y | F) under F ~ N(m, v) with rate w exp(F), by quadrature.
double predictive_log_poisson(double y, double m, double v, double w,
                              const infer::GaussHermite& gh) {
  double best = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd terms(gh.x.size());
  for (Index k = 0; k < gh.x.size(); ++k) {
    const double f = m + std::sqrt(2.0 * v) * gh.x(k);
    terms(k) = std::log(gh.w(k)) + log_poisson(y, w * std::exp(f));
    best = std::max(best, terms(k));
  }
  if (!std::isfinite(best)) return best;
  return best + std::log((terms.array() - best).exp().sum()) - 0.5 * std::log(M_PI);
}

// --- subcommand bodies ------------------------------------------------------

int cmd_check_grads(const std::string& filter, std::uint64_t seed, int reps, double eps,
                    double tol, const std::string& out_path) {
  const Stopwatch sw;
  json doc = base_doc("check-grads", seed);
  doc["params"] = {{"filter", filter}, {"reps", reps}, {"eps", eps}, {"tol", tol}};
  bool all_pass = true;
  json ops = json::array();
  for (const auto& name : gradcheck::op_names()) {
    if (!filter.empty() && name.find(filter) == std::string::npos) continue;
    std::mt19937_64 rng(seed ^ std::hash<std::string>{}(name));
    double worst = 0.0;
    for (int k = 0; k < reps; ++k)
      worst = std::max(worst, gradcheck::check_op(name, rng, eps).max_rel_err);
    const bool pass = worst < tol;
    all_pass = all_pass && pass;
    ops.push_back({{"op", name}, {"instances", reps}, {"max_rel_err", worst}, {"pass", pass}});
  }
  if (ops.empty()) throw MalformedInput("filter matches no op: " + filter);
  doc["results"] = {{"ops", ops}, {"all_pass", all_pass}};
  doc["timings"] = {{"total_ms", sw.ms()}};
  emit(doc, out_path);
  return all_pass ? 0 : 1;
}

int cmd_bench(const std::string& mode, const std::vector<long>& sizes, int reps,
              const std::string& backend, long fixed_n, std::uint64_t seed,
              const std::string& csv_path, const std::string& out_path) {
  const Stopwatch sw;
  json doc = base_doc("bench", seed);
  doc["params"] = {{"mode", mode},          {"sizes", sizes}, {"reps", reps},
                   {"backend", backend},    {"fixed_n", fixed_n}};
  json rows = json::array();
  std::ostringstream csv;
  csv << "size,backend,median_ms\n";

  for (const long size : sizes) {
    // One model per cell, deterministic in (seed, size); built outside the
    // timed region.
    std::mt19937_64 rng(seed ^ static_cast<std::uint64_t>(size));
    std::normal_distribution<double> nd;
    const Index n = mode == "scale-n" ? size : fixed_n;
    if (n < 1 || (mode == "scale-bandwidth" && size < 1))
      throw MalformedInput("sizes must be positive");
    Eigen::VectorXd times(n);
    for (Index i = 0; i < n; ++i) times(i) = 0.1 * static_cast<double>(i + 1);
    Eigen::VectorXd y(n);
    for (Index i = 0; i < n; ++i) y(i) = nd(rng);

    models::StateSpaceModel ssm = [&] {
      if (mode == "scale-n") return models::matern12_ssm(times, 1.2, 0.9);
      if (mode != "scale-bandwidth") throw MalformedInput("unknown mode " + mode);
      std::vector<models::StateSpaceModel> parts;
      for (long c = 0; c < size; ++c)
        parts.push_back(models::matern32_ssm(times, 1.0 + 0.1 * c, 0.5 + 0.2 * c));
      return models::ssm_stack(parts);
    }();

    double ms = 0.0;
    if (backend == "banded") {
      const SymmetricBandedMatrix q = models::prior_natural_params(ssm).lambda;
      const auto sel = first_coord_selection(ssm);
      ms = median_ms(
          [&] {
            tape::Tape t;
            const auto node = infer::marginal_likelihood_partial(
                t, t.leaf("q", q), sel, y, t.leaf("tau2", 0.25));
            volatile double v = t.scalar(node);
            (void)v;
            t.backward(node);
          },
          reps);
    } else if (backend == "kalman") {
      ssm.r(0, 0) = 0.25;
      ms = median_ms([&] { volatile double v = infer::kalman_loglik(ssm, y); (void)v; }, reps);
    } else if (backend == "dense") {
      if (n > kDenseCap) throw BackendUnavailableAtSize("dense", kDenseCap);
      Eigen::MatrixXd k(n, n);
      for (Index s = 0; s < n; ++s)
        for (Index t = 0; t < n; ++t) {
          const double r = std::abs(times(s) - times(t));
          k(s, t) = mode == "scale-n" ? kernel_value("matern12", r, 1.2, 0.9) : [&] {
            double acc = 0.0;
            for (long c = 0; c < size; ++c)
              acc += kernel_value("matern32", r, 1.0 + 0.1 * c, 0.5 + 0.2 * c);
            return acc;
          }();
        }
      ms = median_ms([&] { volatile double v = infer::dense_gpr_loglik(k, y, 0.25); (void)v; },
                     reps);
    } else {
      throw MalformedInput("unknown backend " + backend);
    }
    const long bandwidth =
        mode == "scale-n" ? 1 : 4 * size - 1;
    rows.push_back({{"size", size},
                    {"n", n},
                    {"bandwidth", bandwidth},
                    {"backend", backend},
                    {"median_ms", ms},
                    {"reps", reps}});
    csv << size << "," << backend << "," << ms << "\n";
  }
  doc["results"] = {{"rows", rows}};
  doc["timings"] = {{"total_ms", sw.ms()}};
  if (!csv_path.empty()) {
    std::ofstream f(csv_path);
    if (!f) throw MalformedInput("cannot open csv path " + csv_path);
    f << csv.str();
  }
  emit(doc, out_path);
  return 0;
}

int cmd_fit_gpr(const std::string& data_path, const std::string& kernel, double init_variance,
                double init_lengthscale, double init_noise, long max_iters, double grad_tol,
                std::uint64_t seed, const std::string& out_path) {
  const Stopwatch sw;
  json doc = base_doc("fit-gpr", seed);
  doc["params"] = {{"data", data_path},
                   {"kernel", kernel},
                   {"init_variance", init_variance},
                   {"init_lengthscale", init_lengthscale},
                   {"init_noise", init_noise},
                   {"max_iters", max_iters},
                   {"grad_tol", grad_tol}};
  const models::TimeSeries ts = models::read_time_series_file(data_path);
  const infer::TargetGrad obj = marginal_objective(kernel, ts.times, ts.values);
  Eigen::VectorXd th0(3);
  th0 << std::log(init_variance), std::log(init_lengthscale), std::log(init_noise);
  infer::FitConfig cfg;
  cfg.max_iters = max_iters;
  cfg.grad_tol = grad_tol;
  const infer::FitResult fit = infer::fit_mle(obj, th0, cfg);
  doc["results"] = {{"variance", std::exp(fit.x(0))},
                    {"lengthscale", std::exp(fit.x(1))},
                    {"noise", std::exp(fit.x(2))},
                    {"loglik", fit.value},
                    {"iters", fit.iters},
                    {"converged", fit.converged},
                    {"points", ts.times.size()}};
  doc["timings"] = {{"total_ms", sw.ms()}};
  emit(doc, out_path);
  return 0;
}

int cmd_fit_vi(const std::string& graph_path, const std::string& counts_path,
               const std::string& test_counts_path, double variance, double lengthscale,
               const std::string& form_name, long max_iters, long quad_points,
               std::uint64_t seed, const std::string& out_path) {
  const Stopwatch sw;
  json doc = base_doc("fit-vi", seed);
  doc["params"] = {{"graph", graph_path},   {"counts", counts_path},
                   {"test_counts", test_counts_path}, {"variance", variance},
                   {"lengthscale", lengthscale},      {"form", form_name},
                   {"max_iters", max_iters}, {"quad_points", quad_points}};
  const models::GraphForm form =
      form_name == "as-printed" ? models::GraphForm::as_printed : models::GraphForm::corrected;

  GraphModel gm;
  infer::GaussianPrior prior;
  try {
    gm = build_graph_model(graph_path, counts_path, variance, lengthscale, form);
    prior = infer::make_prior(Eigen::VectorXd::Zero(gm.precision.n()), gm.precision);
  } catch (const NotPositiveDefinite& e) {
    doc["results"] = {{"error", std::string(e.what()) +
                                    "; the as-printed form loses definiteness, rerun with "
                                    "--form corrected"}};
    emit(doc, out_path);
    return 1;
  }

  infer::PoissonLik lik;
  lik.weight = models::gather(gm.sel, gm.weights_new);
  infer::FitConfig cfg;
  cfg.max_iters = max_iters;
  const infer::VariationalFit fit =
      infer::fit_vi(prior, lik, gm.sel, gm.counts, cfg, quad_points);
  const SymmetricBandedMatrix marg = ops::sparse_inverse_subset(fit.state.l_q);

  // Independent per-node rate baseline: count / exposure, with the global
  // rate as fallback for nodes never observed in training.
  const Index num_nodes = gm.precision.n();
  Eigen::VectorXd base_rate = Eigen::VectorXd::Constant(num_nodes, -1.0);
  double total_count = 0.0, total_weight = 0.0;
  for (Index i = 0; i < gm.sel.count(); ++i) {
    const Index at = gm.sel.observed[static_cast<std::size_t>(i)];
    base_rate(at) = gm.counts(i) / gm.weights_new(at);
    total_count += gm.counts(i);
    total_weight += gm.weights_new(at);
  }
  const double global_rate = total_count / total_weight;
  for (Index i = 0; i < num_nodes; ++i)
    if (base_rate(i) < 0.0) base_rate(i) = global_rate;

  json nodes = json::array();
  for (Index old = 0; old < num_nodes; ++old) {
    const Index at = gm.inv_perm[static_cast<std::size_t>(old)];
    nodes.push_back({{"node", old},
                     {"mean", fit.state.m_q(at)},
                     {"var", marg(at, at)},
                     {"baseline_rate", base_rate(at)}});
  }
  doc["results"] = {{"elbo", fit.elbo},
                    {"elbo_start", fit.trace.front()},
                    {"accepted_steps", fit.trace.size() - 1},
                    {"nodes", nodes}};

  if (!test_counts_path.empty()) {
    const CountsFile test = read_counts_file(test_counts_path);
    const infer::GaussHermite gh = infer::gauss_hermite(quad_points);
    double ll_vi = 0.0, ll_base = 0.0;
    for (std::size_t i = 0; i < test.nodes.size(); ++i) {
      const Index old = test.nodes[i];
      if (old < 0 || old >= num_nodes) throw IndexOutOfRange(old);
      const Index at = gm.inv_perm[static_cast<std::size_t>(old)];
      const double y = test.counts(static_cast<Index>(i));
      ll_vi += predictive_log_poisson(y, fit.state.m_q(at), marg(at, at), gm.weights_new(at), gh);
      ll_base += log_poisson(y, base_rate(at) * gm.weights_new(at));
    }
    doc["results"]["test_loglik"] = {{"vi", ll_vi}, {"baseline", ll_base}};
  }
  doc["timings"] = {{"total_ms", sw.ms()}};
  emit(doc, out_path);
  return 0;
}

int cmd_sample_hmc(const std::string& data_path, const std::string& graph_path,
                   const std::string& counts_path, const std::string& kernel, double variance,
                   double lengthscale, double noise, const infer::HmcConfig& cfg,
                   long quad_points, const std::string& out_path) {
  const Stopwatch sw;
  json doc = base_doc("sample-hmc", cfg.seed);
  doc["params"] = {{"data", data_path},   {"graph", graph_path},
                   {"counts", counts_path}, {"kernel", kernel},
                   {"variance", variance}, {"lengthscale", lengthscale},
                   {"noise", noise},       {"step", cfg.step},
                   {"leapfrog", cfg.leapfrog}, {"iters", cfg.iters},
                   {"burn_in", cfg.burn_in}, {"quad_points", quad_points}};
  (void)quad_points;

  infer::ThetaMap map;
  models::SelectionIndex sel;
  Eigen::VectorXd y;
  std::vector<Index> report_ids;  // original labels, aligned with report rows
  std::vector<Index> report_coords;
  if (!graph_path.empty()) {
    const models::GraphForm form = models::GraphForm::corrected;
    const GraphModel gm = build_graph_model(graph_path, counts_path, variance, lengthscale, form);
    sel = gm.sel;
    y = gm.counts;
    const SymmetricBandedMatrix q = gm.precision;
    infer::PoissonLik lik;
    lik.weight = models::gather(gm.sel, gm.weights_new);
    map.precision = [q](const Eigen::VectorXd&) { return q; };
    map.likelihood = [lik](const Eigen::VectorXd&) { return infer::Likelihood(lik); };
    for (Index old = 0; old < q.n(); ++old) {
      report_ids.push_back(old);
      report_coords.push_back(gm.inv_perm[static_cast<std::size_t>(old)]);
    }
  } else {
    const models::TimeSeries ts = models::read_time_series_file(data_path);
    const models::StateSpaceModel ssm = build_ssm(kernel, ts.times, variance, lengthscale);
    const SymmetricBandedMatrix q = models::prior_natural_params(ssm).lambda;
    sel = first_coord_selection(ssm);
    y = ts.values;
    map.precision = [q](const Eigen::VectorXd&) { return q; };
    map.likelihood = [noise](const Eigen::VectorXd&) {
      return infer::Likelihood(infer::GaussianLik{noise});
    };
    for (Index t = 0; t < ssm.steps(); ++t) {
      report_ids.push_back(t);
      report_coords.push_back((t + 1) * ssm.d);
    }
  }

  const SymmetricBandedMatrix q0 = map.precision(Eigen::VectorXd());
  const infer::TargetGrad target = [&](const Eigen::VectorXd& v) {
    const infer::LogJoint lj = infer::hmc_log_joint(map, sel, y, v, Eigen::VectorXd());
    return std::make_pair(lj.value, lj.grad_v);
  };
  const infer::HmcResult r =
      infer::hmc_sample(cfg, target, Eigen::VectorXd::Zero(q0.n()));

  // Un-whiten each kept draw to the latent function scale.
  const BandedMatrix l = ops::cholesky(q0);
  Eigen::MatrixXd f(r.samples.rows(), q0.n());
  for (Index s = 0; s < r.samples.rows(); ++s)
    f.row(s) = ops::solve_vec(l, r.samples.row(s).transpose(), true).transpose();

  json nodes = json::array();
  for (std::size_t i = 0; i < report_ids.size(); ++i) {
    const auto col = f.col(report_coords[i]);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() /
                                std::max<double>(1.0, static_cast<double>(col.size() - 1)));
    nodes.push_back({{"node", report_ids[i]}, {"mean", mean}, {"sd", sd}});
  }
  doc["results"] = {{"accept_rate", r.accept_rate},
                    {"kept_samples", r.samples.rows()},
                    {"mean_abs_energy_error", r.energy_errors.mean()},
                    {"nodes", nodes}};
  doc["timings"] = {{"total_ms", sw.ms()}};
  emit(doc, out_path);
  return r.accept_rate > 0.0 ? 0 : 1;
}

int cmd_kalman_compare(const std::string& data_path, const std::string& kernel, double variance,
                       double lengthscale, double noise, std::uint64_t seed,
                       const std::string& out_path) {
  const Stopwatch sw;
  json doc = base_doc("kalman-compare", seed);
  doc["params"] = {{"data", data_path},
                   {"kernel", kernel},
                   {"variance", variance},
                   {"lengthscale", lengthscale},
                   {"noise", noise}};
  const models::TimeSeries ts = models::read_time_series_file(data_path);
  const Index n = ts.times.size();
  models::StateSpaceModel ssm = build_ssm(kernel, ts.times, variance, lengthscale);
  ssm.r(0, 0) = noise;
  Eigen::MatrixXd y(n, 1);
  y.col(0) = ts.values;

  const double banded = infer::gpr_banded_loglik(ssm, y);
  const double kalman = infer::kalman_loglik(ssm, y);
  double worst = std::abs(banded - kalman);
  json results = {{"banded", banded}, {"kalman", kalman}, {"dense_skipped", n > kDenseCap}};
  if (n <= kDenseCap) {
    Eigen::MatrixXd k(n, n);
    for (Index s = 0; s < n; ++s)
      for (Index t = 0; t < n; ++t)
        k(s, t) = kernel_value(kernel, std::abs(ts.times(s) - ts.times(t)), variance,
                               lengthscale);
    const double dense = infer::dense_gpr_loglik(k, ts.values, noise);
    results["dense"] = dense;
    worst = std::max({worst, std::abs(banded - dense), std::abs(kalman - dense)});
  } else {
    results["notice"] = "dense route skipped above " + std::to_string(kDenseCap) + " points";
  }
  const bool agree = worst < 1e-6;
  results["max_abs_diff"] = worst;
  results["agree"] = agree;
  doc["results"] = results;
  doc["timings"] = {{"total_ms", sw.ms()}};
  emit(doc, out_path);
  return agree ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Banded Gaussian models: verification, benchmarks, and inference"};
  app.set_config("--config", "", "key=value configuration file; command-line flags win");
  app.require_subcommand(1);
  app.fallthrough();

  std::string out_path;
  app.add_option("--out", out_path, "write the JSON document here instead of stdout")
      ->configurable(true);

  // check-grads
  auto* cg = app.add_subcommand("check-grads", "finite-difference validation of every adjoint");
  std::string cg_filter;
  std::uint64_t cg_seed = 0;
  int cg_reps = 50;
  double cg_eps = 1e-5, cg_tol = 1e-5;
  cg->add_option("--filter", cg_filter, "run only ops whose name contains this substring");
  cg->add_option("--seed", cg_seed, "rng seed");
  cg->add_option("--reps", cg_reps, "instances per op")->check(CLI::PositiveNumber);
  cg->add_option("--eps", cg_eps, "finite-difference step")->check(CLI::PositiveNumber);
  cg->add_option("--tol", cg_tol, "pass threshold on relative error")
      ->check(CLI::PositiveNumber);

  // bench
  auto* bn = app.add_subcommand("bench", "time objective+gradient across backends and sizes");
  std::string bn_mode = "scale-n", bn_backend = "banded", bn_csv;
  std::vector<long> bn_sizes;
  int bn_reps = 5;
  long bn_fixed_n = 2000;
  std::uint64_t bn_seed = 0;
  bn->add_option("--mode", bn_mode, "scale-n or scale-bandwidth")
      ->check(CLI::IsMember({"scale-n", "scale-bandwidth"}));
  bn->add_option("--sizes", bn_sizes,
                 "point counts (scale-n) or stacked component counts (scale-bandwidth)")
      ->required()
      ->delimiter(',');
  bn->add_option("--reps", bn_reps, "timed repetitions per cell")->check(CLI::PositiveNumber);
  bn->add_option("--backend", bn_backend, "banded, kalman, or dense")
      ->check(CLI::IsMember({"banded", "kalman", "dense"}));
  bn->add_option("--fixed-n", bn_fixed_n, "point count used by scale-bandwidth")
      ->check(CLI::PositiveNumber);
  bn->add_option("--seed", bn_seed, "rng seed for synthetic data");
  bn->add_option("--csv", bn_csv, "also write size,backend,median_ms rows to this path");

  // fit-gpr
  auto* fg = app.add_subcommand("fit-gpr", "maximum-likelihood kernel hyperparameters");
  std::string fg_data, fg_kernel = "matern12";
  double fg_var = 1.0, fg_len = 1.0, fg_noise = 0.1, fg_tol = 1e-5;
  long fg_iters = 1000;
  std::uint64_t fg_seed = 0;
  fg->add_option("--data", fg_data, "CSV file of t,y rows")->required();
  fg->add_option("--kernel", fg_kernel, "matern12 or matern32")
      ->check(CLI::IsMember({"matern12", "matern32"}));
  fg->add_option("--init-variance", fg_var, "starting kernel variance")
      ->check(CLI::PositiveNumber);
  fg->add_option("--init-lengthscale", fg_len, "starting lengthscale")
      ->check(CLI::PositiveNumber);
  fg->add_option("--init-noise", fg_noise, "starting observation noise variance")
      ->check(CLI::PositiveNumber);
  fg->add_option("--max-iters", fg_iters, "optimizer iteration cap")->check(CLI::PositiveNumber);
  fg->add_option("--grad-tol", fg_tol, "gradient sup-norm stop")->check(CLI::PositiveNumber);
  fg->add_option("--seed", fg_seed, "reported seed (the fit itself is deterministic)");

  // fit-vi
  auto* fv = app.add_subcommand("fit-vi", "variational Poisson inference on a graph");
  std::string fv_graph, fv_counts, fv_test, fv_form = "corrected";
  double fv_var = 1.0, fv_len = 1.0;
  long fv_iters = 10000, fv_quad = 20;
  std::uint64_t fv_seed = 0;
  fv->add_option("--graph", fv_graph, "edge-list file: i j length, optional node i count lines")
      ->required();
  fv->add_option("--counts", fv_counts, "observation file of i count lines (overrides node lines)");
  fv->add_option("--test-counts", fv_test, "held-out i count lines for test log-likelihood");
  fv->add_option("--variance", fv_var, "kernel variance")->check(CLI::PositiveNumber);
  fv->add_option("--lengthscale", fv_len, "kernel lengthscale")->check(CLI::PositiveNumber);
  fv->add_option("--form", fv_form, "corrected or as-printed precision assembly")
      ->check(CLI::IsMember({"corrected", "as-printed"}));
  fv->add_option("--max-iters", fv_iters, "optimizer iteration cap")->check(CLI::PositiveNumber);
  fv->add_option("--quad-points", fv_quad, "Gauss-Hermite nodes")->check(CLI::PositiveNumber);
  fv->add_option("--seed", fv_seed, "reported seed (the fit itself is deterministic)");

  // sample-hmc
  auto* sh = app.add_subcommand("sample-hmc", "whitened HMC over the latent field");
  std::string sh_data, sh_graph, sh_counts, sh_kernel = "matern12";
  double sh_var = 1.0, sh_len = 1.0, sh_noise = 0.1;
  infer::HmcConfig sh_cfg;
  long sh_quad = 20;
  sh->add_option("--data", sh_data, "CSV t,y rows (Gaussian observation model)");
  sh->add_option("--graph", sh_graph, "edge-list file (Poisson observation model)");
  sh->add_option("--counts", sh_counts, "observation file for --graph runs");
  sh->add_option("--kernel", sh_kernel, "matern12 or matern32 for --data runs")
      ->check(CLI::IsMember({"matern12", "matern32"}));
  sh->add_option("--variance", sh_var, "kernel variance")->check(CLI::PositiveNumber);
  sh->add_option("--lengthscale", sh_len, "kernel lengthscale")->check(CLI::PositiveNumber);
  sh->add_option("--noise", sh_noise, "observation noise variance for --data runs")
      ->check(CLI::PositiveNumber);
  sh->add_option("--step", sh_cfg.step, "leapfrog step size")->check(CLI::PositiveNumber);
  sh->add_option("--leapfrog", sh_cfg.leapfrog, "leapfrog steps per proposal")
      ->check(CLI::PositiveNumber);
  sh->add_option("--iters", sh_cfg.iters, "total iterations")->check(CLI::PositiveNumber);
  sh->add_option("--burn-in", sh_cfg.burn_in, "discarded initial iterations");
  sh->add_option("--seed", sh_cfg.seed, "chain seed");
  sh->add_option("--quad-points", sh_quad, "Gauss-Hermite nodes (unused, kept for parity)");

  // kalman-compare
  auto* kc = app.add_subcommand("kalman-compare",
                                "banded vs kalman vs dense log-likelihood on one data set");
  std::string kc_data, kc_kernel = "matern12";
  double kc_var = 1.0, kc_len = 1.0, kc_noise = 0.1;
  std::uint64_t kc_seed = 0;
  kc->add_option("--data", kc_data, "CSV file of t,y rows")->required();
  kc->add_option("--kernel", kc_kernel, "matern12 or matern32")
      ->check(CLI::IsMember({"matern12", "matern32"}));
  kc->add_option("--variance", kc_var, "kernel variance")->check(CLI::PositiveNumber);
  kc->add_option("--lengthscale", kc_len, "kernel lengthscale")->check(CLI::PositiveNumber);
  kc->add_option("--noise", kc_noise, "observation noise variance")->check(CLI::PositiveNumber);
  kc->add_option("--seed", kc_seed, "reported seed (the comparison is deterministic)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cg->parsed())
      return cmd_check_grads(cg_filter, cg_seed, cg_reps, cg_eps, cg_tol, out_path);
    if (bn->parsed())
      return cmd_bench(bn_mode, bn_sizes, bn_reps, bn_backend, bn_fixed_n, bn_seed, bn_csv,
                       out_path);
    if (fg->parsed())
      return cmd_fit_gpr(fg_data, fg_kernel, fg_var, fg_len, fg_noise, fg_iters, fg_tol, fg_seed,
                         out_path);
    if (fv->parsed())
      return cmd_fit_vi(fv_graph, fv_counts, fv_test, fv_var, fv_len, fv_form, fv_iters, fv_quad,
                        fv_seed, out_path);
    if (sh->parsed()) {
      if (sh_data.empty() == sh_graph.empty())
        throw MalformedInput("pass exactly one of --data or --graph");
      return cmd_sample_hmc(sh_data, sh_graph, sh_counts, sh_kernel, sh_var, sh_len, sh_noise,
                            sh_cfg, sh_quad, out_path);
    }
    if (kc->parsed())
      return cmd_kalman_compare(kc_data, kc_kernel, kc_var, kc_len, kc_noise, kc_seed, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
