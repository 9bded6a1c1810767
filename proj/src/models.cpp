#include "bandgm/models.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

#include "bandgm/kernels.hpp"

namespace bandgm::models {

namespace {

void check_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw NonPositiveParam(name);
}

void check_times(const Eigen::VectorXd& times) {
  if (times.size() < 1) throw MalformedInput("need at least one time point");
  for (Index i = 1; i < times.size(); ++i)
    if (!(times(i) > times(i - 1))) throw NonIncreasingTimes(i);
}

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, Index which_block) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw SingularBlock(which_block);
  return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

// Adds the lower triangle of a symmetric d x d block at block position (t, t).
void add_diag_block(SymmetricBandedMatrix& lam, Index t, Index d, const Eigen::MatrixXd& m) {
  BandedMatrix& store = lam.lower_store();
  for (Index bj = 0; bj < d; ++bj)
    for (Index bi = bj; bi < d; ++bi) store(t * d + bi, t * d + bj) += m(bi, bj);
}

// Adds a full d x d block at block position (t, t - 1); every cell of it is
// strictly below the diagonal.
void add_sub_block(SymmetricBandedMatrix& lam, Index t, Index d, const Eigen::MatrixXd& m) {
  BandedMatrix& store = lam.lower_store();
  for (Index bj = 0; bj < d; ++bj)
    for (Index bi = 0; bi < d; ++bi) store(t * d + bi, (t - 1) * d + bj) += m(bi, bj);
}

void validate_graph(const GraphSpec& g) {
  if (g.num_nodes <= 0) throw MalformedInput("graph needs at least one node");
  for (const auto& e : g.edges) {
    if (e.i < 0 || e.i >= g.num_nodes) throw UnknownNode(e.i);
    if (e.j < 0 || e.j >= g.num_nodes) throw UnknownNode(e.j);
    if (e.i == e.j) throw MalformedInput("self-loop at node " + std::to_string(e.i));
    if (!(e.length > 0.0)) throw MalformedInput("edge length must be positive");
  }
}

}  // namespace

StateSpaceModel matern12_ssm(const Eigen::VectorXd& times, double variance, double lengthscale) {
  check_positive(variance, "variance");
  check_positive(lengthscale, "lengthscale");
  check_times(times);
  const Index t_count = times.size();

  StateSpaceModel m;
  m.d = 1;
  m.e = 1;
  m.times = times;
  m.a.assign(t_count, Eigen::MatrixXd::Zero(1, 1));
  m.b.assign(t_count, Eigen::VectorXd::Zero(1));
  m.q.assign(t_count, Eigen::MatrixXd::Constant(1, 1, variance));
  for (Index t = 1; t < t_count; ++t) {
    const double phi = std::exp(-(times(t) - times(t - 1)) / lengthscale);
    m.a[t](0, 0) = phi;
    m.q[t](0, 0) = variance * (1.0 - phi * phi);
  }
  m.h = Eigen::MatrixXd::Ones(1, 1);
  m.c = Eigen::VectorXd::Zero(1);
  m.r = Eigen::MatrixXd::Identity(1, 1);
  m.mu0 = Eigen::VectorXd::Zero(1);
  m.sigma0 = Eigen::MatrixXd::Constant(1, 1, variance);
  return m;
}

StateSpaceModel matern32_ssm(const Eigen::VectorXd& times, double variance, double lengthscale) {
  check_positive(variance, "variance");
  check_positive(lengthscale, "lengthscale");
  check_times(times);
  const Index t_count = times.size();
  const double s = std::sqrt(3.0) / lengthscale;

  Eigen::MatrixXd p_inf = Eigen::MatrixXd::Zero(2, 2);
  p_inf(0, 0) = variance;
  p_inf(1, 1) = s * s * variance;

  StateSpaceModel m;
  m.d = 2;
  m.e = 1;
  m.times = times;
  m.a.assign(t_count, Eigen::MatrixXd::Zero(2, 2));
  m.b.assign(t_count, Eigen::VectorXd::Zero(2));
  m.q.assign(t_count, p_inf);
  for (Index t = 1; t < t_count; ++t) {
    const double dt = times(t) - times(t - 1);
    // The companion drift has a double eigenvalue -s, so its exponential is
    // exp(-s dt) (I + (F + s I) dt) with (F + s I) nilpotent.
    const double decay = std::exp(-s * dt);
    Eigen::MatrixXd a(2, 2);
    a(0, 0) = decay * (1.0 + s * dt);
    a(0, 1) = decay * dt;
    a(1, 0) = -decay * s * s * dt;
    a(1, 1) = decay * (1.0 - s * dt);
    m.a[t] = a;
    m.q[t] = p_inf - a * p_inf * a.transpose();
  }
  m.h = Eigen::MatrixXd::Zero(1, 2);
  m.h(0, 0) = 1.0;
  m.c = Eigen::VectorXd::Zero(1);
  m.r = Eigen::MatrixXd::Identity(1, 1);
  m.mu0 = Eigen::VectorXd::Zero(2);
  m.sigma0 = p_inf;
  return m;
}

StateSpaceModel ssm_stack(const std::vector<StateSpaceModel>& parts) {
  if (parts.empty()) throw MalformedInput("ssm_stack needs at least one model");
  const StateSpaceModel& first = parts.front();
  const Index t_count = first.steps();
  Index d = 0;
  for (const auto& p : parts) {
    if (p.e != first.e) throw DimensionMismatch("stacked models must share observation dimension");
    if (p.steps() != t_count || p.times.size() != first.times.size() ||
        (p.times.array() != first.times.array()).any())
      throw TimeGridMismatch();
    d += p.d;
  }

  StateSpaceModel m;
  m.d = d;
  m.e = first.e;
  m.times = first.times;
  m.a.assign(t_count, Eigen::MatrixXd::Zero(d, d));
  m.b.assign(t_count, Eigen::VectorXd::Zero(d));
  m.q.assign(t_count, Eigen::MatrixXd::Zero(d, d));
  m.h = Eigen::MatrixXd::Zero(first.e, d);
  m.c = first.c;
  m.r = first.r;
  m.mu0 = Eigen::VectorXd::Zero(d);
  m.sigma0 = Eigen::MatrixXd::Zero(d, d);

  Index off = 0;
  for (const auto& p : parts) {
    for (Index t = 0; t < t_count; ++t) {
      m.a[t].block(off, off, p.d, p.d) = p.a[t];
      m.q[t].block(off, off, p.d, p.d) = p.q[t];
      m.b[t].segment(off, p.d) = p.b[t];
    }
    m.h.block(0, off, first.e, p.d) = p.h;
    m.mu0.segment(off, p.d) = p.mu0;
    m.sigma0.block(off, off, p.d, p.d) = p.sigma0;
    off += p.d;
  }
  return m;
}

NaturalParams prior_natural_params(const StateSpaceModel& ssm) {
  const Index d = ssm.d, t_count = ssm.steps(), n = ssm.joint_dim();
  if (d < 1 || t_count < 1) throw MalformedInput("state-space model is empty");

  std::vector<Eigen::MatrixXd> qinv(t_count);
  for (Index t = 0; t < t_count; ++t) qinv[t] = spd_inverse(ssm.q[t], t + 1);
  const Eigen::MatrixXd sigma0_inv = spd_inverse(ssm.sigma0, 0);

  NaturalParams out;
  out.lambda = SymmetricBandedMatrix(n, 2 * d - 1);
  add_diag_block(out.lambda, 0, d, sigma0_inv + ssm.a[0].transpose() * qinv[0] * ssm.a[0]);
  for (Index t = 1; t <= t_count; ++t) {
    Eigen::MatrixXd diag = qinv[t - 1];
    if (t < t_count) diag += ssm.a[t].transpose() * qinv[t] * ssm.a[t];
    add_diag_block(out.lambda, t, d, diag);
    add_sub_block(out.lambda, t, d, -qinv[t - 1] * ssm.a[t - 1]);
  }

  Eigen::VectorXd mean(n);
  mean.segment(0, d) = ssm.mu0;
  for (Index t = 1; t <= t_count; ++t)
    mean.segment(t * d, d) = ssm.a[t - 1] * mean.segment((t - 1) * d, d) + ssm.b[t - 1];
  out.eta = ops::product_band_vec(out.lambda.to_banded(), mean, false);
  return out;
}

NaturalParams likelihood_natural_params(const StateSpaceModel& ssm, const Eigen::MatrixXd& y) {
  const Index d = ssm.d, e = ssm.e, t_count = ssm.steps();
  if (y.rows() != t_count || y.cols() != e)
    throw DimensionMismatch("observations must be steps x obs-dim");
  Eigen::LLT<Eigen::MatrixXd> llt(ssm.r);
  if (llt.info() != Eigen::Success)
    throw MalformedInput("observation covariance r is not positive definite");
  const Eigen::MatrixXd r_inv = llt.solve(Eigen::MatrixXd::Identity(e, e));
  const Eigen::MatrixXd block = ssm.h.transpose() * r_inv * ssm.h;

  NaturalParams out;
  out.lambda = SymmetricBandedMatrix(ssm.joint_dim(), std::max<Index>(d - 1, 0));
  out.eta = Eigen::VectorXd::Zero(ssm.joint_dim());
  for (Index t = 1; t <= t_count; ++t) {
    add_diag_block(out.lambda, t, d, block);
    out.eta.segment(t * d, d) =
        ssm.h.transpose() * r_inv * (y.row(t - 1).transpose() - ssm.c);
  }
  return out;
}

// --- graph precisions -------------------------------------------------------

Eigen::VectorXd auto_weights(const GraphSpec& g) {
  validate_graph(g);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(g.num_nodes);
  for (const auto& e : g.edges) {
    const double piece = std::max(10.0, e.length / 2.0);
    w(e.i) += piece;
    w(e.j) += piece;
  }
  for (Index i = 0; i < g.num_nodes; ++i)
    if (w(i) == 0.0) throw IsolatedNode(i);
  return w;
}

SymmetricBandedMatrix graph_precision(const GraphSpec& g, double variance, double lengthscale,
                                      GraphForm form) {
  check_positive(variance, "variance");
  check_positive(lengthscale, "lengthscale");
  validate_graph(g);

  SymmetricBandedMatrix q(g.num_nodes, graph_bandwidth(g));
  BandedMatrix& store = q.lower_store();
  for (const auto& e : g.edges) {
    double lam, denom;
    if (form == GraphForm::corrected) {
      lam = std::exp(-e.length / lengthscale);
      denom = 1.0 - lam * lam;
    } else {
      lam = variance * std::exp(-e.length / lengthscale);
      denom = 1.0 - lam;
    }
    const double m = 1.0 / denom;
    const double diag = (m - 0.5) / variance;
    const double off = -m * lam / variance;
    store(e.i, e.i) += diag;
    store(e.j, e.j) += diag;
    store(std::max(e.i, e.j), std::min(e.i, e.j)) += off;
  }
  return q;
}

Index graph_bandwidth(const GraphSpec& g) {
  Index bw = 0;
  for (const auto& e : g.edges) bw = std::max(bw, std::abs(e.i - e.j));
  return bw;
}

std::vector<Index> rcm_ordering(const GraphSpec& g) {
  validate_graph(g);
  const Index n = g.num_nodes;
  std::vector<std::vector<Index>> adj(n);
  for (const auto& e : g.edges) {
    adj[e.i].push_back(e.j);
    adj[e.j].push_back(e.i);
  }
  for (auto& nbrs : adj) {
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
  }
  auto degree = [&](Index v) { return static_cast<Index>(adj[v].size()); };

  std::vector<bool> visited(n, false);
  std::vector<Index> order;
  order.reserve(n);
  for (;;) {
    Index start = -1;
    for (Index v = 0; v < n; ++v)
      if (!visited[v] && (start < 0 || degree(v) < degree(start))) start = v;
    if (start < 0) break;

    std::deque<Index> queue{start};
    visited[start] = true;
    while (!queue.empty()) {
      const Index u = queue.front();
      queue.pop_front();
      order.push_back(u);
      std::vector<Index> next;
      for (Index v : adj[u])
        if (!visited[v]) next.push_back(v);
      std::sort(next.begin(), next.end(),
                [&](Index x, Index y) { return std::make_pair(degree(x), x) <
                                               std::make_pair(degree(y), y); });
      for (Index v : next) {
        visited[v] = true;
        queue.push_back(v);
      }
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

GraphSpec apply_ordering(const GraphSpec& g, const std::vector<Index>& perm) {
  if (static_cast<Index>(perm.size()) != g.num_nodes)
    throw MalformedInput("permutation size does not match node count");
  const auto inv = inverse_permutation(perm);
  GraphSpec out;
  out.num_nodes = g.num_nodes;
  out.edges.reserve(g.edges.size());
  for (const auto& e : g.edges)
    out.edges.push_back({inv[static_cast<size_t>(e.i)], inv[static_cast<size_t>(e.j)], e.length});
  return out;
}

std::vector<Index> inverse_permutation(const std::vector<Index>& perm) {
  const Index n = static_cast<Index>(perm.size());
  std::vector<Index> inv(perm.size(), -1);
  for (Index k = 0; k < n; ++k) {
    const Index old = perm[static_cast<size_t>(k)];
    if (old < 0 || old >= n || inv[static_cast<size_t>(old)] != -1)
      throw MalformedInput("not a permutation");
    inv[static_cast<size_t>(old)] = k;
  }
  return inv;
}

// --- observation selection --------------------------------------------------

SelectionIndex SelectionIndex::from_nodes(Index n_total, std::vector<Index> nodes) {
  if (n_total <= 0) throw MalformedInput("selection needs a positive total size");
  std::sort(nodes.begin(), nodes.end());
  for (size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k] < 0 || nodes[k] >= n_total) throw IndexOutOfRange(nodes[k]);
    if (k > 0 && nodes[k] == nodes[k - 1])
      throw MalformedInput("duplicate node " + std::to_string(nodes[k]) + " in selection");
  }
  SelectionIndex sel;
  sel.n_total = n_total;
  sel.observed = std::move(nodes);
  return sel;
}

Eigen::VectorXd gather(const SelectionIndex& sel, const Eigen::VectorXd& x) {
  if (x.size() != sel.n_total) throw DimensionMismatch("gather: vector length mismatch");
  Eigen::VectorXd y(sel.count());
  for (Index k = 0; k < sel.count(); ++k) y(k) = x(sel.observed[static_cast<size_t>(k)]);
  return y;
}

Eigen::VectorXd scatter(const SelectionIndex& sel, const Eigen::VectorXd& y) {
  if (y.size() != sel.count()) throw DimensionMismatch("scatter: vector length mismatch");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(sel.n_total);
  for (Index k = 0; k < sel.count(); ++k) x(sel.observed[static_cast<size_t>(k)]) = y(k);
  return x;
}

// --- ingestion --------------------------------------------------------------

TimeSeries read_time_series(std::istream& in) {
  std::vector<double> ts, ys;
  std::string line;
  bool first = true;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string cleaned = line;
    std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
    std::istringstream row(cleaned);
    double t, y;
    std::string extra;
    if (row >> t >> y) {
      if (row >> extra) throw MalformedInput("trailing content on line " + std::to_string(lineno));
      ts.push_back(t);
      ys.push_back(y);
    } else if (first) {
      // one header line is allowed
    } else if (cleaned.find_first_not_of(" \t\r") != std::string::npos) {
      throw MalformedInput("unparseable line " + std::to_string(lineno));
    }
    first = false;
  }
  if (ts.empty()) throw MalformedInput("time series is empty");
  TimeSeries out;
  out.times = Eigen::Map<Eigen::VectorXd>(ts.data(), static_cast<Index>(ts.size()));
  out.values = Eigen::Map<Eigen::VectorXd>(ys.data(), static_cast<Index>(ys.size()));
  return out;
}

TimeSeries read_time_series_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open '" + path + "'");
  return read_time_series(in);
}

GraphData read_graph(std::istream& in) {
  GraphData out;
  std::vector<std::pair<Index, double>> obs;
  std::string line;
  Index max_node = -1;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    std::string head;
    if (!(row >> head)) continue;
    if (head == "node") {
      long long i;
      double count;
      if (!(row >> i >> count))
        throw MalformedInput("bad observation line " + std::to_string(lineno));
      obs.emplace_back(static_cast<Index>(i), count);
      max_node = std::max<Index>(max_node, static_cast<Index>(i));
    } else {
      long long i, j;
      double len;
      std::istringstream edge_row(line);
      if (!(edge_row >> i >> j >> len))
        throw MalformedInput("bad edge line " + std::to_string(lineno));
      out.graph.edges.push_back(
          {static_cast<Index>(i), static_cast<Index>(j), len});
      max_node = std::max<Index>(max_node, static_cast<Index>(std::max(i, j)));
    }
  }
  if (max_node < 0) throw MalformedInput("graph file has no edges or observations");
  out.graph.num_nodes = max_node + 1;

  std::sort(obs.begin(), obs.end());
  for (size_t k = 1; k < obs.size(); ++k)
    if (obs[k].first == obs[k - 1].first)
      throw MalformedInput("duplicate observation for node " + std::to_string(obs[k].first));
  out.observed_nodes.reserve(obs.size());
  out.counts.resize(static_cast<Index>(obs.size()));
  for (size_t k = 0; k < obs.size(); ++k) {
    out.observed_nodes.push_back(obs[k].first);
    out.counts(static_cast<Index>(k)) = obs[k].second;
  }
  return out;
}

GraphData read_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open '" + path + "'");
  return read_graph(in);
}

}  // namespace bandgm::models
