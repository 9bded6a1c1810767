// Builders that turn Gauss-Markov model descriptions into banded precisions
// and natural parameters: 1-D state-space kernels on a time grid, graph
// precisions summed edge by edge, node orderings, and observation selection.
#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

#include "bandgm/banded.hpp"
#include "bandgm/errors.hpp"

namespace bandgm::models {

using Index = Eigen::Index;

/// Linear-Gaussian state-space model over steps t = 1..T with a dummy initial
/// state at block 0:  x_0 ~ N(mu0, sigma0),  x_t = a_t x_{t-1} + b_t + w_t,
/// w_t ~ N(0, q_t),  y_t = h x_t + c + v_t,  v_t ~ N(0, r).  Observations
/// attach to blocks 1..T only; `times` holds the T observation locations.
struct StateSpaceModel {
  Index d = 0;  // state dimension
  Index e = 0;  // observation dimension
  Eigen::VectorXd times;
  std::vector<Eigen::MatrixXd> a;  // T matrices, d x d
  std::vector<Eigen::VectorXd> b;  // T vectors
  std::vector<Eigen::MatrixXd> q;  // T SPD matrices, d x d
  Eigen::MatrixXd h;               // e x d
  Eigen::VectorXd c;               // e
  Eigen::MatrixXd r;               // e x e SPD
  Eigen::VectorXd mu0;             // d
  Eigen::MatrixXd sigma0;          // d x d SPD

  Index steps() const { return static_cast<Index>(a.size()); }
  Index joint_dim() const { return (steps() + 1) * d; }
};

/// Gaussian in natural form: density proportional to
/// exp(eta' x - x' lambda x / 2).
struct NaturalParams {
  Eigen::VectorXd eta;
  SymmetricBandedMatrix lambda;
};

/// Exponential kernel k(s, t) = variance * exp(-|s - t| / lengthscale) as a
/// state-space model with d = 1.  The resulting prior precision is
/// tridiagonal.  Throws NonIncreasingTimes / NonPositiveParam.
StateSpaceModel matern12_ssm(const Eigen::VectorXd& times, double variance, double lengthscale);

/// Once-differentiable kernel k(r) = variance * (1 + s r) exp(-s r) with
/// s = sqrt(3) / lengthscale, as a d = 2 model (state carries f and f').
/// Transition blocks use the closed-form matrix exponential of the companion
/// drift; the prior precision has bandwidth 3.
StateSpaceModel matern32_ssm(const Eigen::VectorXd& times, double variance, double lengthscale);

/// Block-diagonal stack realizing a sum of kernels: states concatenate, h
/// concatenates, and c / r come from the first component.  All components
/// must share the observation dimension and the exact time grid
/// (TimeGridMismatch otherwise).
StateSpaceModel ssm_stack(const std::vector<StateSpaceModel>& parts);

/// Joint prior on (x_0 .. x_T) as natural parameters.  lambda has bandwidth
/// 2d - 1; its determinant satisfies |lambda| = |sigma0|^-1 prod_t |q_t|^-1.
/// Throws SingularBlock if some q_t or sigma0 fails its factorization.
NaturalParams prior_natural_params(const StateSpaceModel& ssm);

/// Observation factor as natural parameters on the joint state: lambda is
/// block diagonal with h' r^-1 h on blocks 1..T (block 0 stays zero) and
/// eta block t is h' r^-1 (y_t - c).  `y` holds one observation per row.
NaturalParams likelihood_natural_params(const StateSpaceModel& ssm, const Eigen::MatrixXd& y);

// --- graph precisions -------------------------------------------------------

struct GraphSpec {
  struct Edge {
    Index i = 0;
    Index j = 0;
    double length = 0.0;  // meters, > 0
  };
  Index num_nodes = 0;
  std::vector<Edge> edges;
};

/// Per-node weight w_i = sum over incident edges of max(10, length / 2).
/// A node with no incident edge throws IsolatedNode.
Eigen::VectorXd auto_weights(const GraphSpec& g);

/// `corrected` uses the two-point exponential-kernel precision per edge
/// (lam = exp(-length / lengthscale), denominator 1 - lam^2, outer factor
/// 1 / variance), which is positive definite for any 0 < lam < 1.
/// `as_printed` keeps lam = variance * exp(-length / lengthscale) with
/// denominator 1 - lam, which loses definiteness once lam crosses 1.
enum class GraphForm { corrected, as_printed };

/// Sum of per-edge 2x2 contributions; each edge also subtracts half the
/// identity on its two diagonal cells.  Bandwidth is the largest |i - j|
/// over the edges, so order nodes first (see rcm_ordering).  The result is
/// not factorized here; a non-definite choice of parameters surfaces as
/// NotPositiveDefinite from the caller's cholesky.
SymmetricBandedMatrix graph_precision(const GraphSpec& g, double variance, double lengthscale,
                                      GraphForm form = GraphForm::corrected);

Index graph_bandwidth(const GraphSpec& g);

/// Reverse Cuthill-McKee: breadth-first visit expanding neighbours by
/// ascending degree (ties by index), restarted per component from the
/// lowest-degree unvisited node, then reversed.  Returns perm with
/// perm[new_label] = old_label.
std::vector<Index> rcm_ordering(const GraphSpec& g);

/// Relabels nodes so that new node k is old node perm[k].
GraphSpec apply_ordering(const GraphSpec& g, const std::vector<Index>& perm);

std::vector<Index> inverse_permutation(const std::vector<Index>& perm);

// --- observation selection --------------------------------------------------

/// Sparse stand-in for the 0/1 selection matrix E (n rows out of N): gather
/// applies E, scatter applies E'.  Never materialized as a matrix; E'E is a
/// 0/1 diagonal.
struct SelectionIndex {
  Index n_total = 0;
  std::vector<Index> observed;  // sorted, unique

  static SelectionIndex from_nodes(Index n_total, std::vector<Index> nodes);
  Index count() const { return static_cast<Index>(observed.size()); }
};

Eigen::VectorXd gather(const SelectionIndex& sel, const Eigen::VectorXd& x);
Eigen::VectorXd scatter(const SelectionIndex& sel, const Eigen::VectorXd& y);

// --- ingestion --------------------------------------------------------------

struct TimeSeries {
  Eigen::VectorXd times;
  Eigen::VectorXd values;
};

/// CSV rows `t,y`; one optional header line.
TimeSeries read_time_series(std::istream& in);
TimeSeries read_time_series_file(const std::string& path);

struct GraphData {
  GraphSpec graph;
  std::vector<Index> observed_nodes;
  Eigen::VectorXd counts;  // aligned with observed_nodes
};

/// Edge lines `i j length` with 0-based node ids, plus optional observation
/// lines `node i count`.  `#` starts a comment.
GraphData read_graph(std::istream& in);
GraphData read_graph_file(const std::string& path);

}  // namespace bandgm::models
