// Record/backward tape over the banded kernels.
//
// Define-by-run: each record_* call evaluates its forward kernel eagerly and
// appends one node holding the result.  backward() seeds the scalar output
// with 1, replays the nodes in reverse, and returns the gradient of every
// named leaf.  Adjoints of symmetric matrices use the lower-band convention
// of bandgm::grad.  A tape is single-shot: after backward() both further
// recording and a second backward are rejected.
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "bandgm/banded.hpp"
#include "bandgm/errors.hpp"

namespace bandgm::tape {

using Value = std::variant<double, Eigen::VectorXd, BandedMatrix, SymmetricBandedMatrix>;

struct NodeRef {
  Eigen::Index idx = -1;
};

class Tape {
 public:
  using Index = Eigen::Index;

  /// Differentiable input; its gradient appears in the backward() map under
  /// `name`.
  NodeRef leaf(const std::string& name, Value v);

  /// Non-differentiable input.
  NodeRef constant(Value v);

  // --- banded kernels -------------------------------------------------------
  NodeRef cholesky(NodeRef q);
  NodeRef solve_vec(NodeRef l, NodeRef v, bool transpose_l = false);
  NodeRef solve_mat(NodeRef l, NodeRef r, Index out_lower, Index out_upper,
                    bool transpose_l = false);
  NodeRef sparse_inverse_subset(NodeRef l);
  NodeRef product_band_band(NodeRef a, NodeRef b);
  NodeRef product_band_band_restricted(NodeRef a, NodeRef b, Index out_lower, Index out_upper);
  NodeRef product_band_vec(NodeRef b, NodeRef v, bool transpose_b = false);
  NodeRef outer_band(NodeRef m, NodeRef v, Index lower, Index upper);
  NodeRef log_det_from_cholesky(NodeRef l);

  // --- symmetric band assembly ----------------------------------------------
  NodeRef add_sym(NodeRef a, NodeRef b);
  NodeRef scale_sym(NodeRef a, NodeRef c);
  NodeRef add_diagonal_sym(NodeRef a, NodeRef d);
  /// Sum over the full matrix of the elementwise product A .* B (both
  /// symmetric).  Entries outside either band contribute zero.
  NodeRef trace_product_sym(NodeRef a, NodeRef b);
  NodeRef diag_sym(NodeRef a);

  // --- vectors --------------------------------------------------------------
  NodeRef add_vec(NodeRef a, NodeRef b);
  NodeRef sub_vec(NodeRef a, NodeRef b);
  NodeRef scale_vec(NodeRef v, NodeRef c);
  NodeRef dot(NodeRef a, NodeRef b);
  NodeRef sum(NodeRef v);

  // --- scalars --------------------------------------------------------------
  NodeRef add(NodeRef a, NodeRef b);
  NodeRef sub(NodeRef a, NodeRef b);
  NodeRef mul(NodeRef a, NodeRef b);
  NodeRef div(NodeRef a, NodeRef b);
  NodeRef neg(NodeRef a);
  NodeRef log(NodeRef a);
  NodeRef exp(NodeRef a);

  /// Scalar node with a caller-supplied first-order linearization: the value
  /// plus d(value)/d(input) for each listed input, applied by the chain rule
  /// during backward.  This is how objective terms with their own analytic
  /// derivatives (e.g. quadrature expectations) join the tape.
  NodeRef linearized_scalar(double value,
                            std::vector<std::pair<NodeRef, Eigen::VectorXd>> vector_grads,
                            std::vector<std::pair<NodeRef, double>> scalar_grads = {});

  // --- access ---------------------------------------------------------------
  const Value& value(NodeRef r) const;
  double scalar(NodeRef r) const;
  const Eigen::VectorXd& vector(NodeRef r) const;
  const BandedMatrix& banded(NodeRef r) const;
  const SymmetricBandedMatrix& symmetric(NodeRef r) const;

  /// Seeds `output` (must be scalar) with 1 and runs the reverse sweep.
  /// Returns {leaf name -> gradient}; leaves the output does not depend on
  /// get a zero gradient of their own shape.  Throws NonScalarOutput for a
  /// non-scalar node and TapeReuse on a second call.
  std::map<std::string, Value> backward(NodeRef output);

  Index size() const { return static_cast<Index>(nodes_.size()); }

 private:
  struct Node {
    Value value;
    Value grad;
    bool requires_grad = false;
    bool grad_live = false;  // received a contribution during this backward
    std::function<void(Tape&, Index)> back;
  };

  NodeRef push(Value v, bool requires_grad, std::function<void(Tape&, Index)> back);
  Node& at(NodeRef r);
  const Node& at(NodeRef r) const;
  void ensure_open() const;
  bool needs(NodeRef r) const { return at(r).requires_grad; }

  // Adds `g` into r's accumulator, materializing the zero on first touch.
  void accumulate(NodeRef r, double g);
  void accumulate(NodeRef r, const Eigen::VectorXd& g);
  void accumulate(NodeRef r, const BandedMatrix& g);
  void accumulate_sym(NodeRef r, const BandedMatrix& lower_cells);

  const BandedMatrix& grad_banded(Index idx) const;
  double grad_scalar(Index idx) const;
  const Eigen::VectorXd& grad_vector(Index idx) const;
  const SymmetricBandedMatrix& grad_symmetric(Index idx) const;

  std::vector<Node> nodes_;
  std::map<std::string, Index> leaves_;
  bool spent_ = false;
};

}  // namespace bandgm::tape
