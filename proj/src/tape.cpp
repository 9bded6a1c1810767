#include "bandgm/tape.hpp"

#include <cmath>

#include "bandgm/grad.hpp"
#include "bandgm/kernels.hpp"

namespace bandgm::tape {

using Index = Tape::Index;

namespace {

Value zero_like(const Value& v) {
  return std::visit(
      [](const auto& x) -> Value {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, double>) {
          return 0.0;
        } else if constexpr (std::is_same_v<T, Eigen::VectorXd>) {
          return Eigen::VectorXd(Eigen::VectorXd::Zero(x.size()));
        } else if constexpr (std::is_same_v<T, BandedMatrix>) {
          return BandedMatrix(x.n(), x.lower(), x.upper());
        } else {
          return SymmetricBandedMatrix(x.n(), x.bandwidth());
        }
      },
      v);
}

// Cells of `src` that fall inside a (bw, 0) lower band.
BandedMatrix restrict_lower(const BandedMatrix& src, Index bw) {
  BandedMatrix out(src.n(), bw, 0);
  for (Index j = 0; j < src.n(); ++j)
    for (Index i = j; i <= std::min(src.n() - 1, j + bw); ++i) out(i, j) = src(i, j);
  return out;
}

}  // namespace

NodeRef Tape::push(Value v, bool requires_grad, std::function<void(Tape&, Index)> back) {
  ensure_open();
  Node n;
  n.value = std::move(v);
  n.requires_grad = requires_grad;
  if (requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return NodeRef{static_cast<Index>(nodes_.size()) - 1};
}

Tape::Node& Tape::at(NodeRef r) {
  if (r.idx < 0 || r.idx >= static_cast<Index>(nodes_.size())) throw IndexOutOfRange(r.idx);
  return nodes_[static_cast<size_t>(r.idx)];
}

const Tape::Node& Tape::at(NodeRef r) const {
  if (r.idx < 0 || r.idx >= static_cast<Index>(nodes_.size())) throw IndexOutOfRange(r.idx);
  return nodes_[static_cast<size_t>(r.idx)];
}

void Tape::ensure_open() const {
  if (spent_) throw TapeReuse();
}

NodeRef Tape::leaf(const std::string& name, Value v) {
  ensure_open();
  if (leaves_.count(name)) throw MalformedInput("tape: duplicate leaf name '" + name + "'");
  const NodeRef r = push(std::move(v), true, nullptr);
  leaves_[name] = r.idx;
  return r;
}

NodeRef Tape::constant(Value v) { return push(std::move(v), false, nullptr); }

const Value& Tape::value(NodeRef r) const { return at(r).value; }

double Tape::scalar(NodeRef r) const {
  const auto* p = std::get_if<double>(&at(r).value);
  if (!p) throw DimensionMismatch("tape: node is not a scalar");
  return *p;
}

const Eigen::VectorXd& Tape::vector(NodeRef r) const {
  const auto* p = std::get_if<Eigen::VectorXd>(&at(r).value);
  if (!p) throw DimensionMismatch("tape: node is not a vector");
  return *p;
}

const BandedMatrix& Tape::banded(NodeRef r) const {
  const auto* p = std::get_if<BandedMatrix>(&at(r).value);
  if (!p) throw DimensionMismatch("tape: node is not a banded matrix");
  return *p;
}

const SymmetricBandedMatrix& Tape::symmetric(NodeRef r) const {
  const auto* p = std::get_if<SymmetricBandedMatrix>(&at(r).value);
  if (!p) throw DimensionMismatch("tape: node is not a symmetric banded matrix");
  return *p;
}

void Tape::accumulate(NodeRef r, double g) {
  Node& n = at(r);
  if (!n.requires_grad) return;
  if (!n.grad_live) {
    n.grad = zero_like(n.value);
    n.grad_live = true;
  }
  std::get<double>(n.grad) += g;
}

void Tape::accumulate(NodeRef r, const Eigen::VectorXd& g) {
  Node& n = at(r);
  if (!n.requires_grad) return;
  if (!n.grad_live) {
    n.grad = zero_like(n.value);
    n.grad_live = true;
  }
  std::get<Eigen::VectorXd>(n.grad) += g;
}

void Tape::accumulate(NodeRef r, const BandedMatrix& g) {
  Node& n = at(r);
  if (!n.requires_grad) return;
  if (!n.grad_live) {
    n.grad = zero_like(n.value);
    n.grad_live = true;
  }
  BandedMatrix& acc = std::get<BandedMatrix>(n.grad);
  if (!acc.same_shape(g)) throw DimensionMismatch("tape: adjoint band mismatch");
  acc.storage() += g.storage();
}

void Tape::accumulate_sym(NodeRef r, const BandedMatrix& lower_cells) {
  Node& n = at(r);
  if (!n.requires_grad) return;
  if (!n.grad_live) {
    n.grad = zero_like(n.value);
    n.grad_live = true;
  }
  BandedMatrix& acc = std::get<SymmetricBandedMatrix>(n.grad).lower_store();
  if (!acc.same_shape(lower_cells)) throw DimensionMismatch("tape: adjoint band mismatch");
  acc.storage() += lower_cells.storage();
}

double Tape::grad_scalar(Index idx) const { return std::get<double>(nodes_[idx].grad); }
const Eigen::VectorXd& Tape::grad_vector(Index idx) const {
  return std::get<Eigen::VectorXd>(nodes_[idx].grad);
}
const BandedMatrix& Tape::grad_banded(Index idx) const {
  return std::get<BandedMatrix>(nodes_[idx].grad);
}
const SymmetricBandedMatrix& Tape::grad_symmetric(Index idx) const {
  return std::get<SymmetricBandedMatrix>(nodes_[idx].grad);
}

// --- banded kernels ---------------------------------------------------------

NodeRef Tape::cholesky(NodeRef q) {
  BandedMatrix l = ops::cholesky(symmetric(q));
  return push(std::move(l), needs(q), [q](Tape& t, Index self) {
    const SymmetricBandedMatrix q_bar =
        grad::vjp_cholesky(t.banded(NodeRef{self}), t.grad_banded(self));
    t.accumulate_sym(q, q_bar.lower_store());
  });
}

NodeRef Tape::solve_vec(NodeRef l, NodeRef v, bool transpose_l) {
  Eigen::VectorXd s = ops::solve_vec(banded(l), vector(v), transpose_l);
  return push(std::move(s), needs(l) || needs(v), [l, v, transpose_l](Tape& t, Index self) {
    const auto vjp = grad::vjp_solve_vec(t.banded(l), t.vector(NodeRef{self}),
                                         t.grad_vector(self), transpose_l);
    t.accumulate(l, vjp.l_bar);
    t.accumulate(v, vjp.v_bar);
  });
}

NodeRef Tape::solve_mat(NodeRef l, NodeRef r, Index out_lower, Index out_upper, bool transpose_l) {
  const Index rl = banded(r).lower(), ru = banded(r).upper();
  BandedMatrix s = ops::solve_mat(banded(l), banded(r), out_lower, out_upper, transpose_l);
  return push(std::move(s), needs(l) || needs(r), [l, r, rl, ru, transpose_l](Tape& t, Index self) {
    const auto vjp = grad::vjp_solve_mat(t.banded(l), t.banded(NodeRef{self}),
                                         t.grad_banded(self), rl, ru, transpose_l);
    t.accumulate(l, vjp.l_bar);
    t.accumulate(r, vjp.r_bar);
  });
}

NodeRef Tape::sparse_inverse_subset(NodeRef l) {
  SymmetricBandedMatrix s = ops::sparse_inverse_subset(banded(l));
  return push(std::move(s), needs(l), [l](Tape& t, Index self) {
    const BandedMatrix l_bar = grad::vjp_sparse_inverse_subset(
        t.banded(l), t.symmetric(NodeRef{self}), t.grad_symmetric(self));
    t.accumulate(l, l_bar);
  });
}

NodeRef Tape::product_band_band(NodeRef a, NodeRef b) {
  BandedMatrix p = ops::product_band_band(banded(a), banded(b));
  return push(std::move(p), needs(a) || needs(b), [a, b](Tape& t, Index self) {
    const auto vjp = grad::vjp_product_band_band(t.banded(a), t.banded(b), t.grad_banded(self));
    t.accumulate(a, vjp.a_bar);
    t.accumulate(b, vjp.b_bar);
  });
}

NodeRef Tape::product_band_band_restricted(NodeRef a, NodeRef b, Index out_lower,
                                           Index out_upper) {
  BandedMatrix p = ops::product_band_band_restricted(banded(a), banded(b), out_lower, out_upper);
  return push(std::move(p), needs(a) || needs(b), [a, b](Tape& t, Index self) {
    const auto vjp = grad::vjp_product_band_band(t.banded(a), t.banded(b), t.grad_banded(self));
    t.accumulate(a, vjp.a_bar);
    t.accumulate(b, vjp.b_bar);
  });
}

NodeRef Tape::product_band_vec(NodeRef b, NodeRef v, bool transpose_b) {
  Eigen::VectorXd p = ops::product_band_vec(banded(b), vector(v), transpose_b);
  return push(std::move(p), needs(b) || needs(v), [b, v, transpose_b](Tape& t, Index self) {
    const auto vjp =
        grad::vjp_product_band_vec(t.banded(b), t.vector(v), t.grad_vector(self), transpose_b);
    t.accumulate(b, vjp.b_bar);
    t.accumulate(v, vjp.v_bar);
  });
}

NodeRef Tape::outer_band(NodeRef m, NodeRef v, Index lower, Index upper) {
  BandedMatrix o = ops::outer_band(vector(m), vector(v), lower, upper);
  return push(std::move(o), needs(m) || needs(v), [m, v](Tape& t, Index self) {
    const auto vjp = grad::vjp_outer_band(t.vector(m), t.vector(v), t.grad_banded(self));
    t.accumulate(m, vjp.m_bar);
    t.accumulate(v, vjp.v_bar);
  });
}

NodeRef Tape::log_det_from_cholesky(NodeRef l) {
  const double c = ops::log_det_from_cholesky(banded(l));
  return push(c, needs(l), [l](Tape& t, Index self) {
    t.accumulate(l, grad::vjp_log_det_from_cholesky(t.banded(l), t.grad_scalar(self)));
  });
}

// --- symmetric band assembly ------------------------------------------------

NodeRef Tape::add_sym(NodeRef a, NodeRef b) {
  SymmetricBandedMatrix s = bandgm::add(symmetric(a), symmetric(b));
  return push(std::move(s), needs(a) || needs(b), [a, b](Tape& t, Index self) {
    const BandedMatrix& s_bar = t.grad_symmetric(self).lower_store();
    t.accumulate_sym(a, restrict_lower(s_bar, t.symmetric(a).bandwidth()));
    t.accumulate_sym(b, restrict_lower(s_bar, t.symmetric(b).bandwidth()));
  });
}

NodeRef Tape::scale_sym(NodeRef a, NodeRef c) {
  SymmetricBandedMatrix s = bandgm::scale(symmetric(a), scalar(c));
  return push(std::move(s), needs(a) || needs(c), [a, c](Tape& t, Index self) {
    const BandedMatrix& s_bar = t.grad_symmetric(self).lower_store();
    t.accumulate_sym(a, bandgm::scale(s_bar, t.scalar(c)));
    // The stored-cell adjoint already carries both mirrored sensitivities,
    // so the scalar picks up a plain elementwise product over stored cells.
    t.accumulate(c, (s_bar.storage().array() * t.symmetric(a).lower_store().storage().array())
                        .sum());
  });
}

NodeRef Tape::add_diagonal_sym(NodeRef a, NodeRef d) {
  SymmetricBandedMatrix s = bandgm::add_diagonal(symmetric(a), vector(d));
  return push(std::move(s), needs(a) || needs(d), [a, d](Tape& t, Index self) {
    const BandedMatrix& s_bar = t.grad_symmetric(self).lower_store();
    t.accumulate_sym(a, s_bar);
    t.accumulate(d, s_bar.diagonal());
  });
}

NodeRef Tape::trace_product_sym(NodeRef a, NodeRef b) {
  const SymmetricBandedMatrix& av = symmetric(a);
  const SymmetricBandedMatrix& bv = symmetric(b);
  if (av.n() != bv.n()) throw DimensionMismatch("trace_product_sym: size mismatch");
  const Index n = av.n();
  double c = 0.0;
  for (Index j = 0; j < n; ++j) {
    c += av(j, j) * bv(j, j);
    const Index i1 = std::min(n - 1, j + std::min(av.bandwidth(), bv.bandwidth()));
    for (Index i = j + 1; i <= i1; ++i) c += 2.0 * av(i, j) * bv(i, j);
  }
  return push(c, needs(a) || needs(b), [a, b](Tape& t, Index self) {
    const double c_bar = t.grad_scalar(self);
    const SymmetricBandedMatrix& av = t.symmetric(a);
    const SymmetricBandedMatrix& bv = t.symmetric(b);
    const Index n = av.n();
    auto seed = [&](const SymmetricBandedMatrix& other, Index bw) {
      BandedMatrix g(n, bw, 0);
      for (Index j = 0; j < n; ++j) {
        g(j, j) = c_bar * other(j, j);
        for (Index i = j + 1; i <= std::min(n - 1, j + bw); ++i)
          g(i, j) = 2.0 * c_bar * other.at_or_zero(i, j);
      }
      return g;
    };
    t.accumulate_sym(a, seed(bv, av.bandwidth()));
    t.accumulate_sym(b, seed(av, bv.bandwidth()));
  });
}

NodeRef Tape::diag_sym(NodeRef a) {
  Eigen::VectorXd d = symmetric(a).lower_store().diagonal();
  return push(std::move(d), needs(a), [a](Tape& t, Index self) {
    const Eigen::VectorXd& v_bar = t.grad_vector(self);
    const SymmetricBandedMatrix& av = t.symmetric(a);
    BandedMatrix g(av.n(), av.bandwidth(), 0);
    for (Index i = 0; i < av.n(); ++i) g(i, i) = v_bar(i);
    t.accumulate_sym(a, g);
  });
}

// --- vectors ----------------------------------------------------------------

NodeRef Tape::add_vec(NodeRef a, NodeRef b) {
  if (vector(a).size() != vector(b).size()) throw DimensionMismatch("add_vec: length mismatch");
  Eigen::VectorXd s = vector(a) + vector(b);
  return push(std::move(s), needs(a) || needs(b), [a, b](Tape& t, Index self) {
    t.accumulate(a, t.grad_vector(self));
    t.accumulate(b, t.grad_vector(self));
  });
}

NodeRef Tape::sub_vec(NodeRef a, NodeRef b) {
  if (vector(a).size() != vector(b).size()) throw DimensionMismatch("sub_vec: length mismatch");
  Eigen::VectorXd s = vector(a) - vector(b);
  return push(std::move(s), needs(a) || needs(b), [a, b](Tape& t, Index self) {
    t.accumulate(a, t.grad_vector(self));
    t.accumulate(b, Eigen::VectorXd(-t.grad_vector(self)));
  });
}

NodeRef Tape::scale_vec(NodeRef v, NodeRef c) {
  Eigen::VectorXd s = scalar(c) * vector(v);
  return push(std::move(s), needs(v) || needs(c), [v, c](Tape& t, Index self) {
    t.accumulate(v, Eigen::VectorXd(t.scalar(c) * t.grad_vector(self)));
    t.accumulate(c, t.grad_vector(self).dot(t.vector(v)));
  });
}

NodeRef Tape::dot(NodeRef a, NodeRef b) {
  if (vector(a).size() != vector(b).size()) throw DimensionMismatch("dot: length mismatch");
  const double s = vector(a).dot(vector(b));
  return push(s, needs(a) || needs(b), [a, b](Tape& t, Index self) {
    const double c_bar = t.grad_scalar(self);
    t.accumulate(a, Eigen::VectorXd(c_bar * t.vector(b)));
    t.accumulate(b, Eigen::VectorXd(c_bar * t.vector(a)));
  });
}

NodeRef Tape::sum(NodeRef v) {
  const double s = vector(v).sum();
  return push(s, needs(v), [v](Tape& t, Index self) {
    t.accumulate(
        v, Eigen::VectorXd(Eigen::VectorXd::Constant(t.vector(v).size(), t.grad_scalar(self))));
  });
}

// --- scalars ----------------------------------------------------------------

NodeRef Tape::add(NodeRef a, NodeRef b) {
  return push(scalar(a) + scalar(b), needs(a) || needs(b), [a, b](Tape& t, Index self) {
    t.accumulate(a, t.grad_scalar(self));
    t.accumulate(b, t.grad_scalar(self));
  });
}

NodeRef Tape::sub(NodeRef a, NodeRef b) {
  return push(scalar(a) - scalar(b), needs(a) || needs(b), [a, b](Tape& t, Index self) {
    t.accumulate(a, t.grad_scalar(self));
    t.accumulate(b, -t.grad_scalar(self));
  });
}

NodeRef Tape::mul(NodeRef a, NodeRef b) {
  return push(scalar(a) * scalar(b), needs(a) || needs(b), [a, b](Tape& t, Index self) {
    t.accumulate(a, t.grad_scalar(self) * t.scalar(b));
    t.accumulate(b, t.grad_scalar(self) * t.scalar(a));
  });
}

NodeRef Tape::div(NodeRef a, NodeRef b) {
  return push(scalar(a) / scalar(b), needs(a) || needs(b), [a, b](Tape& t, Index self) {
    const double bv = t.scalar(b);
    t.accumulate(a, t.grad_scalar(self) / bv);
    t.accumulate(b, -t.grad_scalar(self) * t.scalar(a) / (bv * bv));
  });
}

NodeRef Tape::neg(NodeRef a) {
  return push(-scalar(a), needs(a),
              [a](Tape& t, Index self) { t.accumulate(a, -t.grad_scalar(self)); });
}

NodeRef Tape::log(NodeRef a) {
  const double av = scalar(a);
  if (!(av > 0.0)) throw NonPositiveParam("log argument");
  return push(std::log(av), needs(a), [a](Tape& t, Index self) {
    t.accumulate(a, t.grad_scalar(self) / t.scalar(a));
  });
}

NodeRef Tape::exp(NodeRef a) {
  return push(std::exp(scalar(a)), needs(a), [a](Tape& t, Index self) {
    t.accumulate(a, t.grad_scalar(self) * t.scalar(NodeRef{self}));
  });
}

NodeRef Tape::linearized_scalar(double value,
                                std::vector<std::pair<NodeRef, Eigen::VectorXd>> vector_grads,
                                std::vector<std::pair<NodeRef, double>> scalar_grads) {
  bool req = false;
  for (const auto& [r, g] : vector_grads) {
    if (vector(r).size() != g.size())
      throw DimensionMismatch("linearized_scalar: gradient length mismatch");
    req = req || needs(r);
  }
  for (const auto& [r, g] : scalar_grads) {
    scalar(r);
    (void)g;
    req = req || needs(r);
  }
  return push(value, req,
              [vg = std::move(vector_grads), sg = std::move(scalar_grads)](Tape& t, Index self) {
                const double c_bar = t.grad_scalar(self);
                for (const auto& [r, g] : vg) t.accumulate(r, Eigen::VectorXd(c_bar * g));
                for (const auto& [r, g] : sg) t.accumulate(r, c_bar * g);
              });
}

// --- backward ---------------------------------------------------------------

std::map<std::string, Value> Tape::backward(NodeRef output) {
  ensure_open();
  const Node& out = at(output);
  if (!std::holds_alternative<double>(out.value)) throw NonScalarOutput();
  spent_ = true;
  accumulate(output, 1.0);
  for (Index idx = static_cast<Index>(nodes_.size()) - 1; idx >= 0; --idx) {
    Node& n = nodes_[static_cast<size_t>(idx)];
    if (n.grad_live && n.back) n.back(*this, idx);
  }
  std::map<std::string, Value> grads;
  for (const auto& [name, idx] : leaves_) {
    const Node& n = nodes_[static_cast<size_t>(idx)];
    grads[name] = n.grad_live ? n.grad : zero_like(n.value);
  }
  return grads;
}

}  // namespace bandgm::tape
