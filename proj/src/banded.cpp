#include "bandgm/banded.hpp"

#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace bandgm {

namespace detail {
namespace {
std::atomic<std::uint64_t> g_alloc_count{0};
}
std::uint64_t banded_alloc_count() { return g_alloc_count.load(std::memory_order_relaxed); }
void banded_alloc_add(std::uint64_t doubles) {
  g_alloc_count.fetch_add(doubles, std::memory_order_relaxed);
}
}  // namespace detail

BandedMatrix::BandedMatrix(Index n, Index lower, Index upper)
    : n_(n), lower_(lower), upper_(upper) {
  if (n < 0 || lower < 0 || upper < 0)
    throw DimensionMismatch("band sizes must be non-negative");
  if (n > 0 && (lower >= n || upper >= n))
    throw DimensionMismatch("bandwidths must be smaller than the matrix size");
  data_ = Eigen::MatrixXd::Zero(lower_ + upper_ + 1, n_);
  detail::banded_alloc_add(static_cast<std::uint64_t>(data_.size()));
}

BandedMatrix BandedMatrix::from_dense(const Eigen::MatrixXd& dense, Index lower, Index upper,
                                      bool strict) {
  if (dense.rows() != dense.cols()) throw DimensionMismatch("dense input must be square");
  const Index n = dense.rows();
  BandedMatrix out(n, lower, upper);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) {
      const double v = dense(i, j);
      if (out.in_band(i, j)) {
        out(i, j) = v;
      } else if (strict && v != 0.0) {
        throw NonzeroOutsideBand(i, j);
      }
    }
  }
  return out;
}

Eigen::MatrixXd BandedMatrix::dense() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_, n_);
  for (Index j = 0; j < n_; ++j) {
    const Index i0 = std::max<Index>(0, j - upper_);
    const Index i1 = std::min<Index>(n_ - 1, j + lower_);
    for (Index i = i0; i <= i1; ++i) out(i, j) = (*this)(i, j);
  }
  return out;
}

Eigen::VectorXd BandedMatrix::diagonal() const {
  Eigen::VectorXd d(n_);
  for (Index i = 0; i < n_; ++i) d(i) = (*this)(i, i);
  return d;
}

SymmetricBandedMatrix SymmetricBandedMatrix::from_lower(BandedMatrix lower_band) {
  if (lower_band.upper() != 0)
    throw DimensionMismatch("symmetric storage expects a pure lower band");
  SymmetricBandedMatrix out;
  out.store_ = std::move(lower_band);
  return out;
}

SymmetricBandedMatrix SymmetricBandedMatrix::from_dense(const Eigen::MatrixXd& dense,
                                                        Index bandwidth, bool strict,
                                                        double sym_tol) {
  if (dense.rows() != dense.cols()) throw DimensionMismatch("dense input must be square");
  const Index n = dense.rows();
  SymmetricBandedMatrix out(n, bandwidth);
  for (Index j = 0; j < n; ++j) {
    for (Index i = j; i < n; ++i) {
      const double lo = dense(i, j), hi = dense(j, i);
      if (strict && std::abs(lo - hi) > sym_tol)
        throw DimensionMismatch("dense input is not symmetric within tolerance");
      if (i - j <= bandwidth) {
        out.store_(i, j) = 0.5 * (lo + hi);
      } else if (strict && (lo != 0.0 || hi != 0.0)) {
        throw NonzeroOutsideBand(i, j);
      }
    }
  }
  return out;
}

Eigen::MatrixXd SymmetricBandedMatrix::dense() const {
  const Index nn = n();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nn, nn);
  for (Index j = 0; j < nn; ++j) {
    for (Index i = j; i <= std::min<Index>(nn - 1, j + bandwidth()); ++i) {
      out(i, j) = store_(i, j);
      out(j, i) = store_(i, j);
    }
  }
  return out;
}

BandedMatrix SymmetricBandedMatrix::to_banded() const {
  const Index nn = n(), bw = bandwidth();
  BandedMatrix out(nn, bw, bw);
  for (Index j = 0; j < nn; ++j) {
    for (Index i = j; i <= std::min<Index>(nn - 1, j + bw); ++i) {
      const double v = store_(i, j);
      out(i, j) = v;
      if (i != j) out(j, i) = v;
    }
  }
  return out;
}

BandedMatrix add(const BandedMatrix& a, const BandedMatrix& b) {
  if (a.n() != b.n()) throw DimensionMismatch("add: size mismatch");
  const auto n = a.n();
  BandedMatrix out(n, std::max(a.lower(), b.lower()), std::max(a.upper(), b.upper()));
  for (BandedMatrix::Index j = 0; j < n; ++j) {
    const auto i0 = std::max<BandedMatrix::Index>(0, j - out.upper());
    const auto i1 = std::min<BandedMatrix::Index>(n - 1, j + out.lower());
    for (auto i = i0; i <= i1; ++i) out(i, j) = a.at_or_zero(i, j) + b.at_or_zero(i, j);
  }
  return out;
}

SymmetricBandedMatrix add(const SymmetricBandedMatrix& a, const SymmetricBandedMatrix& b) {
  return SymmetricBandedMatrix::from_lower(add(a.lower_store(), b.lower_store()));
}

BandedMatrix scale(const BandedMatrix& a, double c) {
  BandedMatrix out = a;
  out.storage() *= c;
  return out;
}

SymmetricBandedMatrix scale(const SymmetricBandedMatrix& a, double c) {
  return SymmetricBandedMatrix::from_lower(scale(a.lower_store(), c));
}

BandedMatrix add_diagonal(const BandedMatrix& a, const Eigen::VectorXd& d) {
  if (d.size() != a.n()) throw DimensionMismatch("add_diagonal: size mismatch");
  BandedMatrix out = a;
  for (BandedMatrix::Index i = 0; i < a.n(); ++i) out(i, i) += d(i);
  return out;
}

SymmetricBandedMatrix add_diagonal(const SymmetricBandedMatrix& a, const Eigen::VectorXd& d) {
  return SymmetricBandedMatrix::from_lower(add_diagonal(a.lower_store(), d));
}

BandedMatrix transpose(const BandedMatrix& a) {
  BandedMatrix out(a.n(), a.upper(), a.lower());
  for (BandedMatrix::Index j = 0; j < a.n(); ++j) {
    const auto i0 = std::max<BandedMatrix::Index>(0, j - a.upper());
    const auto i1 = std::min<BandedMatrix::Index>(a.n() - 1, j + a.lower());
    for (auto i = i0; i <= i1; ++i) out(j, i) = a(i, j);
  }
  return out;
}

BandedMatrix lower_band(const BandedMatrix& a, BandedMatrix::Index keep_lower) {
  if (keep_lower < 0 || keep_lower > a.lower())
    throw DimensionMismatch("lower_band: requested band exceeds stored band");
  BandedMatrix out(a.n(), keep_lower, 0);
  for (BandedMatrix::Index j = 0; j < a.n(); ++j) {
    const auto i1 = std::min<BandedMatrix::Index>(a.n() - 1, j + keep_lower);
    for (auto i = j; i <= i1; ++i) out(i, j) = a(i, j);
  }
  return out;
}

BandedMatrix widen(const BandedMatrix& a, BandedMatrix::Index lower, BandedMatrix::Index upper) {
  if (lower < a.lower() || upper < a.upper())
    throw DimensionMismatch("widen: target band must contain the source band");
  BandedMatrix out(a.n(), lower, upper);
  for (BandedMatrix::Index j = 0; j < a.n(); ++j) {
    const auto i0 = std::max<BandedMatrix::Index>(0, j - a.upper());
    const auto i1 = std::min<BandedMatrix::Index>(a.n() - 1, j + a.lower());
    for (auto i = i0; i <= i1; ++i) out(i, j) = a(i, j);
  }
  return out;
}

void write_band_text(std::ostream& os, const BandedMatrix& a) {
  os << "band " << a.n() << " " << a.lower() << " " << a.upper() << "\n";
  char buf[64];
  for (BandedMatrix::Index r = 0; r < a.rows_stored(); ++r) {
    for (BandedMatrix::Index j = 0; j < a.n(); ++j) {
      // %.17g round-trips IEEE doubles exactly.
      std::snprintf(buf, sizeof buf, "%.17g", a.storage()(r, j));
      os << (j ? " " : "") << buf;
    }
    os << "\n";
  }
}

BandedMatrix read_band_text(std::istream& is) {
  std::string tag;
  long long n = 0, lo = 0, up = 0;
  if (!(is >> tag >> n >> lo >> up) || tag != "band")
    throw MalformedInput("band text: expected header 'band n lower upper'");
  if (n < 0 || lo < 0 || up < 0) throw MalformedInput("band text: negative dimension");
  BandedMatrix out(static_cast<BandedMatrix::Index>(n), static_cast<BandedMatrix::Index>(lo),
                   static_cast<BandedMatrix::Index>(up));
  for (BandedMatrix::Index r = 0; r < out.rows_stored(); ++r)
    for (BandedMatrix::Index j = 0; j < out.n(); ++j)
      if (!(is >> out.storage()(r, j)))
        throw MalformedInput("band text: truncated value block");
  // Storage cells with no matrix entry must be zero.
  for (BandedMatrix::Index r = 0; r < out.rows_stored(); ++r)
    for (BandedMatrix::Index j = 0; j < out.n(); ++j) {
      const BandedMatrix::Index i = r - out.upper() + j;
      if ((i < 0 || i >= out.n()) && out.storage()(r, j) != 0.0)
        throw MalformedInput("band text: nonzero corner cell");
    }
  return out;
}

void write_band_text_file(const std::string& path, const BandedMatrix& a) {
  std::ofstream os(path);
  if (!os) throw MalformedInput("cannot open '" + path + "' for writing");
  write_band_text(os, a);
}

BandedMatrix read_band_text_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MalformedInput("cannot open '" + path + "' for reading");
  return read_band_text(is);
}

}  // namespace bandgm
