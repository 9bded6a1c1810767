// Banded matrix storage.
//
// An n-by-n matrix with `lower` sub-diagonals and `upper` super-diagonals is
// held as a (lower + upper + 1) x n array: column j of the array holds the
// in-band entries of matrix column j.  Entry (i, j) lives at storage row
// i - j + upper, so the main diagonal sits at storage row `upper` (0-based)
// and diagonal d (d = i - j) at storage row d + upper.  The corner cells of
// the array that correspond to no matrix entry are kept at exactly zero so
// serialized bytes are reproducible.
//
// Indices are 0-based throughout.  All values are 64-bit doubles.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>

#include "bandgm/errors.hpp"

namespace bandgm {

namespace detail {
/// Cumulative count of doubles allocated for band storage.  Tests snapshot
/// this around kernel calls to pin the O(n * bandwidth) memory contract.
std::uint64_t banded_alloc_count();
void banded_alloc_add(std::uint64_t doubles);
}  // namespace detail

class BandedMatrix {
 public:
  using Index = Eigen::Index;

  BandedMatrix() : n_(0), lower_(0), upper_(0) {}

  /// Zero matrix of size n with the given band counts.
  BandedMatrix(Index n, Index lower, Index upper);

  /// Extracts a band from a dense square matrix.  If `strict` is set, any
  /// nonzero outside the band raises NonzeroOutsideBand; otherwise such
  /// entries are dropped.
  static BandedMatrix from_dense(const Eigen::MatrixXd& dense, Index lower, Index upper,
                                 bool strict = true);

  Index n() const { return n_; }
  Index lower() const { return lower_; }
  Index upper() const { return upper_; }
  Index rows_stored() const { return lower_ + upper_ + 1; }

  bool in_band(Index i, Index j) const {
    const Index d = i - j;
    return i >= 0 && i < n_ && j >= 0 && j < n_ && d >= -upper_ && d <= lower_;
  }

  /// Checked read; zero is not implied, out-of-band access throws.
  double get(Index i, Index j) const {
    if (!in_band(i, j)) throw OutOfBand(i, j);
    return data_(i - j + upper_, j);
  }

  /// Checked write; refuses to create out-of-band entries.
  void set(Index i, Index j, double v) {
    if (!in_band(i, j)) throw OutOfBand(i, j);
    data_(i - j + upper_, j) = v;
  }

  /// Unchecked in-band accessors for kernel loops.
  double operator()(Index i, Index j) const { return data_(i - j + upper_, j); }
  double& operator()(Index i, Index j) { return data_(i - j + upper_, j); }

  /// Reads entry (i, j) of the represented matrix; out-of-band entries are
  /// zero by definition.
  double at_or_zero(Index i, Index j) const {
    return in_band(i, j) ? data_(i - j + upper_, j) : 0.0;
  }

  /// Raw (lower + upper + 1) x n storage block.
  const Eigen::MatrixXd& storage() const { return data_; }
  Eigen::MatrixXd& storage() { return data_; }

  Eigen::MatrixXd dense() const;

  /// Main diagonal as a vector.
  Eigen::VectorXd diagonal() const;

  bool same_shape(const BandedMatrix& o) const {
    return n_ == o.n_ && lower_ == o.lower_ && upper_ == o.upper_;
  }

 private:
  Index n_, lower_, upper_;
  Eigen::MatrixXd data_;
};

/// Symmetric banded matrix with `bandwidth` sub- and super-diagonals; only
/// the lower band (diagonal included) is stored.  Reads mirror across the
/// diagonal, writes land in the stored lower cell.
class SymmetricBandedMatrix {
 public:
  using Index = Eigen::Index;

  SymmetricBandedMatrix() = default;
  SymmetricBandedMatrix(Index n, Index bandwidth) : store_(n, bandwidth, 0) {}

  /// Wraps an existing lower band (upper() must be zero).
  static SymmetricBandedMatrix from_lower(BandedMatrix lower_band);

  /// Extracts the band of a dense symmetric matrix.  With `strict`, both
  /// asymmetry beyond `sym_tol` and non-zeros outside the band throw.
  static SymmetricBandedMatrix from_dense(const Eigen::MatrixXd& dense, Index bandwidth,
                                          bool strict = true, double sym_tol = 1e-12);

  Index n() const { return store_.n(); }
  Index bandwidth() const { return store_.lower(); }

  bool in_band(Index i, Index j) const {
    const Index d = i >= j ? i - j : j - i;
    return i >= 0 && i < n() && j >= 0 && j < n() && d <= bandwidth();
  }

  double get(Index i, Index j) const {
    if (!in_band(i, j)) throw OutOfBand(i, j);
    return i >= j ? store_(i, j) : store_(j, i);
  }
  void set(Index i, Index j, double v) {
    if (!in_band(i, j)) throw OutOfBand(i, j);
    if (i >= j)
      store_(i, j) = v;
    else
      store_(j, i) = v;
  }

  /// Unchecked mirrored read.
  double operator()(Index i, Index j) const { return i >= j ? store_(i, j) : store_(j, i); }

  double at_or_zero(Index i, Index j) const {
    return in_band(i, j) ? (*this)(i, j) : 0.0;
  }

  const BandedMatrix& lower_store() const { return store_; }
  BandedMatrix& lower_store() { return store_; }

  Eigen::MatrixXd dense() const;

  /// General-band copy carrying both triangles, bands (bandwidth, bandwidth).
  BandedMatrix to_banded() const;

 private:
  BandedMatrix store_;
};

// --- elementwise operations -------------------------------------------------

/// C = A + B.  Result band is the union of the operand bands.
BandedMatrix add(const BandedMatrix& a, const BandedMatrix& b);
SymmetricBandedMatrix add(const SymmetricBandedMatrix& a, const SymmetricBandedMatrix& b);

BandedMatrix scale(const BandedMatrix& a, double c);
SymmetricBandedMatrix scale(const SymmetricBandedMatrix& a, double c);

/// A + diag(d).
BandedMatrix add_diagonal(const BandedMatrix& a, const Eigen::VectorXd& d);
SymmetricBandedMatrix add_diagonal(const SymmetricBandedMatrix& a, const Eigen::VectorXd& d);

BandedMatrix transpose(const BandedMatrix& a);

/// Keeps diagonals 0..keep_lower of `a` (at most a.lower()), drops the rest.
/// The result has upper bandwidth zero.
BandedMatrix lower_band(const BandedMatrix& a, BandedMatrix::Index keep_lower);

/// Copy of `a` on the (possibly wider) band (lower, upper).  Narrowing that
/// would drop a stored cell is refused via DimensionMismatch.
BandedMatrix widen(const BandedMatrix& a, BandedMatrix::Index lower, BandedMatrix::Index upper);

// --- text serialization -----------------------------------------------------
//
// Format: a header line `band n lower upper` followed by lower+upper+1 rows of
// n whitespace-separated decimals (the raw storage block, top row first).
// Values are written with enough digits to round-trip doubles exactly.

void write_band_text(std::ostream& os, const BandedMatrix& a);
BandedMatrix read_band_text(std::istream& is);

void write_band_text_file(const std::string& path, const BandedMatrix& a);
BandedMatrix read_band_text_file(const std::string& path);

}  // namespace bandgm
