// Exception types shared across the library.
#pragma once

#include <stdexcept>
#include <string>

namespace bandgm {

struct DimensionMismatch : std::runtime_error {
  explicit DimensionMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct OutOfBand : std::runtime_error {
  OutOfBand(long i, long j)
      : std::runtime_error("entry (" + std::to_string(i) + ", " + std::to_string(j) +
                           ") lies outside the stored band") {}
};

struct NonzeroOutsideBand : std::runtime_error {
  NonzeroOutsideBand(long i, long j)
      : std::runtime_error("dense input has a nonzero at (" + std::to_string(i) + ", " +
                           std::to_string(j) + ") outside the requested band") {}
};

/// Raised by the Cholesky routine when a pivot is not strictly positive.
/// `row` is the 0-based row at which factorization broke down.
struct NotPositiveDefinite : std::runtime_error {
  long row;
  explicit NotPositiveDefinite(long r)
      : std::runtime_error("matrix is not positive definite (pivot at row " + std::to_string(r) +
                           ")"),
        row(r) {}
};

/// Raised by triangular solves and inverse-subset routines when a diagonal
/// entry is too small to divide by.
struct SingularDiagonal : std::runtime_error {
  long row;
  explicit SingularDiagonal(long r)
      : std::runtime_error("triangular factor has a near-zero diagonal at row " +
                           std::to_string(r)),
        row(r) {}
};

struct NonPositiveDiagonal : std::runtime_error {
  long row;
  explicit NonPositiveDiagonal(long r)
      : std::runtime_error("factor diagonal must be strictly positive at row " + std::to_string(r)),
        row(r) {}
};

struct NonIncreasingTimes : std::runtime_error {
  long index;
  explicit NonIncreasingTimes(long i)
      : std::runtime_error("time grid must be strictly increasing (violation at index " +
                           std::to_string(i) + ")"),
        index(i) {}
};

struct NonPositiveParam : std::runtime_error {
  explicit NonPositiveParam(const std::string& name)
      : std::runtime_error("parameter '" + name + "' must be strictly positive") {}
};

struct IndexOutOfRange : std::runtime_error {
  long index;
  explicit IndexOutOfRange(long i)
      : std::runtime_error("index " + std::to_string(i) + " out of range"), index(i) {}
};

struct UnknownNode : std::runtime_error {
  long node;
  explicit UnknownNode(long id)
      : std::runtime_error("graph references unknown node id " + std::to_string(id)), node(id) {}
};

struct IsolatedNode : std::runtime_error {
  long node;
  explicit IsolatedNode(long id)
      : std::runtime_error("node " + std::to_string(id) +
                           " has no incident edge; its precision row would be zero"),
        node(id) {}
};

struct TimeGridMismatch : std::runtime_error {
  TimeGridMismatch() : std::runtime_error("stacked models must share one time grid") {}
};

struct SingularBlock : std::runtime_error {
  long index;
  explicit SingularBlock(long t)
      : std::runtime_error("state-space block at step " + std::to_string(t) +
                           " is singular or not positive definite"),
        index(t) {}
};

struct SingularInnovation : std::runtime_error {
  long step;
  explicit SingularInnovation(long t)
      : std::runtime_error("innovation covariance is singular at filter step " + std::to_string(t)),
        step(t) {}
};

/// Raised when a tape backward pass is requested on a non-scalar node.
struct NonScalarOutput : std::runtime_error {
  NonScalarOutput() : std::runtime_error("backward pass requires a scalar output node") {}
};

struct TapeReuse : std::runtime_error {
  TapeReuse() : std::runtime_error("tape already ran backward; record on a fresh tape") {}
};

struct NonFiniteObjective : std::runtime_error {
  explicit NonFiniteObjective(const std::string& where)
      : std::runtime_error("objective evaluated to a non-finite value in " + where) {}
};

struct NonFiniteEnergy : std::runtime_error {
  NonFiniteEnergy() : std::runtime_error("target density is not finite at the chain start") {}
};

struct BackendUnavailableAtSize : std::runtime_error {
  BackendUnavailableAtSize(const std::string& backend, long n)
      : std::runtime_error(backend + " backend is capped below size " + std::to_string(n)) {}
};

struct MalformedInput : std::runtime_error {
  explicit MalformedInput(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bandgm
