#pragma once

#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "defrom/errors.hpp"

namespace defrom {

using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

// A symmetric bilinear form on R^n, backed by a dense or sparse matrix.
// The matrix must be exactly symmetric (bitwise, not up to tolerance) and
// contain only finite entries; both are enforced at construction.
//
// Instances are immutable values and cheap to copy (shared storage). The
// Cholesky factorization needed by solve() is computed on first use and
// cached; lazy initialization is thread-safe, so a single instance may be
// used concurrently from many threads.
class SymmetricForm {
 public:
  explicit SymmetricForm(DenseMatrix matrix, bool spd_hint = false);
  explicit SymmetricForm(SparseMatrix matrix, bool spd_hint = false);

  // The n-by-n identity form (sparse storage).
  static SymmetricForm identity(Eigen::Index n);

  Eigen::Index dim() const noexcept;
  bool is_sparse() const noexcept;

  // v^T M w. Evaluation is symmetrized so that apply(v, w) == apply(w, v)
  // exactly, not merely up to roundoff.
  double apply(const Vector& v, const Vector& w) const;

  // v^T M v (single matrix-vector product).
  double quadratic(const Vector& v) const;

  Vector multiply(const Vector& v) const;
  DenseMatrix multiply(const DenseMatrix& block) const;

  // Solves M x = b by Cholesky; requires M positive definite. Throws
  // FactorizationError if the factorization fails, on every call.
  Vector solve(const Vector& b) const;
  DenseMatrix solve(const DenseMatrix& block) const;

  DenseMatrix to_dense() const;
  // Storage accessors; the pointer for the other representation is null.
  const DenseMatrix* dense() const noexcept;
  const SparseMatrix* sparse() const noexcept;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

// Free-function spellings of the two core operations.
double apply_form(const SymmetricForm& a, const Vector& v, const Vector& w);
Vector solve_spd(const SymmetricForm& a, const Vector& b);

// weights[q] * forms[q] summed over q; the result is sparse iff every
// input is sparse. Requires at least one form and matching dimensions.
SymmetricForm weighted_sum(std::span<const SymmetricForm> forms,
                           const Vector& weights);

struct OrthonormalizeResult {
  std::vector<Vector> vectors;  // orthonormal in the given inner product
  int dropped = 0;              // inputs that were (numerically) dependent
};

// Modified Gram-Schmidt with one re-orthogonalization pass, in the inner
// product defined by `inner` (which must be positive definite). An input
// whose residual norm after projection falls below 1e-10 times its own norm
// is dropped as dependent.
OrthonormalizeResult orthonormalize(std::span<const Vector> vectors,
                                    const SymmetricForm& inner);

// Principal angles (radians, ascending) between the column spans of a and b
// in the geometry of `inner`. Either span may be given by a dependent set;
// angles are computed between the actual spans.
std::vector<double> principal_angles(const DenseMatrix& a,
                                     const DenseMatrix& b,
                                     const SymmetricForm& inner);

}  // namespace defrom
