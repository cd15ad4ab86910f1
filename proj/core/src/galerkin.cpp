#include "defrom/galerkin.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "defrom/parallel.hpp"

namespace defrom {

namespace {

void check_field(const ParametricOperator& op, const ParameterGrid& grid,
                 const ParametricField& v) {
  if (v.n_nodes() != op.n_nodes() || grid.n_nodes() != op.n_nodes())
    throw DimensionError("field/grid/operator node count mismatch");
  for (const auto& x : v.values)
    if (x.size() != op.dim()) throw DimensionError("field dimension mismatch");
}

}  // namespace

double mean_form(const ParametricOperator& op, const ParameterGrid& grid,
                 const ParametricField& v, const ParametricField& w) {
  check_field(op, grid, v);
  check_field(op, grid, w);
  const auto n_nodes = static_cast<std::size_t>(op.n_nodes());
  std::vector<double> terms(n_nodes);
  const bool same = &v == &w;
  parallel_for(0, n_nodes, [&](std::size_t q) {
    const auto& form = op.forms[q];
    terms[q] = same ? form.quadratic(v.values[q])
                    : form.apply(v.values[q], w.values[q]);
  });
  double acc = 0.0;
  for (std::size_t q = 0; q < n_nodes; ++q)
    acc += grid.weights()[static_cast<Eigen::Index>(q)] * terms[q];
  return acc;
}

GalerkinSolution galerkin_solve(const SubspaceBasis& basis,
                                const ParametricOperator& op,
                                const ParametricRHS& rhs) {
  if (rhs.n_nodes() != op.n_nodes())
    throw DimensionError("galerkin_solve: rhs node count mismatch");
  const Eigen::Index n = op.dim();
  const Eigen::Index k = basis.vectors.cols();
  if (basis.vectors.rows() != n)
    throw DimensionError("galerkin_solve: basis dimension mismatch");
  for (const auto& f : rhs.vectors)
    if (f.size() != n)
      throw DimensionError("galerkin_solve: rhs dimension mismatch");

  GalerkinSolution sol;
  sol.field = ParametricField::zero(n, op.n_nodes());
  sol.coefficients.coefficients.assign(
      static_cast<std::size_t>(op.n_nodes()), Vector::Zero(k));
  if (k == 0) return sol;
  if (!basis.vectors.allFinite())
    throw InvalidArgumentError("galerkin_solve: basis has non-finite entries");

  // Conditioning guard: work with a reference-orthonormalized copy of the
  // basis when its Gram matrix is badly conditioned, then map the reduced
  // coordinates back to the caller's basis through the triangular factor.
  DenseMatrix work = basis.vectors;
  DenseMatrix gram_factor;  // upper triangular, basis = work * gram_factor
  bool stabilized = false;
  {
    const DenseMatrix gram =
        basis.vectors.transpose() * op.reference.multiply(basis.vectors);
    Eigen::SelfAdjointEigenSolver<DenseMatrix> eig(
        0.5 * (gram + gram.transpose()));
    if (eig.info() != Eigen::Success)
      throw FactorizationError("galerkin_solve: Gram eigensolver failed");
    const double lam_max = eig.eigenvalues().maxCoeff();
    const double lam_min = eig.eigenvalues().minCoeff();
    if (!(lam_max > 0.0))
      throw SingularSystemError("galerkin_solve: basis spans nothing");
    if (!(lam_min > 0.0) || lam_max / lam_min > 1e8) {
      stabilized = true;
      // Gram-Schmidt with the triangular bookkeeping needed for the map.
      gram_factor = DenseMatrix::Zero(k, k);
      for (Eigen::Index j = 0; j < k; ++j) {
        Vector col = work.col(j);
        for (int pass = 0; pass < 2; ++pass) {
          for (Eigen::Index i = 0; i < j; ++i) {
            const double proj = op.reference.apply(work.col(i), col);
            gram_factor(i, j) += proj;
            col -= proj * work.col(i);
          }
        }
        const double norm2 = op.reference.quadratic(col);
        const double norm = norm2 > 0.0 ? std::sqrt(norm2) : 0.0;
        const double scale = std::sqrt(op.reference.quadratic(basis.vectors.col(j)));
        if (norm <= 1e-12 * scale)
          throw SingularSystemError(
              "galerkin_solve: basis is numerically dependent");
        gram_factor(j, j) = norm;
        work.col(j) = col / norm;
      }
    }
  }

  const auto n_nodes = static_cast<std::size_t>(op.n_nodes());
  parallel_for(0, n_nodes, [&](std::size_t q) {
    const DenseMatrix aw = op.forms[q].multiply(work);
    DenseMatrix reduced = work.transpose() * aw;
    reduced = 0.5 * (reduced + reduced.transpose()).eval();
    const Vector rhs_red = work.transpose() * rhs.vectors[q];
    Eigen::LLT<DenseMatrix> llt(reduced);
    if (llt.info() != Eigen::Success)
      throw SingularSystemError(
          "galerkin_solve: reduced system singular at node " +
          std::to_string(q));
    const Vector c_work = llt.solve(rhs_red);
    sol.field.values[q] = work * c_work;
    sol.coefficients.coefficients[q] =
        stabilized ? Vector(gram_factor.triangularView<Eigen::Upper>().solve(
                         c_work))
                   : c_work;
  });
  return sol;
}

double mean_error(const ParametricOperator& op, const ParameterGrid& grid,
                  const ParametricField& v, const ParametricField& w) {
  check_field(op, grid, v);
  check_field(op, grid, w);
  ParametricField diff;
  diff.values.reserve(v.values.size());
  for (std::size_t q = 0; q < v.values.size(); ++q)
    diff.values.push_back(v.values[q] - w.values[q]);
  return mean_form(op, grid, diff, diff);
}

double output_functional(const ParametricRHS& rhs, const ParameterGrid& grid,
                         const ParametricField& v) {
  if (rhs.n_nodes() != grid.n_nodes() || v.n_nodes() != grid.n_nodes())
    throw DimensionError("output_functional: node count mismatch");
  double acc = 0.0;
  for (Eigen::Index q = 0; q < grid.n_nodes(); ++q) {
    const auto uq = static_cast<std::size_t>(q);
    if (rhs.vectors[uq].size() != v.values[uq].size())
      throw DimensionError("output_functional: dimension mismatch");
    acc += grid.weights()[q] * rhs.vectors[uq].dot(v.values[uq]);
  }
  return acc;
}

Eigen::Index field_rank(const ParametricField& field,
                        const SymmetricForm& inner, double tol) {
  if (field.values.empty()) return 0;
  const Eigen::Index n = inner.dim();
  // Rank-revealing modified Gram-Schmidt in the inner geometry: a value is
  // dependent when its residual after projection onto the accepted span
  // drops below tol times its own norm. (A Gram-spectrum threshold would
  // need to resolve squared singular-value ratios near eps, which the
  // eigensolver cannot.)
  std::vector<Vector> accepted;
  for (const Vector& value : field.values) {
    if (value.size() != n)
      throw DimensionError("field_rank: dimension mismatch");
    const double before = std::sqrt(std::max(0.0, inner.quadratic(value)));
    if (!(before > 0.0)) continue;
    Vector r = value;
    for (int pass = 0; pass < 2; ++pass)
      for (const Vector& q : accepted) r -= inner.apply(q, r) * q;
    const double after = std::sqrt(std::max(0.0, inner.quadratic(r)));
    if (after > tol * before) accepted.push_back(r / after);
  }
  return static_cast<Eigen::Index>(accepted.size());
}

}  // namespace defrom
