#pragma once

#include "defrom/parametric.hpp"

namespace defrom {

// Columns span the trial subspace. Columns are expected to be independent;
// galerkin_solve guards against near-dependence internally.
struct SubspaceBasis {
  DenseMatrix vectors;  // n x k

  Eigen::Index dim() const { return vectors.rows(); }
  Eigen::Index rank_hint() const { return vectors.cols(); }
};

// Reduced coordinates, one k-vector per grid node.
struct CoefficientField {
  std::vector<Vector> coefficients;

  Eigen::Index n_nodes() const {
    return static_cast<Eigen::Index>(coefficients.size());
  }
};

struct GalerkinSolution {
  ParametricField field;          // B * c_q materialized per node
  CoefficientField coefficients;  // in the coordinates of the given basis
};

// The mean form applied to two fields: sum_q w_q a(v_q, w_q; gamma_q).
double mean_form(const ParametricOperator& op, const ParameterGrid& grid,
                 const ParametricField& v, const ParametricField& w);

// Node-by-node Galerkin projection onto span(basis): solves the reduced
// SPD systems (B^T A_q B) c_q = B^T f_q. When the reference Gram matrix of
// the basis has condition number above 1e8 the basis is re-orthonormalized
// internally (coefficients are mapped back to the caller's coordinates);
// an exactly dependent basis raises SingularSystemError.
GalerkinSolution galerkin_solve(const SubspaceBasis& basis,
                                const ParametricOperator& op,
                                const ParametricRHS& rhs);

// Mean elliptic error between two fields: mean_form(v - w, v - w).
double mean_error(const ParametricOperator& op, const ParameterGrid& grid,
                  const ParametricField& v, const ParametricField& w);

// sum_q w_q <f_q, v_q>; for a Galerkin solution this equals its squared
// mean elliptic norm, which is the duality identity used by the checks.
double output_functional(const ParametricRHS& rhs, const ParameterGrid& grid,
                         const ParametricField& v);

// Numerical rank of the span of the node values of a field in the geometry
// of `inner`: values whose residual after projection onto the preceding
// ones falls below `tol` times their own norm count as dependent.
Eigen::Index field_rank(const ParametricField& field,
                        const SymmetricForm& inner, double tol = 1e-10);

}  // namespace defrom
