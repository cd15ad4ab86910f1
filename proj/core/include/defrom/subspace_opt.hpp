#pragma once

#include <cstdint>
#include <optional>

#include "defrom/galerkin.hpp"

namespace defrom {

struct OptimizerOptions {
  // Relative stationarity tolerance for the rank-1 search and relative
  // per-sweep decrease tolerance for the rank-k alternating solver.
  double tol = 1e-9;
  // Total number of rank-1 starting points. The mean Riesz representative
  // and any extra_starts come first; seeded random directions fill the rest.
  int n_starts = 8;
  std::uint64_t seed = 0;
  int max_iters = 10000;  // ascent iterations per start
  int max_sweeps = 200;   // alternating sweeps for the rank-k solver
  // Additional deterministic starting directions (warm starts).
  std::vector<Vector> extra_starts;
  // Squared mean elliptic norm of the exact solution family, when already
  // known; spares the rank-k solver one full truth solve.
  std::optional<double> total_energy;
};

struct Rank1Candidate {
  Vector direction;  // unit reference norm, first nonzero coordinate > 0
  double objective = 0.0;
  // Dual (reference) norm of the stationarity defect divided by the
  // objective; zero exactly at interior stationary points.
  double stationarity_residual = 0.0;
  int starts_used = 0;
  int iterations = 0;  // ascent iterations spent by the winning start
  std::vector<double> start_values;  // objective reached by each start
};

struct RankKCandidate {
  SubspaceBasis basis;            // reference-orthonormal columns
  CoefficientField coefficients;  // Galerkin-optimal for `basis`
  double objective = 0.0;         // mean squared elliptic error achieved
  int sweeps = 0;
  bool converged = false;
  std::vector<double> sweep_objectives;  // one value per sweep, nonincreasing
};

// The rank-1 search failed to reach the stationarity tolerance from any
// start; the best candidate found is attached for inspection.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& msg, Rank1Candidate best)
      : Error(msg), best_(std::move(best)) {}
  const Rank1Candidate& best() const { return best_; }

 private:
  Rank1Candidate best_;
};

// J(z) = sum_q w_q <f_q, z>^2 / a(z, z; gamma_q); the value is invariant
// under scaling of z, and its maximizers span the best one-dimensional
// subspace in the mean elliptic metric. z must be nonzero.
double rank1_objective(const Vector& z, const ParametricOperator& op,
                       const ParameterGrid& grid, const ParametricRHS& rhs);

// Euclidean gradient of rank1_objective; orthogonal to z exactly (Euler
// identity for degree-zero homogeneous functions).
Vector rank1_gradient(const Vector& z, const ParametricOperator& op,
                      const ParameterGrid& grid, const ParametricRHS& rhs);

// Relative stationarity measure used for convergence: with psi_q the
// per-node Galerkin coefficient of z, the defect
//   r = sum_q w_q (psi_q f_q - psi_q^2 A_q z)
// vanishes at stationary points; returns |r|_{R^{-1}} / J at the reference-
// normalized z (zero when J is zero).
double rank1_stationarity_residual(const Vector& z,
                                   const ParametricOperator& op,
                                   const ParameterGrid& grid,
                                   const ParametricRHS& rhs);

// Multi-start projected gradient ascent on the reference-norm sphere with
// backtracking line search. Deterministic for fixed options, including the
// winner selection (objective, then lexicographic tie-break between
// sign-normalized directions). Throws ZeroDataError when the right-hand
// side family is identically zero and ConvergenceError when no start meets
// the tolerance within max_iters.
Rank1Candidate rank1_maximize(const ParametricOperator& op,
                              const ParameterGrid& grid,
                              const ParametricRHS& rhs,
                              const OptimizerOptions& options = {});

// Alternating minimization of the mean squared elliptic error over rank-k
// separated approximations: the coefficient step is the node-by-node
// Galerkin projection, the basis step solves the weighted normal equations
// for the basis block (direct when n*k is small, conjugate gradients
// otherwise). The recorded objective never increases between sweeps. When
// the reduced coefficient Gram matrix is rank deficient the basis step is
// restricted to the coefficient row space; only an all-zero coefficient
// family is an error.
RankKCandidate rankk_minimize(const ParametricOperator& op,
                              const ParameterGrid& grid,
                              const ParametricRHS& rhs, Eigen::Index k,
                              const OptimizerOptions& options = {});

}  // namespace defrom
