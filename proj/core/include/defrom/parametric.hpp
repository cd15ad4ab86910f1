#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "defrom/hilbert.hpp"

namespace defrom {

// Quadrature discretization of the parameter domain: nodes[q] is a row
// vector in R^d, weights[q] > 0. Sums weighted by `weights` realize the
// parameter-measure integrals everywhere in this library.
class ParameterGrid {
 public:
  ParameterGrid(DenseMatrix nodes, Vector weights);

  Eigen::Index n_nodes() const { return nodes_.rows(); }
  Eigen::Index dimension() const { return nodes_.cols(); }
  const DenseMatrix& nodes() const { return nodes_; }
  const Vector& weights() const { return weights_; }
  double total_weight() const { return weights_.sum(); }

 private:
  DenseMatrix nodes_;
  Vector weights_;
};

// The operator side of the parametric problem: one symmetric form per grid
// node, a positive definite reference form fixing the norm on the discrete
// space, and an optional certified coercivity constant alpha such that
// a(v, v; gamma_q) >= alpha * reference(v, v) for every node.
struct ParametricOperator {
  std::vector<SymmetricForm> forms;
  SymmetricForm reference;
  std::optional<double> alpha;

  ParametricOperator(std::vector<SymmetricForm> forms_in,
                     SymmetricForm reference_in,
                     std::optional<double> alpha_in = std::nullopt);

  Eigen::Index dim() const { return reference.dim(); }
  Eigen::Index n_nodes() const {
    return static_cast<Eigen::Index>(forms.size());
  }
};

// Right-hand side vectors, one per grid node.
struct ParametricRHS {
  std::vector<Vector> vectors;

  Eigen::Index n_nodes() const {
    return static_cast<Eigen::Index>(vectors.size());
  }
  Eigen::Index dim() const { return vectors.empty() ? 0 : vectors[0].size(); }
  bool is_zero() const;
};

// A discrete field over the grid: one coefficient vector per node.
struct ParametricField {
  std::vector<Vector> values;

  static ParametricField zero(Eigen::Index dim, Eigen::Index n_nodes);
  Eigen::Index n_nodes() const {
    return static_cast<Eigen::Index>(values.size());
  }
  Eigen::Index dim() const { return values.empty() ? 0 : values[0].size(); }
};

struct Problem {
  ParametricOperator op;
  ParameterGrid grid;
  ParametricRHS rhs;
};

// Smallest generalized eigenvalue of (A_q, reference) minimized over nodes.
// Dense solves are used up to moderate dimensions and inverse iteration
// beyond. Throws CoercivityError when a certified alpha is violated and
// FactorizationError when the reference form is not positive definite.
double check_coercivity(const ParametricOperator& op);

// Node-by-node exact solves u_q = A_q^{-1} f_q (parallel over nodes).
ParametricField truth_solve(const ParametricOperator& op,
                            const ParametricRHS& rhs);

// One-dimensional quadrature rule specification for scalar parameters.
struct QuadratureSpec {
  enum class Kind { gauss_legendre, explicit_list };
  Kind kind = Kind::gauss_legendre;
  int count = 33;          // gauss_legendre
  double a = 1.0, b = 2.0;  // gauss_legendre interval
  std::vector<double> nodes, weights;  // explicit_list

  static QuadratureSpec gauss(int count, double a, double b);
  static QuadratureSpec explicit_rule(std::vector<double> nodes,
                                      std::vector<double> weights);
};

// Gauss-Legendre nodes/weights via the Jacobi-matrix eigenproblem
// (weights sum to b - a), or the explicit rule passed through unchanged.
ParameterGrid make_grid(const QuadratureSpec& spec);

// Reference-form choice for generate_diffusion_1d.
struct ReferenceSpec {
  enum class Kind {
    midpoint_stiffness,  // stiffness assembled at the midpoint parameter
    stiffness_at,        // stiffness assembled at a fixed parameter value
    identity,
    mass,
  };
  Kind kind = Kind::midpoint_stiffness;
  double gamma = 0.0;  // used by stiffness_at

  static ReferenceSpec midpoint() { return {}; }
  static ReferenceSpec stiffness(double gamma) {
    return {Kind::stiffness_at, gamma};
  }
  static ReferenceSpec identity() { return {Kind::identity, 0.0}; }
  static ReferenceSpec mass() { return {Kind::mass, 0.0}; }
};

// P1 finite elements on [0, 1] with homogeneous Dirichlet conditions for
//   -(kappa(x; gamma) u')' = 1,  kappa = 1 + gamma on [1/2, 1], 1 elsewhere,
// with kappa averaged exactly over each element. The parameter gamma must
// stay above -1 at every node; the certified alpha is an exact analytic
// lower bound for the chosen reference form.
Problem generate_diffusion_1d(int n_elements, const QuadratureSpec& quad,
                              ReferenceSpec reference = ReferenceSpec());

// Reproducible dense SPD family A_q = M0 + gamma_q K0 with gamma_q equally
// spaced in [0, 1], uniform weights 1/n_nodes, normal random right-hand
// sides, reference M0 and certified alpha = 1 (exact since K0 is PSD).
Problem generate_random_spd_family(Eigen::Index n, Eigen::Index n_nodes,
                                   std::uint64_t seed);

// On-disk problem bundle in directory `dir`:
//   meta        key = value (n, n_nodes, d, reference file, optional alpha)
//   grid.csv    gamma_0..gamma_{d-1}, weight
//   A_<q>.mtx   one symmetric form per node
//   f.mtx       n x n_nodes array of right-hand sides
//   reference.mtx
// Save followed by load followed by save reproduces every file byte for
// byte.
void save_problem(const std::filesystem::path& dir, const Problem& problem);
Problem load_problem(const std::filesystem::path& dir);

}  // namespace defrom
