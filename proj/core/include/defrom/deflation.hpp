#pragma once

#include <filesystem>

#include "defrom/subspace_opt.hpp"

namespace defrom {

// One deflation step: an n x k_i block of basis directions together with
// the per-node Galerkin coefficients of the correction term s_i, and the
// captured energy of that term in the mean elliptic form.
struct DeflationTerm {
  SubspaceBasis basis;            // reference-orthonormal columns
  CoefficientField coefficients;  // one k_i-vector per node
  double step_energy = 0.0;       // mean_form(s_i, s_i)
};

// Accumulated separated expansion u_m = sum_i s_i with its energy ledger:
// residual_energies[i] tracks the mean squared elliptic error after step
// i+1 through the update rule
//   |e_i|^2 = |e_{i-1}|^2 - |s_i|^2,
// valid because every term carries per-node Galerkin-optimal coefficients.
struct DeflationExpansion {
  std::vector<DeflationTerm> terms;
  double initial_energy = 0.0;            // mean squared norm of the truth
  std::vector<double> residual_energies;  // one entry per step

  double current_energy() const {
    return residual_energies.empty() ? initial_energy
                                     : residual_energies.back();
  }
};

struct StepDiagnostics {
  int step = 0;  // 1-based
  Eigen::Index k = 0;
  double step_energy = 0.0;
  double residual_energy = 0.0;
  double stationarity_residual = 0.0;  // rank-1 path only
  int starts_used = 0;
  int iterations = 0;  // ascent iterations (k=1) or sweeps (k>1)
  double wall_ms = 0.0;
};

struct StepOutcome {
  DeflationExpansion expansion;
  StepDiagnostics diagnostics;
  // Set when the residual was already numerically zero; the expansion is
  // then returned unchanged.
  bool converged = false;
};

struct DeflationRun {
  DeflationExpansion expansion;
  std::vector<StepDiagnostics> steps;
  bool converged = false;
};

// Data of the residual problem: f_hat_q = f_q - A_q (sum_i B_i c_{i,q}).
// Exactly f for an empty expansion.
ParametricRHS residual_rhs(const ParametricOperator& op,
                           const ParametricRHS& rhs,
                           const DeflationExpansion& expansion);

// Materializes the partial sum of the first `n_terms` terms per node.
ParametricField expansion_field(const DeflationExpansion& expansion,
                                Eigen::Index dim, Eigen::Index n_nodes,
                                std::size_t n_terms);
ParametricField expansion_field(const DeflationExpansion& expansion,
                                Eigen::Index dim, Eigen::Index n_nodes);

// Empty expansion whose initial_energy is the squared mean elliptic norm
// of the truth solution (computed via node solves and exact duality).
DeflationExpansion initial_expansion(const ParametricOperator& op,
                                     const ParameterGrid& grid,
                                     const ParametricRHS& rhs);

// One deflation step of rank k on the residual problem. A default-value
// expansion is initialized on the fly. k = 1 uses the rank-1 maximizer and
// the closed-form per-node coefficients; k > 1 uses the alternating
// solver. Optimizer failures propagate.
StepOutcome deflate_step(const ParametricOperator& op,
                         const ParameterGrid& grid, const ParametricRHS& rhs,
                         DeflationExpansion expansion, Eigen::Index k,
                         const OptimizerOptions& options = {});

// Runs deflate_step until residual energy <= tol * initial energy, the
// step count reaches max_steps (0 selects 2 * dim), or the step energy
// stagnates below 1e-14 * initial three times in a row. f == 0 yields an
// empty converged expansion.
DeflationRun run_deflation(const ParametricOperator& op,
                           const ParameterGrid& grid,
                           const ParametricRHS& rhs, Eigen::Index k,
                           double tol, int max_steps = 0,
                           const OptimizerOptions& options = {});

// Per-step consistency report against an independently computed truth
// field. All entries are normalized by the initial energy and expected at
// roundoff scale for a well-formed expansion.
struct IdentityReport {
  struct Row {
    int step = 0;  // 1-based
    double orthogonality = 0.0;    // |mean_form(e_i, s_i)| / initial
    double ledger_imbalance = 0.0; // stored ledger vs stored step energies
    double recomputed_gap = 0.0;   // stored ledger vs truth-based energy
  };
  std::vector<Row> rows;
  double max_orthogonality = 0.0;
  double max_ledger_imbalance = 0.0;
  double max_recomputed_gap = 0.0;
};

IdentityReport verify_identities(const ParametricOperator& op,
                                 const ParameterGrid& grid,
                                 const ParametricRHS& rhs,
                                 const DeflationExpansion& expansion,
                                 const ParametricField& truth);

// Least-squares fit of log(step_energy) against the step index. The slope
// estimates -2 log(rho) for step norms decaying like rho^{-i}; rho is
// reported alongside. Fewer than 3 terms (or fewer than 2 positive step
// energies) leave the fit empty. Purely diagnostic.
struct DecayDiagnostic {
  struct Row {
    int step = 0;
    double step_energy = 0.0;
  };
  std::vector<Row> rows;
  std::optional<double> slope;
  std::optional<double> rho;  // exp(-slope / 2)
};

DecayDiagnostic decay_diagnostic(const DeflationExpansion& expansion);

// Directory layout: `meta` (sizes, initial energy, per-term step and
// residual energies), `B_<i>.mtx`, `c_<i>.csv` with i starting at 1.
// Round-trips bit-exactly.
void save_expansion(const std::filesystem::path& dir,
                    const DeflationExpansion& expansion);
DeflationExpansion load_expansion(const std::filesystem::path& dir);

}  // namespace defrom
