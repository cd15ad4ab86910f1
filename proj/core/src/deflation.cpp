#include "defrom/deflation.hpp"

#include <chrono>
#include <cmath>

#include "defrom/matrix_market.hpp"
#include "defrom/parallel.hpp"
#include "defrom/text_io.hpp"

namespace defrom {

namespace {

void check_expansion_shapes(const ParametricOperator& op,
                            const DeflationExpansion& expansion) {
  for (const auto& term : expansion.terms) {
    if (term.basis.vectors.rows() != op.dim())
      throw DimensionError("expansion term dimension mismatch");
    if (term.coefficients.n_nodes() != op.n_nodes())
      throw DimensionError("expansion coefficient node count mismatch");
    for (const auto& c : term.coefficients.coefficients)
      if (c.size() != term.basis.vectors.cols())
        throw DimensionError("expansion coefficient rank mismatch");
  }
  if (!expansion.terms.empty() &&
      expansion.residual_energies.size() != expansion.terms.size())
    throw InvalidArgumentError(
        "expansion ledger length does not match the term count");
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - since)
      .count();
}

}  // namespace

ParametricRHS residual_rhs(const ParametricOperator& op,
                           const ParametricRHS& rhs,
                           const DeflationExpansion& expansion) {
  if (rhs.n_nodes() != op.n_nodes())
    throw DimensionError("residual_rhs: node count mismatch");
  check_expansion_shapes(op, expansion);
  ParametricRHS out;
  out.vectors.assign(rhs.vectors.begin(), rhs.vectors.end());
  if (expansion.terms.empty()) return out;
  const auto n_nodes = static_cast<std::size_t>(op.n_nodes());
  parallel_for(0, n_nodes, [&](std::size_t q) {
    Vector acc = Vector::Zero(op.dim());
    for (const auto& term : expansion.terms)
      acc += term.basis.vectors * term.coefficients.coefficients[q];
    out.vectors[q] -= op.forms[q].multiply(acc);
  });
  return out;
}

ParametricField expansion_field(const DeflationExpansion& expansion,
                                Eigen::Index dim, Eigen::Index n_nodes,
                                std::size_t n_terms) {
  if (n_terms > expansion.terms.size())
    throw InvalidArgumentError("expansion_field: prefix longer than expansion");
  ParametricField field = ParametricField::zero(dim, n_nodes);
  for (std::size_t i = 0; i < n_terms; ++i) {
    const auto& term = expansion.terms[i];
    if (term.basis.vectors.rows() != dim ||
        term.coefficients.n_nodes() != n_nodes)
      throw DimensionError("expansion_field: term shape mismatch");
    for (Eigen::Index q = 0; q < n_nodes; ++q)
      field.values[static_cast<std::size_t>(q)] +=
          term.basis.vectors *
          term.coefficients.coefficients[static_cast<std::size_t>(q)];
  }
  return field;
}

ParametricField expansion_field(const DeflationExpansion& expansion,
                                Eigen::Index dim, Eigen::Index n_nodes) {
  return expansion_field(expansion, dim, n_nodes, expansion.terms.size());
}

DeflationExpansion initial_expansion(const ParametricOperator& op,
                                     const ParameterGrid& grid,
                                     const ParametricRHS& rhs) {
  if (grid.n_nodes() != op.n_nodes() || rhs.n_nodes() != op.n_nodes())
    throw DimensionError("initial_expansion: node count mismatch");
  DeflationExpansion expansion;
  if (rhs.is_zero()) return expansion;  // initial energy exactly zero
  const ParametricField u = truth_solve(op, rhs);
  // <f_q, u_q> = a(u_q, u_q; gamma_q) exactly at the truth, so this weighted
  // sum is the squared mean elliptic norm of the solution family.
  expansion.initial_energy = output_functional(rhs, grid, u);
  return expansion;
}

namespace {

// Warm start: the most recent directions, made mean-form-orthogonal to all
// older terms. (Projecting against the full accumulated span would
// annihilate them, so the most recent term itself is excluded.)
std::vector<Vector> warm_starts(const ParametricOperator& op,
                                const ParameterGrid& grid,
                                const DeflationExpansion& expansion) {
  std::vector<Vector> out;
  if (expansion.terms.empty()) return out;
  const SymmetricForm mean =
      weighted_sum(std::span<const SymmetricForm>(op.forms), grid.weights());
  std::vector<Vector> older;
  for (std::size_t i = 0; i + 1 < expansion.terms.size(); ++i) {
    const auto& b = expansion.terms[i].basis.vectors;
    for (Eigen::Index j = 0; j < b.cols(); ++j) older.push_back(b.col(j));
  }
  const auto basis = orthonormalize(older, mean).vectors;
  const auto& last = expansion.terms.back().basis.vectors;
  for (Eigen::Index j = 0; j < last.cols(); ++j) {
    Vector w = last.col(j);
    const double before = std::sqrt(std::max(mean.quadratic(w), 0.0));
    for (int pass = 0; pass < 2; ++pass)
      for (const Vector& u : basis) w -= mean.apply(u, w) * u;
    const double after = std::sqrt(std::max(mean.quadratic(w), 0.0));
    if (after > 1e-10 * before) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

StepOutcome deflate_step(const ParametricOperator& op,
                         const ParameterGrid& grid, const ParametricRHS& rhs,
                         DeflationExpansion expansion, Eigen::Index k,
                         const OptimizerOptions& options) {
  if (k < 1 || k > op.dim())
    throw InvalidArgumentError("deflate_step: rank k must be in [1, n]");
  if (grid.n_nodes() != op.n_nodes() || rhs.n_nodes() != op.n_nodes())
    throw DimensionError("deflate_step: node count mismatch");
  check_expansion_shapes(op, expansion);
  if (expansion.terms.empty() && expansion.residual_energies.empty() &&
      expansion.initial_energy == 0.0 && !rhs.is_zero())
    expansion = initial_expansion(op, grid, rhs);

  const auto t0 = std::chrono::steady_clock::now();
  StepOutcome outcome;
  outcome.diagnostics.step = static_cast<int>(expansion.terms.size()) + 1;
  outcome.diagnostics.k = k;

  const double initial = expansion.initial_energy;
  const double current = expansion.current_energy();
  if (current <= 1e-14 * initial || initial == 0.0) {
    outcome.converged = true;
    outcome.diagnostics.residual_energy = current;
    outcome.expansion = std::move(expansion);
    return outcome;
  }

  ParametricRHS fhat = residual_rhs(op, rhs, expansion);
  if (fhat.is_zero()) {
    outcome.converged = true;
    outcome.diagnostics.residual_energy = current;
    outcome.expansion = std::move(expansion);
    return outcome;
  }

  OptimizerOptions step_options = options;
  {
    auto warm = warm_starts(op, grid, expansion);
    for (auto& w : warm) step_options.extra_starts.push_back(std::move(w));
  }

  DeflationTerm term;
  if (k == 1) {
    const Rank1Candidate candidate =
        rank1_maximize(op, grid, fhat, step_options);
    const Vector& w = candidate.direction;
    term.basis.vectors = w;
    term.coefficients.coefficients.reserve(
        static_cast<std::size_t>(op.n_nodes()));
    double step_energy = 0.0;
    for (Eigen::Index q = 0; q < op.n_nodes(); ++q) {
      const auto uq = static_cast<std::size_t>(q);
      const double aww = op.forms[uq].quadratic(w);
      if (!(aww > 0.0))
        throw CoercivityError("deflate_step: node form not positive definite");
      const double phi = fhat.vectors[uq].dot(w) / aww;
      term.coefficients.coefficients.push_back(Vector::Constant(1, phi));
      step_energy += grid.weights()[q] * phi * phi * aww;
    }
    term.step_energy = step_energy;
    outcome.diagnostics.stationarity_residual = candidate.stationarity_residual;
    outcome.diagnostics.starts_used = candidate.starts_used;
    outcome.diagnostics.iterations = candidate.iterations;
  } else {
    OptimizerOptions rk = step_options;
    rk.total_energy = current;
    RankKCandidate candidate = rankk_minimize(op, grid, fhat, k, rk);
    double step_energy = 0.0;
    for (Eigen::Index q = 0; q < op.n_nodes(); ++q) {
      const auto uq = static_cast<std::size_t>(q);
      const Vector s_q = candidate.basis.vectors *
                         candidate.coefficients.coefficients[uq];
      step_energy += grid.weights()[q] * op.forms[uq].quadratic(s_q);
    }
    term.basis = std::move(candidate.basis);
    term.coefficients = std::move(candidate.coefficients);
    term.step_energy = step_energy;
    outcome.diagnostics.iterations = candidate.sweeps;
  }

  // Ledger update by exact per-step Pythagoras (Galerkin-optimal term).
  const double next_energy = current - term.step_energy;
  expansion.terms.push_back(std::move(term));
  expansion.residual_energies.push_back(next_energy);

  outcome.diagnostics.step_energy = expansion.terms.back().step_energy;
  outcome.diagnostics.residual_energy = next_energy;
  outcome.diagnostics.wall_ms = elapsed_ms(t0);
  outcome.expansion = std::move(expansion);
  return outcome;
}

DeflationRun run_deflation(const ParametricOperator& op,
                           const ParameterGrid& grid,
                           const ParametricRHS& rhs, Eigen::Index k,
                           double tol, int max_steps,
                           const OptimizerOptions& options) {
  if (!(tol > 0.0))
    throw InvalidArgumentError("run_deflation: tol must be positive");
  if (max_steps < 0)
    throw InvalidArgumentError("run_deflation: max_steps must be >= 0");
  if (max_steps == 0) max_steps = static_cast<int>(2 * op.dim());

  DeflationRun run;
  run.expansion = initial_expansion(op, grid, rhs);
  if (run.expansion.initial_energy == 0.0) {
    run.converged = true;  // f == 0: nothing to approximate
    return run;
  }

  const double initial = run.expansion.initial_energy;
  int stagnant = 0;
  for (int step = 1; step <= max_steps; ++step) {
    StepOutcome outcome =
        deflate_step(op, grid, rhs, std::move(run.expansion), k, options);
    run.expansion = std::move(outcome.expansion);
    if (outcome.converged) {
      run.converged = true;
      break;
    }
    run.steps.push_back(outcome.diagnostics);
    if (run.expansion.current_energy() <= tol * initial) {
      run.converged = true;
      break;
    }
    if (outcome.diagnostics.step_energy < 1e-14 * initial) {
      if (++stagnant >= 3) break;
    } else {
      stagnant = 0;
    }
  }
  return run;
}

IdentityReport verify_identities(const ParametricOperator& op,
                                 const ParameterGrid& grid,
                                 const ParametricRHS& rhs,
                                 const DeflationExpansion& expansion,
                                 const ParametricField& truth) {
  check_expansion_shapes(op, expansion);
  if (truth.n_nodes() != op.n_nodes())
    throw DimensionError("verify_identities: truth node count mismatch");
  IdentityReport report;
  const double initial = expansion.initial_energy;
  const double scale = initial > 0.0 ? initial : 1.0;

  ParametricField partial = ParametricField::zero(op.dim(), op.n_nodes());
  double step_sum = 0.0;
  for (std::size_t i = 0; i < expansion.terms.size(); ++i) {
    const auto& term = expansion.terms[i];
    ParametricField s = ParametricField::zero(op.dim(), op.n_nodes());
    for (Eigen::Index q = 0; q < op.n_nodes(); ++q) {
      const auto uq = static_cast<std::size_t>(q);
      s.values[uq] = term.basis.vectors * term.coefficients.coefficients[uq];
      partial.values[uq] += s.values[uq];
    }
    ParametricField error = truth;
    for (Eigen::Index q = 0; q < op.n_nodes(); ++q)
      error.values[static_cast<std::size_t>(q)] -=
          partial.values[static_cast<std::size_t>(q)];

    IdentityReport::Row row;
    row.step = static_cast<int>(i) + 1;
    row.orthogonality = std::abs(mean_form(op, grid, error, s)) / scale;
    step_sum += term.step_energy;
    const double ledger = expansion.residual_energies[i];
    row.ledger_imbalance = std::abs(ledger + step_sum - initial) / scale;
    row.recomputed_gap =
        std::abs(mean_form(op, grid, error, error) - ledger) / scale;
    report.rows.push_back(row);

    report.max_orthogonality =
        std::max(report.max_orthogonality, row.orthogonality);
    report.max_ledger_imbalance =
        std::max(report.max_ledger_imbalance, row.ledger_imbalance);
    report.max_recomputed_gap =
        std::max(report.max_recomputed_gap, row.recomputed_gap);
  }
  return report;
}

DecayDiagnostic decay_diagnostic(const DeflationExpansion& expansion) {
  DecayDiagnostic diag;
  for (std::size_t i = 0; i < expansion.terms.size(); ++i)
    diag.rows.push_back(
        {static_cast<int>(i) + 1, expansion.terms[i].step_energy});
  if (expansion.terms.size() < 3) return diag;

  // Least squares of log(step_energy) on the step index.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int count = 0;
  for (const auto& row : diag.rows) {
    if (!(row.step_energy > 0.0)) continue;
    const double x = static_cast<double>(row.step);
    const double y = std::log(row.step_energy);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++count;
  }
  if (count < 2) return diag;
  const double denom = count * sxx - sx * sx;
  if (!(denom > 0.0)) return diag;
  const double slope = (count * sxy - sx * sy) / denom;
  diag.slope = slope;
  diag.rho = std::exp(-0.5 * slope);
  return diag;
}

void save_expansion(const std::filesystem::path& dir,
                    const DeflationExpansion& expansion) {
  std::filesystem::create_directories(dir);
  KeyValues meta;
  meta.set("format_version", "1");
  meta.set("n_terms", std::to_string(expansion.terms.size()));
  meta.set("initial_energy", fmt_double(expansion.initial_energy));
  for (std::size_t i = 0; i < expansion.terms.size(); ++i) {
    const std::string prefix = "term_" + std::to_string(i + 1) + ".";
    const auto& term = expansion.terms[i];
    meta.set(prefix + "k", std::to_string(term.basis.vectors.cols()));
    meta.set(prefix + "step_energy", fmt_double(term.step_energy));
    meta.set(prefix + "residual_energy",
             fmt_double(expansion.residual_energies[i]));
  }
  meta.save(dir / "meta");

  for (std::size_t i = 0; i < expansion.terms.size(); ++i) {
    const auto& term = expansion.terms[i];
    mm_write_array(dir / ("B_" + std::to_string(i + 1) + ".mtx"),
                   term.basis.vectors);
    CsvTable csv;
    csv.header.push_back("node");
    for (Eigen::Index j = 0; j < term.basis.vectors.cols(); ++j)
      csv.header.push_back("c_" + std::to_string(j));
    for (Eigen::Index q = 0; q < term.coefficients.n_nodes(); ++q) {
      std::vector<std::string> row;
      row.push_back(std::to_string(q));
      const auto& c = term.coefficients.coefficients[static_cast<std::size_t>(q)];
      for (Eigen::Index j = 0; j < c.size(); ++j)
        row.push_back(fmt_double(c[j]));
      csv.rows.push_back(std::move(row));
    }
    csv.save(dir / ("c_" + std::to_string(i + 1) + ".csv"));
  }
}

DeflationExpansion load_expansion(const std::filesystem::path& dir) {
  const KeyValues meta = KeyValues::load(dir / "meta");
  if (meta.require("format_version") != "1")
    throw IoError("unsupported expansion format_version");
  const auto n_terms = parse_int(meta.require("n_terms"));
  if (n_terms < 0) throw IoError("expansion meta: negative term count");

  DeflationExpansion expansion;
  expansion.initial_energy = parse_double(meta.require("initial_energy"));
  for (long long i = 1; i <= n_terms; ++i) {
    const std::string prefix = "term_" + std::to_string(i) + ".";
    DeflationTerm term;
    term.basis.vectors =
        mm_read_dense(dir / ("B_" + std::to_string(i) + ".mtx"));
    const auto k = parse_int(meta.require(prefix + "k"));
    if (term.basis.vectors.cols() != k)
      throw IoError("expansion term " + std::to_string(i) +
                    ": basis width does not match meta");
    term.step_energy = parse_double(meta.require(prefix + "step_energy"));

    const CsvTable csv =
        CsvTable::load(dir / ("c_" + std::to_string(i) + ".csv"));
    if (static_cast<Eigen::Index>(csv.header.size()) != k + 1)
      throw IoError("expansion term " + std::to_string(i) +
                    ": coefficient column count mismatch");
    term.coefficients.coefficients.reserve(csv.rows.size());
    for (const auto& row : csv.rows) {
      Vector c(k);
      for (Eigen::Index j = 0; j < k; ++j)
        c[j] = parse_double(row[static_cast<std::size_t>(j) + 1]);
      term.coefficients.coefficients.push_back(std::move(c));
    }
    expansion.terms.push_back(std::move(term));
    expansion.residual_energies.push_back(
        parse_double(meta.require(prefix + "residual_energy")));
  }
  return expansion;
}

}  // namespace defrom
