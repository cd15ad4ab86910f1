// Acceptance gate: every release-blocking property of the library pinned in
// one binary. Each criterion prints exactly one [PASS]/[FAIL] line with the
// worst measured deviation; the exit code is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "defrom/cli.hpp"
#include "defrom/deflation.hpp"
#include "defrom/galerkin.hpp"
#include "defrom/hilbert.hpp"
#include "defrom/parametric.hpp"
#include "defrom/pod.hpp"
#include "defrom/rng.hpp"
#include "defrom/subspace_opt.hpp"
#include "defrom/text_io.hpp"

#include "test_support.hpp"

using namespace defrom;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// The 50 seeded families shared by the ledger and Galerkin criteria:
// dimensions sweep [6, 64] and node counts sweep [2, 16].
Problem shared_family(int i) {
  const Eigen::Index n = 6 + (static_cast<Eigen::Index>(i) * 11) % 59;
  const Eigen::Index q = 2 + (static_cast<Eigen::Index>(i) * 7) % 15;
  return generate_random_spd_family(n, q, 1000 + static_cast<std::uint64_t>(i));
}

ParametricField term_field(const DeflationTerm& term) {
  ParametricField s;
  for (const Vector& c : term.coefficients.coefficients)
    s.values.push_back(term.basis.vectors * c);
  return s;
}

// Recomputes the energy ledger from scratch: materializes every partial sum,
// measures the true error energy and every step energy directly in the mean
// form, and returns the worst relative defect of
//   abar(e_i, e_i) + sum_{j <= i} abar(s_j, s_j) = abar(u, u).
double max_ledger_deviation(const Problem& p, const DeflationExpansion& exp,
                            const ParametricField& truth) {
  const double e0 = mean_form(p.op, p.grid, truth, truth);
  if (!(e0 > 0.0)) return 0.0;

  ParametricField partial;
  for (const Vector& u : truth.values)
    partial.values.push_back(Vector::Zero(u.size()));

  double captured = 0.0;
  double worst = 0.0;
  for (const DeflationTerm& term : exp.terms) {
    const ParametricField s = term_field(term);
    captured += mean_form(p.op, p.grid, s, s);
    for (std::size_t q = 0; q < partial.values.size(); ++q)
      partial.values[q] += s.values[q];
    const double err = mean_error(p.op, p.grid, truth, partial);
    worst = std::max(worst, std::abs(err + captured - e0) / e0);
  }
  return worst;
}

SubspaceBasis random_basis(Eigen::Index n, Eigen::Index k,
                           std::uint64_t seed) {
  Rng rng(seed);
  SubspaceBasis basis;
  basis.vectors = DenseMatrix(n, k);
  for (Eigen::Index j = 0; j < k; ++j) basis.vectors.col(j) = rng.normal_vector(n);
  return basis;
}

// Criterion 1: the per-step energy ledger identity, recomputed directly,
// on 50 random families and the diffusion benchmark.
Outcome criterion_ledger(const Problem& diffusion, const DeflationRun& diff_run,
                         const ParametricField& diff_truth) {
  OptimizerOptions lean;  // ledger exactness does not depend on start count
  lean.tol = 1e-6;
  lean.n_starts = 2;

  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Problem p = shared_family(i);
    const DeflationRun run =
        run_deflation(p.op, p.grid, p.rhs, 1, 1e-8, 6, lean);
    const ParametricField truth = truth_solve(p.op, p.rhs);
    worst = std::max(worst, max_ledger_deviation(p, run.expansion, truth));
  }
  worst = std::max(worst,
                   max_ledger_deviation(diffusion, diff_run.expansion,
                                        diff_truth));

  std::ostringstream detail;
  detail << "max relative defect " << fmt_double(worst)
         << " over 50 families + diffusion";
  return {worst <= 1e-10, detail.str()};
}

// Criterion 2: node-wise Galerkin orthogonality and the duality identity
// abar(u - u_Z, u - u_Z) = abar(u, u) - sum_q w_q <f_q, u_Z_q>.
Outcome criterion_galerkin(void) {
  double worst_orth = 0.0;
  double worst_dual = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Problem p = shared_family(i);
    const ParametricField truth = truth_solve(p.op, p.rhs);
    const double total = mean_form(p.op, p.grid, truth, truth);
    for (Eigen::Index k = 1; k <= 4; ++k) {
      const SubspaceBasis basis =
          random_basis(p.op.dim(), k, 20000 + 10 * static_cast<std::uint64_t>(i) + static_cast<std::uint64_t>(k));
      const GalerkinSolution sol = galerkin_solve(basis, p.op, p.rhs);
      for (Eigen::Index q = 0; q < p.grid.n_nodes(); ++q) {
        const auto uq = static_cast<std::size_t>(q);
        const Vector residual =
            p.rhs.vectors[uq] - p.op.forms[uq].multiply(sol.field.values[uq]);
        const double scale =
            (basis.vectors.transpose() * p.rhs.vectors[uq]).norm();
        if (scale > 0.0)
          worst_orth = std::max(
              worst_orth,
              (basis.vectors.transpose() * residual).norm() / scale);
      }
      const double err = mean_error(p.op, p.grid, truth, sol.field);
      const double dual = total - output_functional(p.rhs, p.grid, sol.field);
      worst_dual = std::max(worst_dual, std::abs(err - dual) / total);
    }
  }
  std::ostringstream detail;
  detail << "orthogonality " << fmt_double(worst_orth) << ", duality "
         << fmt_double(worst_dual);
  return {worst_orth <= 1e-10 && worst_dual <= 1e-12, detail.str()};
}

// Criterion 3: the rank-1 search beats dense direction scans (1e6 points in
// 2d, 1e4 x 1e4 in 3d) to 1e-6 absolute on the worked example and random
// instances.
Outcome criterion_brute_force(void) {
  double worst_gap = -1e300;  // scan minus optimizer, should stay <= ~0
  const auto measure = [&](const Problem& p, double scan) {
    const Rank1Candidate cand = rank1_maximize(p.op, p.grid, p.rhs);
    worst_gap = std::max(worst_gap, scan - cand.objective);
  };

  const Problem diag = testsup::diag_example();
  measure(diag, testsup::brute_force_rank1_2d(diag, 1000000));
  const Problem flat = generate_random_spd_family(2, 5, 301);
  measure(flat, testsup::brute_force_rank1_2d(flat, 1000000));
  const Problem solid_a = generate_random_spd_family(3, 4, 302);
  measure(solid_a, testsup::brute_force_rank1_3d(solid_a, 10000, 10000));
  const Problem solid_b = generate_random_spd_family(3, 6, 303);
  measure(solid_b, testsup::brute_force_rank1_3d(solid_b, 10000, 10000));

  std::ostringstream detail;
  detail << "worst scan-minus-optimizer gap " << fmt_double(worst_gap);
  return {worst_gap <= 1e-6, detail.str()};
}

// Criterion 4: the analytic gradient against central differences on 100
// random unit directions, plus the exact Euler identity <grad J(z), z> = 0.
Outcome criterion_gradient(void) {
  double worst_fd = 0.0;
  double worst_euler = 0.0;
  for (int i = 0; i < 10; ++i) {
    const Problem p = generate_random_spd_family(
        4 + (i % 7), 2 + (i % 5), 400 + static_cast<std::uint64_t>(i));
    Rng rng(500 + static_cast<std::uint64_t>(i));
    for (int j = 0; j < 10; ++j) {
      Vector z = rng.normal_vector(p.op.dim());
      z /= z.norm();
      const Vector g = rank1_gradient(z, p.op, p.grid, p.rhs);
      const Vector fd = testsup::fd_rank1_gradient(z, p);
      if (g.norm() > 0.0)
        worst_fd = std::max(worst_fd, (g - fd).norm() / g.norm());
      const double value = rank1_objective(z, p.op, p.grid, p.rhs);
      if (value > 0.0)
        worst_euler = std::max(worst_euler, std::abs(g.dot(z)) / value);
    }
  }
  std::ostringstream detail;
  detail << "fd mismatch " << fmt_double(worst_fd) << ", euler defect "
         << fmt_double(worst_euler);
  return {worst_fd <= 1e-6 && worst_euler <= 1e-10, detail.str()};
}

// Criterion 5: for a parameter-independent operator used as the inner
// product, rank-1 deflation reproduces the POD eigen-tail curve and the
// subspaces agree (principal angles) at every spectral-gap boundary.
Outcome criterion_pod_oracle(void) {
  double worst_curve = 0.0;
  double worst_angle = 0.0;
  for (std::uint64_t seed : {7ull, 8ull}) {
    const Problem p = testsup::gamma_independent(12, 10, seed);
    const ParametricField truth = truth_solve(p.op, p.rhs);

    OptimizerOptions tight;
    tight.tol = 1e-12;
    const DeflationRun run =
        run_deflation(p.op, p.grid, p.rhs, 1, 1e-13, 8, tight);
    if (run.expansion.terms.size() < 8) return {false, "fewer than 8 steps"};

    const PodBasis pod = pod_modes(truth, p.grid, p.op.reference, 10);

    // curve match: residual energy after m steps vs trailing eigenvalue mass
    for (std::size_t m = 0; m <= 8; ++m) {
      double tail = 0.0;
      for (std::size_t i = m; i < pod.eigenvalues.size(); ++i)
        tail += pod.eigenvalues[i];
      const double defl = m == 0 ? run.expansion.initial_energy
                                 : run.expansion.residual_energies[m - 1];
      worst_curve = std::max(worst_curve, std::abs(defl - tail) / tail);
    }

    // subspace match at every m <= 8 whose spectral gap is resolved
    for (std::size_t m = 1; m <= 8; ++m) {
      const double gap = pod.eigenvalues[m - 1] - pod.eigenvalues[m];
      if (gap < 1e-5 * pod.eigenvalues[0]) continue;  // unstable boundary
      DenseMatrix defl_span(12, static_cast<Eigen::Index>(m));
      DenseMatrix pod_span(12, static_cast<Eigen::Index>(m));
      for (std::size_t i = 0; i < m; ++i) {
        defl_span.col(static_cast<Eigen::Index>(i)) =
            run.expansion.terms[i].basis.vectors.col(0);
        pod_span.col(static_cast<Eigen::Index>(i)) = pod.modes[i];
      }
      const std::vector<double> angles =
          principal_angles(defl_span, pod_span, p.op.reference);
      if (!angles.empty())
        worst_angle = std::max(worst_angle, angles.back());
    }
  }
  std::ostringstream detail;
  detail << "curve mismatch " << fmt_double(worst_curve) << ", max angle "
         << fmt_double(worst_angle);
  return {worst_curve <= 1e-8 && worst_angle <= 1e-6, detail.str()};
}

// Criterion 6: a one-node grid is solved exactly by a single rank-1 step.
Outcome criterion_singleton(void) {
  std::vector<Problem> problems;
  problems.push_back(testsup::random_family(5, 1, 601));
  problems.push_back(testsup::random_family(9, 1, 602));
  problems.push_back(testsup::random_family(17, 1, 603));
  problems.push_back(
      generate_diffusion_1d(16, QuadratureSpec::gauss(1, 1.0, 2.0)));

  double worst = 0.0;
  for (const Problem& p : problems) {
    const StepOutcome out = deflate_step(p.op, p.grid, p.rhs, {}, 1);
    if (out.expansion.residual_energies.empty()) return {false, "no step taken"};
    worst = std::max(worst, out.expansion.residual_energies[0] /
                                out.expansion.initial_energy);
  }
  std::ostringstream detail;
  detail << "worst residual fraction " << fmt_double(worst)
         << " after one step";
  return {worst <= 1e-10, detail.str()};
}

// Criterion 7: the diffusion benchmark converges monotonically below 1e-6
// of the initial energy within 64 steps, and the ledger maintained by the
// residual-only driver matches truth-based recomputation to 1e-10 of the
// initial energy.
Outcome criterion_diffusion(const Problem& diffusion,
                            const DeflationRun& diff_run,
                            const ParametricField& diff_truth) {
  const DeflationExpansion& exp = diff_run.expansion;
  bool decreasing = true;
  double prev = exp.initial_energy;
  for (double e : exp.residual_energies) {
    if (!(e < prev)) decreasing = false;
    prev = e;
  }
  const bool converged = diff_run.converged &&
                         exp.terms.size() <= 64 &&
                         exp.current_energy() <= 1e-6 * exp.initial_energy;
  const IdentityReport rep = verify_identities(
      diffusion.op, diffusion.grid, diffusion.rhs, exp, diff_truth);

  std::ostringstream detail;
  detail << exp.terms.size() << " steps, final fraction "
         << fmt_double(exp.current_energy() / exp.initial_energy)
         << ", ledger gap " << fmt_double(rep.max_recomputed_gap);
  return {decreasing && converged && rep.max_recomputed_gap <= 1e-10,
          detail.str()};
}

// Criterion 8: enlarging a basis never increases the mean error.
Outcome criterion_monotonicity(void) {
  Rng rng(800);
  double worst_excess = -1e300;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index n = 4 + static_cast<Eigen::Index>(rng.next_raw() % 9);
    const Eigen::Index q = 1 + static_cast<Eigen::Index>(rng.next_raw() % 5);
    const Problem p =
        testsup::random_family(n, q, 8000 + static_cast<std::uint64_t>(trial));
    const ParametricField truth = truth_solve(p.op, p.rhs);
    const double total = mean_form(p.op, p.grid, truth, truth);

    const Eigen::Index k =
        1 + static_cast<Eigen::Index>(rng.next_raw() % 3);
    const SubspaceBasis small =
        random_basis(n, std::min(k, n - 1), 9000 + static_cast<std::uint64_t>(trial));
    SubspaceBasis big;
    big.vectors = DenseMatrix(n, small.rank_hint() + 1);
    big.vectors.leftCols(small.rank_hint()) = small.vectors;
    Rng extra(9500 + static_cast<std::uint64_t>(trial));
    big.vectors.col(small.rank_hint()) = extra.normal_vector(n);

    const double err_small =
        mean_error(p.op, p.grid, truth,
                   galerkin_solve(small, p.op, p.rhs).field);
    const double err_big =
        mean_error(p.op, p.grid, truth, galerkin_solve(big, p.op, p.rhs).field);
    worst_excess = std::max(worst_excess, (err_big - err_small) / total);
  }
  std::ostringstream detail;
  detail << "worst relative increase " << fmt_double(worst_excess)
         << " over 1000 trials";
  return {worst_excess <= 1e-12, detail.str()};
}

// Criterion 9: one config, one seed, two runs: byte-identical CSV artifacts
// through the command-line entry point.
Outcome criterion_reproducibility(void) {
  testsup::TempDir tmp;
  const auto config_for = [&](const std::string& out_dir) {
    std::ostringstream cfg;
    cfg << "problem.generator = random_spd\n"
        << "problem.n = 14\n"
        << "problem.n_nodes = 5\n"
        << "method = both\n"
        << "pod.k = 5\n"
        << "deflation.tol = 1e-8\n"
        << "seed = 11\n"
        << "output_dir = " << (tmp.path() / out_dir).string() << "\n";
    return cfg.str();
  };
  const auto run_once = [&](const std::string& cfg_name,
                            const std::string& out_dir,
                            const std::string& sub) {
    const auto path = tmp.path() / cfg_name;
    write_file(path, config_for(out_dir));
    std::ostringstream out, err;
    return cli_main({sub, path.string()}, out, err);
  };

  if (run_once("a.cfg", "a", "run") != 0) return {false, "first run failed"};
  if (run_once("b.cfg", "b", "run") != 0) return {false, "second run failed"};
  const bool run_same = read_file(tmp.path() / "a" / "curves.csv") ==
                        read_file(tmp.path() / "b" / "curves.csv");

  if (run_once("c.cfg", "c", "compare") != 0)
    return {false, "first compare failed"};
  if (run_once("d.cfg", "d", "compare") != 0)
    return {false, "second compare failed"};
  const bool cmp_same = read_file(tmp.path() / "c" / "compare.csv") ==
                            read_file(tmp.path() / "d" / "compare.csv") &&
                        read_file(tmp.path() / "c" / "rates.csv") ==
                            read_file(tmp.path() / "d" / "rates.csv");

  std::ostringstream detail;
  detail << "curves.csv " << (run_same ? "identical" : "differ")
         << ", compare.csv/rates.csv " << (cmp_same ? "identical" : "differ");
  return {run_same && cmp_same, detail.str()};
}

}  // namespace

int main() {
  // The diffusion benchmark run is shared between criteria 1 and 7.
  const Problem diffusion =
      generate_diffusion_1d(64, QuadratureSpec::gauss(33, 1.0, 2.0));
  const DeflationRun diff_run =
      run_deflation(diffusion.op, diffusion.grid, diffusion.rhs, 1, 1e-6, 64);
  const ParametricField diff_truth = truth_solve(diffusion.op, diffusion.rhs);

  struct Criterion {
    const char* name;
    std::function<Outcome()> check;
    double budget_s;  // criterion fails when exceeded
  };
  const std::vector<Criterion> criteria = {
      {"energy-ledger identity",
       [&] { return criterion_ledger(diffusion, diff_run, diff_truth); }, 60},
      {"galerkin orthogonality + duality", criterion_galerkin, 600},
      {"rank-1 search vs dense scans", criterion_brute_force, 120},
      {"gradient vs finite differences + euler", criterion_gradient, 600},
      {"pod eigen-tail + subspace oracle", criterion_pod_oracle, 600},
      {"singleton-grid exactness", criterion_singleton, 600},
      {"diffusion convergence + ledger gap",
       [&] { return criterion_diffusion(diffusion, diff_run, diff_truth); },
       120},
      {"monotonicity under basis extension", criterion_monotonicity, 600},
      {"bit-identical reruns", criterion_reproducibility, 600},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = criteria[i].check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (elapsed > criteria[i].budget_s) {
      outcome.pass = false;
      outcome.detail += " [over time budget]";
    }
    ++failures;  // assume the worst until the line is printed
    std::printf("[%s] %zu %s: %s (%.1f s)\n", outcome.pass ? "PASS" : "FAIL",
                i + 1, criteria[i].name, outcome.detail.c_str(), elapsed);
    std::fflush(stdout);
    if (outcome.pass) --failures;
  }
  std::printf("%d of 9 criteria passed\n", 9 - failures);
  return failures;
}
