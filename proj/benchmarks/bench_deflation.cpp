// Microbenchmarks for the expansion pipeline: one Galerkin projection, one
// rank-1 deflation step, a full run on the diffusion benchmark, and the
// POD eigendecomposition it is compared against.

#include <benchmark/benchmark.h>

#include "defrom/deflation.hpp"
#include "defrom/galerkin.hpp"
#include "defrom/parametric.hpp"
#include "defrom/pod.hpp"
#include "defrom/rng.hpp"

using namespace defrom;

namespace {

SubspaceBasis random_basis(Eigen::Index n, Eigen::Index k) {
  Rng rng(11);
  SubspaceBasis basis;
  basis.vectors = DenseMatrix(n, k);
  for (Eigen::Index j = 0; j < k; ++j)
    basis.vectors.col(j) = rng.normal_vector(n);
  return basis;
}

}  // namespace

static void bm_galerkin_solve(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Eigen::Index k = state.range(1);
  const Problem p = generate_random_spd_family(n, 8, 42);
  const SubspaceBasis basis = random_basis(n, k);
  for (auto _ : state) {
    const GalerkinSolution sol = galerkin_solve(basis, p.op, p.rhs);
    benchmark::DoNotOptimize(sol.coefficients.coefficients.data());
  }
}
BENCHMARK(bm_galerkin_solve)->Args({64, 4})->Args({64, 16})->Args({256, 8});

static void bm_deflate_step_rank1(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Problem p = generate_random_spd_family(n, 8, 42);
  for (auto _ : state) {
    const StepOutcome out = deflate_step(p.op, p.grid, p.rhs, {}, 1);
    benchmark::DoNotOptimize(out.expansion.residual_energies.data());
  }
}
BENCHMARK(bm_deflate_step_rank1)
    ->Arg(16)
    ->Arg(64)
    ->Unit(benchmark::kMillisecond);

static void bm_run_deflation_diffusion(benchmark::State& state) {
  const Problem p =
      generate_diffusion_1d(64, QuadratureSpec::gauss(33, 1.0, 2.0));
  for (auto _ : state) {
    const DeflationRun run = run_deflation(p.op, p.grid, p.rhs, 1, 1e-6, 64);
    benchmark::DoNotOptimize(run.expansion.residual_energies.data());
  }
}
BENCHMARK(bm_run_deflation_diffusion)->Unit(benchmark::kMillisecond);

static void bm_pod_modes(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Problem p = generate_random_spd_family(n, 16, 42);
  const ParametricField truth = truth_solve(p.op, p.rhs);
  for (auto _ : state) {
    const PodBasis pod = pod_modes(truth, p.grid, p.op.reference, 8);
    benchmark::DoNotOptimize(pod.eigenvalues.data());
  }
}
BENCHMARK(bm_pod_modes)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
