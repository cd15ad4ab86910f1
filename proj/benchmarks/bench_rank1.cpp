// Microbenchmarks for the rank-1 objective hot path: a single J evaluation,
// a gradient evaluation, and a full multi-start search. Problem sizes sweep
// the dimension at a fixed node count of 8.

#include <benchmark/benchmark.h>

#include "defrom/parametric.hpp"
#include "defrom/rng.hpp"
#include "defrom/subspace_opt.hpp"

using namespace defrom;

namespace {

Problem make_problem(Eigen::Index n) {
  return generate_random_spd_family(n, 8, 42);
}

Vector unit_direction(Eigen::Index n) {
  Rng rng(7);
  Vector z = rng.normal_vector(n);
  return z / z.norm();
}

}  // namespace

static void bm_rank1_objective(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Problem p = make_problem(n);
  const Vector z = unit_direction(n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rank1_objective(z, p.op, p.grid, p.rhs));
  }
}
BENCHMARK(bm_rank1_objective)->Arg(16)->Arg(64)->Arg(256);

static void bm_rank1_gradient(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Problem p = make_problem(n);
  const Vector z = unit_direction(n);
  for (auto _ : state) {
    Vector g = rank1_gradient(z, p.op, p.grid, p.rhs);
    benchmark::DoNotOptimize(g.data());
  }
}
BENCHMARK(bm_rank1_gradient)->Arg(16)->Arg(64)->Arg(256);

static void bm_rank1_maximize(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Problem p = make_problem(n);
  for (auto _ : state) {
    const Rank1Candidate cand = rank1_maximize(p.op, p.grid, p.rhs);
    benchmark::DoNotOptimize(cand.objective);
  }
}
BENCHMARK(bm_rank1_maximize)->Arg(8)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
