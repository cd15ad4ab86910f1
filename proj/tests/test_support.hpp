#pragma once

// Shared fixtures and oracles for the test binaries. Everything is inline;
// each test file is its own translation unit and executable.

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "defrom/galerkin.hpp"
#include "defrom/parallel.hpp"
#include "defrom/parametric.hpp"
#include "defrom/rng.hpp"
#include "defrom/subspace_opt.hpp"

namespace testsup {

using defrom::DenseMatrix;
using defrom::ParameterGrid;
using defrom::ParametricOperator;
using defrom::ParametricRHS;
using defrom::Problem;
using defrom::SymmetricForm;
using defrom::Vector;

// Worked two-dimensional example: A_q = diag(1, gamma_q) with gamma in
// {1, 2}, equal weights 1/2, f = (1, 1) at both nodes. Hand values:
//   u_1 = (1, 1), u_2 = (1, 1/2), abar(u, u) = 7/4,
//   max_z J(z) = 1.7006690179584587 (dense direction scan, 1e6 points).
inline Problem diag_example() {
  DenseMatrix nodes(2, 1);
  nodes << 1.0, 2.0;
  Vector weights(2);
  weights << 0.5, 0.5;
  DenseMatrix a1(2, 2), a2(2, 2);
  a1 << 1, 0, 0, 1;
  a2 << 1, 0, 0, 2;
  std::vector<SymmetricForm> forms{SymmetricForm(a1), SymmetricForm(a2)};
  ParametricRHS rhs;
  rhs.vectors = {Vector::Ones(2), Vector::Ones(2)};
  return Problem{ParametricOperator(std::move(forms),
                                    SymmetricForm::identity(2), 1.0),
                 ParameterGrid(nodes, weights), std::move(rhs)};
}

inline double diag_example_total_energy() { return 1.75; }
inline double diag_example_rank1_max() { return 1.7006690179584587; }

// Family with a parameter-independent operator (every node shares one SPD
// form, which is also the reference) and node-dependent right-hand sides.
inline Problem gamma_independent(Eigen::Index n, Eigen::Index n_nodes,
                                 std::uint64_t seed) {
  defrom::Rng rng(seed);
  DenseMatrix g(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = rng.normal();
  DenseMatrix a = g * g.transpose() / static_cast<double>(n) +
                  DenseMatrix::Identity(n, n);
  a = ((a + a.transpose()) / 2.0).eval();
  SymmetricForm form(a);

  DenseMatrix nodes(n_nodes, 1);
  Vector weights(n_nodes);
  for (Eigen::Index q = 0; q < n_nodes; ++q) {
    nodes(q, 0) = static_cast<double>(q);
    weights[q] = 0.5 + rng.uniform();
  }
  ParametricRHS rhs;
  for (Eigen::Index q = 0; q < n_nodes; ++q)
    rhs.vectors.push_back(rng.normal_vector(n));
  std::vector<SymmetricForm> forms(static_cast<std::size_t>(n_nodes), form);
  return Problem{ParametricOperator(std::move(forms), form, 1.0),
                 ParameterGrid(nodes, weights), std::move(rhs)};
}

// Central finite-difference gradient of the rank-1 objective.
inline Vector fd_rank1_gradient(const Vector& z, const Problem& p,
                                double h = 1e-5) {
  Vector g(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Vector zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    g[i] = (defrom::rank1_objective(zp, p.op, p.grid, p.rhs) -
            defrom::rank1_objective(zm, p.op, p.grid, p.rhs)) /
           (2.0 * h);
  }
  return g;
}

// Dense direction scans for the rank-1 objective; these are the brute-force
// oracles the optimizer is measured against. Directions come in antipodal
// pairs, so half the sphere suffices.
inline double brute_force_rank1_2d(const Problem& p, int n_theta) {
  const double pi = 3.14159265358979323846;
  double best = 0.0;
  for (int i = 0; i < n_theta; ++i) {
    const double th = pi * static_cast<double>(i) / n_theta;
    Vector z(2);
    z << std::cos(th), std::sin(th);
    best = std::max(best, defrom::rank1_objective(z, p.op, p.grid, p.rhs));
  }
  return best;
}

inline double brute_force_rank1_3d(const Problem& p, int n_polar,
                                   int n_azimuth) {
  const double pi = 3.14159265358979323846;
  std::vector<double> row_best(static_cast<std::size_t>(n_polar), 0.0);
  defrom::parallel_for(0, static_cast<std::size_t>(n_polar), [&](std::size_t i) {
    const double th = pi * (static_cast<double>(i) + 0.5) / n_polar;
    const double st = std::sin(th), ct = std::cos(th);
    double best = 0.0;
    Vector z(3);
    for (int j = 0; j < n_azimuth; ++j) {
      const double ph = pi * static_cast<double>(j) / n_azimuth;  // half turn
      z << st * std::cos(ph), st * std::sin(ph), ct;
      best = std::max(best, defrom::rank1_objective(z, p.op, p.grid, p.rhs));
    }
    row_best[i] = best;
  });
  double best = 0.0;
  for (double v : row_best) best = std::max(best, v);
  return best;
}

// Seeded random SPD problem of adjustable size; thin wrapper around the
// library generator for tests that only need "some" well-posed family.
inline Problem random_family(Eigen::Index n, Eigen::Index n_nodes,
                             std::uint64_t seed) {
  return defrom::generate_random_spd_family(n, n_nodes, seed);
}

// Self-cleaning unique temporary directory.
class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    const auto base = std::filesystem::temp_directory_path();
    do {
      path_ = base / ("defrom_test_" + std::to_string(::getpid()) + "_" +
                      std::to_string(counter++));
    } while (std::filesystem::exists(path_));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testsup
