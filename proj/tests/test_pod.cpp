#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "defrom/deflation.hpp"
#include "defrom/errors.hpp"
#include "defrom/pod.hpp"

#include "test_support.hpp"

using namespace defrom;

TEST_CASE("a two-snapshot family reproduces the hand eigendecomposition") {
  // snapshots 2*e1 and e2 with unit weights and the Euclidean inner product:
  // the correlation matrix is diag(4, 1), so the eigenvalues are 4 and 1 and
  // the modes are e1 and e2
  ParametricField truth;
  truth.values = {Vector(2), Vector(2)};
  truth.values[0] << 2.0, 0.0;
  truth.values[1] << 0.0, 1.0;

  DenseMatrix nodes(2, 1);
  nodes << 1.0, 2.0;
  Vector weights(2);
  weights << 1.0, 1.0;
  const ParameterGrid grid(nodes, weights);

  const SymmetricForm inner = SymmetricForm::identity(2);
  const PodBasis pod = pod_modes(truth, grid, inner, 2);

  REQUIRE(pod.eigenvalues.size() == 2);
  CHECK(pod.eigenvalues[0] == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(pod.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-14));
  REQUIRE(pod.modes.size() == 2);
  Vector e1(2), e2(2);
  e1 << 1.0, 0.0;
  e2 << 0.0, 1.0;
  CHECK((pod.modes[0] - e1).norm() <= 1e-14);
  CHECK((pod.modes[1] - e2).norm() <= 1e-14);
}

TEST_CASE("modes are orthonormal in the requested inner product") {
  const testsup::Problem p = testsup::random_family(12, 6, 21);
  const ParametricField truth = truth_solve(p.op, p.rhs);
  const PodBasis pod = pod_modes(truth, p.grid, p.op.reference, 6);

  REQUIRE(pod.modes.size() >= 2);
  for (std::size_t i = 0; i < pod.modes.size(); ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double ip = p.op.reference.apply(pod.modes[j], pod.modes[i]);
      const double expected = (i == j) ? 1.0 : 0.0;
      CHECK(std::abs(ip - expected) <= 1e-12);
    }
  }

  SUBCASE("eigenvalues are sorted and nonnegative") {
    for (std::size_t i = 1; i < pod.eigenvalues.size(); ++i)
      CHECK(pod.eigenvalues[i] <= pod.eigenvalues[i - 1] + 1e-14);
    CHECK(pod.eigenvalues.back() >= -1e-14);
  }

  SUBCASE("sign normalization: first nonzero coordinate is positive") {
    for (const Vector& mode : pod.modes) {
      for (Eigen::Index r = 0; r < mode.size(); ++r) {
        if (mode[r] != 0.0) {
          CHECK(mode[r] > 0.0);
          break;
        }
      }
    }
  }
}

TEST_CASE("identical snapshots collapse to a single retained mode") {
  Vector u(3);
  u << 1.0, 2.0, -1.0;
  ParametricField truth;
  truth.values = {u, u, u};

  DenseMatrix nodes(3, 1);
  nodes << 1.0, 1.5, 2.0;
  const ParameterGrid grid(nodes, Vector::Constant(3, 1.0 / 3.0));

  const PodBasis pod = pod_modes(truth, grid, SymmetricForm::identity(3), 3);
  CHECK(pod.modes.size() == 1);
  CHECK(pod.eigenvalues.size() == 3);
  CHECK(pod.eigenvalues[0] == doctest::Approx(u.squaredNorm()).epsilon(1e-13));
  // the duplicated directions carry eigenvalues at roundoff scale
  for (std::size_t i = 1; i < 3; ++i)
    CHECK(std::abs(pod.eigenvalues[i]) <= 1e-13 * pod.eigenvalues[0]);
}

TEST_CASE("the eigenvalue sum equals the weighted snapshot energy") {
  const testsup::Problem p = testsup::random_family(9, 5, 33);
  const ParametricField truth = truth_solve(p.op, p.rhs);
  const PodBasis pod = pod_modes(truth, p.grid, p.op.reference, 5);

  double trace = 0.0;
  for (double ev : pod.eigenvalues) trace += ev;
  double energy = 0.0;
  for (Eigen::Index q = 0; q < 5; ++q) {
    const auto uq = static_cast<std::size_t>(q);
    energy +=
        p.grid.weights()[q] * p.op.reference.quadratic(truth.values[uq]);
  }
  CHECK(trace == doctest::Approx(energy).epsilon(1e-12));
}

TEST_CASE("the error curve starts at the full energy and is non-increasing") {
  const testsup::Problem p = testsup::random_family(8, 6, 44);
  const ParametricField truth = truth_solve(p.op, p.rhs);
  const PodBasis pod = pod_modes(truth, p.grid, p.op.reference, 6);
  const std::vector<double> curve =
      pod_error_curve(pod, p.op, p.grid, p.rhs, truth);

  REQUIRE(curve.size() == pod.modes.size() + 1);
  const double total = mean_form(p.op, p.grid, truth, truth);
  CHECK(curve[0] == doctest::Approx(total).epsilon(1e-12));
  for (std::size_t m = 1; m < curve.size(); ++m)
    CHECK(curve[m] <= curve[m - 1] + 1e-12 * total);

  SUBCASE("six snapshots in eight dimensions are reproduced exactly") {
    // the snapshot span has dimension <= 6, so the full mode set drives the
    // projection error to roundoff
    CHECK(curve.back() <= 1e-12 * total);
  }
}

TEST_CASE("degenerate requests are handled explicitly") {
  const testsup::Problem p = testsup::random_family(5, 3, 9);
  const ParametricField truth = truth_solve(p.op, p.rhs);

  SUBCASE("k = 0 yields an empty basis") {
    const PodBasis pod = pod_modes(truth, p.grid, p.op.reference, 0);
    CHECK(pod.modes.empty());
    CHECK(pod.eigenvalues.empty());
    const std::vector<double> curve =
        pod_error_curve(pod, p.op, p.grid, p.rhs, truth);
    REQUIRE(curve.size() == 1);
    CHECK(curve[0] ==
          doctest::Approx(mean_form(p.op, p.grid, truth, truth))
              .epsilon(1e-12));
  }

  SUBCASE("k beyond min(dim, n_nodes) is rejected") {
    CHECK_THROWS_AS(pod_modes(truth, p.grid, p.op.reference, 4),
                    InvalidArgumentError);
    CHECK_THROWS_AS(pod_modes(truth, p.grid, p.op.reference, -1),
                    InvalidArgumentError);
  }
}

TEST_CASE("pod bases round-trip bit-exactly through disk") {
  testsup::TempDir dir;
  const testsup::Problem p = testsup::random_family(7, 4, 58);
  const ParametricField truth = truth_solve(p.op, p.rhs);
  const PodBasis pod = pod_modes(truth, p.grid, p.op.reference, 4);
  REQUIRE(!pod.modes.empty());

  save_pod(dir.path() / "pod", pod);
  const PodBasis in = load_pod(dir.path() / "pod");

  REQUIRE(in.modes.size() == pod.modes.size());
  REQUIRE(in.eigenvalues.size() == pod.eigenvalues.size());
  for (std::size_t i = 0; i < in.modes.size(); ++i)
    CHECK((in.modes[i].array() == pod.modes[i].array()).all());
  for (std::size_t i = 0; i < in.eigenvalues.size(); ++i)
    CHECK(in.eigenvalues[i] == pod.eigenvalues[i]);

  SUBCASE("missing artifacts raise IoError") {
    CHECK_THROWS_AS(load_pod(dir.path() / "absent"), IoError);
  }
}

TEST_CASE("with a fixed operator the error curve matches the eigen-tail") {
  // when every node shares one form A and that form is both the inner
  // product and the error metric, the Galerkin projection onto the leading m
  // modes leaves exactly the trailing eigenvalue mass
  const testsup::Problem p = testsup::gamma_independent(10, 6, 19);
  const ParametricField truth = truth_solve(p.op, p.rhs);
  const PodBasis pod = pod_modes(truth, p.grid, p.op.reference, 6);
  const std::vector<double> curve =
      pod_error_curve(pod, p.op, p.grid, p.rhs, truth);

  REQUIRE(curve.size() == pod.modes.size() + 1);
  for (std::size_t m = 0; m < curve.size(); ++m) {
    double tail = 0.0;
    for (std::size_t i = m; i < pod.eigenvalues.size(); ++i)
      tail += pod.eigenvalues[i];
    CHECK(curve[m] == doctest::Approx(tail).epsilon(1e-8));
  }
}
