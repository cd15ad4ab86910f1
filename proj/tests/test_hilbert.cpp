#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "defrom/errors.hpp"
#include "defrom/hilbert.hpp"
#include "defrom/rng.hpp"

#include "test_support.hpp"

using namespace defrom;

namespace {

constexpr double kPi = 3.14159265358979323846;

DenseMatrix random_spd(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix g(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = rng.normal();
  DenseMatrix a =
      g * g.transpose() / static_cast<double>(n) + DenseMatrix::Identity(n, n);
  return ((a + a.transpose()) / 2.0).eval();
}

SparseMatrix tridiag_spd(Eigen::Index n) {
  std::vector<Eigen::Triplet<double>> trips;
  for (Eigen::Index i = 0; i < n; ++i) {
    trips.emplace_back(i, i, 2.0);
    if (i + 1 < n) {
      trips.emplace_back(i, i + 1, -1.0);
      trips.emplace_back(i + 1, i, -1.0);
    }
  }
  SparseMatrix m(n, n);
  m.setFromTriplets(trips.begin(), trips.end());
  m.makeCompressed();
  return m;
}

}  // namespace

TEST_CASE("construction rejects asymmetric or non-finite matrices") {
  DenseMatrix m(2, 2);
  // one ulp of asymmetry is already rejected: symmetry is checked bitwise
  m << 1.0, 0.5, std::nextafter(0.5, 1.0), 1.0;
  CHECK_THROWS_AS(SymmetricForm{m}, InvalidArgumentError);

  DenseMatrix inf(2, 2);
  inf << 1.0, 0.0, 0.0, std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(SymmetricForm{inf}, InvalidArgumentError);

  DenseMatrix nan_(1, 1);
  nan_ << std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(SymmetricForm{nan_}, InvalidArgumentError);

  DenseMatrix rect(2, 3);
  rect.setZero();
  CHECK_THROWS_AS(SymmetricForm{rect}, InvalidArgumentError);

  SUBCASE("sparse asymmetry is caught as well") {
    SparseMatrix s(2, 2);
    s.insert(0, 1) = 1.0;
    s.insert(1, 0) = std::nextafter(1.0, 2.0);
    s.insert(0, 0) = 1.0;
    s.insert(1, 1) = 1.0;
    s.makeCompressed();
    CHECK_THROWS_AS(SymmetricForm{s}, InvalidArgumentError);
  }
}

TEST_CASE("apply, quadratic, and multiply agree with dense algebra") {
  const DenseMatrix a = random_spd(6, 1);
  const SymmetricForm form(a);
  Rng rng(2);
  const Vector v = rng.normal_vector(6);
  const Vector w = rng.normal_vector(6);

  CHECK(form.dim() == 6);
  CHECK_FALSE(form.is_sparse());
  CHECK(form.apply(v, w) == doctest::Approx(v.dot(a * w)).epsilon(1e-14));
  CHECK(form.apply(v, v) == form.quadratic(v));
  // bilinear symmetry holds bitwise by construction
  CHECK(form.apply(v, w) == form.apply(w, v));
  CHECK((form.multiply(v) - a * v).norm() == 0.0);

  SUBCASE("dimension mismatches raise") {
    const Vector bad = rng.normal_vector(5);
    CHECK_THROWS_AS(form.apply(bad, bad), DimensionError);
    CHECK_THROWS_AS(form.multiply(bad), DimensionError);
  }
}

TEST_CASE("solve inverts SPD forms and reports indefinite ones") {
  SUBCASE("dense") {
    const DenseMatrix a = random_spd(8, 3);
    const SymmetricForm form(a);
    Rng rng(4);
    const Vector b = rng.normal_vector(8);
    const Vector x = form.solve(b);
    CHECK((a * x - b).norm() <= 1e-12 * b.norm());
  }

  SUBCASE("sparse") {
    const SymmetricForm form(tridiag_spd(30));
    Rng rng(5);
    const Vector b = rng.normal_vector(30);
    const Vector x = form.solve(b);
    CHECK((form.multiply(x) - b).norm() <= 1e-12 * b.norm());
  }

  SUBCASE("indefinite dense fails on every solve call") {
    DenseMatrix ind(2, 2);
    ind << 1.0, 0.0, 0.0, -1.0;
    const SymmetricForm form(ind);
    const Vector b = Vector::Ones(2);
    CHECK_THROWS_AS((void)form.solve(b), FactorizationError);
    // the failed factorization is cached, not retried silently
    CHECK_THROWS_AS((void)form.solve(b), FactorizationError);
  }
}

TEST_CASE("identity form behaves like the Euclidean inner product") {
  const SymmetricForm id = SymmetricForm::identity(4);
  Rng rng(6);
  const Vector v = rng.normal_vector(4);
  CHECK(id.quadratic(v) == doctest::Approx(v.squaredNorm()).epsilon(1e-15));
  CHECK((id.solve(v) - v).norm() == 0.0);
  CHECK(id.is_sparse());
}

TEST_CASE("weighted_sum matches the explicit linear combination") {
  std::vector<SymmetricForm> forms;
  forms.emplace_back(random_spd(5, 7));
  forms.emplace_back(random_spd(5, 8));
  forms.emplace_back(tridiag_spd(5));
  Vector w(3);
  w << 0.25, 1.5, 2.0;

  const SymmetricForm sum = weighted_sum(forms, w);
  const DenseMatrix expected = 0.25 * forms[0].to_dense() +
                               1.5 * forms[1].to_dense() +
                               2.0 * forms[2].to_dense();
  CHECK_FALSE(sum.is_sparse());  // mixed inputs produce a dense result
  CHECK((sum.to_dense() - expected).cwiseAbs().maxCoeff() <= 1e-14);

  SUBCASE("all-sparse input stays sparse") {
    std::vector<SymmetricForm> sp{SymmetricForm(tridiag_spd(5)),
                                  SymmetricForm(tridiag_spd(5))};
    Vector w2(2);
    w2 << 1.0, 3.0;
    const SymmetricForm s = weighted_sum(sp, w2);
    CHECK(s.is_sparse());
    CHECK((s.to_dense() - 4.0 * DenseMatrix(tridiag_spd(5)))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }

  SUBCASE("mismatched sizes raise") {
    Vector wrong(2);
    wrong << 1.0, 1.0;
    CHECK_THROWS_AS(weighted_sum(forms, wrong), DimensionError);
    std::vector<SymmetricForm> ragged{SymmetricForm::identity(2),
                                      SymmetricForm::identity(3)};
    Vector w2 = Vector::Ones(2);
    CHECK_THROWS_AS(weighted_sum(ragged, w2), DimensionError);
    std::vector<SymmetricForm> none;
    Vector w0;
    CHECK_THROWS_AS(weighted_sum(none, w0), InvalidArgumentError);
  }
}

TEST_CASE("orthonormalize produces an orthonormal set in the given metric") {
  const SymmetricForm metric(random_spd(7, 11));
  Rng rng(12);
  std::vector<Vector> input;
  for (int i = 0; i < 4; ++i) input.push_back(rng.normal_vector(7));

  const OrthonormalizeResult res = orthonormalize(input, metric);
  REQUIRE(res.vectors.size() == 4);
  CHECK(res.dropped == 0);
  for (std::size_t i = 0; i < res.vectors.size(); ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double g = metric.apply(res.vectors[i], res.vectors[j]);
      CHECK(std::abs(g - (i == j ? 1.0 : 0.0)) <= 1e-12);
    }
  }
  // the span is preserved: every input is reproduced by its projection
  for (const Vector& v : input) {
    Vector proj = Vector::Zero(7);
    for (const Vector& q : res.vectors) proj += metric.apply(q, v) * q;
    CHECK((proj - v).norm() <= 1e-10 * v.norm());
  }

  SUBCASE("exact duplicates are dropped") {
    std::vector<Vector> dep = {input[0], input[1], input[0]};
    const OrthonormalizeResult r = orthonormalize(dep, metric);
    CHECK(r.vectors.size() == 2);
    CHECK(r.dropped == 1);
  }

  SUBCASE("near-duplicates below the drop threshold are dropped") {
    std::vector<Vector> dep = {input[0],
                               input[0] + 1e-12 * input[1].normalized()};
    const OrthonormalizeResult r = orthonormalize(dep, metric);
    CHECK(r.vectors.size() == 1);
    CHECK(r.dropped == 1);
  }

  SUBCASE("zero vectors are dropped") {
    std::vector<Vector> dep = {Vector::Zero(7), input[0]};
    const OrthonormalizeResult r = orthonormalize(dep, metric);
    CHECK(r.vectors.size() == 1);
    CHECK(r.dropped == 1);
  }

  SUBCASE("empty input yields an empty result") {
    const OrthonormalizeResult r = orthonormalize({}, metric);
    CHECK(r.vectors.empty());
    CHECK(r.dropped == 0);
  }
}

TEST_CASE("principal angles recover planted rotations") {
  const SymmetricForm id = SymmetricForm::identity(3);

  DenseMatrix e1(3, 1), rot(3, 1);
  e1 << 1, 0, 0;
  const double theta = 0.3;
  rot << std::cos(theta), std::sin(theta), 0;

  const std::vector<double> angles = principal_angles(e1, rot, id);
  REQUIRE(angles.size() == 1);
  CHECK(angles[0] == doctest::Approx(theta).epsilon(1e-12));

  SUBCASE("identical spans give zero angles") {
    DenseMatrix a(3, 2);
    a << 1, 1, 0, 1, 0, 0;  // span{e1, e1+e2}
    DenseMatrix b(3, 2);
    b << 1, 0, 0, 1, 0, 0;  // span{e1, e2}
    for (double ang : principal_angles(a, b, id)) CHECK(ang <= 1e-8);
  }

  SUBCASE("orthogonal complements give right angles") {
    DenseMatrix a(3, 1), b(3, 1);
    a << 1, 0, 0;
    b << 0, 0, 1;
    const std::vector<double> right = principal_angles(a, b, id);
    REQUIRE(right.size() == 1);
    CHECK(right[0] == doctest::Approx(kPi / 2).epsilon(1e-12));
  }

  SUBCASE("angles are ascending and metric-aware") {
    const SymmetricForm metric(random_spd(5, 20));
    Rng rng(21);
    DenseMatrix a(5, 2), b(5, 2);
    for (int j = 0; j < 2; ++j) {
      a.col(j) = rng.normal_vector(5);
      b.col(j) = rng.normal_vector(5);
    }
    const std::vector<double> angs = principal_angles(a, b, metric);
    REQUIRE(angs.size() == 2);
    CHECK(angs[0] <= angs[1]);
    CHECK(angs[0] >= 0.0);
    CHECK(angs[1] <= kPi / 2 + 1e-12);
  }

  SUBCASE("dependent columns reduce to the actual span") {
    DenseMatrix a(3, 2);
    a.col(0) << 1, 0, 0;
    a.col(1) << 2, 0, 0;  // same line twice
    DenseMatrix b(3, 1);
    b << 1, 0, 0;
    const std::vector<double> angs = principal_angles(a, b, id);
    REQUIRE(angs.size() == 1);
    CHECK(angs[0] <= 1e-10);
  }
}
