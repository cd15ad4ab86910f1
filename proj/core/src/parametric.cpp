#include "defrom/parametric.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "defrom/matrix_market.hpp"
#include "defrom/parallel.hpp"
#include "defrom/rng.hpp"
#include "defrom/text_io.hpp"

namespace defrom {

namespace {

// Dimension threshold below which generalized eigenproblems are solved
// densely; above it an inverse-iteration bound is used instead.
constexpr Eigen::Index kDenseEigLimit = 600;

}  // namespace

ParameterGrid::ParameterGrid(DenseMatrix nodes, Vector weights)
    : nodes_(std::move(nodes)), weights_(std::move(weights)) {
  if (nodes_.rows() == 0)
    throw InvalidArgumentError("ParameterGrid: at least one node required");
  if (nodes_.cols() == 0)
    throw InvalidArgumentError("ParameterGrid: parameter dimension is zero");
  if (weights_.size() != nodes_.rows())
    throw DimensionError("ParameterGrid: weights/nodes count mismatch");
  if (!nodes_.allFinite() || !weights_.allFinite())
    throw InvalidArgumentError("ParameterGrid: non-finite entries");
  for (Eigen::Index q = 0; q < weights_.size(); ++q)
    if (weights_[q] <= 0.0)
      throw InvalidArgumentError("ParameterGrid: weights must be positive");
}

ParametricOperator::ParametricOperator(std::vector<SymmetricForm> forms_in,
                                       SymmetricForm reference_in,
                                       std::optional<double> alpha_in)
    : forms(std::move(forms_in)),
      reference(std::move(reference_in)),
      alpha(alpha_in) {
  if (forms.empty())
    throw InvalidArgumentError("ParametricOperator: no node forms");
  for (const auto& f : forms)
    if (f.dim() != reference.dim())
      throw DimensionError("ParametricOperator: form dimension mismatch");
  if (alpha && !(*alpha > 0.0))
    throw InvalidArgumentError("ParametricOperator: alpha must be positive");
}

bool ParametricRHS::is_zero() const {
  for (const auto& f : vectors)
    if (f.lpNorm<Eigen::Infinity>() != 0.0) return false;
  return true;
}

ParametricField ParametricField::zero(Eigen::Index dim, Eigen::Index n_nodes) {
  ParametricField field;
  field.values.assign(static_cast<std::size_t>(n_nodes), Vector::Zero(dim));
  return field;
}

namespace {

void check_problem_shapes(const ParametricOperator& op,
                          const ParametricRHS& rhs) {
  if (rhs.n_nodes() != op.n_nodes())
    throw DimensionError("rhs node count does not match operator");
  for (const auto& f : rhs.vectors) {
    if (f.size() != op.dim())
      throw DimensionError("rhs vector dimension mismatch");
    if (!f.allFinite())
      throw InvalidArgumentError("rhs vector has non-finite entries");
  }
}

double smallest_generalized_eigenvalue(const SymmetricForm& a,
                                       const SymmetricForm& r) {
  const Eigen::Index n = a.dim();
  if (n <= kDenseEigLimit) {
    Eigen::GeneralizedSelfAdjointEigenSolver<DenseMatrix> solver(
        a.to_dense(), r.to_dense(),
        Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
    if (solver.info() != Eigen::Success)
      throw FactorizationError(
          "check_coercivity: generalized eigensolver failed (reference form "
          "not positive definite?)");
    return solver.eigenvalues()[0];
  }
  // Inverse iteration on the pencil: the Rayleigh quotient of A^{-1} R x
  // converges to the smallest eigenvalue of (A, R) for a generic start.
  Vector x(n);
  for (Eigen::Index i = 0; i < n; ++i)
    x[i] = 1.0 + 1e-3 * static_cast<double>(i % 7);
  double lambda = 0.0;
  for (int it = 0; it < 5000; ++it) {
    Vector y = a.solve(r.multiply(x));
    const double norm = std::sqrt(r.quadratic(y));
    if (!(norm > 0.0))
      throw FactorizationError("check_coercivity: inverse iteration broke down");
    y /= norm;
    const double next = a.quadratic(y) / r.quadratic(y);
    const bool settled = it > 0 && std::abs(next - lambda) <= 1e-12 * std::abs(next);
    x = std::move(y);
    lambda = next;
    if (settled) break;
  }
  return lambda;
}

}  // namespace

double check_coercivity(const ParametricOperator& op) {
  // Surface a non-SPD reference as a factorization problem up front.
  try {
    const Vector zero = Vector::Zero(op.dim());
    (void)op.reference.solve(zero);
  } catch (const FactorizationError&) {
    throw FactorizationError(
        "check_coercivity: reference form is not positive definite");
  }
  double min_lambda = std::numeric_limits<double>::infinity();
  for (const auto& form : op.forms)
    min_lambda =
        std::min(min_lambda, smallest_generalized_eigenvalue(form, op.reference));
  if (op.alpha && min_lambda < *op.alpha * (1.0 - 1e-9))
    throw CoercivityError(
        "check_coercivity: smallest eigenvalue " + fmt_double(min_lambda) +
        " violates certified alpha " + fmt_double(*op.alpha));
  return min_lambda;
}

ParametricField truth_solve(const ParametricOperator& op,
                            const ParametricRHS& rhs) {
  check_problem_shapes(op, rhs);
  const auto n_nodes = static_cast<std::size_t>(op.n_nodes());
  ParametricField field = ParametricField::zero(op.dim(), op.n_nodes());
  parallel_for(0, n_nodes, [&](std::size_t q) {
    try {
      field.values[q] = op.forms[q].solve(rhs.vectors[q]);
    } catch (const FactorizationError&) {
      throw FactorizationError("truth_solve: node " + std::to_string(q) +
                               " is not positive definite");
    }
  });
  return field;
}

QuadratureSpec QuadratureSpec::gauss(int count, double a, double b) {
  QuadratureSpec spec;
  spec.kind = Kind::gauss_legendre;
  spec.count = count;
  spec.a = a;
  spec.b = b;
  return spec;
}

QuadratureSpec QuadratureSpec::explicit_rule(std::vector<double> nodes,
                                             std::vector<double> weights) {
  QuadratureSpec spec;
  spec.kind = Kind::explicit_list;
  spec.nodes = std::move(nodes);
  spec.weights = std::move(weights);
  return spec;
}

ParameterGrid make_grid(const QuadratureSpec& spec) {
  if (spec.kind == QuadratureSpec::Kind::explicit_list) {
    if (spec.nodes.empty() || spec.nodes.size() != spec.weights.size())
      throw InvalidArgumentError("make_grid: bad explicit rule");
    DenseMatrix nodes(static_cast<Eigen::Index>(spec.nodes.size()), 1);
    Vector weights(static_cast<Eigen::Index>(spec.weights.size()));
    for (std::size_t q = 0; q < spec.nodes.size(); ++q) {
      nodes(static_cast<Eigen::Index>(q), 0) = spec.nodes[q];
      weights[static_cast<Eigen::Index>(q)] = spec.weights[q];
    }
    return ParameterGrid(std::move(nodes), std::move(weights));
  }
  if (spec.count < 1)
    throw InvalidArgumentError("make_grid: need at least one node");
  if (!(spec.b > spec.a))
    throw InvalidArgumentError("make_grid: empty interval");
  const Eigen::Index m = spec.count;
  // Golub-Welsch: nodes are eigenvalues of the Legendre Jacobi matrix,
  // weights come from the first components of the eigenvectors.
  DenseMatrix jacobi = DenseMatrix::Zero(m, m);
  for (Eigen::Index k = 1; k < m; ++k) {
    const double kk = static_cast<double>(k);
    const double off = kk / std::sqrt(4.0 * kk * kk - 1.0);
    jacobi(k, k - 1) = off;
    jacobi(k - 1, k) = off;
  }
  Eigen::SelfAdjointEigenSolver<DenseMatrix> eig(jacobi);
  if (eig.info() != Eigen::Success)
    throw FactorizationError("make_grid: Jacobi eigensolver failed");
  DenseMatrix nodes(m, 1);
  Vector weights(m);
  const double half = 0.5 * (spec.b - spec.a);
  const double mid = 0.5 * (spec.a + spec.b);
  for (Eigen::Index q = 0; q < m; ++q) {
    nodes(q, 0) = mid + half * eig.eigenvalues()[q];
    const double v0 = eig.eigenvectors()(0, q);
    weights[q] = 2.0 * v0 * v0 * half;
  }
  return ParameterGrid(std::move(nodes), std::move(weights));
}

namespace {

SparseMatrix assemble_p1_tridiagonal(Eigen::Index n, const Vector& diag,
                                     const Vector& off) {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(3 * n));
  for (Eigen::Index i = 0; i < n; ++i) {
    triplets.emplace_back(i, i, diag[i]);
    if (i + 1 < n) {
      triplets.emplace_back(i, i + 1, off[i]);
      triplets.emplace_back(i + 1, i, off[i]);
    }
  }
  SparseMatrix m(n, n);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

// Stiffness matrix for the element-averaged coefficient kappa_e (length
// n_elements), interior nodes only.
SparseMatrix diffusion_stiffness(int n_elements, const Vector& kappa) {
  const Eigen::Index n = n_elements - 1;
  const double h = 1.0 / n_elements;
  Vector diag(n), off(n > 1 ? n - 1 : 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    diag[i] = (kappa[i] + kappa[i + 1]) / h;  // elements i and i+1 meet node i
    if (i + 1 < n) off[i] = -kappa[i + 1] / h;
  }
  Vector off_full = Vector::Zero(n);
  off_full.head(off.size()) = off;
  return assemble_p1_tridiagonal(n, diag, off_full);
}

}  // namespace

Problem generate_diffusion_1d(int n_elements, const QuadratureSpec& quad,
                              ReferenceSpec reference) {
  if (n_elements < 2)
    throw InvalidArgumentError(
        "generate_diffusion_1d: need at least two elements");
  ParameterGrid grid = make_grid(quad);
  if (grid.dimension() != 1)
    throw InvalidArgumentError(
        "generate_diffusion_1d: scalar parameter required");

  const Eigen::Index n = n_elements - 1;
  const double h = 1.0 / n_elements;

  // Exact overlap of each element with the inclusion [1/2, 1].
  Vector overlap(n_elements);
  for (int e = 0; e < n_elements; ++e) {
    const double lo = e * h, hi = (e + 1) * h;
    overlap[e] = std::max(0.0, std::min(hi, 1.0) - std::max(lo, 0.5)) / h;
  }

  const Eigen::Index n_nodes = grid.n_nodes();
  double gamma_min = std::numeric_limits<double>::infinity();
  double gamma_max = -std::numeric_limits<double>::infinity();
  for (Eigen::Index q = 0; q < n_nodes; ++q) {
    gamma_min = std::min(gamma_min, grid.nodes()(q, 0));
    gamma_max = std::max(gamma_max, grid.nodes()(q, 0));
  }
  if (!(gamma_min > -1.0))
    throw InvalidArgumentError(
        "generate_diffusion_1d: parameter must stay above -1");

  std::vector<SymmetricForm> forms;
  forms.reserve(static_cast<std::size_t>(n_nodes));
  for (Eigen::Index q = 0; q < n_nodes; ++q) {
    const double gamma = grid.nodes()(q, 0);
    Vector kappa(n_elements);
    for (int e = 0; e < n_elements; ++e) kappa[e] = 1.0 + gamma * overlap[e];
    forms.emplace_back(diffusion_stiffness(n_elements, kappa));
  }

  // kappa ratio extremes are attained at overlap 0 or 1, so the per-node
  // coercivity constants below are exact analytic bounds.
  const double kappa_floor = 1.0 + std::min(0.0, gamma_min);
  std::optional<double> alpha;
  SymmetricForm ref = SymmetricForm::identity(n);
  switch (reference.kind) {
    case ReferenceSpec::Kind::midpoint_stiffness:
    case ReferenceSpec::Kind::stiffness_at: {
      const double gamma_ref =
          reference.kind == ReferenceSpec::Kind::midpoint_stiffness
              ? 0.5 * (gamma_min + gamma_max)
              : reference.gamma;
      if (!(gamma_ref > -1.0))
        throw InvalidArgumentError(
            "generate_diffusion_1d: reference parameter must stay above -1");
      Vector kappa(n_elements);
      for (int e = 0; e < n_elements; ++e)
        kappa[e] = 1.0 + gamma_ref * overlap[e];
      ref = SymmetricForm(diffusion_stiffness(n_elements, kappa), true);
      alpha = std::min(1.0, (1.0 + gamma_min) / (1.0 + gamma_ref));
      break;
    }
    case ReferenceSpec::Kind::identity: {
      ref = SymmetricForm::identity(n);
      const double s = std::sin(0.5 * std::numbers::pi * h);
      alpha = kappa_floor * (4.0 / h) * s * s;
      break;
    }
    case ReferenceSpec::Kind::mass: {
      Vector diag = Vector::Constant(n, 4.0 * h / 6.0);
      Vector off = Vector::Constant(n, h / 6.0);
      ref = SymmetricForm(assemble_p1_tridiagonal(n, diag, off), true);
      const double c = std::cos(std::numbers::pi * h);
      alpha = kappa_floor * (6.0 / (h * h)) * (1.0 - c) / (2.0 + c);
      break;
    }
  }

  ParametricRHS rhs;
  rhs.vectors.assign(static_cast<std::size_t>(n_nodes),
                     Vector::Constant(n, h));
  ParametricOperator op(std::move(forms), std::move(ref), alpha);
  return Problem{std::move(op), std::move(grid), std::move(rhs)};
}

Problem generate_random_spd_family(Eigen::Index n, Eigen::Index n_nodes,
                                   std::uint64_t seed) {
  if (n < 1 || n_nodes < 1)
    throw InvalidArgumentError("generate_random_spd_family: bad sizes");
  Rng rng(seed);
  DenseMatrix g(n, n), k(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = rng.normal();
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) k(i, j) = rng.normal();

  DenseMatrix m0 = g * g.transpose() / static_cast<double>(n) +
                   DenseMatrix::Identity(n, n);
  DenseMatrix k0 = k * k.transpose() / static_cast<double>(n);
  m0 = 0.5 * (m0 + m0.transpose()).eval();
  k0 = 0.5 * (k0 + k0.transpose()).eval();

  DenseMatrix nodes(n_nodes, 1);
  Vector weights = Vector::Constant(n_nodes, 1.0 / static_cast<double>(n_nodes));
  for (Eigen::Index q = 0; q < n_nodes; ++q)
    nodes(q, 0) = n_nodes == 1
                      ? 0.0
                      : static_cast<double>(q) / static_cast<double>(n_nodes - 1);

  std::vector<SymmetricForm> forms;
  forms.reserve(static_cast<std::size_t>(n_nodes));
  for (Eigen::Index q = 0; q < n_nodes; ++q) {
    DenseMatrix a = m0 + nodes(q, 0) * k0;
    a = 0.5 * (a + a.transpose()).eval();
    forms.emplace_back(std::move(a));
  }

  ParametricRHS rhs;
  rhs.vectors.reserve(static_cast<std::size_t>(n_nodes));
  for (Eigen::Index q = 0; q < n_nodes; ++q)
    rhs.vectors.push_back(rng.normal_vector(n));

  // A_q - M0 = gamma_q K0 is PSD for gamma_q >= 0, so alpha = 1 is exact
  // for the reference form M0.
  ParametricOperator op(std::move(forms), SymmetricForm(std::move(m0), true),
                        1.0);
  return Problem{std::move(op), ParameterGrid(std::move(nodes), std::move(weights)),
                 std::move(rhs)};
}

void save_problem(const std::filesystem::path& dir, const Problem& problem) {
  std::filesystem::create_directories(dir);
  const auto& grid = problem.grid;
  const auto& op = problem.op;
  const auto& rhs = problem.rhs;
  check_problem_shapes(op, rhs);
  if (grid.n_nodes() != op.n_nodes())
    throw DimensionError("save_problem: grid/operator node count mismatch");

  CsvTable grid_csv;
  for (Eigen::Index j = 0; j < grid.dimension(); ++j)
    grid_csv.header.push_back("gamma_" + std::to_string(j));
  grid_csv.header.push_back("weight");
  for (Eigen::Index q = 0; q < grid.n_nodes(); ++q) {
    std::vector<std::string> row;
    for (Eigen::Index j = 0; j < grid.dimension(); ++j)
      row.push_back(fmt_double(grid.nodes()(q, j)));
    row.push_back(fmt_double(grid.weights()[q]));
    grid_csv.rows.push_back(std::move(row));
  }
  grid_csv.save(dir / "grid.csv");

  for (Eigen::Index q = 0; q < op.n_nodes(); ++q)
    mm_write_form(dir / ("A_" + std::to_string(q) + ".mtx"),
                  op.forms[static_cast<std::size_t>(q)]);
  mm_write_form(dir / "reference.mtx", op.reference);

  DenseMatrix f(op.dim(), op.n_nodes());
  for (Eigen::Index q = 0; q < op.n_nodes(); ++q)
    f.col(q) = rhs.vectors[static_cast<std::size_t>(q)];
  mm_write_array(dir / "f.mtx", f);

  KeyValues meta;
  meta.set("format_version", "1");
  meta.set("n", std::to_string(op.dim()));
  meta.set("n_nodes", std::to_string(op.n_nodes()));
  meta.set("d", std::to_string(grid.dimension()));
  meta.set("reference", "reference.mtx");
  if (op.alpha) meta.set("alpha", fmt_double(*op.alpha));
  meta.save(dir / "meta");
}

Problem load_problem(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw IoError("problem bundle '" + dir.string() + "' is not a directory");
  const KeyValues meta = KeyValues::load(dir / "meta");
  if (meta.require("format_version") != "1")
    throw IoError("unsupported bundle format_version");
  const auto n = static_cast<Eigen::Index>(parse_int(meta.require("n")));
  const auto n_nodes =
      static_cast<Eigen::Index>(parse_int(meta.require("n_nodes")));
  const auto d = static_cast<Eigen::Index>(parse_int(meta.require("d")));
  if (n < 1 || n_nodes < 1 || d < 1) throw IoError("bundle meta: bad sizes");

  const CsvTable grid_csv = CsvTable::load(dir / "grid.csv");
  if (static_cast<Eigen::Index>(grid_csv.rows.size()) != n_nodes)
    throw IoError("grid.csv row count does not match meta n_nodes");
  if (static_cast<Eigen::Index>(grid_csv.header.size()) != d + 1)
    throw IoError("grid.csv column count does not match meta d");
  DenseMatrix nodes(n_nodes, d);
  Vector weights(n_nodes);
  for (Eigen::Index q = 0; q < n_nodes; ++q) {
    const auto& row = grid_csv.rows[static_cast<std::size_t>(q)];
    for (Eigen::Index j = 0; j < d; ++j)
      nodes(q, j) = parse_double(row[static_cast<std::size_t>(j)]);
    weights[q] = parse_double(row[static_cast<std::size_t>(d)]);
  }

  std::vector<SymmetricForm> forms;
  forms.reserve(static_cast<std::size_t>(n_nodes));
  for (Eigen::Index q = 0; q < n_nodes; ++q) {
    SymmetricForm f = mm_read_form(dir / ("A_" + std::to_string(q) + ".mtx"));
    if (f.dim() != n) throw IoError("A_" + std::to_string(q) + ".mtx: bad size");
    forms.push_back(std::move(f));
  }
  SymmetricForm reference = mm_read_form(dir / meta.require("reference"));
  if (reference.dim() != n) throw IoError("reference.mtx: bad size");

  const DenseMatrix f = mm_read_dense(dir / "f.mtx");
  if (f.rows() != n || f.cols() != n_nodes)
    throw IoError("f.mtx: size does not match meta");
  ParametricRHS rhs;
  rhs.vectors.reserve(static_cast<std::size_t>(n_nodes));
  for (Eigen::Index q = 0; q < n_nodes; ++q) rhs.vectors.push_back(f.col(q));

  std::optional<double> alpha;
  if (meta.has("alpha")) alpha = parse_double(meta.require("alpha"));

  ParametricOperator op(std::move(forms), std::move(reference), alpha);
  return Problem{std::move(op), ParameterGrid(std::move(nodes), std::move(weights)),
                 std::move(rhs)};
}

}  // namespace defrom
