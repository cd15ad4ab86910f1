#include "defrom/subspace_opt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "defrom/parallel.hpp"
#include "defrom/rng.hpp"

namespace defrom {

namespace {

void check_shapes(const ParametricOperator& op, const ParameterGrid& grid,
                  const ParametricRHS& rhs) {
  if (grid.n_nodes() != op.n_nodes() || rhs.n_nodes() != op.n_nodes())
    throw DimensionError("rank-1 search: node count mismatch");
  for (const auto& f : rhs.vectors)
    if (f.size() != op.dim())
      throw DimensionError("rank-1 search: rhs dimension mismatch");
}

void check_direction(const Vector& z, const ParametricOperator& op) {
  if (z.size() != op.dim())
    throw DimensionError("rank-1 functional: direction dimension mismatch");
  if (!z.allFinite())
    throw InvalidArgumentError("rank-1 functional: non-finite direction");
  if (z.lpNorm<Eigen::Infinity>() == 0.0)
    throw InvalidArgumentError("rank-1 functional: direction must be nonzero");
}

double node_quadratic(const SymmetricForm& form, const Vector& z) {
  const double azz = form.quadratic(z);
  if (!(azz > 0.0))
    throw CoercivityError(
        "rank-1 functional: node form is not positive along the direction");
  return azz;
}

// Evaluates J and its gradient without re-validating shapes on every call.
struct Rank1Evaluator {
  const ParametricOperator& op;
  const ParameterGrid& grid;
  const ParametricRHS& rhs;

  double value(const Vector& z) const {
    double acc = 0.0;
    for (Eigen::Index q = 0; q < op.n_nodes(); ++q) {
      const auto uq = static_cast<std::size_t>(q);
      const double azz = node_quadratic(op.forms[uq], z);
      const double fz = rhs.vectors[uq].dot(z);
      acc += grid.weights()[q] * fz * fz / azz;
    }
    return acc;
  }

  double value_and_gradient(const Vector& z, Vector& grad) const {
    double acc = 0.0;
    grad.setZero(z.size());
    for (Eigen::Index q = 0; q < op.n_nodes(); ++q) {
      const auto uq = static_cast<std::size_t>(q);
      const Vector az = op.forms[uq].multiply(z);
      const double azz_raw = z.dot(az);
      if (!(azz_raw > 0.0))
        throw CoercivityError(
            "rank-1 functional: node form is not positive along the "
            "direction");
      const double fz = rhs.vectors[uq].dot(z);
      const double w = grid.weights()[q];
      const double psi = fz / azz_raw;
      acc += w * fz * psi;
      grad += (2.0 * w * psi) * rhs.vectors[uq] - (2.0 * w * psi * psi) * az;
    }
    return acc;
  }
};

void sign_normalize(Vector& z) {
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (z[i] != 0.0) {
      if (z[i] < 0.0) z = -z;
      return;
    }
  }
}

bool lexicographically_less(const Vector& a, const Vector& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(),
                                      b.data() + b.size());
}

struct AscentResult {
  Vector direction;  // unit reference norm
  double objective = 0.0;
  double residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool usable = false;
};

// Projected gradient ascent on the reference-norm sphere. The preconditioned
// gradient g = R^{-1} grad J is tangent by the Euler identity, so the
// retraction is a plain renormalization. Step sizes start from a
// Barzilai-Borwein estimate and back off by halving under an Armijo test.
AscentResult ascend(const Rank1Evaluator& eval, const SymmetricForm& reference,
                    const Vector& start, double tol, int max_iters) {
  AscentResult out;
  const double start_norm2 = reference.quadratic(start);
  if (!(start_norm2 > 0.0)) return out;  // degenerate start, skip
  Vector z = start / std::sqrt(start_norm2);

  Vector grad(z.size());
  double value = eval.value_and_gradient(z, grad);
  Vector g = reference.solve(grad);
  double slope = std::max(grad.dot(g), 0.0);  // |grad|^2 in the dual norm

  double step = slope > 0.0 ? 1.0 / std::sqrt(slope) : 1.0;
  std::optional<double> bb_step;
  int it = 0;
  for (; it < max_iters; ++it) {
    if (value <= 0.0) break;  // stuck at the zero minimum
    // The published stationarity residual uses the defect r = grad / 2.
    out.residual = 0.5 * std::sqrt(slope) / value;
    if (out.residual <= tol) break;

    double t = bb_step.value_or(step);
    t = std::clamp(t, 1e-18, 1e18);
    bool accepted = false;
    bool have_grad_next = false;
    Vector z_next;
    Vector grad_next(z.size());
    double value_next = 0.0;
    double slope_next = 0.0;
    for (int halving = 0; halving < 60; ++halving) {
      Vector cand = z + t * g;
      const double norm2 = reference.quadratic(cand);
      if (norm2 > 0.0) {
        cand /= std::sqrt(norm2);
        const double cand_value = eval.value(cand);
        if (cand_value >= value + 1e-4 * t * slope) {
          z_next = std::move(cand);
          value_next = cand_value;
          accepted = true;
          break;
        }
        // Close to a maximizer the certifiable Armijo increment drops below
        // the roundoff noise of the objective itself; the gradient is still
        // computed directly, so fall back to first-order progress and accept
        // a step that strictly shrinks the dual gradient norm.
        if (1e-4 * t * slope <= 32.0 * 2.2e-16 * value) {
          Vector cand_grad(z.size());
          const double cand_value2 = eval.value_and_gradient(cand, cand_grad);
          const Vector cand_g = reference.solve(cand_grad);
          const double cand_slope = std::max(cand_grad.dot(cand_g), 0.0);
          if (cand_slope < slope && cand_value2 > 0.0) {
            z_next = std::move(cand);
            grad_next = std::move(cand_grad);
            value_next = cand_value2;
            slope_next = cand_slope;
            have_grad_next = true;
            accepted = true;
            break;
          }
        }
      }
      t *= 0.5;
    }
    if (!accepted) break;  // no measurable progress left at this precision

    if (!have_grad_next) {
      value_next = eval.value_and_gradient(z_next, grad_next);
      slope_next = 0.0;  // recomputed below from the fresh gradient
    }
    Vector g_next = reference.solve(grad_next);
    const Vector s = z_next - z;
    const double denom = s.dot(grad - grad_next);
    const double numer = reference.quadratic(s);
    bb_step = denom > 0.0 ? std::optional<double>(numer / denom) : std::nullopt;
    step = 2.0 * t;

    z = std::move(z_next);
    grad = std::move(grad_next);
    g = std::move(g_next);
    value = value_next;
    slope = std::max(grad.dot(g), 0.0);
    out.residual = 0.5 * std::sqrt(slope) / value;
  }
  if (value <= 0.0) out.residual = 0.0;

  out.direction = std::move(z);
  out.objective = value;
  out.iterations = it;
  out.usable = true;
  return out;
}

}  // namespace

double rank1_objective(const Vector& z, const ParametricOperator& op,
                       const ParameterGrid& grid, const ParametricRHS& rhs) {
  check_shapes(op, grid, rhs);
  check_direction(z, op);
  return Rank1Evaluator{op, grid, rhs}.value(z);
}

Vector rank1_gradient(const Vector& z, const ParametricOperator& op,
                      const ParameterGrid& grid, const ParametricRHS& rhs) {
  check_shapes(op, grid, rhs);
  check_direction(z, op);
  Vector grad(z.size());
  Rank1Evaluator{op, grid, rhs}.value_and_gradient(z, grad);
  return grad;
}

double rank1_stationarity_residual(const Vector& z,
                                   const ParametricOperator& op,
                                   const ParameterGrid& grid,
                                   const ParametricRHS& rhs) {
  check_shapes(op, grid, rhs);
  check_direction(z, op);
  const double norm2 = op.reference.quadratic(z);
  if (!(norm2 > 0.0))
    throw InvalidArgumentError(
        "rank-1 functional: direction has zero reference norm");
  const Vector zn = z / std::sqrt(norm2);
  Vector grad(z.size());
  const double value =
      Rank1Evaluator{op, grid, rhs}.value_and_gradient(zn, grad);
  if (value <= 0.0) return 0.0;
  const Vector defect = 0.5 * grad;  // r = grad J / 2
  const double dual2 = std::max(defect.dot(op.reference.solve(defect)), 0.0);
  return std::sqrt(dual2) / value;
}

Rank1Candidate rank1_maximize(const ParametricOperator& op,
                              const ParameterGrid& grid,
                              const ParametricRHS& rhs,
                              const OptimizerOptions& options) {
  check_shapes(op, grid, rhs);
  if (!(options.tol > 0.0))
    throw InvalidArgumentError("rank1_maximize: tol must be positive");
  if (options.n_starts < 1)
    throw InvalidArgumentError("rank1_maximize: need at least one start");
  if (options.max_iters < 1)
    throw InvalidArgumentError("rank1_maximize: max_iters must be positive");
  if (rhs.is_zero())
    throw ZeroDataError(
        "rank1_maximize: right-hand side family is identically zero");

  const Eigen::Index n = op.dim();
  std::vector<Vector> starts;
  // The mean Riesz representative of the data is the canonical warm start.
  Vector riesz = Vector::Zero(n);
  for (Eigen::Index q = 0; q < op.n_nodes(); ++q)
    riesz += grid.weights()[q] *
             op.forms[static_cast<std::size_t>(q)].solve(
                 rhs.vectors[static_cast<std::size_t>(q)]);
  if (riesz.lpNorm<Eigen::Infinity>() > 0.0) starts.push_back(std::move(riesz));
  for (const Vector& extra : options.extra_starts) {
    if (extra.size() != n)
      throw DimensionError("rank1_maximize: extra start dimension mismatch");
    if (extra.allFinite() && extra.lpNorm<Eigen::Infinity>() > 0.0)
      starts.push_back(extra);
  }
  Rng rng(options.seed);
  while (starts.size() < static_cast<std::size_t>(options.n_starts))
    starts.push_back(rng.normal_vector(n));

  const Rank1Evaluator eval{op, grid, rhs};
  std::vector<AscentResult> results(starts.size());
  parallel_for(0, starts.size(), [&](std::size_t s) {
    results[s] =
        ascend(eval, op.reference, starts[s], options.tol, options.max_iters);
  });

  // Deterministic winner: best objective, lexicographic sign-normalized
  // direction among near-ties.
  int best = -1;
  for (std::size_t s = 0; s < results.size(); ++s) {
    if (!results[s].usable) continue;
    sign_normalize(results[s].direction);
    if (best < 0) {
      best = static_cast<int>(s);
      continue;
    }
    const auto& cur = results[static_cast<std::size_t>(best)];
    const double tie =
        1e-12 * std::max({1.0, std::abs(cur.objective),
                          std::abs(results[s].objective)});
    if (results[s].objective > cur.objective + tie ||
        (std::abs(results[s].objective - cur.objective) <= tie &&
         lexicographically_less(results[s].direction, cur.direction))) {
      best = static_cast<int>(s);
    }
  }
  if (best < 0)
    throw ConvergenceError("rank1_maximize: every start was degenerate",
                           Rank1Candidate{});

  Rank1Candidate candidate;
  candidate.direction = results[static_cast<std::size_t>(best)].direction;
  candidate.objective = eval.value(candidate.direction);
  candidate.stationarity_residual =
      rank1_stationarity_residual(candidate.direction, op, grid, rhs);
  candidate.starts_used = static_cast<int>(starts.size());
  candidate.iterations = results[static_cast<std::size_t>(best)].iterations;
  candidate.start_values.reserve(results.size());
  for (const auto& r : results)
    candidate.start_values.push_back(r.usable ? r.objective : 0.0);

  if (candidate.stationarity_residual > options.tol)
    throw ConvergenceError(
        "rank1_maximize: stationarity residual " +
            std::to_string(candidate.stationarity_residual) +
            " above tolerance after " + std::to_string(starts.size()) +
            " starts",
        candidate);
  return candidate;
}

namespace {

// Solves the weighted normal equations of the basis step,
//   sum_q w_q A_q V (c_q c_q^T) = sum_q w_q f_q c_q^T,
// for V (n x r), warm-started at V0. Direct dense solve for small n*r,
// matrix-free conjugate gradients otherwise. `rhs` must already account
// for any contribution held fixed during the step.
DenseMatrix solve_basis_block(const ParametricOperator& op,
                              const ParameterGrid& grid,
                              const std::vector<Vector>& rhs_vectors,
                              const DenseMatrix& ctilde,  // r x Q
                              const DenseMatrix& v0) {
  const Eigen::Index n = op.dim();
  const Eigen::Index r = ctilde.rows();
  const Eigen::Index q_count = op.n_nodes();

  DenseMatrix b = DenseMatrix::Zero(n, r);
  for (Eigen::Index q = 0; q < q_count; ++q)
    b += grid.weights()[q] * rhs_vectors[static_cast<std::size_t>(q)] *
         ctilde.col(q).transpose();

  if (n * r <= 2000) {
    DenseMatrix system = DenseMatrix::Zero(n * r, n * r);
    for (Eigen::Index q = 0; q < q_count; ++q) {
      const DenseMatrix a_dense =
          op.forms[static_cast<std::size_t>(q)].to_dense();
      const DenseMatrix outer = grid.weights()[q] * ctilde.col(q) *
                                ctilde.col(q).transpose();
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < r; ++j)
          system.block(i * n, j * n, n, n) += outer(i, j) * a_dense;
    }
    Eigen::LLT<DenseMatrix> llt(0.5 * (system + system.transpose()));
    if (llt.info() != Eigen::Success)
      throw SingularSystemError(
          "rankk_minimize: basis-step system is not positive definite");
    Vector rhs_vec(n * r);
    for (Eigen::Index j = 0; j < r; ++j) rhs_vec.segment(j * n, n) = b.col(j);
    const Vector x = llt.solve(rhs_vec);
    DenseMatrix v(n, r);
    for (Eigen::Index j = 0; j < r; ++j) v.col(j) = x.segment(j * n, n);
    return v;
  }

  // Conjugate gradients on the n x r block; the operator is SPD on the
  // coefficient row space because every A_q is SPD and the Gram matrix of
  // the reduced coefficients has full rank r by construction.
  auto apply = [&](const DenseMatrix& v) {
    DenseMatrix out = DenseMatrix::Zero(n, r);
    for (Eigen::Index q = 0; q < q_count; ++q) {
      const Vector vc = v * ctilde.col(q);
      out += grid.weights()[q] *
             op.forms[static_cast<std::size_t>(q)].multiply(vc) *
             ctilde.col(q).transpose();
    }
    return out;
  };
  auto dot = [](const DenseMatrix& a, const DenseMatrix& b2) {
    return (a.array() * b2.array()).sum();
  };
  DenseMatrix x = v0;
  DenseMatrix res = b - apply(x);
  DenseMatrix p = res;
  double rr = dot(res, res);
  const double b_norm = std::sqrt(std::max(dot(b, b), 0.0));
  const double stop = 1e-12 * std::max(b_norm, 1e-300);
  const Eigen::Index max_iters = 10 * n * r + 100;
  for (Eigen::Index it = 0; it < max_iters && std::sqrt(rr) > stop; ++it) {
    const DenseMatrix ap = apply(p);
    const double p_ap = dot(p, ap);
    if (!(p_ap > 0.0))
      throw SingularSystemError(
          "rankk_minimize: basis-step system is not positive definite");
    const double alpha = rr / p_ap;
    x += alpha * p;
    res -= alpha * ap;
    const double rr_next = dot(res, res);
    p = res + (rr_next / rr) * p;
    rr = rr_next;
  }
  return x;
}

DenseMatrix orthonormal_completion(std::vector<Vector> columns,
                                   const SymmetricForm& reference,
                                   Eigen::Index k, Rng& rng) {
  auto ortho = orthonormalize(columns, reference);
  int guard = 0;
  while (static_cast<Eigen::Index>(ortho.vectors.size()) < k) {
    if (++guard > 16 * k + 64)
      throw SingularSystemError(
          "rankk_minimize: could not complete an independent basis");
    columns = ortho.vectors;
    columns.push_back(rng.normal_vector(reference.dim()));
    ortho = orthonormalize(columns, reference);
  }
  DenseMatrix out(reference.dim(), k);
  for (Eigen::Index j = 0; j < k; ++j) out.col(j) = ortho.vectors[static_cast<std::size_t>(j)];
  return out;
}

}  // namespace

RankKCandidate rankk_minimize(const ParametricOperator& op,
                              const ParameterGrid& grid,
                              const ParametricRHS& rhs, Eigen::Index k,
                              const OptimizerOptions& options) {
  check_shapes(op, grid, rhs);
  const Eigen::Index n = op.dim();
  if (k < 1 || k > n)
    throw InvalidArgumentError("rankk_minimize: rank k must be in [1, n]");
  if (!(options.tol > 0.0))
    throw InvalidArgumentError("rankk_minimize: tol must be positive");
  if (options.max_sweeps < 1)
    throw InvalidArgumentError("rankk_minimize: max_sweeps must be positive");
  if (rhs.is_zero())
    throw ZeroDataError(
        "rankk_minimize: right-hand side family is identically zero");

  double total = 0.0;
  if (options.total_energy) {
    total = *options.total_energy;
  } else {
    const ParametricField u = truth_solve(op, rhs);
    total = output_functional(rhs, grid, u);
  }

  Rng rng(options.seed);
  std::vector<Vector> init_columns;
  Vector riesz = Vector::Zero(n);
  for (Eigen::Index q = 0; q < op.n_nodes(); ++q)
    riesz += grid.weights()[q] *
             op.forms[static_cast<std::size_t>(q)].solve(
                 rhs.vectors[static_cast<std::size_t>(q)]);
  if (riesz.lpNorm<Eigen::Infinity>() > 0.0)
    init_columns.push_back(std::move(riesz));
  for (const Vector& extra : options.extra_starts) {
    if (extra.size() != n)
      throw DimensionError("rankk_minimize: extra start dimension mismatch");
    if (extra.allFinite() && extra.lpNorm<Eigen::Infinity>() > 0.0)
      init_columns.push_back(extra);
  }
  DenseMatrix basis = orthonormal_completion(std::move(init_columns),
                                             op.reference, k, rng);

  RankKCandidate out;
  GalerkinSolution sol;
  double prev = std::numeric_limits<double>::infinity();
  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    sol = galerkin_solve(SubspaceBasis{basis}, op, rhs);
    const double objective =
        total - output_functional(rhs, grid, sol.field);
    out.sweep_objectives.push_back(objective);
    out.sweeps = sweep;
    out.objective = objective;
    const bool floor_hit = objective <= 1e-14 * std::abs(total);
    const bool settled =
        sweep >= 2 &&
        prev - objective <= options.tol * std::max(std::abs(prev), 1e-300);
    if (floor_hit || settled) {
      out.converged = true;
      break;
    }
    prev = objective;
    if (sweep == options.max_sweeps) break;  // keep basis and solution in sync

    // Basis step, restricted to the row space of the reduced coefficients.
    const Eigen::Index q_count = op.n_nodes();
    DenseMatrix gram = DenseMatrix::Zero(k, k);
    for (Eigen::Index q = 0; q < q_count; ++q) {
      const Vector& c = sol.coefficients.coefficients[static_cast<std::size_t>(q)];
      gram += grid.weights()[q] * c * c.transpose();
    }
    Eigen::SelfAdjointEigenSolver<DenseMatrix> eig(
        0.5 * (gram + gram.transpose()));
    if (eig.info() != Eigen::Success)
      throw FactorizationError("rankk_minimize: coefficient Gram eigensolver failed");
    const double lam_max = eig.eigenvalues().maxCoeff();
    if (!(lam_max > 0.0))
      throw SingularSystemError(
          "rankk_minimize: reduced coefficients vanish at every node");
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < k; ++i)
      if (eig.eigenvalues()[i] > 1e-13 * lam_max) ++r;
    const DenseMatrix active = eig.eigenvectors().rightCols(r);
    const DenseMatrix dormant = eig.eigenvectors().leftCols(k - r);
    const DenseMatrix carried = basis * dormant;

    DenseMatrix ctilde(r, q_count);
    for (Eigen::Index q = 0; q < q_count; ++q)
      ctilde.col(q) =
          active.transpose() *
          sol.coefficients.coefficients[static_cast<std::size_t>(q)];

    // Directions outside the coefficient row space are held fixed, so
    // their contribution moves to the right-hand side; this keeps the
    // basis step exactly optimal (and the sweep objective monotone) even
    // when the coefficient Gram matrix is rank deficient.
    const std::vector<Vector>* effective = &rhs.vectors;
    std::vector<Vector> adjusted;
    if (r < k) {
      adjusted.reserve(static_cast<std::size_t>(q_count));
      for (Eigen::Index q = 0; q < q_count; ++q) {
        const auto uq = static_cast<std::size_t>(q);
        const Vector held =
            carried * (dormant.transpose() * sol.coefficients.coefficients[uq]);
        adjusted.push_back(rhs.vectors[uq] - op.forms[uq].multiply(held));
      }
      effective = &adjusted;
    }
    const DenseMatrix updated =
        solve_basis_block(op, grid, *effective, ctilde, basis * active);

    std::vector<Vector> columns;
    columns.reserve(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < r; ++j) columns.push_back(updated.col(j));
    for (Eigen::Index j = 0; j < k - r; ++j) columns.push_back(carried.col(j));
    basis = orthonormal_completion(std::move(columns), op.reference, k, rng);
  }

  out.basis = SubspaceBasis{std::move(basis)};
  out.coefficients = std::move(sol.coefficients);
  return out;
}

}  // namespace defrom
