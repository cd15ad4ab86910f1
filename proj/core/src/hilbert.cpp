#include "defrom/hilbert.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <optional>
#include <variant>

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <Eigen/SparseCholesky>

namespace defrom {

namespace {

void check_square_finite_symmetric(const DenseMatrix& m) {
  if (m.rows() != m.cols())
    throw DimensionError("SymmetricForm: matrix must be square");
  if (m.rows() == 0)
    throw InvalidArgumentError("SymmetricForm: dimension must be positive");
  if (!m.allFinite())
    throw InvalidArgumentError("SymmetricForm: matrix has non-finite entries");
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = j + 1; i < m.rows(); ++i)
      if (m(i, j) != m(j, i))
        throw InvalidArgumentError("SymmetricForm: matrix is not symmetric");
}

void check_square_finite_symmetric(const SparseMatrix& m) {
  if (m.rows() != m.cols())
    throw DimensionError("SymmetricForm: matrix must be square");
  if (m.rows() == 0)
    throw InvalidArgumentError("SymmetricForm: dimension must be positive");
  for (int k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
      if (!std::isfinite(it.value()))
        throw InvalidArgumentError(
            "SymmetricForm: matrix has non-finite entries");
  // Exact symmetry: M - M^T must have no nonzero stored value.
  SparseMatrix t = SparseMatrix(m.transpose());
  SparseMatrix diff = m - t;
  for (int k = 0; k < diff.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(diff, k); it; ++it)
      if (it.value() != 0.0)
        throw InvalidArgumentError("SymmetricForm: matrix is not symmetric");
}

}  // namespace

struct SymmetricForm::Impl {
  std::variant<DenseMatrix, SparseMatrix> matrix;

  mutable std::once_flag factor_once;
  mutable std::optional<Eigen::LLT<DenseMatrix>> dense_llt;
  mutable std::optional<Eigen::SimplicialLLT<SparseMatrix>> sparse_llt;
  mutable bool factor_ok = false;

  explicit Impl(DenseMatrix m) : matrix(std::move(m)) {}
  explicit Impl(SparseMatrix m) : matrix(std::move(m)) {}

  Eigen::Index dim() const {
    return std::holds_alternative<DenseMatrix>(matrix)
               ? std::get<DenseMatrix>(matrix).rows()
               : std::get<SparseMatrix>(matrix).rows();
  }

  void ensure_factorized() const {
    std::call_once(factor_once, [this]() {
      if (const auto* d = std::get_if<DenseMatrix>(&matrix)) {
        dense_llt.emplace(*d);
        factor_ok = dense_llt->info() == Eigen::Success;
      } else {
        const auto& s = std::get<SparseMatrix>(matrix);
        sparse_llt.emplace();
        sparse_llt->compute(s);
        factor_ok = sparse_llt->info() == Eigen::Success;
      }
    });
    if (!factor_ok)
      throw FactorizationError(
          "SymmetricForm::solve: matrix is not positive definite");
  }
};

SymmetricForm::SymmetricForm(DenseMatrix matrix, bool spd_hint) {
  check_square_finite_symmetric(matrix);
  impl_ = std::make_shared<const Impl>(std::move(matrix));
  if (spd_hint) impl_->ensure_factorized();
}

SymmetricForm::SymmetricForm(SparseMatrix matrix, bool spd_hint) {
  matrix.makeCompressed();
  check_square_finite_symmetric(matrix);
  impl_ = std::make_shared<const Impl>(std::move(matrix));
  if (spd_hint) impl_->ensure_factorized();
}

SymmetricForm SymmetricForm::identity(Eigen::Index n) {
  SparseMatrix id(n, n);
  id.setIdentity();
  return SymmetricForm(std::move(id), true);
}

Eigen::Index SymmetricForm::dim() const noexcept { return impl_->dim(); }

bool SymmetricForm::is_sparse() const noexcept {
  return std::holds_alternative<SparseMatrix>(impl_->matrix);
}

Vector SymmetricForm::multiply(const Vector& v) const {
  if (v.size() != dim())
    throw DimensionError("SymmetricForm::multiply: size mismatch");
  if (const auto* d = std::get_if<DenseMatrix>(&impl_->matrix)) return *d * v;
  return std::get<SparseMatrix>(impl_->matrix) * v;
}

DenseMatrix SymmetricForm::multiply(const DenseMatrix& block) const {
  if (block.rows() != dim())
    throw DimensionError("SymmetricForm::multiply: size mismatch");
  if (const auto* d = std::get_if<DenseMatrix>(&impl_->matrix))
    return *d * block;
  return std::get<SparseMatrix>(impl_->matrix) * block;
}

double SymmetricForm::apply(const Vector& v, const Vector& w) const {
  if (v.size() != dim() || w.size() != dim())
    throw DimensionError("SymmetricForm::apply: size mismatch");
  if (&v == &w) return v.dot(multiply(v));
  // Symmetrized so the result is invariant under swapping the arguments.
  return 0.5 * (v.dot(multiply(w)) + w.dot(multiply(v)));
}

double SymmetricForm::quadratic(const Vector& v) const {
  if (v.size() != dim())
    throw DimensionError("SymmetricForm::quadratic: size mismatch");
  return v.dot(multiply(v));
}

Vector SymmetricForm::solve(const Vector& b) const {
  if (b.size() != dim())
    throw DimensionError("SymmetricForm::solve: size mismatch");
  impl_->ensure_factorized();
  if (impl_->dense_llt) return impl_->dense_llt->solve(b);
  return impl_->sparse_llt->solve(b);
}

DenseMatrix SymmetricForm::solve(const DenseMatrix& block) const {
  if (block.rows() != dim())
    throw DimensionError("SymmetricForm::solve: size mismatch");
  impl_->ensure_factorized();
  if (impl_->dense_llt) return impl_->dense_llt->solve(block);
  return impl_->sparse_llt->solve(block);
}

DenseMatrix SymmetricForm::to_dense() const {
  if (const auto* d = std::get_if<DenseMatrix>(&impl_->matrix)) return *d;
  return DenseMatrix(std::get<SparseMatrix>(impl_->matrix));
}

const DenseMatrix* SymmetricForm::dense() const noexcept {
  return std::get_if<DenseMatrix>(&impl_->matrix);
}

const SparseMatrix* SymmetricForm::sparse() const noexcept {
  return std::get_if<SparseMatrix>(&impl_->matrix);
}

double apply_form(const SymmetricForm& a, const Vector& v, const Vector& w) {
  return a.apply(v, w);
}

Vector solve_spd(const SymmetricForm& a, const Vector& b) {
  return a.solve(b);
}

SymmetricForm weighted_sum(std::span<const SymmetricForm> forms,
                           const Vector& weights) {
  if (forms.empty())
    throw InvalidArgumentError("weighted_sum: at least one form required");
  if (weights.size() != static_cast<Eigen::Index>(forms.size()))
    throw DimensionError("weighted_sum: weights/forms count mismatch");
  const Eigen::Index n = forms[0].dim();
  bool all_sparse = true;
  for (const auto& f : forms) {
    if (f.dim() != n) throw DimensionError("weighted_sum: dimension mismatch");
    all_sparse = all_sparse && f.is_sparse();
  }
  if (all_sparse) {
    SparseMatrix acc = weights[0] * (*forms[0].sparse());
    for (std::size_t q = 1; q < forms.size(); ++q)
      acc = acc + weights[static_cast<Eigen::Index>(q)] * (*forms[q].sparse());
    return SymmetricForm(std::move(acc));
  }
  DenseMatrix acc = weights[0] * forms[0].to_dense();
  for (std::size_t q = 1; q < forms.size(); ++q)
    acc += weights[static_cast<Eigen::Index>(q)] * forms[q].to_dense();
  // Re-impose exact symmetry lost to floating-point accumulation order.
  DenseMatrix sym = 0.5 * (acc + acc.transpose());
  return SymmetricForm(std::move(sym));
}

namespace {

// Shared Gram-Schmidt core; inner products are taken through `inner`.
OrthonormalizeResult gram_schmidt(std::span<const Vector> vectors,
                                  const SymmetricForm& inner) {
  OrthonormalizeResult result;
  result.vectors.reserve(vectors.size());
  for (const Vector& v : vectors) {
    if (v.size() != inner.dim())
      throw DimensionError("orthonormalize: vector size mismatch");
    if (!v.allFinite())
      throw InvalidArgumentError("orthonormalize: non-finite vector");
    const double before2 = inner.quadratic(v);
    if (before2 < 0.0)
      throw FactorizationError(
          "orthonormalize: inner product is not positive definite");
    const double before = std::sqrt(before2);
    if (before == 0.0) {
      ++result.dropped;
      continue;
    }
    Vector w = v;
    // Two projection passes keep orthogonality near machine precision even
    // for badly conditioned inputs.
    for (int pass = 0; pass < 2; ++pass)
      for (const Vector& u : result.vectors) w -= inner.apply(u, w) * u;
    const double after2 = inner.quadratic(w);
    const double after = after2 > 0.0 ? std::sqrt(after2) : 0.0;
    if (after < 1e-10 * before) {
      ++result.dropped;
      continue;
    }
    result.vectors.push_back(w / after);
  }
  return result;
}

}  // namespace

OrthonormalizeResult orthonormalize(std::span<const Vector> vectors,
                                    const SymmetricForm& inner) {
  return gram_schmidt(vectors, inner);
}

std::vector<double> principal_angles(const DenseMatrix& a,
                                     const DenseMatrix& b,
                                     const SymmetricForm& inner) {
  auto columns = [](const DenseMatrix& m) {
    std::vector<Vector> cols;
    cols.reserve(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) cols.push_back(m.col(j));
    return cols;
  };
  const auto qa = gram_schmidt(columns(a), inner).vectors;
  const auto qb = gram_schmidt(columns(b), inner).vectors;
  const std::size_t ka = qa.size(), kb = qb.size();
  if (ka == 0 || kb == 0) return {};

  DenseMatrix cross(ka, kb);
  for (std::size_t i = 0; i < ka; ++i) {
    const Vector mi = inner.multiply(qa[i]);
    for (std::size_t j = 0; j < kb; ++j)
      cross(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          mi.dot(qb[j]);
  }
  Eigen::JacobiSVD<DenseMatrix> svd(cross);
  std::vector<double> angles;
  angles.reserve(static_cast<std::size_t>(svd.singularValues().size()));
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
    const double c = std::clamp(svd.singularValues()[i], -1.0, 1.0);
    angles.push_back(std::acos(c));
  }
  std::sort(angles.begin(), angles.end());
  return angles;
}

}  // namespace defrom
