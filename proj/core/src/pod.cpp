#include "defrom/pod.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "defrom/matrix_market.hpp"
#include "defrom/text_io.hpp"

namespace defrom {

namespace {

void sign_normalize(Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0) {
      if (v[i] < 0.0) v = -v;
      return;
    }
  }
}

}  // namespace

PodBasis pod_modes(const ParametricField& truth, const ParameterGrid& grid,
                   const SymmetricForm& inner, Eigen::Index k) {
  const Eigen::Index n_nodes = grid.n_nodes();
  if (truth.n_nodes() != n_nodes)
    throw DimensionError("pod_modes: truth/grid node count mismatch");
  const Eigen::Index n = inner.dim();
  for (const auto& u : truth.values)
    if (u.size() != n) throw DimensionError("pod_modes: dimension mismatch");
  if (k < 0 || k > std::min(n, n_nodes))
    throw InvalidArgumentError("pod_modes: k must be in [0, min(n, n_nodes)]");

  PodBasis pod;
  if (k == 0) return pod;

  DenseMatrix snapshots(n, n_nodes);
  for (Eigen::Index q = 0; q < n_nodes; ++q)
    snapshots.col(q) =
        std::sqrt(grid.weights()[q]) * truth.values[static_cast<std::size_t>(q)];

  DenseMatrix corr = snapshots.transpose() * inner.multiply(snapshots);
  corr = 0.5 * (corr + corr.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<DenseMatrix> eig(corr);
  if (eig.info() != Eigen::Success)
    throw FactorizationError("pod_modes: correlation eigensolver failed");

  const double lead = eig.eigenvalues().maxCoeff();
  std::vector<Vector> raw_modes;
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index idx = n_nodes - 1 - j;  // ascending order -> top-k
    const double lambda = eig.eigenvalues()[idx];
    pod.eigenvalues.push_back(lambda);
    if (lambda > 1e-13 * std::max(lead, 0.0) && lambda > 0.0)
      raw_modes.push_back(snapshots * eig.eigenvectors().col(idx) /
                          std::sqrt(lambda));
  }
  // The lifted combinations are orthonormal only up to roundoff amplified
  // by the eigenvalue spread; one Gram-Schmidt polish restores machine
  // precision orthonormality without moving the leading directions.
  pod.modes = orthonormalize(raw_modes, inner).vectors;
  for (auto& mode : pod.modes) sign_normalize(mode);
  return pod;
}

std::vector<double> pod_error_curve(const PodBasis& pod,
                                    const ParametricOperator& op,
                                    const ParameterGrid& grid,
                                    const ParametricRHS& rhs,
                                    const ParametricField& truth) {
  std::vector<double> curve;
  curve.reserve(pod.modes.size() + 1);
  curve.push_back(mean_form(op, grid, truth, truth));
  const DenseMatrix all = pod.mode_matrix();
  for (std::size_t m = 1; m <= pod.modes.size(); ++m) {
    SubspaceBasis basis{all.leftCols(static_cast<Eigen::Index>(m))};
    const GalerkinSolution sol = galerkin_solve(basis, op, rhs);
    curve.push_back(mean_error(op, grid, truth, sol.field));
  }
  return curve;
}

void save_pod(const std::filesystem::path& dir, const PodBasis& pod) {
  std::filesystem::create_directories(dir);
  KeyValues meta;
  meta.set("format_version", "1");
  meta.set("n_modes", std::to_string(pod.modes.size()));
  meta.set("n_eigenvalues", std::to_string(pod.eigenvalues.size()));
  meta.save(dir / "meta");

  CsvTable eigs;
  eigs.header = {"mode", "eigenvalue"};
  for (std::size_t j = 0; j < pod.eigenvalues.size(); ++j)
    eigs.rows.push_back(
        {std::to_string(j + 1), fmt_double(pod.eigenvalues[j])});
  eigs.save(dir / "eigs.csv");

  if (!pod.modes.empty()) mm_write_array(dir / "modes.mtx", pod.mode_matrix());
}

PodBasis load_pod(const std::filesystem::path& dir) {
  const KeyValues meta = KeyValues::load(dir / "meta");
  if (meta.require("format_version") != "1")
    throw IoError("unsupported pod format_version");
  const auto n_modes = parse_int(meta.require("n_modes"));
  const auto n_eigs = parse_int(meta.require("n_eigenvalues"));

  PodBasis pod;
  const CsvTable eigs = CsvTable::load(dir / "eigs.csv");
  if (static_cast<long long>(eigs.rows.size()) != n_eigs)
    throw IoError("eigs.csv row count does not match meta");
  const std::size_t col = eigs.column("eigenvalue");
  for (const auto& row : eigs.rows)
    pod.eigenvalues.push_back(parse_double(row[col]));

  if (n_modes > 0) {
    const DenseMatrix modes = mm_read_dense(dir / "modes.mtx");
    if (modes.cols() != n_modes)
      throw IoError("modes.mtx column count does not match meta");
    for (Eigen::Index j = 0; j < modes.cols(); ++j)
      pod.modes.push_back(modes.col(j));
  }
  return pod;
}

}  // namespace defrom
