#pragma once

#include <filesystem>

#include "defrom/galerkin.hpp"

namespace defrom {

// Proper orthogonal decomposition of a solution family in a fixed inner
// product. eigenvalues holds the top-k spectrum of the weighted snapshot
// correlation (non-increasing, nonnegative up to roundoff); modes holds the
// corresponding inner-orthonormal vectors. Modes whose eigenvalue falls
// below 1e-13 of the leading one are numerically indistinguishable from
// noise and are not materialized, so modes.size() <= eigenvalues.size().
struct PodBasis {
  std::vector<Vector> modes;
  std::vector<double> eigenvalues;

  DenseMatrix mode_matrix() const {
    if (modes.empty()) return DenseMatrix();
    DenseMatrix m(modes[0].size(), static_cast<Eigen::Index>(modes.size()));
    for (std::size_t j = 0; j < modes.size(); ++j)
      m.col(static_cast<Eigen::Index>(j)) = modes[j];
    return m;
  }
};

// Method of snapshots: eigendecomposition of the n_nodes x n_nodes matrix
// C_pq = sqrt(w_p w_q) (u_p, u_q)_inner; modes are lifted snapshots
// combinations, re-orthonormalized and sign-normalized (first nonzero
// coordinate positive). Requires 0 <= k <= min(dim, n_nodes) and an SPD
// inner product.
PodBasis pod_modes(const ParametricField& truth, const ParameterGrid& grid,
                   const SymmetricForm& inner, Eigen::Index k);

// Mean elliptic error of the Galerkin solution on the span of the first m
// modes, for m = 0..modes.size(); entry 0 is the full energy mean_form(u,u).
// Non-increasing in m.
std::vector<double> pod_error_curve(const PodBasis& pod,
                                    const ParametricOperator& op,
                                    const ParameterGrid& grid,
                                    const ParametricRHS& rhs,
                                    const ParametricField& truth);

// Directory layout: `meta`, `eigs.csv` (mode index, eigenvalue), and
// `modes.mtx` (dense array, present when at least one mode is retained).
void save_pod(const std::filesystem::path& dir, const PodBasis& pod);
PodBasis load_pod(const std::filesystem::path& dir);

}  // namespace defrom
