#pragma once

#include <filesystem>

#include "defrom/hilbert.hpp"

namespace defrom {

// Matrix Market (.mtx) readers and writers for the two layouts used by the
// on-disk artifacts: "coordinate real" (sparse) and "array real" (dense
// column-major). Symmetry markers general/symmetric are supported; symmetric
// files store the lower triangle and are expanded on read. Values are
// written with 17 significant digits so that write/read/write reproduces a
// file byte for byte.

enum class MmSymmetry { general, symmetric };

struct MmMatrix {
  bool is_sparse = false;
  MmSymmetry symmetry = MmSymmetry::general;
  DenseMatrix dense;    // populated when !is_sparse
  SparseMatrix sparse;  // populated when is_sparse (symmetry expanded)

  Eigen::Index rows() const { return is_sparse ? sparse.rows() : dense.rows(); }
  Eigen::Index cols() const { return is_sparse ? sparse.cols() : dense.cols(); }
};

MmMatrix mm_read(const std::filesystem::path& path);
DenseMatrix mm_read_dense(const std::filesystem::path& path);
SparseMatrix mm_read_sparse(const std::filesystem::path& path);
Vector mm_read_vector(const std::filesystem::path& path);

void mm_write_array(const std::filesystem::path& path, const DenseMatrix& m,
                    MmSymmetry symmetry = MmSymmetry::general);
void mm_write_coordinate(const std::filesystem::path& path,
                         const SparseMatrix& m,
                         MmSymmetry symmetry = MmSymmetry::general);
void mm_write_vector(const std::filesystem::path& path, const Vector& v);

// A SymmetricForm round-trips as coordinate/symmetric (sparse storage) or
// array/symmetric (dense storage).
SymmetricForm mm_read_form(const std::filesystem::path& path,
                           bool spd_hint = false);
void mm_write_form(const std::filesystem::path& path, const SymmetricForm& f);

}  // namespace defrom
