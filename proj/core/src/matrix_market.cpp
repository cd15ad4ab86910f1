#include "defrom/matrix_market.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <vector>

#include "defrom/text_io.hpp"

namespace defrom {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<std::string> whitespace_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

struct LineReader {
  std::istringstream in;
  std::string path;
  int lineno = 0;

  LineReader(std::string text, std::string p)
      : in(std::move(text)), path(std::move(p)) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError(path + ":" + std::to_string(lineno) + ": " + msg);
  }

  // Next line that is neither blank nor a comment; false at end of input.
  bool next_content(std::string& line) {
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '%') continue;
      line = t;
      return true;
    }
    return false;
  }
};

}  // namespace

MmMatrix mm_read(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  LineReader reader(text, path.string());

  std::string banner;
  if (!std::getline(reader.in, banner)) reader.fail("empty file");
  reader.lineno = 1;
  const auto head = whitespace_tokens(lower(banner));
  if (head.size() != 5 || head[0] != "%%matrixmarket" || head[1] != "matrix")
    reader.fail("not a MatrixMarket matrix file");
  const std::string& format = head[2];
  const std::string& field = head[3];
  const std::string& symmetry = head[4];
  if (format != "array" && format != "coordinate")
    reader.fail("unsupported format '" + format + "'");
  if (field != "real" && field != "integer")
    reader.fail("unsupported field '" + field + "'");
  if (symmetry != "general" && symmetry != "symmetric")
    reader.fail("unsupported symmetry '" + symmetry + "'");

  MmMatrix out;
  out.symmetry =
      symmetry == "symmetric" ? MmSymmetry::symmetric : MmSymmetry::general;

  std::string line;
  if (!reader.next_content(line)) reader.fail("missing size line");
  const auto size_tokens = whitespace_tokens(line);

  if (format == "array") {
    if (size_tokens.size() != 2) reader.fail("array size line needs 2 fields");
    const auto rows = parse_int(size_tokens[0]);
    const auto cols = parse_int(size_tokens[1]);
    if (rows <= 0 || cols <= 0) reader.fail("invalid dimensions");
    if (out.symmetry == MmSymmetry::symmetric && rows != cols)
      reader.fail("symmetric array must be square");
    out.is_sparse = false;
    out.dense.resize(rows, cols);
    auto read_value = [&]() {
      if (!reader.next_content(line)) reader.fail("unexpected end of data");
      return parse_double(line);
    };
    if (out.symmetry == MmSymmetry::general) {
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) out.dense(i, j) = read_value();
    } else {
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = j; i < rows; ++i) {
          const double v = read_value();
          out.dense(i, j) = v;
          out.dense(j, i) = v;
        }
    }
    if (reader.next_content(line)) reader.fail("trailing data");
    return out;
  }

  // coordinate
  if (size_tokens.size() != 3) reader.fail("coordinate size line needs 3 fields");
  const auto rows = parse_int(size_tokens[0]);
  const auto cols = parse_int(size_tokens[1]);
  const auto nnz = parse_int(size_tokens[2]);
  if (rows <= 0 || cols <= 0 || nnz < 0) reader.fail("invalid dimensions");
  if (out.symmetry == MmSymmetry::symmetric && rows != cols)
    reader.fail("symmetric matrix must be square");
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(2 * nnz));
  for (long long e = 0; e < nnz; ++e) {
    if (!reader.next_content(line)) reader.fail("unexpected end of data");
    const auto toks = whitespace_tokens(line);
    if (toks.size() != 3) reader.fail("coordinate entry needs 3 fields");
    const auto i = parse_int(toks[0]) - 1;
    const auto j = parse_int(toks[1]) - 1;
    const double v = parse_double(toks[2]);
    if (i < 0 || i >= rows || j < 0 || j >= cols)
      reader.fail("entry index out of range");
    if (out.symmetry == MmSymmetry::symmetric && i < j)
      reader.fail("symmetric file must store the lower triangle");
    triplets.emplace_back(static_cast<int>(i), static_cast<int>(j), v);
    if (out.symmetry == MmSymmetry::symmetric && i != j)
      triplets.emplace_back(static_cast<int>(j), static_cast<int>(i), v);
  }
  if (reader.next_content(line)) reader.fail("trailing data");
  out.is_sparse = true;
  out.sparse.resize(rows, cols);
  out.sparse.setFromTriplets(triplets.begin(), triplets.end());
  out.sparse.makeCompressed();
  return out;
}

DenseMatrix mm_read_dense(const std::filesystem::path& path) {
  MmMatrix m = mm_read(path);
  if (m.is_sparse) return DenseMatrix(m.sparse);
  return std::move(m.dense);
}

SparseMatrix mm_read_sparse(const std::filesystem::path& path) {
  MmMatrix m = mm_read(path);
  if (!m.is_sparse) return m.dense.sparseView();
  return std::move(m.sparse);
}

Vector mm_read_vector(const std::filesystem::path& path) {
  const DenseMatrix m = mm_read_dense(path);
  if (m.cols() != 1)
    throw IoError(path.string() + ": expected a single-column matrix");
  return m.col(0);
}

void mm_write_array(const std::filesystem::path& path, const DenseMatrix& m,
                    MmSymmetry symmetry) {
  if (m.rows() == 0 || m.cols() == 0)
    throw InvalidArgumentError("mm_write_array: empty matrix");
  if (symmetry == MmSymmetry::symmetric && m.rows() != m.cols())
    throw InvalidArgumentError("mm_write_array: symmetric matrix not square");
  std::string out = symmetry == MmSymmetry::general
                        ? "%%MatrixMarket matrix array real general\n"
                        : "%%MatrixMarket matrix array real symmetric\n";
  out += std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
  if (symmetry == MmSymmetry::general) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        out += fmt_double(m(i, j)) + "\n";
  } else {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = j; i < m.rows(); ++i)
        out += fmt_double(m(i, j)) + "\n";
  }
  write_file(path, out);
}

void mm_write_coordinate(const std::filesystem::path& path,
                         const SparseMatrix& m, MmSymmetry symmetry) {
  if (m.rows() == 0 || m.cols() == 0)
    throw InvalidArgumentError("mm_write_coordinate: empty matrix");
  if (symmetry == MmSymmetry::symmetric && m.rows() != m.cols())
    throw InvalidArgumentError(
        "mm_write_coordinate: symmetric matrix not square");
  SparseMatrix c = m;
  c.makeCompressed();
  const bool lower_only = symmetry == MmSymmetry::symmetric;
  long long nnz = 0;
  for (int k = 0; k < c.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(c, k); it; ++it)
      if (!lower_only || it.row() >= it.col()) ++nnz;
  std::string out = lower_only
                        ? "%%MatrixMarket matrix coordinate real symmetric\n"
                        : "%%MatrixMarket matrix coordinate real general\n";
  out += std::to_string(c.rows()) + " " + std::to_string(c.cols()) + " " +
         std::to_string(nnz) + "\n";
  for (int k = 0; k < c.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(c, k); it; ++it) {
      if (lower_only && it.row() < it.col()) continue;
      out += std::to_string(it.row() + 1) + " " + std::to_string(it.col() + 1) +
             " " + fmt_double(it.value()) + "\n";
    }
  write_file(path, out);
}

void mm_write_vector(const std::filesystem::path& path, const Vector& v) {
  mm_write_array(path, v, MmSymmetry::general);
}

SymmetricForm mm_read_form(const std::filesystem::path& path, bool spd_hint) {
  MmMatrix m = mm_read(path);
  try {
    if (m.is_sparse) return SymmetricForm(std::move(m.sparse), spd_hint);
    return SymmetricForm(std::move(m.dense), spd_hint);
  } catch (const Error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void mm_write_form(const std::filesystem::path& path, const SymmetricForm& f) {
  if (f.is_sparse())
    mm_write_coordinate(path, *f.sparse(), MmSymmetry::symmetric);
  else
    mm_write_array(path, *f.dense(), MmSymmetry::symmetric);
}

}  // namespace defrom
