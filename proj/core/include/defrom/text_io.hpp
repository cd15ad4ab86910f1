#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace defrom {

// Shortest-exact decimal rendering used by every text artifact: 17
// significant digits round-trip any double bit-exactly through strtod.
std::string fmt_double(double v);

// Exact string-to-double conversion; throws IoError on malformed input.
double parse_double(const std::string& token);
long long parse_int(const std::string& token);

std::vector<std::string> split(const std::string& line, char delim);
std::string trim(const std::string& s);

// Ordered key = value text file (order is preserved so that writes are
// reproducible). Keys may be dotted (section.key); values are raw strings.
class KeyValues {
 public:
  void set(const std::string& key, std::string value);
  bool has(const std::string& key) const;
  const std::string* find(const std::string& key) const;
  std::string require(const std::string& key) const;  // throws IoError
  std::string get_or(const std::string& key, std::string fallback) const;

  const std::vector<std::pair<std::string, std::string>>& items() const {
    return items_;
  }

  static KeyValues parse_text(const std::string& text);
  static KeyValues load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string to_text() const;

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

// Minimal CSV support: a header row of names plus rows of cells. Cells are
// written verbatim (no quoting; values must not contain commas or newlines).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void save(const std::filesystem::path& path) const;
  static CsvTable load(const std::filesystem::path& path);
  std::size_t column(const std::string& name) const;  // throws IoError
};

}  // namespace defrom
