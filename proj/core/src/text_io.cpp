#include "defrom/text_io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "defrom/errors.hpp"

namespace defrom {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& token) {
  const std::string t = trim(token);
  if (t.empty()) throw IoError("expected a number, got an empty field");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size())
    throw IoError("malformed number: '" + token + "'");
  // ERANGE with a finite nonzero result is a representable denormal; only
  // true overflow (|v| = HUGE_VAL) or total underflow (v = 0) is an error.
  if (errno == ERANGE && (v == 0.0 || v == HUGE_VAL || v == -HUGE_VAL))
    throw IoError("number out of range: '" + token + "'");
  return v;
}

long long parse_int(const std::string& token) {
  const std::string t = trim(token);
  if (t.empty()) throw IoError("expected an integer, got an empty field");
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (end != t.c_str() + t.size() || errno == ERANGE)
    throw IoError("malformed integer: '" + token + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' ||
           c == '\v';
  };
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

void KeyValues::set(const std::string& key, std::string value) {
  for (auto& [k, v] : items_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  items_.emplace_back(key, std::move(value));
}

bool KeyValues::has(const std::string& key) const {
  return find(key) != nullptr;
}

const std::string* KeyValues::find(const std::string& key) const {
  for (const auto& [k, v] : items_)
    if (k == key) return &v;
  return nullptr;
}

std::string KeyValues::require(const std::string& key) const {
  if (const std::string* v = find(key)) return *v;
  throw IoError("missing required key '" + key + "'");
}

std::string KeyValues::get_or(const std::string& key,
                              std::string fallback) const {
  if (const std::string* v = find(key)) return *v;
  return fallback;
}

KeyValues KeyValues::parse_text(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw IoError("line " + std::to_string(lineno) +
                    ": expected 'key = value', got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw IoError("line " + std::to_string(lineno) + ": empty key");
    kv.set(key, trim(t.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  try {
    return parse_text(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string KeyValues::to_text() const {
  std::string out;
  for (const auto& [k, v] : items_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

void KeyValues::save(const std::filesystem::path& path) const {
  write_file(path, to_text());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

void CsvTable::save(const std::filesystem::path& path) const {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out += ',';
    out += header[i];
  }
  out += '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw IoError("CSV row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += row[i];
    }
    out += '\n';
  }
  write_file(path, out);
}

CsvTable CsvTable::load(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  CsvTable table;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first) {
      table.header = split(line, ',');
      first = false;
      continue;
    }
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != table.header.size())
      throw IoError(path.string() + ": CSV row width mismatch");
    table.rows.push_back(std::move(cells));
  }
  if (first) throw IoError(path.string() + ": empty CSV file");
  return table;
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw IoError("CSV column '" + name + "' not found");
}

}  // namespace defrom
