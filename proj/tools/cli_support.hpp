#pragma once

// Config grammar, number formatting, hashing and CSV output for the command-line tool.
//
// Config files are flat text, one `key = value` per line. Blank lines and lines
// whose first non-blank character is '#' are ignored. Keys are [a-z0-9_]+, values
// run to the end of the line with surrounding blanks trimmed. A key may appear once.
// Command-line flags override file values.
//
// Value forms:  number | list "a,b,c" | range "lo:hi:count" | complex "re,im"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hyperdisp/errors.hpp"

namespace hyperdisp::cli {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_')) return false;
  return true;
}

inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::precondition, "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (!valid_key(key)) fail(ErrorCode::precondition, "config line " + std::to_string(lineno) + ": bad key '" + key + "'");
    if (!out.emplace(key, value).second)
      fail(ErrorCode::precondition, "config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return out;
}

inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::io, "cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

/// Shortest text that round-trips exactly; '.' decimal, no locale.
inline std::string format_double(double x) {
  if (x == 0.0) return "0";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size() || !std::isfinite(v))
    fail(ErrorCode::precondition, "key '" + key + "': not a number: '" + s + "'");
  return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

struct Range {
  double lo = 0.0, hi = 0.0;
  int count = 1;
};

class Config {
 public:
  Config(std::string command, std::map<std::string, std::string> values)
      : command_(std::move(command)), values_(std::move(values)) {}

  const std::string& command() const { return command_; }
  const std::map<std::string, std::string>& values() const { return values_; }
  bool has(const std::string& k) const { return values_.count(k) > 0; }

  const std::string& str(const std::string& k) const {
    const auto it = values_.find(k);
    if (it == values_.end()) fail(ErrorCode::precondition, "missing key '" + k + "'");
    return it->second;
  }
  double num(const std::string& k) const { return parse_double(k, str(k)); }
  int integer(const std::string& k) const {
    const double v = num(k);
    if (v != std::floor(v) || std::abs(v) > 1e9) fail(ErrorCode::precondition, "key '" + k + "': expected an integer");
    return static_cast<int>(v);
  }
  bool flag(const std::string& k) const {
    const std::string& v = str(k);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    fail(ErrorCode::precondition, "key '" + k + "': expected true/false");
  }
  std::vector<double> list(const std::string& k) const {
    std::vector<double> out;
    for (const auto& p : split(str(k), ',')) out.push_back(parse_double(k, p));
    return out;
  }
  Range range(const std::string& k) const {
    const auto parts = split(str(k), ':');
    if (parts.size() == 1) {
      const double v = parse_double(k, parts[0]);
      return {v, v, 1};
    }
    if (parts.size() != 3) fail(ErrorCode::precondition, "key '" + k + "': expected lo:hi:count");
    Range r{parse_double(k, parts[0]), parse_double(k, parts[1]), 0};
    const double c = parse_double(k, parts[2]);
    if (c != std::floor(c) || c < 2 || c > 1e6 || !(r.hi > r.lo))
      fail(ErrorCode::precondition, "key '" + k + "': need hi > lo and an integer count >= 2");
    r.count = static_cast<int>(c);
    return r;
  }
  std::complex<double> complex(const std::string& k) const {
    const auto parts = split(str(k), ',');
    if (parts.size() == 1) return {parse_double(k, parts[0]), 0.0};
    if (parts.size() != 2) fail(ErrorCode::precondition, "key '" + k + "': expected re or re,im");
    return {parse_double(k, parts[0]), parse_double(k, parts[1])};
  }

  /// Canonical text: command line, then sorted key = value lines; the output location is left out.
  std::string canonical() const {
    std::string s = "command = " + command_ + "\n";
    for (const auto& [k, v] : values_)
      if (k != "out") s += k + " = " + v + "\n";
    return s;
  }

 private:
  std::string command_;
  std::map<std::string, std::string> values_;
};

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorCode::io, "sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::vector<double> linear_points(const Range& r) {
  if (r.count == 1) return {r.lo};
  std::vector<double> v(static_cast<std::size_t>(r.count));
  for (int i = 0; i < r.count; ++i) v[i] = r.lo + (r.hi - r.lo) * i / (r.count - 1);
  return v;
}

/// CSV with a leading "# config_sha256=..." comment line.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& hash, const std::vector<std::string>& header)
      : path_(path), out_(path, std::ios::binary) {
    if (!out_) fail(ErrorCode::io, "cannot write " + path.string());
    out_ << "# config_sha256=" << hash << "\n";
    row_strings(header);
  }
  void row(const std::vector<double>& cells) {
    std::vector<std::string> s;
    s.reserve(cells.size());
    for (double c : cells) s.push_back(format_double(c));
    row_strings(s);
  }
  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::io, "cannot read " + path);
  CsvTable t;
  std::string line;
  while (std::getline(f, line)) {
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (t.header.empty()) {
      t.header = split(s, ',');
      continue;
    }
    std::vector<double> row;
    for (const auto& c : split(s, ',')) row.push_back(parse_double(path, c));
    if (row.size() != t.header.size()) fail(ErrorCode::io, path + ": ragged row");
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) fail(ErrorCode::io, path + ": no header");
  return t;
}

}  // namespace hyperdisp::cli
