#pragma once

// File formats: 16-bit PGM (P2/P5) with "# key=value" comment lines,
// key-value sidecars and INI-style configs, CSV dumps of real images.
//
// Config grammar, one item per line:
//   [section]          starts a section; keys below become "section.key"
//   key = value        whitespace around key and value is trimmed
//   # ... or ; ...     comment; blank lines are ignored
// Keys before the first section header have no prefix.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mlellipse/error.hpp"
#include "mlellipse/forward.hpp"

namespace mlellipse::io {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string section;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw InvalidConfig("line " + std::to_string(lineno) + ": unterminated section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw InvalidConfig("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw InvalidConfig("line " + std::to_string(lineno) + ": empty key");
    kv[section.empty() ? key : section + "." + key] = trim(t.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_key_values(in);
}

inline void write_key_values(const std::string& path, const KeyValues& kv) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
  if (!out) throw IoError("write failed: " + path);
}

/// Typed lookups that name the missing or malformed key.
inline const std::string& require(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw InvalidConfig("missing key '" + key + "'");
  return it->second;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw InvalidConfig("key '" + key + "': '" + v + "' is not a number");
  }
}

inline std::int64_t to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw InvalidConfig("key '" + key + "': '" + v + "' is not an integer");
  }
}

inline double get_double(const KeyValues& kv, const std::string& key) {
  return to_double(key, require(kv, key));
}
inline double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : to_double(key, it->second);
}
inline std::int64_t get_int(const KeyValues& kv, const std::string& key) {
  return to_int(key, require(kv, key));
}
inline std::int64_t get_int(const KeyValues& kv, const std::string& key, std::int64_t fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : to_int(key, it->second);
}
inline std::string get_string(const KeyValues& kv, const std::string& key,
                              const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

/// Comma-separated list of numbers.
inline std::vector<double> get_list(const KeyValues& kv, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(require(kv, key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(to_double(key, t));
  }
  if (out.empty()) throw InvalidConfig("key '" + key + "' holds an empty list");
  return out;
}

/// Shortest decimal text that round-trips a double.
inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  double back = 0.0;
  for (int p = 6; p <= 17; ++p) {
    std::ostringstream t;
    t << std::setprecision(p) << v;
    std::istringstream(t.str()) >> back;
    if (back == v) return t.str();
  }
  return os.str();
}

enum class PgmEncoding { Ascii, Binary };

/// Writes the counts as a PGM. `comments` become "# key=value" lines after
/// the magic number; maxval is the largest count (at least 1, at most 65535).
inline void write_pgm(const std::string& path, const CountMatrix& counts,
                      const KeyValues& comments = {}, PgmEncoding enc = PgmEncoding::Binary) {
  const std::int64_t maxv = std::max<std::int64_t>(counts.size() ? counts.maxCoeff() : 1, 1);
  if (counts.size() && counts.minCoeff() < 0) throw IoError("PGM cannot hold negative counts");
  if (maxv > 65535) throw IoError("count exceeds the 16-bit PGM range");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << (enc == PgmEncoding::Binary ? "P5" : "P2") << '\n';
  for (const auto& [k, v] : comments) out << "# " << k << '=' << v << '\n';
  out << counts.cols() << ' ' << counts.rows() << '\n' << maxv << '\n';
  for (Eigen::Index m = 0; m < counts.rows(); ++m) {
    for (Eigen::Index n = 0; n < counts.cols(); ++n) {
      const auto v = static_cast<std::uint32_t>(counts(m, n));
      if (enc == PgmEncoding::Ascii) {
        out << v << (n + 1 == counts.cols() ? '\n' : ' ');
      } else if (maxv > 255) {
        out.put(static_cast<char>((v >> 8) & 0xff));
        out.put(static_cast<char>(v & 0xff));
      } else {
        out.put(static_cast<char>(v));
      }
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

struct PgmImage {
  CountMatrix counts;
  std::int64_t maxval = 0;
  KeyValues comments;
};

inline PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  PgmImage img;
  std::string magic;
  in >> magic;
  if (magic != "P2" && magic != "P5") throw IoError(path + ": not a P2/P5 PGM");
  // Header tokens, skipping comment lines and collecting key=value comments.
  auto next_token = [&]() -> std::int64_t {
    for (;;) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string line;
        std::getline(in, line);
        const std::string body = trim(line.substr(1));
        const auto eq = body.find('=');
        if (eq != std::string::npos) {
          img.comments[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
        }
        continue;
      }
      std::int64_t v = 0;
      if (!(in >> v)) throw IoError(path + ": malformed PGM header");
      return v;
    }
  };
  const std::int64_t cols = next_token();
  const std::int64_t rows = next_token();
  img.maxval = next_token();
  if (cols <= 0 || rows <= 0 || img.maxval <= 0 || img.maxval > 65535) {
    throw IoError(path + ": bad PGM dimensions or maxval");
  }
  img.counts.resize(rows, cols);
  if (magic == "P5") {
    in.get();  // single whitespace after maxval
    const bool wide = img.maxval > 255;
    for (std::int64_t m = 0; m < rows; ++m) {
      for (std::int64_t n = 0; n < cols; ++n) {
        const int hi = in.get();
        std::int64_t v = hi;
        if (wide) v = (static_cast<std::int64_t>(hi) << 8) | in.get();
        if (!in) throw IoError(path + ": truncated PGM data");
        img.counts(m, n) = v;
      }
    }
  } else {
    for (std::int64_t m = 0; m < rows; ++m) {
      for (std::int64_t n = 0; n < cols; ++n) {
        std::int64_t v = 0;
        if (!(in >> v)) throw IoError(path + ": truncated PGM data");
        img.counts(m, n) = v;
      }
    }
  }
  return img;
}

inline void write_csv(const std::string& path, const RealMatrix& values) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (Eigen::Index m = 0; m < values.rows(); ++m) {
    for (Eigen::Index n = 0; n < values.cols(); ++n) {
      if (n) out << ',';
      out << format_double(values(m, n));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace mlellipse::io
