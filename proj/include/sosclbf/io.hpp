#pragma once

// Text formats: problem files, certificate files and the problem hash.
//
// Problem file (line oriented, '#' starts a comment):
//
//   sosclbf-problem 1
//   [variables]          states = x1 x2 x3      inputs = 2
//   [dynamics]           f[i] = <poly>          G[i,j] = <poly>   (missing G entries are 0)
//   [sets]               w[i] = <poly>          r = <poly>
//   [certificate]        l = <poly>             xstar = <n reals>    eps_s1 = <real>
//   [centers]            x[i] = <n reals>       value[i] = <real>
//   [degrees]            V B s1 s2 s3 s4 p pm1 = <int>;  V_set, B_set = <ints>
//   [algorithm]          max_outer, threshold, seed, eps_floor, regularization
//   [initial_controller] rho, pm1_value, s1 = <poly>, p[j] = <poly>, pm1[i] = <poly>
//
// Indices are 1-based. Unknown sections and keys are rejected.
//
// Certificate file: a header of "key = value" lines followed by
// "[polynomial NAME]" and "[witness NAME]" sections. Polynomials are lists
// of "e1 ... en coefficient" lines; numbers use the shortest decimal form
// that round-trips, so write(read(file)) reproduces the file byte for byte.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <openssl/evp.h>

#include "sosclbf/certs.hpp"
#include "sosclbf/poly.hpp"
#include "sosclbf/poly_io.hpp"

namespace sosclbf {

inline constexpr const char* kToolVersion = "0.1.0";

class FileFormatError : public std::runtime_error {
 public:
  FileFormatError(const std::string& source, int line, int column, const std::string& message)
      : std::runtime_error(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

struct Line {
  int number;
  std::string_view text;
};

inline std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> out;
  int number = 1;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    out.push_back({number++, text.substr(start, end - start)});
    if (end == text.size()) break;
    start = end + 1;
  }
  return out;
}

// "name[i]" or "name[i,j]" -> name and 1-based indices.
inline bool split_indexed(std::string_view key, std::string& name, std::vector<int>& idx) {
  idx.clear();
  const auto open = key.find('[');
  if (open == std::string_view::npos) {
    name = std::string(key);
    return true;
  }
  if (key.back() != ']') return false;
  name = std::string(key.substr(0, open));
  std::string_view inner = key.substr(open + 1, key.size() - open - 2);
  while (!inner.empty()) {
    const auto comma = inner.find(',');
    const std::string_view part = trim(inner.substr(0, comma));
    int v = 0;
    if (!parse_number(part, v) || v < 1) return false;
    idx.push_back(v);
    if (comma == std::string_view::npos) break;
    inner.remove_prefix(comma + 1);
  }
  return !idx.empty();
}

}  // namespace detail

// ---- problem files -------------------------------------------------------

inline ProblemSpec parse_problem(std::string_view text, const std::string& source = "<problem>") {
  using detail::trim;
  const auto lines = detail::split_lines(text);

  struct Entry {
    int line;
    int key_col;
    int value_col;
    std::string section;
    std::string name;
    std::vector<int> idx;
    std::string value;
  };
  std::vector<Entry> entries;
  const std::map<std::string, std::set<std::string>> allowed = {
      {"variables", {"states", "inputs"}},
      {"dynamics", {"f", "G"}},
      {"sets", {"w", "r"}},
      {"certificate", {"l", "xstar", "eps_s1"}},
      {"centers", {"x", "value"}},
      {"degrees", {"V", "V_set", "B", "B_set", "s1", "s2", "s3", "s4", "p", "pm1"}},
      {"algorithm", {"max_outer", "threshold", "seed", "eps_floor", "regularization"}},
      {"initial_controller", {"rho", "pm1_value", "s1", "p", "pm1"}},
  };

  std::string section;
  bool header_seen = false;
  for (const auto& ln : lines) {
    std::string_view raw = ln.text;
    const auto hash = raw.find('#');
    if (hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string_view body = trim(raw);
    if (body.empty()) continue;
    const int col = static_cast<int>(body.data() - ln.text.data()) + 1;
    if (!header_seen) {
      if (body != "sosclbf-problem 1") throw FileFormatError(source, ln.number, col, "expected header 'sosclbf-problem 1'");
      header_seen = true;
      continue;
    }
    if (body.front() == '[') {
      if (body.back() != ']') throw FileFormatError(source, ln.number, col, "unterminated section header");
      section = std::string(trim(body.substr(1, body.size() - 2)));
      if (!allowed.count(section)) throw FileFormatError(source, ln.number, col, "unknown section '" + section + "'");
      continue;
    }
    if (section.empty()) throw FileFormatError(source, ln.number, col, "entry outside of a section");
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw FileFormatError(source, ln.number, col, "expected 'key = value'");
    const std::string_view key = trim(body.substr(0, eq));
    const std::string_view value_raw = body.substr(eq + 1);
    const std::string_view value = trim(value_raw);
    Entry e;
    e.line = ln.number;
    e.key_col = col;
    e.value_col = static_cast<int>(value.data() - ln.text.data()) + 1;
    e.section = section;
    e.value = std::string(value);
    if (!detail::split_indexed(key, e.name, e.idx)) {
      throw FileFormatError(source, ln.number, col, "malformed key '" + std::string(key) + "'");
    }
    if (!allowed.at(section).count(e.name)) {
      throw FileFormatError(source, ln.number, col, "unknown key '" + e.name + "' in section [" + section + "]");
    }
    if (value.empty()) throw FileFormatError(source, ln.number, e.value_col, "empty value");
    entries.push_back(std::move(e));
  }
  if (!header_seen) throw FileFormatError(source, 1, 1, "expected header 'sosclbf-problem 1'");

  auto fail = [&](const Entry& e, const std::string& msg) -> FileFormatError {
    return FileFormatError(source, e.line, e.value_col, msg);
  };
  auto find = [&](const std::string& sec, const std::string& name) -> const Entry* {
    const Entry* hit = nullptr;
    for (const auto& e : entries) {
      if (e.section == sec && e.name == name && e.idx.empty()) {
        if (hit) throw FileFormatError(source, e.line, e.key_col, "duplicate key '" + name + "'");
        hit = &e;
      }
    }
    return hit;
  };
  auto expect_plain = [&](const Entry& e) {
    if (!e.idx.empty()) throw FileFormatError(source, e.line, e.key_col, "key '" + e.name + "' takes no index");
  };

  ProblemSpec spec;
  // Variables first: every polynomial depends on the names.
  const Entry* states = find("variables", "states");
  if (!states) throw FileFormatError(source, 1, 1, "missing 'states' in [variables]");
  for (auto tok : detail::split_ws(states->value)) spec.varnames.emplace_back(tok);
  spec.n = static_cast<int>(spec.varnames.size());
  if (spec.n == 0) throw fail(*states, "no state variables");
  const Entry* inputs = find("variables", "inputs");
  if (!inputs) throw FileFormatError(source, states->line, 1, "missing 'inputs' in [variables]");
  if (!detail::parse_number(inputs->value, spec.m) || spec.m < 1) throw fail(*inputs, "inputs must be a positive integer");

  auto poly = [&](const Entry& e) {
    try {
      return parse_polynomial(e.value, spec.varnames);
    } catch (const ParseError& pe) {
      throw FileFormatError(source, e.line, e.value_col + static_cast<int>(pe.position()), pe.what());
    }
  };
  auto reals = [&](const Entry& e, int count) {
    const auto toks = detail::split_ws(e.value);
    if (count >= 0 && static_cast<int>(toks.size()) != count) {
      throw fail(e, "expected " + std::to_string(count) + " numbers");
    }
    std::vector<double> out;
    for (auto tok : toks) {
      double v = 0.0;
      if (!detail::parse_number(tok, v)) {
        throw FileFormatError(source, e.line, e.value_col + static_cast<int>(tok.data() - e.value.data()),
                              "malformed number '" + std::string(tok) + "'");
      }
      out.push_back(v);
    }
    return out;
  };
  auto real = [&](const Entry& e) { return reals(e, 1)[0]; };
  auto integer = [&](const Entry& e) {
    int v = 0;
    if (!detail::parse_number(e.value, v)) throw fail(e, "expected an integer");
    return v;
  };
  auto ints = [&](const Entry& e) {
    std::vector<int> out;
    for (auto tok : detail::split_ws(e.value)) {
      int v = 0;
      if (!detail::parse_number(tok, v) || v < 0) throw fail(e, "expected non-negative integers");
      out.push_back(v);
    }
    return out;
  };
  auto to_point = [](const std::vector<double>& v) {
    Point p(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) p(static_cast<Eigen::Index>(i)) = v[i];
    return p;
  };

  const int n = spec.n;
  std::vector<std::optional<Polynomial>> f(static_cast<std::size_t>(n));
  spec.G = PolyMatrix(n, spec.m, n);
  std::map<int, Polynomial> w;
  std::map<int, Point> cx;
  std::map<int, double> cval;
  std::map<int, Polynomial> init_p;
  std::map<int, Polynomial> init_pm1;
  std::set<std::string> seen;
  bool have_r = false;
  bool have_l = false;
  spec.xstar = Point::Zero(n);

  for (const auto& e : entries) {
    std::string key = e.section + "." + e.name;
    for (int i : e.idx) key += "," + std::to_string(i);
    if (!seen.insert(key).second) throw FileFormatError(source, e.line, e.key_col, "duplicate key '" + e.name + "'");
    auto index_count = [&](std::size_t k) {
      if (e.idx.size() != k) {
        throw FileFormatError(source, e.line, e.key_col,
                              "key '" + e.name + "' needs " + std::to_string(k) + " index(es)");
      }
    };
    if (e.section == "variables") {
      expect_plain(e);
    } else if (e.section == "dynamics") {
      if (e.name == "f") {
        index_count(1);
        if (e.idx[0] > n) throw FileFormatError(source, e.line, e.key_col, "f index out of range");
        f[static_cast<std::size_t>(e.idx[0] - 1)] = poly(e);
      } else {
        index_count(2);
        if (e.idx[0] > n || e.idx[1] > spec.m) throw FileFormatError(source, e.line, e.key_col, "G index out of range");
        spec.G(e.idx[0] - 1, e.idx[1] - 1) = poly(e);
      }
    } else if (e.section == "sets") {
      if (e.name == "w") {
        index_count(1);
        w[e.idx[0]] = poly(e);
      } else {
        expect_plain(e);
        spec.r = poly(e);
        have_r = true;
      }
    } else if (e.section == "certificate") {
      expect_plain(e);
      if (e.name == "l") {
        spec.l = poly(e);
        have_l = true;
      } else if (e.name == "xstar") {
        spec.xstar = to_point(reals(e, n));
      } else {
        spec.eps_s1 = real(e);
      }
    } else if (e.section == "centers") {
      index_count(1);
      if (e.name == "x") {
        cx[e.idx[0]] = to_point(reals(e, n));
      } else {
        cval[e.idx[0]] = real(e);
      }
    } else if (e.section == "degrees") {
      expect_plain(e);
      auto& d = spec.degrees;
      if (e.name == "V_set") {
        d.V_set = ints(e);
      } else if (e.name == "B_set") {
        d.B_set = ints(e);
      } else {
        const int v = integer(e);
        if (v < 0) throw fail(e, "degree must be non-negative");
        if (e.name == "V") d.V = v;
        if (e.name == "B") d.B = v;
        if (e.name == "s1") d.s1 = v;
        if (e.name == "s2") d.s2 = v;
        if (e.name == "s3") d.s3 = v;
        if (e.name == "s4") d.s4 = v;
        if (e.name == "p") d.p = v;
        if (e.name == "pm1") d.pm1 = v;
      }
    } else if (e.section == "algorithm") {
      expect_plain(e);
      auto& a = spec.algorithm;
      if (e.name == "max_outer") a.max_outer = integer(e);
      if (e.name == "threshold") a.threshold = real(e);
      if (e.name == "eps_floor") a.eps_floor = real(e);
      if (e.name == "regularization") a.regularization = real(e);
      if (e.name == "seed") {
        if (!detail::parse_number(e.value, a.seed)) throw fail(e, "seed must be a non-negative integer");
      }
    } else if (e.section == "initial_controller") {
      if (e.name == "rho") {
        expect_plain(e);
        spec.init.rho = real(e);
      } else if (e.name == "pm1_value") {
        expect_plain(e);
        spec.init.pm1 = real(e);
      } else if (e.name == "s1") {
        expect_plain(e);
        spec.init.s1 = poly(e);
      } else if (e.name == "p") {
        index_count(1);
        init_p[e.idx[0]] = poly(e);
      } else {
        index_count(1);
        init_pm1[e.idx[0]] = poly(e);
      }
    }
  }

  for (int i = 0; i < n; ++i) {
    if (!f[static_cast<std::size_t>(i)]) {
      throw FileFormatError(source, 1, 1, "missing f[" + std::to_string(i + 1) + "] in [dynamics]");
    }
    spec.f.push_back(*f[static_cast<std::size_t>(i)]);
  }
  if (!have_r) throw FileFormatError(source, 1, 1, "missing r in [sets]");
  auto contiguous = [&](const auto& map, const std::string& what) {
    int expect = 1;
    for (const auto& [k, v] : map) {
      if (k != expect++) throw FileFormatError(source, 1, 1, what + " indices must be 1..t without gaps");
    }
  };
  contiguous(w, "w");
  for (const auto& [k, v] : w) spec.w.push_back(v);
  const int t = spec.t();
  for (int i = 1; i <= t; ++i) {
    if (!cx.count(i) || !cval.count(i)) {
      throw FileFormatError(source, 1, 1, "missing center x[" + std::to_string(i) + "] or value[" + std::to_string(i) + "]");
    }
    spec.centers.push_back({cx[i], cval[i]});
  }
  if (static_cast<int>(cx.size()) != t || static_cast<int>(cval.size()) != t) {
    throw FileFormatError(source, 1, 1, "more centers than allowable-set polynomials");
  }
  spec.l = have_l ? spec.l : default_l(spec.xstar);
  if (!init_p.empty()) {
    contiguous(init_p, "p");
    PolyVector p;
    for (const auto& [k, v] : init_p) p.push_back(v);
    spec.init.p = p;
  }
  if (!init_pm1.empty()) {
    contiguous(init_pm1, "pm1");
    std::vector<Polynomial> pm1;
    for (const auto& [k, v] : init_pm1) pm1.push_back(v);
    spec.init.pm1_polys = pm1;
  }
  return spec;
}

struct LoadedProblem {
  ProblemSpec spec;
  std::string text;
  std::string hash;
};

inline LoadedProblem load_problem(const std::string& path) {
  LoadedProblem lp;
  lp.text = read_file(path);
  lp.spec = parse_problem(lp.text, path);
  lp.hash = sha256_hex(lp.text);
  return lp;
}

// ---- certificate files ---------------------------------------------------

namespace detail {

inline void write_poly_lines(std::ostringstream& os, const Polynomial& p) {
  os << "terms " << p.size() << '\n';
  for (const auto& [m, c] : p.terms()) {
    for (int i = 0; i < m.nvars(); ++i) os << m[i] << ' ';
    os << format_double(c) << '\n';
  }
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += format_double(v[i]);
  }
  return out;
}

}  // namespace detail

inline std::string format_certificate(const CertificateSet& cs) {
  std::ostringstream os;
  const int n = cs.V.nvars();
  os << "sosclbf-certificate 1\n";
  os << "tool_version = " << cs.meta.tool_version << '\n';
  os << "problem_hash = " << cs.meta.problem_hash << '\n';
  os << "nvars = " << n << '\n';
  os << "ninputs = " << cs.p.size() << '\n';
  os << "nbarriers = " << cs.B.size() << '\n';
  os << "nwitnesses = " << cs.witnesses.size() << '\n';
  os << "iteration = " << cs.meta.iteration << '\n';
  os << "stage = " << cs.meta.stage << '\n';
  os << "cost = " << format_double(cs.meta.cost) << '\n';
  os << "eps = " << detail::join_doubles(cs.meta.eps) << '\n';
  os << "cost_history = " << detail::join_doubles(cs.meta.cost_history) << '\n';
  os << "step1_iterations = " << cs.meta.step1_iterations << '\n';
  os << "step2_iterations = " << cs.meta.step2_iterations << '\n';
  auto poly = [&](const std::string& name, const Polynomial& p) {
    os << "[polynomial " << name << "]\n";
    detail::write_poly_lines(os, p);
  };
  poly("V", cs.V);
  for (std::size_t i = 0; i < cs.B.size(); ++i) poly("B_" + std::to_string(i + 1), cs.B[i]);
  poly("s1", cs.s1);
  poly("s2", cs.s2);
  for (std::size_t i = 0; i < cs.s3.size(); ++i) poly("s3_" + std::to_string(i + 1), cs.s3[i]);
  for (std::size_t i = 0; i < cs.s4.size(); ++i) poly("s4_" + std::to_string(i + 1), cs.s4[i]);
  for (std::size_t j = 0; j < cs.p.size(); ++j) poly("p_" + std::to_string(j + 1), cs.p[j]);
  for (std::size_t i = 0; i < cs.pm1.size(); ++i) poly("pm1_" + std::to_string(i + 1), cs.pm1[i]);
  for (const auto& w : cs.witnesses) {
    os << "[witness " << w.name << "]\n";
    os << "shift";
    for (Eigen::Index j = 0; j < w.basis_shift.size(); ++j) os << ' ' << format_double(w.basis_shift(j));
    os << '\n';
    os << "basis " << w.basis.size() << '\n';
    for (const auto& m : w.basis) {
      for (int i = 0; i < m.nvars(); ++i) os << (i ? " " : "") << m[i];
      os << '\n';
    }
    os << "gram\n";
    for (Eigen::Index r = 0; r < w.gram.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.gram.cols(); ++c) os << (c ? " " : "") << format_double(w.gram(r, c));
      os << '\n';
    }
    detail::write_poly_lines(os, w.polynomial);
  }
  return os.str();
}

inline CertificateSet parse_certificate(std::string_view text, const std::string& source = "<certificate>") {
  using detail::trim;
  const auto lines = detail::split_lines(text);
  std::size_t pos = 0;
  auto fail = [&](const std::string& msg) -> FileFormatError {
    const int ln = pos < lines.size() ? lines[pos].number : static_cast<int>(lines.size());
    return FileFormatError(source, ln, 1, msg);
  };
  auto next = [&]() -> std::string_view {
    while (pos < lines.size() && trim(lines[pos].text).empty()) ++pos;
    if (pos >= lines.size()) throw fail("unexpected end of file");
    return trim(lines[pos++].text);
  };
  auto at_end = [&]() {
    while (pos < lines.size() && trim(lines[pos].text).empty()) ++pos;
    return pos >= lines.size();
  };
  auto numbers = [&](std::string_view s, std::size_t expect) {
    std::vector<double> out;
    for (auto tok : detail::split_ws(s)) {
      double v = 0.0;
      if (!detail::parse_number(tok, v)) {
        --pos;
        throw fail("malformed number '" + std::string(tok) + "'");
      }
      out.push_back(v);
    }
    if (expect != static_cast<std::size_t>(-1) && out.size() != expect) {
      --pos;
      throw fail("expected " + std::to_string(expect) + " numbers");
    }
    return out;
  };

  if (next() != "sosclbf-certificate 1") {
    --pos;
    throw fail("expected header 'sosclbf-certificate 1'");
  }
  std::map<std::string, std::string> header;
  const std::vector<std::string> keys = {"tool_version", "problem_hash", "nvars", "ninputs", "nbarriers", "nwitnesses",
                                         "iteration", "stage", "cost", "eps", "cost_history", "step1_iterations", "step2_iterations"};
  for (const auto& key : keys) {
    const std::string_view line = next();
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || trim(line.substr(0, eq)) != key) {
      --pos;
      throw fail("expected '" + key + " = ...'");
    }
    header[key] = std::string(trim(line.substr(eq + 1)));
  }
  auto int_of = [&](const std::string& key) {
    int v = 0;
    if (!detail::parse_number(header[key], v)) throw fail("bad integer for " + key);
    return v;
  };
  CertificateSet cs;
  const int n = int_of("nvars");
  const int m = int_of("ninputs");
  const int t = int_of("nbarriers");
  const int nw = int_of("nwitnesses");
  if (n <= 0 || m < 0 || t < 0 || nw < 0) throw fail("bad dimensions in header");
  cs.meta.tool_version = header["tool_version"];
  cs.meta.problem_hash = header["problem_hash"];
  cs.meta.iteration = int_of("iteration");
  cs.meta.stage = int_of("stage");
  {
    const auto v = numbers(header["cost"], 1);
    cs.meta.cost = v[0];
  }
  cs.meta.eps = numbers(header["eps"], static_cast<std::size_t>(-1));
  cs.meta.cost_history = numbers(header["cost_history"], static_cast<std::size_t>(-1));
  cs.meta.step1_iterations = int_of("step1_iterations");
  cs.meta.step2_iterations = int_of("step2_iterations");

  auto read_terms = [&]() {
    const std::string_view line = next();
    const auto toks = detail::split_ws(line);
    std::size_t count = 0;
    if (toks.size() != 2 || toks[0] != "terms" || !detail::parse_number(toks[1], count)) {
      --pos;
      throw fail("expected 'terms <count>'");
    }
    Polynomial p(n);
    for (std::size_t k = 0; k < count; ++k) {
      const std::string_view tl = next();
      const auto parts = detail::split_ws(tl);
      if (static_cast<int>(parts.size()) != n + 1) {
        --pos;
        throw fail("expected " + std::to_string(n) + " exponents and a coefficient");
      }
      std::vector<int> exps;
      for (int i = 0; i < n; ++i) {
        int e = 0;
        if (!detail::parse_number(parts[static_cast<std::size_t>(i)], e) || e < 0) {
          --pos;
          throw fail("bad exponent");
        }
        exps.push_back(e);
      }
      double c = 0.0;
      if (!detail::parse_number(parts.back(), c)) {
        --pos;
        throw fail("bad coefficient");
      }
      p.add_term(Monomial(exps), c);
    }
    return p;
  };

  std::map<std::string, Polynomial> polys;
  while (!at_end()) {
    const std::string_view head = next();
    if (head.size() < 3 || head.front() != '[' || head.back() != ']') {
      --pos;
      throw fail("expected a section header");
    }
    const std::string_view inner = head.substr(1, head.size() - 2);
    const auto space = inner.find(' ');
    const std::string_view kind = inner.substr(0, space);
    const std::string name = space == std::string_view::npos ? "" : std::string(inner.substr(space + 1));
    if (kind == "polynomial") {
      if (polys.count(name)) throw fail("duplicate polynomial " + name);
      polys[name] = read_terms();
    } else if (kind == "witness") {
      SosWitness w;
      w.name = name;
      std::string_view line = next();
      if (line.substr(0, 5) != "shift") {
        --pos;
        throw fail("expected 'shift'");
      }
      const auto sv = numbers(line.substr(5), static_cast<std::size_t>(n));
      w.basis_shift = Point(n);
      for (int j = 0; j < n; ++j) w.basis_shift(j) = sv[static_cast<std::size_t>(j)];
      line = next();
      const auto toks = detail::split_ws(line);
      std::size_t k = 0;
      if (toks.size() != 2 || toks[0] != "basis" || !detail::parse_number(toks[1], k)) {
        --pos;
        throw fail("expected 'basis <count>'");
      }
      for (std::size_t b = 0; b < k; ++b) {
        const auto ev = numbers(next(), static_cast<std::size_t>(n));
        std::vector<int> exps;
        for (double e : ev) exps.push_back(static_cast<int>(e));
        w.basis.emplace_back(exps);
      }
      if (next() != "gram") {
        --pos;
        throw fail("expected 'gram'");
      }
      w.gram.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
      for (std::size_t r = 0; r < k; ++r) {
        const auto row = numbers(next(), k);
        for (std::size_t c = 0; c < k; ++c) w.gram(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
      }
      w.polynomial = read_terms();
      cs.witnesses.push_back(std::move(w));
    } else {
      --pos;
      throw fail("unknown section kind '" + std::string(kind) + "'");
    }
  }

  if (static_cast<int>(cs.witnesses.size()) != nw) {
    throw FileFormatError(source, static_cast<int>(lines.size()), 1,
                          "expected " + std::to_string(nw) + " witnesses, found " + std::to_string(cs.witnesses.size()));
  }
  auto take = [&](const std::string& name) {
    auto it = polys.find(name);
    if (it == polys.end()) throw FileFormatError(source, static_cast<int>(lines.size()), 1, "missing polynomial " + name);
    return it->second;
  };
  cs.V = take("V");
  cs.s1 = take("s1");
  cs.s2 = take("s2");
  for (int i = 1; i <= t; ++i) {
    const std::string tag = std::to_string(i);
    cs.B.push_back(take("B_" + tag));
    cs.s3.push_back(take("s3_" + tag));
    cs.s4.push_back(take("s4_" + tag));
    cs.pm1.push_back(take("pm1_" + tag));
  }
  for (int j = 1; j <= m; ++j) cs.p.push_back(take("p_" + std::to_string(j)));
  return cs;
}

inline CertificateSet load_certificate(const std::string& path) { return parse_certificate(read_file(path), path); }

inline void save_certificate(const std::string& path, const CertificateSet& cs) { write_file(path, format_certificate(cs)); }

}  // namespace sosclbf
