#pragma once

// Text form of polynomials.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('+' | '-') unary | power
//   power   := primary ('^' integer)?
//   primary := number | variable | '(' expr ')'
//
// Division is only allowed by constants, '^' only by non-negative integer
// literals. Whitespace is ignored. format() writes the shortest decimal that
// round-trips each coefficient, so parse(format(p)) == p exactly.

#include <cctype>
#include <charconv>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "sosclbf/poly.hpp"

namespace sosclbf {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t position)
      : std::runtime_error(message + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

inline std::vector<std::string> default_varnames(int nvars) {
  std::vector<std::string> names;
  for (int i = 0; i < nvars; ++i) names.push_back("x" + std::to_string(i + 1));
  return names;
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace detail {

class PolyParser {
 public:
  PolyParser(std::string_view text, const std::vector<std::string>& names) : text_(text), names_(names) {}

  Polynomial parse() {
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError("empty polynomial", pos_);
    Polynomial p = expr();
    skip_ws();
    if (pos_ != text_.size()) throw ParseError(std::string("unexpected character '") + text_[pos_] + "'", pos_);
    return p;
  }

 private:
  int nvars() const { return static_cast<int>(names_.size()); }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool peek(char c) {
    skip_ws();
    return pos_ < text_.size() && text_[pos_] == c;
  }

  Polynomial expr() {
    Polynomial acc = term();
    while (true) {
      if (peek('+')) {
        ++pos_;
        acc += term();
      } else if (peek('-')) {
        ++pos_;
        acc -= term();
      } else {
        return acc;
      }
    }
  }

  Polynomial term() {
    Polynomial acc = unary();
    while (true) {
      if (peek('*')) {
        ++pos_;
        acc = acc * unary();
      } else if (peek('/')) {
        const std::size_t at = ++pos_;
        Polynomial d = unary();
        if (d.degree() > 0) throw ParseError("division by a non-constant expression", at);
        const double c = d.coefficient(Monomial(nvars()));
        if (c == 0.0) throw ParseError("division by zero", at);
        acc *= 1.0 / c;
      } else {
        return acc;
      }
    }
  }

  Polynomial unary() {
    if (peek('-')) {
      ++pos_;
      return -unary();
    }
    if (peek('+')) {
      ++pos_;
      return unary();
    }
    return power();
  }

  Polynomial power() {
    Polynomial base = primary();
    if (peek('^')) {
      ++pos_;
      skip_ws();
      const std::size_t at = pos_;
      int e = 0;
      auto res = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), e);
      if (res.ec != std::errc() || e < 0) throw ParseError("expected non-negative integer exponent", at);
      pos_ = static_cast<std::size_t>(res.ptr - text_.data());
      return sosclbf::pow(base, e);
    }
    return base;
  }

  Polynomial primary() {
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
    const char c = text_[pos_];
    if (c == '(') {
      const std::size_t open = pos_++;
      Polynomial inner = expr();
      if (!peek(')')) throw ParseError("unbalanced parenthesis opened at " + std::to_string(open), pos_);
      ++pos_;
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      double v = 0.0;
      auto res = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
      if (res.ec != std::errc()) throw ParseError("malformed number", pos_);
      pos_ = static_cast<std::size_t>(res.ptr - text_.data());
      return Polynomial::constant(nvars(), v);
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
        ++pos_;
      }
      const std::string_view name = text_.substr(start, pos_ - start);
      for (int i = 0; i < nvars(); ++i) {
        if (names_[static_cast<std::size_t>(i)] == name) return Polynomial::variable(nvars(), i);
      }
      throw ParseError("unknown variable '" + std::string(name) + "'", start);
    }
    throw ParseError(std::string("unexpected character '") + c + "'", pos_);
  }

  std::string_view text_;
  const std::vector<std::string>& names_;
  std::size_t pos_ = 0;
};

inline std::string format_monomial(const Monomial& m, const std::vector<std::string>& names) {
  std::string out;
  for (int i = 0; i < m.nvars(); ++i) {
    if (m[i] == 0) continue;
    if (!out.empty()) out += '*';
    out += names[static_cast<std::size_t>(i)];
    if (m[i] > 1) out += '^' + std::to_string(m[i]);
  }
  return out;
}

}  // namespace detail

inline Polynomial parse_polynomial(std::string_view text, const std::vector<std::string>& varnames) {
  return detail::PolyParser(text, varnames).parse();
}

inline Polynomial parse_polynomial(std::string_view text, int nvars) {
  const auto names = default_varnames(nvars);
  return detail::PolyParser(text, names).parse();
}

inline std::string format_polynomial(const Polynomial& p, const std::vector<std::string>& varnames) {
  if (static_cast<int>(varnames.size()) != p.nvars()) throw DimensionError("format_polynomial: name count mismatch");
  if (p.is_zero()) return "0";
  std::string out;
  bool first = true;
  for (const auto& [mono, c] : p.terms()) {
    const bool negative = c < 0.0;
    const double mag = negative ? -c : c;
    if (first) {
      if (negative) out += '-';
    } else {
      out += negative ? " - " : " + ";
    }
    first = false;
    const std::string mono_text = detail::format_monomial(mono, varnames);
    if (mono_text.empty()) {
      out += format_double(mag);
    } else if (mag == 1.0) {
      out += mono_text;
    } else {
      out += format_double(mag) + "*" + mono_text;
    }
  }
  return out;
}

inline std::string format_polynomial(const Polynomial& p) {
  return format_polynomial(p, default_varnames(p.nvars()));
}

}  // namespace sosclbf
