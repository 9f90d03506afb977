#pragma once

// Sparse multivariate polynomials with real coefficients.
//
// Terms are keyed by exponent vectors and kept in graded lexicographic order
// (total degree first, then lexicographic with x1 ranked highest), so every
// traversal of a polynomial is deterministic.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace sosclbf {

using Point = Eigen::VectorXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Monomial {
 public:
  Monomial() = default;
  explicit Monomial(int nvars) : exps_(static_cast<std::size_t>(nvars), 0) {
    if (nvars < 0) throw DimensionError("Monomial: negative variable count");
  }
  explicit Monomial(std::vector<int> exps) : exps_(std::move(exps)) {
    for (int e : exps_) {
      if (e < 0) throw std::invalid_argument("Monomial: negative exponent");
    }
  }

  static Monomial variable(int nvars, int index, int power = 1) {
    Monomial m(nvars);
    m.exps_.at(static_cast<std::size_t>(index)) = power;
    return m;
  }

  int nvars() const { return static_cast<int>(exps_.size()); }
  int operator[](int i) const { return exps_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& exponents() const { return exps_; }

  int degree() const { return std::accumulate(exps_.begin(), exps_.end(), 0); }
  bool is_constant() const {
    return std::all_of(exps_.begin(), exps_.end(), [](int e) { return e == 0; });
  }
  bool all_even() const {
    return std::all_of(exps_.begin(), exps_.end(), [](int e) { return e % 2 == 0; });
  }

  Monomial operator*(const Monomial& other) const {
    if (other.nvars() != nvars()) throw DimensionError("Monomial product: nvars mismatch");
    Monomial r = *this;
    for (std::size_t i = 0; i < exps_.size(); ++i) r.exps_[i] += other.exps_[i];
    return r;
  }

  // Exponent-wise half; only meaningful when all_even().
  Monomial sqrt() const {
    Monomial r = *this;
    for (auto& e : r.exps_) e /= 2;
    return r;
  }

  double evaluate(std::span<const double> x) const {
    double v = 1.0;
    for (std::size_t i = 0; i < exps_.size(); ++i) {
      for (int k = 0; k < exps_[i]; ++k) v *= x[i];
    }
    return v;
  }

  friend bool operator==(const Monomial&, const Monomial&) = default;

  // Graded lexicographic: lower total degree first; within a degree, x1^2
  // precedes x1*x2 precedes x2^2.
  friend std::strong_ordering operator<=>(const Monomial& a, const Monomial& b) {
    const int da = a.degree();
    const int db = b.degree();
    if (da != db) return da <=> db;
    if (a.exps_.size() != b.exps_.size()) return a.exps_.size() <=> b.exps_.size();
    for (std::size_t i = 0; i < a.exps_.size(); ++i) {
      if (a.exps_[i] != b.exps_[i]) return b.exps_[i] <=> a.exps_[i];
    }
    return std::strong_ordering::equal;
  }

 private:
  std::vector<int> exps_;
};

class Polynomial {
 public:
  using TermMap = std::map<Monomial, double>;

  Polynomial() = default;
  explicit Polynomial(int nvars) : nvars_(nvars) {
    if (nvars < 0) throw DimensionError("Polynomial: negative variable count");
  }

  static Polynomial constant(int nvars, double c) {
    Polynomial p(nvars);
    p.add_term(Monomial(nvars), c);
    return p;
  }
  static Polynomial variable(int nvars, int index) {
    Polynomial p(nvars);
    p.add_term(Monomial::variable(nvars, index), 1.0);
    return p;
  }
  static Polynomial monomial(const Monomial& m, double c = 1.0) {
    Polynomial p(m.nvars());
    p.add_term(m, c);
    return p;
  }

  int nvars() const { return nvars_; }
  const TermMap& terms() const { return terms_; }
  std::size_t size() const { return terms_.size(); }
  bool is_zero() const { return terms_.empty(); }

  double coefficient(const Monomial& m) const {
    auto it = terms_.find(m);
    return it == terms_.end() ? 0.0 : it->second;
  }

  // Accumulates c into the coefficient of m; exact zeros are dropped.
  void add_term(const Monomial& m, double c) {
    if (m.nvars() != nvars_) throw DimensionError("Polynomial::add_term: nvars mismatch");
    if (c == 0.0) return;
    auto [it, inserted] = terms_.try_emplace(m, c);
    if (!inserted) {
      it->second += c;
      if (it->second == 0.0) terms_.erase(it);
    }
  }

  // -1 for the zero polynomial.
  int degree() const { return terms_.empty() ? -1 : terms_.rbegin()->first.degree(); }
  int min_degree() const { return terms_.empty() ? -1 : terms_.begin()->first.degree(); }

  double max_abs_coefficient() const {
    double m = 0.0;
    for (const auto& [mono, c] : terms_) m = std::max(m, std::abs(c));
    return m;
  }

  double evaluate(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != nvars_) throw DimensionError("Polynomial::evaluate: point dimension mismatch");
    double acc = 0.0;
    for (const auto& [mono, c] : terms_) acc += c * mono.evaluate(x);
    return acc;
  }
  double evaluate(const Point& x) const {
    return evaluate(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  }

  Polynomial derivative(int var) const {
    if (var < 0 || var >= nvars_) throw DimensionError("Polynomial::derivative: variable out of range");
    Polynomial d(nvars_);
    for (const auto& [mono, c] : terms_) {
      const int e = mono[var];
      if (e == 0) continue;
      std::vector<int> exps = mono.exponents();
      exps[static_cast<std::size_t>(var)] -= 1;
      d.add_term(Monomial(std::move(exps)), c * e);
    }
    return d;
  }

  Polynomial operator-() const {
    Polynomial r = *this;
    for (auto& [mono, c] : r.terms_) c = -c;
    return r;
  }

  Polynomial& operator+=(const Polynomial& q) {
    check_same(q, "addition");
    for (const auto& [mono, c] : q.terms_) add_term(mono, c);
    return *this;
  }
  Polynomial& operator-=(const Polynomial& q) {
    check_same(q, "subtraction");
    for (const auto& [mono, c] : q.terms_) add_term(mono, -c);
    return *this;
  }
  Polynomial& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto& [mono, c] : terms_) c *= s;
    return *this;
  }

  friend Polynomial operator+(Polynomial p, const Polynomial& q) { return p += q; }
  friend Polynomial operator-(Polynomial p, const Polynomial& q) { return p -= q; }
  friend Polynomial operator*(Polynomial p, double s) { return p *= s; }
  friend Polynomial operator*(double s, Polynomial p) { return p *= s; }
  friend Polynomial operator+(Polynomial p, double s) {
    p.add_term(Monomial(p.nvars()), s);
    return p;
  }
  friend Polynomial operator-(Polynomial p, double s) {
    p.add_term(Monomial(p.nvars()), -s);
    return p;
  }

  friend Polynomial operator*(const Polynomial& p, const Polynomial& q) {
    p.check_same(q, "multiplication");
    Polynomial r(p.nvars_);
    for (const auto& [ma, ca] : p.terms_) {
      for (const auto& [mb, cb] : q.terms_) r.add_term(ma * mb, ca * cb);
    }
    return r;
  }

  friend bool operator==(const Polynomial&, const Polynomial&) = default;

 private:
  void check_same(const Polynomial& q, const char* what) const {
    if (q.nvars_ != nvars_) {
      throw DimensionError(std::string("Polynomial ") + what + ": nvars mismatch (" + std::to_string(nvars_) +
                           " vs " + std::to_string(q.nvars_) + ")");
    }
  }

  int nvars_ = 0;
  TermMap terms_;
};

using PolyVector = std::vector<Polynomial>;

class PolyMatrix {
 public:
  PolyMatrix() = default;
  PolyMatrix(int rows, int cols, int nvars)
      : rows_(rows), cols_(cols), entries_(static_cast<std::size_t>(rows * cols), Polynomial(nvars)) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  Polynomial& operator()(int i, int j) { return entries_.at(index(i, j)); }
  const Polynomial& operator()(int i, int j) const { return entries_.at(index(i, j)); }

  PolyVector operator*(const PolyVector& v) const {
    if (static_cast<int>(v.size()) != cols_) throw DimensionError("PolyMatrix * PolyVector: shape mismatch");
    PolyVector out;
    for (int i = 0; i < rows_; ++i) {
      Polynomial acc(v.empty() ? 0 : v.front().nvars());
      for (int j = 0; j < cols_; ++j) acc += (*this)(i, j) * v[static_cast<std::size_t>(j)];
      out.push_back(std::move(acc));
    }
    return out;
  }

  PolyMatrix transpose() const {
    PolyMatrix t;
    t.rows_ = cols_;
    t.cols_ = rows_;
    t.entries_.resize(entries_.size());
    for (int i = 0; i < rows_; ++i) {
      for (int j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    }
    return t;
  }

  Eigen::MatrixXd evaluate(const Point& x) const {
    Eigen::MatrixXd m(rows_, cols_);
    for (int i = 0; i < rows_; ++i) {
      for (int j = 0; j < cols_; ++j) m(i, j) = (*this)(i, j).evaluate(x);
    }
    return m;
  }

 private:
  std::size_t index(int i, int j) const {
    if (i < 0 || i >= rows_ || j < 0 || j >= cols_) throw DimensionError("PolyMatrix: index out of range");
    return static_cast<std::size_t>(i * cols_ + j);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<Polynomial> entries_;
};

inline Polynomial add(const Polynomial& p, const Polynomial& q) { return p + q; }
inline Polynomial mul(const Polynomial& p, const Polynomial& q) { return p * q; }
inline double evaluate(const Polynomial& p, const Point& x) { return p.evaluate(x); }

inline PolyVector gradient(const Polynomial& p) {
  PolyVector g;
  g.reserve(static_cast<std::size_t>(p.nvars()));
  for (int i = 0; i < p.nvars(); ++i) g.push_back(p.derivative(i));
  return g;
}

inline Polynomial dot(const PolyVector& a, const PolyVector& b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("dot: length mismatch or empty");
  Polynomial acc(a.front().nvars());
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline Polynomial pow(const Polynomial& p, int k) {
  if (k < 0) throw std::invalid_argument("pow: negative exponent");
  Polynomial r = Polynomial::constant(p.nvars(), 1.0);
  Polynomial base = p;
  while (k > 0) {
    if (k & 1) r = r * base;
    k >>= 1;
    if (k > 0) base = base * base;
  }
  return r;
}

// q(x) = p(subs_1(x), ..., subs_n(x)). All substitutions share the output
// variable count.
inline Polynomial compose(const Polynomial& p, const PolyVector& subs) {
  if (static_cast<int>(subs.size()) != p.nvars()) throw DimensionError("compose: substitution count mismatch");
  const int out_vars = subs.empty() ? 0 : subs.front().nvars();
  std::vector<std::vector<Polynomial>> powers(subs.size());
  auto power_of = [&](std::size_t var, int e) -> const Polynomial& {
    auto& cache = powers[var];
    if (cache.empty()) cache.push_back(Polynomial::constant(out_vars, 1.0));
    while (static_cast<int>(cache.size()) <= e) cache.push_back(cache.back() * subs[var]);
    return cache[static_cast<std::size_t>(e)];
  };
  Polynomial out(out_vars);
  for (const auto& [mono, c] : p.terms()) {
    Polynomial term = Polynomial::constant(out_vars, c);
    for (int i = 0; i < p.nvars(); ++i) {
      if (mono[i] > 0) term = term * power_of(static_cast<std::size_t>(i), mono[i]);
    }
    out += term;
  }
  return out;
}

// q(x) = p(x - c), expanded in the original variables.
inline Polynomial shift(const Polynomial& p, const Point& c) {
  if (c.size() != p.nvars()) throw DimensionError("shift: point dimension mismatch");
  PolyVector subs;
  for (int i = 0; i < p.nvars(); ++i) subs.push_back(Polynomial::variable(p.nvars(), i) - c(i));
  return compose(p, subs);
}

// Drops coefficients with |c| <= tol.
inline Polynomial clean(const Polynomial& p, double tol = 1e-12) {
  Polynomial r(p.nvars());
  for (const auto& [mono, c] : p.terms()) {
    if (std::abs(c) > tol) r.add_term(mono, c);
  }
  return r;
}

inline Eigen::VectorXd evaluate(const PolyVector& v, const Point& x) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i].evaluate(x);
  return out;
}

// Largest coefficient-wise absolute difference.
inline double max_coefficient_difference(const Polynomial& p, const Polynomial& q) {
  return (p - q).max_abs_coefficient();
}

}  // namespace sosclbf
