#pragma once

// Sum-of-squares programs over polynomials whose coefficients are affine in
// a vector of scalar decision variables v.
//
// An SosProgram collects three kinds of statements:
//   - PSD memberships: a Gram matrix Q of fresh variables is PSD;
//   - linear equalities: an AffineExpr equals zero;
//   - an objective v'Pv + c'v + c0 with P PSD.
// compile() turns the program into an SdpProblem. Gram variables become
// entries of PSD blocks, every other variable becomes a free scalar, and
// the quadratic part of the objective is lifted into a Schur-complement
// block [[I, Rv], [(Rv)', t]] with P = R'R.

#include <algorithm>
#include <cmath>
#include <compare>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "sosclbf/poly.hpp"
#include "sosclbf/poly_io.hpp"
#include "sosclbf/sdp.hpp"

namespace sosclbf {

struct VarId {
  int index = -1;
  friend auto operator<=>(const VarId&, const VarId&) = default;
};

class BilinearError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class BasisError : public std::invalid_argument {
 public:
  BasisError(const std::string& message, std::vector<Monomial> missing)
      : std::invalid_argument(message), missing_(std::move(missing)) {}
  const std::vector<Monomial>& missing() const { return missing_; }

 private:
  std::vector<Monomial> missing_;
};

class CompileError : public std::runtime_error {
 public:
  CompileError(const std::string& message, std::string label)
      : std::runtime_error(message), label_(std::move(label)) {}
  const std::string& label() const { return label_; }

 private:
  std::string label_;
};

class AffineExpr {
 public:
  using LinearMap = std::map<VarId, double>;

  AffineExpr() = default;
  AffineExpr(double c) : constant_(c) {}  // NOLINT(google-explicit-constructor)
  static AffineExpr variable(VarId v, double coef = 1.0) {
    AffineExpr e;
    e.add(v, coef);
    return e;
  }

  double constant() const { return constant_; }
  const LinearMap& linear() const { return linear_; }
  bool is_constant() const { return linear_.empty(); }
  bool is_zero() const { return constant_ == 0.0 && linear_.empty(); }

  double coefficient(VarId v) const {
    auto it = linear_.find(v);
    return it == linear_.end() ? 0.0 : it->second;
  }

  void add(VarId v, double coef) {
    if (coef == 0.0) return;
    auto [it, inserted] = linear_.emplace(v, coef);
    if (!inserted) {
      it->second += coef;
      if (it->second == 0.0) linear_.erase(it);
    }
  }
  void add_constant(double c) { constant_ += c; }

  double evaluate(const std::vector<double>& v) const {
    double acc = constant_;
    for (const auto& [var, c] : linear_) acc += c * v.at(static_cast<std::size_t>(var.index));
    return acc;
  }

  AffineExpr operator-() const {
    AffineExpr r = *this;
    r *= -1.0;
    return r;
  }
  AffineExpr& operator+=(const AffineExpr& o) {
    constant_ += o.constant_;
    for (const auto& [v, c] : o.linear_) add(v, c);
    return *this;
  }
  AffineExpr& operator-=(const AffineExpr& o) {
    constant_ -= o.constant_;
    for (const auto& [v, c] : o.linear_) add(v, -c);
    return *this;
  }
  AffineExpr& operator*=(double s) {
    if (s == 0.0) {
      constant_ = 0.0;
      linear_.clear();
      return *this;
    }
    constant_ *= s;
    for (auto& [v, c] : linear_) c *= s;
    return *this;
  }
  friend AffineExpr operator+(AffineExpr a, const AffineExpr& b) { return a += b; }
  friend AffineExpr operator-(AffineExpr a, const AffineExpr& b) { return a -= b; }
  friend AffineExpr operator*(AffineExpr a, double s) { return a *= s; }
  friend AffineExpr operator*(double s, AffineExpr a) { return a *= s; }
  friend bool operator==(const AffineExpr&, const AffineExpr&) = default;

 private:
  double constant_ = 0.0;
  LinearMap linear_;
};

// Polynomial in x with AffineExpr coefficients.
class ParamPolynomial {
 public:
  using TermMap = std::map<Monomial, AffineExpr>;

  ParamPolynomial() = default;
  explicit ParamPolynomial(int nvars) : nvars_(nvars) {}
  ParamPolynomial(const Polynomial& p) : nvars_(p.nvars()) {  // NOLINT(google-explicit-constructor)
    for (const auto& [m, c] : p.terms()) terms_.emplace(m, AffineExpr(c));
  }

  int nvars() const { return nvars_; }
  const TermMap& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }

  bool has_variables() const {
    return std::any_of(terms_.begin(), terms_.end(), [](const auto& t) { return !t.second.is_constant(); });
  }

  AffineExpr coefficient(const Monomial& m) const {
    auto it = terms_.find(m);
    return it == terms_.end() ? AffineExpr() : it->second;
  }

  void add_term(const Monomial& m, const AffineExpr& a) {
    if (m.nvars() != nvars_) throw DimensionError("ParamPolynomial: monomial dimension mismatch");
    if (a.is_zero()) return;
    auto [it, inserted] = terms_.emplace(m, a);
    if (!inserted) {
      it->second += a;
      if (it->second.is_zero()) terms_.erase(it);
    }
  }

  int degree() const { return terms_.empty() ? -1 : terms_.rbegin()->first.degree(); }
  int min_degree() const { return terms_.empty() ? -1 : terms_.begin()->first.degree(); }

  Polynomial substitute(const std::vector<double>& v) const {
    Polynomial p(nvars_);
    for (const auto& [m, a] : terms_) p.add_term(m, a.evaluate(v));
    return p;
  }

  // Constant part of every coefficient; exact when has_variables() is false.
  Polynomial constant_part() const {
    Polynomial p(nvars_);
    for (const auto& [m, a] : terms_) p.add_term(m, a.constant());
    return p;
  }

  ParamPolynomial derivative(int var) const {
    if (var < 0 || var >= nvars_) throw DimensionError("ParamPolynomial::derivative: variable out of range");
    ParamPolynomial d(nvars_);
    for (const auto& [m, a] : terms_) {
      const int e = m[var];
      if (e == 0) continue;
      auto exps = m.exponents();
      exps[static_cast<std::size_t>(var)] -= 1;
      d.add_term(Monomial(std::move(exps)), a * static_cast<double>(e));
    }
    return d;
  }

  ParamPolynomial operator-() const {
    ParamPolynomial r = *this;
    for (auto& [m, a] : r.terms_) a *= -1.0;
    return r;
  }
  ParamPolynomial& operator+=(const ParamPolynomial& q) {
    check_same(q);
    for (const auto& [m, a] : q.terms_) add_term(m, a);
    return *this;
  }
  ParamPolynomial& operator-=(const ParamPolynomial& q) {
    check_same(q);
    for (const auto& [m, a] : q.terms_) add_term(m, -a);
    return *this;
  }
  ParamPolynomial& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto& [m, a] : terms_) a *= s;
    return *this;
  }
  ParamPolynomial& operator+=(const AffineExpr& a) {
    add_term(Monomial(nvars_), a);
    return *this;
  }

  friend ParamPolynomial operator+(ParamPolynomial p, const ParamPolynomial& q) { return p += q; }
  friend ParamPolynomial operator-(ParamPolynomial p, const ParamPolynomial& q) { return p -= q; }
  friend ParamPolynomial operator*(ParamPolynomial p, double s) { return p *= s; }
  friend ParamPolynomial operator*(double s, ParamPolynomial p) { return p *= s; }
  friend ParamPolynomial operator+(ParamPolynomial p, const AffineExpr& a) { return p += a; }

  // Product is only defined when at most one factor carries decision
  // variables; otherwise the result would not be affine in v.
  friend ParamPolynomial operator*(const ParamPolynomial& p, const ParamPolynomial& q) {
    p.check_same(q);
    if (p.has_variables() && q.has_variables()) {
      throw BilinearError("product of two polynomials that both depend on decision variables");
    }
    const bool p_var = p.has_variables();
    const ParamPolynomial& var_side = p_var ? p : q;
    const ParamPolynomial& const_side = p_var ? q : p;
    ParamPolynomial r(p.nvars_);
    for (const auto& [mc, ac] : const_side.terms_) {
      const double c = ac.constant();
      for (const auto& [mv, av] : var_side.terms_) r.add_term(mc * mv, av * c);
    }
    return r;
  }

  friend bool operator==(const ParamPolynomial&, const ParamPolynomial&) = default;

 private:
  void check_same(const ParamPolynomial& q) const {
    if (q.nvars_ != nvars_) throw DimensionError("ParamPolynomial: nvars mismatch");
  }

  int nvars_ = 0;
  TermMap terms_;
};

using ParamVector = std::vector<ParamPolynomial>;

inline ParamVector gradient(const ParamPolynomial& p) {
  ParamVector g;
  for (int i = 0; i < p.nvars(); ++i) g.push_back(p.derivative(i));
  return g;
}

inline ParamPolynomial dot(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("dot: length mismatch or empty");
  ParamPolynomial acc(a.front().nvars());
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// q(x) = p(x - c).
inline ParamPolynomial shift(const ParamPolynomial& p, const Point& c) {
  if (c.size() != p.nvars()) throw DimensionError("shift: point dimension mismatch");
  ParamPolynomial out(p.nvars());
  for (const auto& [m, a] : p.terms()) {
    const Polynomial moved = shift(Polynomial::monomial(m), c);
    for (const auto& [mm, coef] : moved.terms()) out.add_term(mm, a * coef);
  }
  return out;
}

enum class Parity { Any, Even, Odd };

// Monomials of total degree <= maxdeg in graded order, filtered by parity
// of the total degree and by an optional set of allowed degrees.
inline std::vector<Monomial> monomial_basis(int nvars, int maxdeg, Parity parity = Parity::Any,
                                            const std::vector<int>& degree_set = {}) {
  if (maxdeg < 0) throw std::invalid_argument("monomial_basis: negative degree");
  if (nvars <= 0) throw std::invalid_argument("monomial_basis: nvars must be positive");
  std::vector<Monomial> out;
  std::vector<int> exps(static_cast<std::size_t>(nvars), 0);
  std::function<void(int, int)> rec = [&](int var, int left) {
    if (var == nvars - 1) {
      exps[static_cast<std::size_t>(var)] = left;
      out.emplace_back(exps);
      return;
    }
    for (int e = left; e >= 0; --e) {
      exps[static_cast<std::size_t>(var)] = e;
      rec(var + 1, left - e);
    }
  };
  for (int d = 0; d <= maxdeg; ++d) {
    if (parity == Parity::Even && d % 2 != 0) continue;
    if (parity == Parity::Odd && d % 2 == 0) continue;
    if (!degree_set.empty() && std::find(degree_set.begin(), degree_set.end(), d) == degree_set.end()) continue;
    rec(0, d);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Monomials whose total degree lies in [lo, hi].
inline std::vector<Monomial> monomial_basis_range(int nvars, int lo, int hi) {
  std::vector<int> degs;
  for (int d = std::max(lo, 0); d <= hi; ++d) degs.push_back(d);
  if (degs.empty()) return {};
  return monomial_basis(nvars, hi, Parity::Any, degs);
}

// Default half basis for asserting pp SOS: every monomial whose degree lies
// between floor(mindeg/2) and ceil(maxdeg/2). No parity filtering is done;
// filtering half-basis degrees by the parity of pp discards monomials that
// are needed (x^2 + 1 needs both 1 and x).
inline std::vector<Monomial> default_half_basis(const ParamPolynomial& pp) {
  if (pp.is_zero()) return {Monomial(pp.nvars())};
  const int lo = pp.min_degree() / 2;
  const int hi = (pp.degree() + 1) / 2;
  return monomial_basis_range(pp.nvars(), lo, hi);
}

struct GramBlock {
  std::vector<Monomial> basis;
  // Symmetric; entry (a, b) and (b, a) hold the same expression.
  std::vector<std::vector<AffineExpr>> matvar;

  std::size_t size() const { return basis.size(); }

  ParamPolynomial expand() const {
    if (basis.empty()) return ParamPolynomial();
    ParamPolynomial p(basis.front().nvars());
    for (std::size_t a = 0; a < basis.size(); ++a) {
      p.add_term(basis[a] * basis[a], matvar[a][a]);
      for (std::size_t b = a + 1; b < basis.size(); ++b) p.add_term(basis[a] * basis[b], matvar[a][b] * 2.0);
    }
    return p;
  }

  AffineExpr trace() const {
    AffineExpr t;
    for (std::size_t a = 0; a < basis.size(); ++a) t += matvar[a][a];
    return t;
  }

  Eigen::MatrixXd evaluate(const std::vector<double>& v) const {
    const auto k = static_cast<Eigen::Index>(basis.size());
    Eigen::MatrixXd Q(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) {
        Q(a, b) = matvar[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)].evaluate(v);
      }
    }
    return Q;
  }
};

// The unique Gram matrix of smallest Frobenius norm that reproduces pp over
// the given basis: Q_ab = coef(Z_a Z_b) / (number of ordered pairs giving
// that monomial). Needs no new variables.
inline GramBlock min_norm_gram(const ParamPolynomial& pp, const std::vector<Monomial>& basis) {
  std::map<Monomial, int> pair_count;
  for (const auto& a : basis) {
    for (const auto& b : basis) ++pair_count[a * b];
  }
  std::vector<Monomial> missing;
  for (const auto& [m, c] : pp.terms()) {
    if (!pair_count.count(m)) missing.push_back(m);
  }
  if (!missing.empty()) throw BasisError("min_norm_gram: polynomial not representable over basis", missing);
  GramBlock g;
  g.basis = basis;
  g.matvar.assign(basis.size(), std::vector<AffineExpr>(basis.size()));
  for (std::size_t a = 0; a < basis.size(); ++a) {
    for (std::size_t b = 0; b < basis.size(); ++b) {
      const Monomial m = basis[a] * basis[b];
      g.matvar[a][b] = pp.coefficient(m) * (1.0 / pair_count[m]);
    }
  }
  return g;
}

// v'Pv + linear(v), P over the listed variables.
struct QuadraticForm {
  std::vector<VarId> vars;
  Eigen::MatrixXd P;
  AffineExpr linear;

  // Adds weight * r(v)^2.
  void add_square(const AffineExpr& r, double weight = 1.0) {
    std::vector<VarId> merged = vars;
    for (const auto& [v, c] : r.linear()) {
      if (std::find(merged.begin(), merged.end(), v) == merged.end()) merged.push_back(v);
    }
    std::sort(merged.begin(), merged.end());
    const auto n = static_cast<Eigen::Index>(merged.size());
    Eigen::MatrixXd Pn = Eigen::MatrixXd::Zero(n, n);
    auto pos = [&](VarId v) {
      return static_cast<Eigen::Index>(std::lower_bound(merged.begin(), merged.end(), v) - merged.begin());
    };
    for (std::size_t i = 0; i < vars.size(); ++i) {
      for (std::size_t j = 0; j < vars.size(); ++j) {
        Pn(pos(vars[i]), pos(vars[j])) = P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    }
    Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
    for (const auto& [v, c] : r.linear()) a(pos(v)) = c;
    Pn += weight * a * a.transpose();
    vars = std::move(merged);
    P = std::move(Pn);
    for (const auto& [v, c] : r.linear()) linear.add(v, 2.0 * weight * r.constant() * c);
    linear.add_constant(weight * r.constant() * r.constant());
  }

  double evaluate(const std::vector<double>& v) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(vars.size()));
    for (std::size_t i = 0; i < vars.size(); ++i) x(static_cast<Eigen::Index>(i)) = v.at(static_cast<std::size_t>(vars[i].index));
    const double quad = vars.empty() ? 0.0 : x.dot(P * x);
    return quad + linear.evaluate(v);
  }
};

struct Membership {
  GramBlock gram;
  std::string label;
  // Auxiliary blocks (slacks, epigraph) are excluded from size statistics.
  bool auxiliary = false;
};

struct LinearEquality {
  AffineExpr expr;
  std::string label;
};

struct CompileStats {
  // Coefficients of the declared unknown polynomials and scalars.
  long decision_coefficients = 0;
  // Sum of k^2 over non-auxiliary PSD blocks.
  long psd_entries = 0;
  int psd_blocks = 0;
  int equalities = 0;
  int free_variables = 0;
  long scalar_variables = 0;
};

// Where each decision variable lives in the compiled SDP.
struct VarLocation {
  bool is_free = true;
  int index = 0;  // free index, or block index
  int row = 0;
  int col = 0;
};

struct CompiledProgram {
  SdpProblem problem;
  std::vector<VarLocation> locations;  // by VarId index
  std::vector<int> membership_blocks;  // membership -> block
  CompileStats stats;

  // Decision vector v from a solved SDP.
  std::vector<double> values(const SdpSolution& sol) const {
    std::vector<double> v(locations.size(), 0.0);
    for (std::size_t i = 0; i < locations.size(); ++i) {
      const auto& loc = locations[i];
      if (loc.is_free) {
        v[i] = loc.index < sol.free_values.size() ? sol.free_values(loc.index) : 0.0;
      } else {
        v[i] = sol.primal_blocks.at(static_cast<std::size_t>(loc.index))(loc.row, loc.col);
      }
    }
    return v;
  }
};

class SosProgram {
 public:
  explicit SosProgram(int nvars) : nvars_(nvars) {
    if (nvars <= 0) throw std::invalid_argument("SosProgram: nvars must be positive");
  }

  int nvars() const { return nvars_; }
  int num_vars() const { return static_cast<int>(gram_owner_.size()); }
  const std::vector<Membership>& memberships() const { return memberships_; }
  const std::vector<LinearEquality>& equalities() const { return equalities_; }
  const QuadraticForm& objective() const { return objective_; }
  long declared_coefficients() const { return declared_; }

  VarId new_var() {
    ++declared_;
    return allocate(-1);
  }

  ParamPolynomial new_poly_var(const std::vector<Monomial>& basis) {
    ParamPolynomial p(nvars_);
    for (const auto& m : basis) {
      if (m.nvars() != nvars_) throw DimensionError("new_poly_var: monomial dimension mismatch");
      p.add_term(m, AffineExpr::variable(allocate(-1)));
    }
    declared_ += static_cast<long>(basis.size());
    return p;
  }

  // Fresh SOS polynomial Z'QZ with Q PSD. With a degree set, coefficients of
  // all other degrees are constrained to zero.
  std::pair<ParamPolynomial, GramBlock> new_sos_var(const std::vector<Monomial>& half_basis,
                                                    const std::string& label = "sos",
                                                    const std::vector<int>& degree_set = {}) {
    if (half_basis.empty()) throw std::invalid_argument("new_sos_var: empty half basis");
    const GramBlock g = new_gram(half_basis, label, false);
    ParamPolynomial p = g.expand();
    long support = 0;
    ParamPolynomial kept(nvars_);
    for (const auto& [m, a] : p.terms()) {
      const bool allowed =
          degree_set.empty() || std::find(degree_set.begin(), degree_set.end(), m.degree()) != degree_set.end();
      if (allowed) {
        ++support;
        kept.add_term(m, a);
      } else {
        add_equality(a, label + " zero " + format_monomial_label(m));
      }
    }
    declared_ += support;
    return {kept, g};
  }

  // Registers pp in Sigma[x] through a fresh Gram matrix over half_basis.
  GramBlock assert_sos(const ParamPolynomial& pp, const std::vector<Monomial>& half_basis,
                       const std::string& label = "sos") {
    if (pp.nvars() != nvars_) throw DimensionError("assert_sos: nvars mismatch");
    if (half_basis.empty()) throw std::invalid_argument("assert_sos: empty half basis");
    std::set<Monomial> products;
    for (const auto& a : half_basis) {
      for (const auto& b : half_basis) products.insert(a * b);
    }
    std::vector<Monomial> missing;
    for (const auto& [m, a] : pp.terms()) {
      if (!products.count(m)) missing.push_back(m);
    }
    if (!missing.empty()) {
      std::string text = "assert_sos(" + label + "): half basis cannot produce";
      for (const auto& m : missing) text += " " + format_monomial_label(m);
      throw BasisError(text, missing);
    }
    GramBlock g = new_gram(half_basis, label, false);
    const ParamPolynomial expanded = g.expand();
    for (const auto& m : products) {
      AffineExpr e = expanded.coefficient(m) - pp.coefficient(m);
      add_equality(std::move(e), label + " " + format_monomial_label(m));
    }
    return g;
  }

  GramBlock assert_sos(const ParamPolynomial& pp, const std::string& label = "sos") {
    return assert_sos(pp, default_half_basis(pp), label);
  }

  void assert_eq_zero(const ParamPolynomial& pp, const std::string& label = "eq") {
    if (pp.nvars() != nvars_) throw DimensionError("assert_eq_zero: nvars mismatch");
    for (const auto& [m, a] : pp.terms()) add_equality(a, label + " " + format_monomial_label(m));
  }

  void assert_eq_zero(const AffineExpr& e, const std::string& label = "eq") { add_equality(e, label); }

  // e >= 0 through a 1x1 auxiliary PSD block.
  void assert_nonneg(const AffineExpr& e, const std::string& label = "nonneg") {
    const GramBlock g = new_gram({Monomial(nvars_)}, label, true);
    add_equality(g.matvar[0][0] - e, label);
  }

  void set_objective(const QuadraticForm& q) {
    if (q.P.rows() != static_cast<Eigen::Index>(q.vars.size()) || q.P.cols() != q.P.rows()) {
      throw DimensionError("set_objective: P does not match variable list");
    }
    for (const auto& v : q.vars) check_var(v);
    for (const auto& [v, c] : q.linear.linear()) check_var(v);
    if (q.P.rows() > 0) {
      if ((q.P - q.P.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + q.P.cwiseAbs().maxCoeff())) {
        throw std::invalid_argument("set_objective: P is not symmetric");
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q.P, Eigen::EigenvaluesOnly);
      if (es.eigenvalues()(0) < -1e-9) throw std::invalid_argument("set_objective: P is not positive semidefinite");
    }
    objective_ = q;
  }

  void set_objective(const AffineExpr& linear) {
    QuadraticForm q;
    q.linear = linear;
    set_objective(q);
  }

  CompiledProgram compile() const {
    CompiledProgram out;
    auto& sdp = out.problem;
    out.locations.assign(gram_owner_.size(), VarLocation{});

    // Blocks in membership order; free variables in allocation order.
    int nfree = 0;
    for (std::size_t i = 0; i < gram_owner_.size(); ++i) {
      if (gram_owner_[i] < 0) out.locations[i] = VarLocation{true, nfree++, 0, 0};
    }
    for (std::size_t b = 0; b < memberships_.size(); ++b) {
      const auto& mem = memberships_[b];
      const int k = static_cast<int>(mem.gram.size());
      sdp.block_dims.push_back(k);
      out.membership_blocks.push_back(static_cast<int>(b));
      for (int r = 0; r < k; ++r) {
        for (int c = r; c < k; ++c) {
          const auto& e = mem.gram.matvar[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
          const VarId v = e.linear().begin()->first;
          out.locations[static_cast<std::size_t>(v.index)] = VarLocation{false, static_cast<int>(b), r, c};
        }
      }
      if (!mem.auxiliary) out.stats.psd_entries += static_cast<long>(k) * k;
    }
    sdp.num_free = nfree;

    auto to_row = [&](const AffineExpr& e, EqualityRow& row) {
      for (const auto& [v, c] : e.linear()) {
        const auto& loc = out.locations[static_cast<std::size_t>(v.index)];
        if (loc.is_free) {
          row.free.push_back({loc.index, c});
        } else {
          row.entries.push_back({loc.index, loc.row, loc.col, c});
        }
      }
      row.rhs = -e.constant();
    };

    for (const auto& eq : equalities_) {
      if (eq.expr.is_constant()) {
        if (std::abs(eq.expr.constant()) > 1e-9) {
          throw CompileError("contradictory constant equality " + format_double(eq.expr.constant()) + " = 0 at " +
                                 eq.label,
                             eq.label);
        }
        continue;
      }
      EqualityRow row;
      row.label = eq.label;
      to_row(eq.expr, row);
      sdp.equalities.push_back(std::move(row));
    }

    // Linear objective part.
    for (const auto& [v, c] : objective_.linear.linear()) {
      const auto& loc = out.locations[static_cast<std::size_t>(v.index)];
      if (loc.is_free) {
        sdp.objective_free.push_back({loc.index, c});
      } else {
        sdp.objective_blocks.push_back({loc.index, loc.row, loc.col, c});
      }
    }
    sdp.objective_constant = objective_.linear.constant();

    // Quadratic part: P = R'R, epigraph block [[I, Rv], [(Rv)', t]].
    if (!objective_.vars.empty()) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(objective_.P);
      const double lmax = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 0.0);
      std::vector<Eigen::VectorXd> rows;
      for (Eigen::Index i = es.eigenvalues().size() - 1; i >= 0; --i) {
        const double lam = es.eigenvalues()(i);
        if (lam > 1e-12 * lmax && lam > 0.0) rows.push_back(std::sqrt(lam) * es.eigenvectors().col(i));
      }
      const int r = static_cast<int>(rows.size());
      if (r > 0) {
        const int blk = sdp.num_blocks();
        sdp.block_dims.push_back(r + 1);
        for (int i = 0; i < r; ++i) {
          EqualityRow diag;
          diag.label = "epigraph identity";
          diag.entries.push_back({blk, i, i, 1.0});
          diag.rhs = 1.0;
          sdp.equalities.push_back(std::move(diag));
          for (int j = i + 1; j < r; ++j) {
            EqualityRow off;
            off.label = "epigraph zero";
            off.entries.push_back({blk, i, j, 1.0});
            off.rhs = 0.0;
            sdp.equalities.push_back(std::move(off));
          }
          // X(i, r) - (R v)_i = 0
          AffineExpr rv;
          for (std::size_t j = 0; j < objective_.vars.size(); ++j) {
            rv.add(objective_.vars[j], rows[static_cast<std::size_t>(i)](static_cast<Eigen::Index>(j)));
          }
          EqualityRow link;
          link.label = "epigraph link";
          to_row(-rv, link);
          link.entries.push_back({blk, i, r, 1.0});
          sdp.equalities.push_back(std::move(link));
        }
        sdp.objective_blocks.push_back({blk, r, r, 1.0});
      }
    }

    out.stats.decision_coefficients = declared_;
    out.stats.psd_blocks = static_cast<int>(memberships_.size());
    out.stats.equalities = sdp.num_equalities();
    out.stats.free_variables = sdp.num_free;
    out.stats.scalar_variables = sdp.num_scalar_variables();
    return out;
  }

 private:
  std::string format_monomial_label(const Monomial& m) const {
    const std::string s = format_polynomial(Polynomial::monomial(m));
    return "[" + s + "]";
  }

  VarId allocate(int owner) {
    gram_owner_.push_back(owner);
    return VarId{static_cast<int>(gram_owner_.size()) - 1};
  }

  void check_var(VarId v) const {
    if (v.index < 0 || v.index >= num_vars()) throw std::invalid_argument("unknown decision variable");
  }

  GramBlock new_gram(const std::vector<Monomial>& basis, const std::string& label, bool auxiliary) {
    for (const auto& m : basis) {
      if (m.nvars() != nvars_) throw DimensionError("Gram basis: monomial dimension mismatch");
    }
    const int owner = static_cast<int>(memberships_.size());
    GramBlock g;
    g.basis = basis;
    g.matvar.assign(basis.size(), std::vector<AffineExpr>(basis.size()));
    for (std::size_t a = 0; a < basis.size(); ++a) {
      for (std::size_t b = a; b < basis.size(); ++b) {
        const AffineExpr e = AffineExpr::variable(allocate(owner));
        g.matvar[a][b] = e;
        g.matvar[b][a] = e;
      }
    }
    memberships_.push_back({g, label, auxiliary});
    return g;
  }

  void add_equality(AffineExpr e, std::string label) {
    for (const auto& [v, c] : e.linear()) check_var(v);
    equalities_.push_back({std::move(e), std::move(label)});
  }

  int nvars_;
  long declared_ = 0;
  std::vector<int> gram_owner_;  // -1 for free variables
  std::vector<Membership> memberships_;
  std::vector<LinearEquality> equalities_;
  QuadraticForm objective_;
};

}  // namespace sosclbf
