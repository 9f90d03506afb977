#pragma once

// Positivstellensatz-style SOS constraints for a compatible control
// Lyapunov function V and control barrier functions B_i of the system
// xdot = f(x) + G(x) u, with the rational controller u = p / s1.
//
//   CLF          -grad(V)'(s1 f + G p) - l^2 + s2 r              in Sigma[x]
//   CBF i        -grad(B_i)'(s1 f + G p) - pm1_i B_i + s3_i r (+ eps_i) in Sigma[x]
//   containment  B_i - s4_i w_i                                   in Sigma[x]
//   positivity   s1 - eps_s1                                      in Sigma[x]
//
// Step 1 fixes (s1, p, pm1) and searches V, B_i and the multipliers;
// Step 2 fixes (V, B_i) and searches the controller with slacks eps_i.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sosclbf/poly.hpp"
#include "sosclbf/sdp.hpp"
#include "sosclbf/sos.hpp"

namespace sosclbf {

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DegreeSpec {
  int V = 4;
  std::vector<int> V_set;  // allowed total degrees of V(x - x*); empty: 2..V
  int B = 4;
  std::vector<int> B_set;  // allowed total degrees of B_i(x - x_c,i); empty: 0..B
  int s1 = 2;
  int s2 = 6;
  int s3 = 6;
  int s4 = 3;
  int p = 4;
  int pm1 = 2;
};

struct AlgorithmParams {
  int max_outer = 30;
  double threshold = 1e-3;
  std::uint64_t seed = 1;
  // Step 2 lower bound on each slack, keeping the slack objective bounded.
  double eps_floor = 1.0;
  // Weight on the summed Gram traces of every SOS block; keeps the optimal
  // face bounded so interior-point iterates cannot drift off to infinity.
  double regularization = 1e-6;
};

struct Center {
  Point x;
  double value = 0.0;
};

struct InitialController {
  double rho = 1.0;
  double pm1 = 1.0;
  std::optional<Polynomial> s1;
  std::optional<PolyVector> p;
  std::optional<std::vector<Polynomial>> pm1_polys;
};

struct ProblemSpec {
  int n = 0;
  int m = 0;
  std::vector<std::string> varnames;
  PolyVector f;
  PolyMatrix G;
  std::vector<Polynomial> w;
  Polynomial r;
  Polynomial l;
  Point xstar;
  double eps_s1 = 1e-3;
  std::vector<Center> centers;
  DegreeSpec degrees;
  AlgorithmParams algorithm;
  InitialController init;

  int t() const { return static_cast<int>(w.size()); }
};

inline Polynomial default_l(const Point& xstar) {
  const int n = static_cast<int>(xstar.size());
  Polynomial l(n);
  for (int j = 0; j < n; ++j) {
    const Polynomial d = Polynomial::variable(n, j) - xstar(j);
    l += d * d;
  }
  return l;
}

// Homogeneous part of top degree.
inline Polynomial top_form(const Polynomial& p) {
  Polynomial out(p.nvars());
  const int d = p.degree();
  for (const auto& [m, c] : p.terms()) {
    if (m.degree() == d) out.add_term(m, c);
  }
  return out;
}

struct Box {
  Point lo;
  Point hi;
  double volume() const { return (hi - lo).prod(); }
  bool contains(const Point& x) const {
    return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
  }
};

// Axis-aligned box containing {p <= 0}. Exact when p is a quadratic with
// positive definite Hessian; otherwise found by radial bisection from an
// interior point along coordinate and diagonal-ish directions, padded 5%.
inline Box sublevel_box(const Polynomial& p, const Point& inside) {
  const int n = p.nvars();
  if (p.degree() == 2) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    double c = 0.0;
    for (const auto& [m, coef] : p.terms()) {
      if (m.degree() == 0) {
        c += coef;
      } else if (m.degree() == 1) {
        for (int j = 0; j < n; ++j) {
          if (m[j] == 1) b(j) += coef;
        }
      } else {
        std::vector<int> idx;
        for (int j = 0; j < n; ++j) {
          for (int e = 0; e < m[j]; ++e) idx.push_back(j);
        }
        if (idx[0] == idx[1]) {
          A(idx[0], idx[0]) += coef;
        } else {
          A(idx[0], idx[1]) += 0.5 * coef;
          A(idx[1], idx[0]) += 0.5 * coef;
        }
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) {
      const Eigen::MatrixXd Ainv = llt.solve(Eigen::MatrixXd::Identity(n, n));
      const Eigen::VectorXd x0 = -0.5 * Ainv * b;
      const double level = -(c - 0.25 * b.dot(Ainv * b));
      if (level <= 0.0) throw SpecError("sublevel set is empty");
      Box box{x0, x0};
      for (int j = 0; j < n; ++j) {
        const double h = std::sqrt(level * Ainv(j, j));
        box.lo(j) -= h;
        box.hi(j) += h;
      }
      return box;
    }
  }
  if (!(p.evaluate(inside) <= 0.0)) throw SpecError("sublevel box: start point is not inside the set");
  Box box{inside, inside};
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 0; k < 400 * n; ++k) {
    Point u(n);
    if (k < 2 * n) {
      u.setZero();
      u(k / 2) = (k % 2 == 0) ? 1.0 : -1.0;
    } else {
      for (int j = 0; j < n; ++j) u(j) = normal(rng);
      u.normalize();
    }
    double hi = 1.0;
    int guard = 0;
    while (p.evaluate(Point(inside + hi * u)) <= 0.0) {
      hi *= 2.0;
      if (++guard > 80) throw SpecError("sublevel set appears unbounded");
    }
    double lo = 0.0;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (p.evaluate(Point(inside + mid * u)) <= 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const Point x = inside + hi * u;
    box.lo = box.lo.cwiseMin(x);
    box.hi = box.hi.cwiseMax(x);
  }
  const Point pad = 0.05 * (box.hi - box.lo);
  box.lo -= pad;
  box.hi += pad;
  return box;
}

// Used only if a Gaussian draw is exactly zero.
inline Point direction_fallback(int n) {
  Point u = Point::Zero(n);
  u(0) = 1.0;
  return u;
}

// Structural checks raise SpecError; sampled plausibility checks that the
// data can fail without breaking the algorithm are returned as warnings.
inline std::vector<std::string> validate(const ProblemSpec& s) {
  if (s.n <= 0) throw SpecError("state dimension must be positive");
  if (s.m <= 0) throw SpecError("input dimension must be at least 1");
  if (static_cast<int>(s.f.size()) != s.n) throw SpecError("f must have n entries");
  if (s.G.rows() != s.n || s.G.cols() != s.m) throw SpecError("G must be n x m");
  if (s.xstar.size() != s.n) throw SpecError("equilibrium has wrong dimension");
  if (static_cast<int>(s.centers.size()) != s.t()) throw SpecError("one center per allowable-set polynomial required");
  if (!(s.eps_s1 > 0.0)) throw SpecError("eps_s1 must be positive");
  auto check_nvars = [&](const Polynomial& p, const std::string& what) {
    if (p.nvars() != s.n) throw SpecError(what + " has wrong number of variables");
  };
  for (const auto& fi : s.f) check_nvars(fi, "f");
  for (int i = 0; i < s.n; ++i) {
    for (int j = 0; j < s.m; ++j) check_nvars(s.G(i, j), "G");
  }
  for (const auto& wi : s.w) check_nvars(wi, "w");
  check_nvars(s.r, "r");
  check_nvars(s.l, "l");
  for (const auto& c : s.centers) {
    if (c.x.size() != s.n) throw SpecError("center has wrong dimension");
  }
  const auto& d = s.degrees;
  if (d.V < 2 || d.B < 0 || d.s1 < 0 || d.s2 < 0 || d.s3 < 0 || d.s4 < 0 || d.p < 0 || d.pm1 < 0) {
    throw SpecError("degree table entries must be non-negative and deg V >= 2");
  }
  if (s.algorithm.max_outer < 0) throw SpecError("max_outer must be non-negative");
  if (!(s.algorithm.threshold > 0.0)) throw SpecError("threshold must be positive");

  if (std::abs(s.l.evaluate(s.xstar)) > 1e-12) throw SpecError("l(x*) must be zero");

  std::vector<std::string> warnings;
  std::mt19937_64 rng(s.algorithm.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto direction = [&]() {
    Point u(s.n);
    for (int j = 0; j < s.n; ++j) u(j) = normal(rng);
    const double nrm = u.norm();
    return nrm > 0 ? Point(u / nrm) : direction_fallback(s.n);
  };
  for (int k = 0; k < 1000; ++k) {
    const double radius = std::pow(10.0, -2.0 + 2.0 * unif(rng));
    const Point x = s.xstar + radius * direction();
    if (!(s.l.evaluate(x) > 0.0)) throw SpecError("l is not positive away from x*");
  }
  auto bounded = [&](const Polynomial& p, const std::string& what) {
    const Polynomial top = top_form(p);
    if (p.degree() <= 0 || p.degree() % 2 != 0) throw SpecError(what + " does not define a bounded sublevel set");
    for (int k = 0; k < 1000; ++k) {
      if (!(top.evaluate(direction()) > 0.0)) throw SpecError(what + " does not define a bounded sublevel set");
    }
  };
  for (int i = 0; i < s.t(); ++i) bounded(s.w[static_cast<std::size_t>(i)], "w" + std::to_string(i + 1));
  bounded(s.r, "r");

  // Spot check X_a within X_op, sampling the intersection of the boxes
  // around each {w_i <= 0}.
  if (s.t() > 0) {
    int violations = 0;
    double worst = 0.0;
    Point lo = Point::Constant(s.n, -std::numeric_limits<double>::infinity());
    Point hi = Point::Constant(s.n, std::numeric_limits<double>::infinity());
    for (int i = 0; i < s.t(); ++i) {
      const auto& wi = s.w[static_cast<std::size_t>(i)];
      const Point& c = s.centers[static_cast<std::size_t>(i)].x;
      const Box b = sublevel_box(wi, wi.evaluate(c) <= 0.0 ? c : s.xstar);
      lo = lo.cwiseMax(b.lo);
      hi = hi.cwiseMin(b.hi);
    }
    if ((hi.array() < lo.array()).any()) {
      warnings.push_back("allowable set appears to be empty");
      return warnings;
    }
    for (int k = 0; k < 20000; ++k) {
      Point x(s.n);
      for (int j = 0; j < s.n; ++j) x(j) = lo(j) + (hi(j) - lo(j)) * unif(rng);
      bool in_a = true;
      for (const auto& wi : s.w) in_a = in_a && wi.evaluate(x) <= 0.0;
      if (!in_a) continue;
      const double rv = s.r.evaluate(x);
      if (rv > 0.0) {
        ++violations;
        worst = std::max(worst, rv);
      }
    }
    if (violations > 0) {
      warnings.push_back("allowable set is not contained in the operating region: " + std::to_string(violations) +
                         " sampled points with all w_i <= 0 have r > 0 (max r = " + format_double(worst) + ")");
    }
  }
  return warnings;
}

struct SosWitness {
  std::string name;
  Polynomial polynomial;
  std::vector<Monomial> basis;
  Point basis_shift;  // Z is evaluated at x - basis_shift
  Eigen::MatrixXd gram;

  Polynomial reconstruct() const {
    const Polynomial local = extract_polynomial(gram, basis);
    if (basis_shift.size() == 0 || basis_shift.isZero(0.0)) return local;
    return shift(local, basis_shift);
  }
};

struct CertificateMeta {
  int iteration = 0;
  int stage = 2;  // half-step that produced the set
  double cost = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> eps;
  std::vector<double> cost_history;
  int step1_iterations = 0;
  int step2_iterations = 0;
  std::string problem_hash;
  std::string tool_version;
};

struct CertificateSet {
  Polynomial V;
  std::vector<Polynomial> B;
  Polynomial s1;
  Polynomial s2;
  std::vector<Polynomial> s3;
  std::vector<Polynomial> s4;
  PolyVector p;
  std::vector<Polynomial> pm1;
  std::vector<SosWitness> witnesses;
  CertificateMeta meta;

  const SosWitness* witness(const std::string& name) const {
    for (const auto& w : witnesses) {
      if (w.name == name) return &w;
    }
    return nullptr;
  }
};

// ---- constraint builders -------------------------------------------------

inline ParamVector to_param(const PolyVector& v) {
  ParamVector out;
  for (const auto& p : v) out.emplace_back(p);
  return out;
}

// s1 f + G p as a vector of parameterized polynomials.
inline ParamVector closed_loop_numerator(const ProblemSpec& spec, const ParamPolynomial& s1, const ParamVector& p) {
  if (static_cast<int>(p.size()) != spec.m) throw DimensionError("controller has wrong input dimension");
  ParamVector out;
  for (int i = 0; i < spec.n; ++i) {
    ParamPolynomial acc = s1 * ParamPolynomial(spec.f[static_cast<std::size_t>(i)]);
    for (int j = 0; j < spec.m; ++j) acc += ParamPolynomial(spec.G(i, j)) * p[static_cast<std::size_t>(j)];
    out.push_back(std::move(acc));
  }
  return out;
}

inline ParamPolynomial clf_constraint(const ProblemSpec& spec, const ParamPolynomial& V, const ParamPolynomial& s1,
                                      const ParamVector& p, const std::optional<ParamPolynomial>& s2 = std::nullopt) {
  const ParamVector num = closed_loop_numerator(spec, s1, p);
  ParamPolynomial c = -dot(gradient(V), num);
  c -= ParamPolynomial(spec.l * spec.l);
  if (s2) c += *s2 * ParamPolynomial(spec.r);
  return c;
}

inline ParamPolynomial cbf_constraint(const ProblemSpec& spec, const ParamPolynomial& B, const ParamPolynomial& s1,
                                      const ParamVector& p, const ParamPolynomial& pm1,
                                      const std::optional<ParamPolynomial>& s3 = std::nullopt,
                                      const std::optional<AffineExpr>& eps = std::nullopt) {
  const ParamVector num = closed_loop_numerator(spec, s1, p);
  ParamPolynomial c = -dot(gradient(B), num);
  c -= pm1 * B;
  if (s3) c += *s3 * ParamPolynomial(spec.r);
  if (eps) c += *eps;
  return c;
}

inline ParamPolynomial containment_constraint(const ParamPolynomial& B, const ParamPolynomial& s4, const Polynomial& w) {
  return B - s4 * ParamPolynomial(w);
}

inline ParamPolynomial s1_positivity(const ParamPolynomial& s1, double eps_s1) { return s1 + AffineExpr(-eps_s1); }

// Concrete versions on a certificate set.
inline Polynomial clf_polynomial(const ProblemSpec& spec, const CertificateSet& cs) {
  return clf_constraint(spec, cs.V, cs.s1, to_param(cs.p), ParamPolynomial(cs.s2)).constant_part();
}
inline Polynomial cbf_polynomial(const ProblemSpec& spec, const CertificateSet& cs, int i) {
  const auto k = static_cast<std::size_t>(i);
  return cbf_constraint(spec, cs.B[k], cs.s1, to_param(cs.p), cs.pm1[k], ParamPolynomial(cs.s3[k])).constant_part();
}
inline Polynomial containment_polynomial(const ProblemSpec& spec, const CertificateSet& cs, int i) {
  const auto k = static_cast<std::size_t>(i);
  return containment_constraint(cs.B[k], cs.s4[k], spec.w[k]).constant_part();
}

// ---- degree conventions --------------------------------------------------

// Half basis of an SOS unknown of degree d: an odd degree is rounded down.
inline std::vector<Monomial> sos_half_basis(int n, int degree) { return monomial_basis(n, degree / 2); }

inline std::vector<int> v_degree_set(const DegreeSpec& d) {
  if (!d.V_set.empty()) return d.V_set;
  std::vector<int> out;
  for (int k = 2; k <= d.V; ++k) out.push_back(k);
  return out;
}

inline std::vector<int> b_degree_set(const DegreeSpec& d) {
  if (!d.B_set.empty()) return d.B_set;
  std::vector<int> out;
  for (int k = 0; k <= d.B; ++k) out.push_back(k);
  return out;
}

// V = Z(x - x*)' Q Z(x - x*) without the constant monomial, so V(x*) = 0.
inline std::vector<Monomial> v_half_basis(int n, const std::vector<int>& degree_set) {
  const int lo = std::max(1, *std::min_element(degree_set.begin(), degree_set.end()) / 2);
  const int hi = (*std::max_element(degree_set.begin(), degree_set.end()) + 1) / 2;
  return monomial_basis_range(n, lo, hi);
}

inline std::vector<Monomial> b_trace_basis(int n, const std::vector<int>& degree_set) {
  const int hi = (*std::max_element(degree_set.begin(), degree_set.end()) + 1) / 2;
  return monomial_basis(n, hi);
}

// ---- step programs -------------------------------------------------------

struct SosStatement {
  std::string name;
  ParamPolynomial asserted;
  int membership = -1;
  Point basis_shift;
};

struct ControllerTriple {
  Polynomial s1;
  PolyVector p;
  std::vector<Polynomial> pm1;
};

inline ControllerTriple initial_controller(const ProblemSpec& spec) {
  ControllerTriple c;
  const int n = spec.n;
  c.s1 = spec.init.s1 ? *spec.init.s1 : Polynomial::constant(n, 1.0);
  if (spec.init.p) {
    c.p = *spec.init.p;
  } else {
    PolyVector dx;
    for (int j = 0; j < n; ++j) dx.push_back(Polynomial::variable(n, j) - spec.xstar(j));
    const PolyVector gtdx = spec.G.transpose() * dx;
    for (const auto& q : gtdx) c.p.push_back(-spec.init.rho * q);
  }
  if (spec.init.pm1_polys) {
    c.pm1 = *spec.init.pm1_polys;
  } else {
    for (int i = 0; i < spec.t(); ++i) c.pm1.push_back(Polynomial::constant(n, spec.init.pm1));
  }
  if (static_cast<int>(c.p.size()) != spec.m || static_cast<int>(c.pm1.size()) != spec.t()) {
    throw SpecError("initial controller has wrong dimensions");
  }
  return c;
}

struct Step1Program {
  explicit Step1Program(int n) : program(n) {}
  SosProgram program;
  ParamPolynomial V;
  std::vector<ParamPolynomial> B;
  ParamPolynomial s2;
  std::vector<ParamPolynomial> s3;
  std::vector<ParamPolynomial> s4;
  std::vector<AffineExpr> trace_terms;
  std::vector<AffineExpr> center_residuals;
  AffineExpr regularizer;
  std::vector<SosStatement> statements;
};

struct Step2Program {
  explicit Step2Program(int n) : program(n) {}
  SosProgram program;
  ParamPolynomial s1;
  ParamVector p;
  std::vector<ParamPolynomial> pm1;
  ParamPolynomial s2;
  std::vector<ParamPolynomial> s3;
  std::vector<VarId> eps;
  AffineExpr regularizer;
  std::vector<SosStatement> statements;
};

inline int last_membership(const SosProgram& prog) { return static_cast<int>(prog.memberships().size()) - 1; }

// c1 contribution of one barrier: trace of the smallest-norm Gram of B.
inline AffineExpr cost_c1(const GramBlock& gram) { return gram.trace(); }

// c2 contribution: the residual B_i(x_c) - B_c whose square is added.
inline AffineExpr cost_c2_residual(const ParamPolynomial& B, const Center& c) {
  AffineExpr acc(-c.value);
  for (const auto& [m, a] : B.terms()) {
    const double mv = m.evaluate(std::span<const double>(c.x.data(), static_cast<std::size_t>(c.x.size())));
    acc += a * mv;
  }
  return acc;
}

// Sum of the traces of all non-auxiliary Gram blocks declared so far.
inline AffineExpr total_gram_trace(const SosProgram& prog) {
  AffineExpr acc;
  for (const auto& mb : prog.memberships()) {
    if (!mb.auxiliary) acc += mb.gram.trace();
  }
  return acc;
}

inline Step1Program build_step1_program(const ProblemSpec& spec, const ControllerTriple& ctrl) {
  const int n = spec.n;
  Step1Program s(n);
  auto& prog = s.program;
  const Point zero = Point::Zero(n);

  const auto vset = v_degree_set(spec.degrees);
  auto [Vy, Vgram] = prog.new_sos_var(v_half_basis(n, vset), "V", vset);
  s.V = shift(Vy, spec.xstar);
  s.statements.push_back({"V", s.V, last_membership(prog), spec.xstar});

  auto [s2, s2gram] = prog.new_sos_var(sos_half_basis(n, spec.degrees.s2), "s2");
  s.s2 = s2;
  s.statements.push_back({"s2", s2, last_membership(prog), zero});

  const auto bset = b_degree_set(spec.degrees);
  const auto bbasis = monomial_basis(n, spec.degrees.B, Parity::Any, bset);
  for (int i = 0; i < spec.t(); ++i) {
    const std::string tag = std::to_string(i + 1);
    const auto& center = spec.centers[static_cast<std::size_t>(i)];
    const ParamPolynomial By = prog.new_poly_var(bbasis);
    const ParamPolynomial B = shift(By, center.x);
    s.B.push_back(B);
    s.trace_terms.push_back(cost_c1(min_norm_gram(By, b_trace_basis(n, bset))));
    s.center_residuals.push_back(cost_c2_residual(B, center));

    auto [s3, g3] = prog.new_sos_var(sos_half_basis(n, spec.degrees.s3), "s3_" + tag);
    s.s3.push_back(s3);
    s.statements.push_back({"s3_" + tag, s3, last_membership(prog), zero});
    auto [s4, g4] = prog.new_sos_var(sos_half_basis(n, spec.degrees.s4), "s4_" + tag);
    s.s4.push_back(s4);
    s.statements.push_back({"s4_" + tag, s4, last_membership(prog), zero});
  }

  const ParamPolynomial s1(ctrl.s1);
  const ParamVector p = to_param(ctrl.p);
  const ParamPolynomial clf = clf_constraint(spec, s.V, s1, p, s.s2);
  prog.assert_sos(clf, "clf");
  s.statements.push_back({"clf", clf, last_membership(prog), zero});
  for (int i = 0; i < spec.t(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const std::string tag = std::to_string(i + 1);
    const ParamPolynomial cbf = cbf_constraint(spec, s.B[k], s1, p, ParamPolynomial(ctrl.pm1[k]), s.s3[k]);
    prog.assert_sos(cbf, "cbf_" + tag);
    s.statements.push_back({"cbf_" + tag, cbf, last_membership(prog), zero});
    const ParamPolynomial cont = containment_constraint(s.B[k], s.s4[k], spec.w[k]);
    prog.assert_sos(cont, "containment_" + tag);
    s.statements.push_back({"containment_" + tag, cont, last_membership(prog), zero});
  }

  QuadraticForm obj;
  for (const auto& tr : s.trace_terms) obj.linear += tr;
  for (const auto& res : s.center_residuals) obj.add_square(res);
  s.regularizer = spec.algorithm.regularization * total_gram_trace(prog);
  obj.linear += s.regularizer;
  prog.set_objective(obj);
  return s;
}

inline Step2Program build_step2_program(const ProblemSpec& spec, const Polynomial& V, const std::vector<Polynomial>& B) {
  const int n = spec.n;
  if (static_cast<int>(B.size()) != spec.t()) throw DimensionError("build_step2_program: barrier count mismatch");
  Step2Program s(n);
  auto& prog = s.program;
  const Point zero = Point::Zero(n);

  s.s1 = prog.new_poly_var(monomial_basis(n, spec.degrees.s1));
  for (int j = 0; j < spec.m; ++j) s.p.push_back(prog.new_poly_var(monomial_basis(n, spec.degrees.p)));
  for (int i = 0; i < spec.t(); ++i) s.pm1.push_back(prog.new_poly_var(monomial_basis(n, spec.degrees.pm1)));
  for (int i = 0; i < spec.t(); ++i) s.eps.push_back(prog.new_var());

  auto [s2, g2] = prog.new_sos_var(sos_half_basis(n, spec.degrees.s2), "s2");
  s.s2 = s2;
  s.statements.push_back({"s2", s2, last_membership(prog), zero});
  for (int i = 0; i < spec.t(); ++i) {
    const std::string tag = std::to_string(i + 1);
    auto [s3, g3] = prog.new_sos_var(sos_half_basis(n, spec.degrees.s3), "s3_" + tag);
    s.s3.push_back(s3);
    s.statements.push_back({"s3_" + tag, s3, last_membership(prog), zero});
  }

  const ParamPolynomial pos = s1_positivity(s.s1, spec.eps_s1);
  prog.assert_sos(pos, "s1_positivity");
  s.statements.push_back({"s1_positivity", pos, last_membership(prog), zero});

  const ParamPolynomial clf = clf_constraint(spec, V, s.s1, s.p, s.s2);
  prog.assert_sos(clf, "clf");
  s.statements.push_back({"clf", clf, last_membership(prog), zero});
  for (int i = 0; i < spec.t(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const std::string tag = std::to_string(i + 1);
    const ParamPolynomial cbf =
        cbf_constraint(spec, B[k], s.s1, s.p, s.pm1[k], s.s3[k], AffineExpr::variable(s.eps[k]));
    prog.assert_sos(cbf, "cbf_" + tag);
    s.statements.push_back({"cbf_" + tag, cbf, last_membership(prog), zero});
  }

  AffineExpr obj;
  for (const auto& e : s.eps) {
    obj += AffineExpr::variable(e);
    prog.assert_nonneg(AffineExpr::variable(e) + AffineExpr(spec.algorithm.eps_floor), "eps_floor");
  }
  s.regularizer = spec.algorithm.regularization * total_gram_trace(prog);
  obj += s.regularizer;
  prog.set_objective(obj);
  return s;
}

inline std::vector<SosWitness> extract_witnesses(const std::vector<SosStatement>& statements, const SosProgram& prog,
                                                 const std::vector<double>& v) {
  std::vector<SosWitness> out;
  for (const auto& st : statements) {
    const auto& mem = prog.memberships().at(static_cast<std::size_t>(st.membership));
    out.push_back({st.name, st.asserted.substitute(v), mem.gram.basis, st.basis_shift, mem.gram.evaluate(v)});
  }
  return out;
}

// Aggregated Farkas weight per constraint name for an infeasible program,
// largest first.
inline std::vector<std::pair<std::string, double>> diagnose_infeasibility(const CompiledProgram& compiled,
                                                                           const SdpSolution& sol) {
  std::map<std::string, double> weight;
  double total = 0.0;
  for (int i = 0; i < compiled.problem.num_equalities() && i < sol.dual.size(); ++i) {
    const std::string& label = compiled.problem.equalities[static_cast<std::size_t>(i)].label;
    const std::string name = label.substr(0, label.find(' '));
    const double wgt = std::abs(sol.dual(i));
    weight[name] += wgt;
    total += wgt;
  }
  std::vector<std::pair<std::string, double>> out(weight.begin(), weight.end());
  if (total > 0.0) {
    for (auto& [name, wgt] : out) wgt /= total;
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return out;
}

}  // namespace sosclbf
