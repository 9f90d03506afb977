#include <gtest/gtest.h>

#include <cmath>

#include "sosclbf/poly_io.hpp"
#include "sosclbf/sdp.hpp"
#include "sosclbf/sos.hpp"

namespace {

using namespace sosclbf;

long binomial(int n, int k) {
  long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

SdpSolution solve(const CompiledProgram& c) { return InteriorPointSolver{}.solve(c.problem, {}); }

TEST(MonomialBasis, CountsMatchBinomials) {
  for (int n = 1; n <= 4; ++n) {
    for (int d = 0; d <= 4; ++d) {
      EXPECT_EQ(static_cast<long>(monomial_basis(n, d).size()), binomial(n + d, d)) << n << " " << d;
    }
  }
}

TEST(MonomialBasis, ParityAndDegreeSetFilters) {
  for (const auto& m : monomial_basis(3, 4, Parity::Even)) EXPECT_EQ(m.degree() % 2, 0);
  for (const auto& m : monomial_basis(3, 5, Parity::Odd)) EXPECT_EQ(m.degree() % 2, 1);
  const auto b = monomial_basis(2, 4, Parity::Any, {0, 4});
  EXPECT_EQ(b.size(), 1u + 5u);
  EXPECT_TRUE(std::is_sorted(b.begin(), b.end()));
  EXPECT_EQ(monomial_basis_range(2, 1, 2).size(), 5u);
  EXPECT_THROW(monomial_basis(2, -1), std::invalid_argument);
}

TEST(DefaultHalfBasis, KeepsMonomialsOfBothParities) {
  const ParamPolynomial p(parse_polynomial("x1^2 + 1", 1));
  const auto basis = default_half_basis(p);
  ASSERT_EQ(basis.size(), 2u);
  EXPECT_EQ(basis[0].degree(), 0);
  EXPECT_EQ(basis[1].degree(), 1);
}

TEST(AffineExpr, LinearAlgebra) {
  const VarId a{0}, b{1};
  const AffineExpr e = 2.0 * AffineExpr::variable(a) - AffineExpr::variable(b, 3.0) + 1.5;
  EXPECT_DOUBLE_EQ(e.evaluate({1.0, 2.0}), 2.0 - 6.0 + 1.5);
  EXPECT_DOUBLE_EQ(e.coefficient(b), -3.0);
  EXPECT_TRUE((e - e).is_zero());
  EXPECT_TRUE(AffineExpr(4.0).is_constant());
}

TEST(ParamPolynomial, ProductOfUnknownsIsRejected) {
  SosProgram prog(1);
  const ParamPolynomial p = prog.new_poly_var(monomial_basis(1, 1));
  const ParamPolynomial q = prog.new_poly_var(monomial_basis(1, 1));
  EXPECT_THROW(p * q, BilinearError);
  EXPECT_NO_THROW(p * ParamPolynomial(parse_polynomial("x1 + 2", 1)));
}

TEST(GramBlock, ExpandMatchesExtraction) {
  SosProgram prog(2);
  auto [p, g] = prog.new_sos_var(monomial_basis(2, 2), "s");
  std::vector<double> v(static_cast<std::size_t>(prog.num_vars()));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(1.0 + static_cast<double>(i));
  const Polynomial a = p.substitute(v);
  const Polynomial b = extract_polynomial(g.evaluate(v), g.basis);
  EXPECT_LE(max_coefficient_difference(a, b), 1e-14);
  EXPECT_EQ(prog.declared_coefficients(), static_cast<long>(monomial_basis(2, 4).size()));
}

TEST(MinNormGram, ReproducesPolynomial) {
  const Polynomial p = parse_polynomial("3 + x1*x2 - 2*x1^2*x2^2 + x2^4", 2);
  const GramBlock g = min_norm_gram(ParamPolynomial(p), monomial_basis(2, 2));
  const Polynomial back = extract_polynomial(g.evaluate({}), g.basis);
  EXPECT_LE(max_coefficient_difference(p, back), 1e-15);
  // x1^2 x2^2 arises from (x1^2, x2^2), (x2^2, x1^2) and (x1x2, x1x2).
  EXPECT_NEAR(g.trace().constant(), 3.0 + 1.0 - 2.0 / 3.0, 1e-15);
  EXPECT_THROW(min_norm_gram(ParamPolynomial(p), monomial_basis(2, 1)), BasisError);
}

TEST(SosProgram, PerfectSquareIsFeasible) {
  SosProgram prog(1);
  const GramBlock g = prog.assert_sos(ParamPolynomial(parse_polynomial("x1^2 + 2*x1 + 1", 1)), "square");
  const CompiledProgram c = prog.compile();
  const SdpSolution sol = solve(c);
  ASSERT_EQ(sol.status, SdpStatus::Optimal);
  const auto v = c.values(sol);
  const Eigen::MatrixXd Q = g.evaluate(v);
  EXPECT_GE(psd_project_check(Q).min_eigenvalue, -1e-8);
  EXPECT_LE(max_coefficient_difference(extract_polynomial(Q, g.basis), parse_polynomial("x1^2 + 2*x1 + 1", 1)), 1e-6);
}

// The Motzkin polynomial is nonnegative but not a sum of squares.
TEST(SosProgram, MotzkinIsInfeasible) {
  SosProgram prog(2);
  const Polynomial motzkin = parse_polynomial("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", 2);
  prog.assert_sos(ParamPolynomial(motzkin), monomial_basis(2, 3), "motzkin");
  const SdpSolution sol = solve(prog.compile());
  EXPECT_EQ(sol.status, SdpStatus::Infeasible);
}

TEST(SosProgram, NegativeConstantIsInfeasible) {
  SosProgram prog(1);
  prog.assert_sos(ParamPolynomial(parse_polynomial("x1^2 - 1", 1)), monomial_basis(1, 1), "neg");
  // x^2 - 1 is negative at 0; no Gram matrix can be PSD.
  EXPECT_EQ(solve(prog.compile()).status, SdpStatus::Infeasible);
}

TEST(SosProgram, BasisErrorNamesMissingMonomials) {
  SosProgram prog(1);
  try {
    prog.assert_sos(ParamPolynomial(parse_polynomial("x1^4 + 1", 1)), monomial_basis(1, 1), "low");
    FAIL() << "expected BasisError";
  } catch (const BasisError& e) {
    ASSERT_EQ(e.missing().size(), 1u);
    EXPECT_EQ(e.missing()[0], Monomial(std::vector<int>{4}));
  }
}

TEST(SosProgram, ContradictoryConstantEqualityFailsToCompile) {
  SosProgram prog(1);
  prog.assert_eq_zero(ParamPolynomial(parse_polynomial("1", 1)), "bad");
  EXPECT_THROW(prog.compile(), CompileError);
}

TEST(SosProgram, DegreeSetZeroesOtherCoefficients) {
  SosProgram prog(1);
  auto [p, g] = prog.new_sos_var(monomial_basis(1, 2), "even", {2, 4});
  for (const auto& [m, a] : p.terms()) EXPECT_TRUE(m.degree() == 2 || m.degree() == 4);
  prog.assert_eq_zero(p.coefficient(Monomial(std::vector<int>{4})) - 1.0, "lead");
  prog.set_objective(p.coefficient(Monomial(std::vector<int>{2})));
  const CompiledProgram c = prog.compile();
  const SdpSolution sol = solve(c);
  ASSERT_EQ(sol.status, SdpStatus::Optimal);
  // A zero constant term forces the first Gram row to zero, so the x^2
  // coefficient is Q11 >= 0 and its minimum is 0.
  EXPECT_NEAR(sol.primal_objective, 0.0, 1e-6);
}

TEST(SosProgram, QuadraticObjectiveThroughEpigraph) {
  SosProgram prog(1);
  const VarId a = prog.new_var();
  QuadraticForm q;
  q.add_square(AffineExpr::variable(a) - 3.0);
  q.linear += AffineExpr::variable(a);
  prog.set_objective(q);
  const CompiledProgram c = prog.compile();
  const SdpSolution sol = solve(c);
  ASSERT_EQ(sol.status, SdpStatus::Optimal);
  const auto v = c.values(sol);
  EXPECT_NEAR(v[static_cast<std::size_t>(a.index)], 2.5, 1e-5);
  EXPECT_NEAR(q.evaluate(v), 2.75, 1e-6);
}

TEST(SosProgram, RejectsIndefiniteObjective) {
  SosProgram prog(1);
  QuadraticForm q;
  q.vars = {prog.new_var()};
  q.P = Eigen::MatrixXd::Constant(1, 1, -1.0);
  EXPECT_THROW(prog.set_objective(q), std::invalid_argument);
}

TEST(SosProgram, StatisticsCountDeclaredCoefficientsAndPsdEntries) {
  SosProgram prog(2);
  prog.new_poly_var(monomial_basis(2, 2));  // 6 coefficients
  const ParamPolynomial s = prog.new_sos_var(monomial_basis(2, 1), "s").first;  // 3x3 block
  prog.assert_nonneg(AffineExpr(1.0), "aux");  // auxiliary, not counted
  prog.assert_sos(s + ParamPolynomial(parse_polynomial("1", 2)), "c");  // another 3x3
  const CompileStats st = prog.compile().stats;
  EXPECT_EQ(st.decision_coefficients, 6 + 6);
  EXPECT_EQ(st.psd_entries, 9 + 9);
  EXPECT_EQ(st.psd_blocks, 3);
}

}  // namespace
