#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "sdp_oracles.hpp"
#include "sosclbf/sdp.hpp"

namespace {

using namespace sosclbf;
using sosclbf::testing::row;

SdpOptions tight() {
  SdpOptions o;
  o.feasibility_tol = 1e-9;
  o.gap_tol = 1e-9;
  return o;
}

class OracleTest : public ::testing::TestWithParam<int> {};

TEST_P(OracleTest, MatchesIndependentOptimum) {
  const auto suite = sosclbf::testing::oracle_suite();
  const auto& o = suite.at(static_cast<std::size_t>(GetParam()));
  const SdpSolution sol = InteriorPointSolver{}.solve(o.problem, tight());
  ASSERT_EQ(sol.status, SdpStatus::Optimal) << o.name;
  EXPECT_NEAR(sol.primal_objective, o.optimum, 1e-6) << o.name;
  EXPECT_NEAR(sol.dual_objective, o.optimum, 1e-6) << o.name;
  for (const auto& X : sol.primal_blocks) EXPECT_GE(psd_project_check(X).min_eigenvalue, -1e-8) << o.name;
}

INSTANTIATE_TEST_SUITE_P(Suite, OracleTest, ::testing::Range(0, 20));

TEST(Oracles, SuiteHasTwentyProblems) { EXPECT_EQ(sosclbf::testing::oracle_suite().size(), 20u); }

// At default tolerances the reported residuals and gap honour the
// documented stopping rule.
TEST(InteriorPoint, DefaultToleranceStoppingRule) {
  for (const auto& o : sosclbf::testing::oracle_suite()) {
    const SdpSolution sol = InteriorPointSolver{}.solve(o.problem);
    ASSERT_EQ(sol.status, SdpStatus::Optimal) << o.name;
    EXPECT_LE(sol.primal_residual, 1e-7) << o.name;
    EXPECT_LE(sol.dual_residual, 1e-7) << o.name;
    EXPECT_LE(sol.gap, 1e-7) << o.name;
    EXPECT_LE(sol.iterations, 200);
    for (const auto& S : sol.dual_slack) EXPECT_GE(psd_project_check(S).min_eigenvalue, -1e-8) << o.name;
  }
}

TEST(InteriorPoint, PrimalInfeasibleReturnsFarkasRay) {
  // The trace of a PSD matrix cannot be -1.
  SdpProblem p;
  p.block_dims = {2};
  p.equalities = {row({{0, 0, 0, 1.0}, {0, 1, 1, 1.0}}, -1.0), row({{0, 0, 1, 1.0}}, 0.3)};
  const SdpSolution sol = InteriorPointSolver{}.solve(p);
  ASSERT_EQ(sol.status, SdpStatus::Infeasible);
  ASSERT_EQ(sol.dual.size(), 2);
  // Farkas: b'y > 0 while -A'y = -(y0 I + y1 offdiag / 2) is PSD.
  const double bty = -1.0 * sol.dual(0) + 0.3 * sol.dual(1);
  EXPECT_GT(bty, 0.0);
  Eigen::MatrixXd aty(2, 2);
  aty << sol.dual(0), 0.5 * sol.dual(1), 0.5 * sol.dual(1), sol.dual(0);
  EXPECT_GE(psd_project_check(Eigen::MatrixXd(-aty)).min_eigenvalue, -1e-8 * bty);
}

TEST(InteriorPoint, DualInfeasibleIsUnbounded) {
  // min -X11 with only X00 fixed: X11 can grow without bound.
  SdpProblem p;
  p.block_dims = {2};
  p.equalities = {row({{0, 0, 0, 1.0}}, 1.0)};
  p.objective_blocks = {{0, 1, 1, -1.0}};
  EXPECT_EQ(InteriorPointSolver{}.solve(p).status, SdpStatus::Unbounded);
}

TEST(InteriorPoint, RespectsIterationLimit) {
  SdpOptions o;
  o.max_iterations = 1;
  const auto suite = sosclbf::testing::oracle_suite();
  const SdpSolution sol = InteriorPointSolver{}.solve(suite[7].problem, o);
  EXPECT_EQ(sol.status, SdpStatus::MaxIters);
  EXPECT_LE(sol.iterations, 1);
}

TEST(InteriorPoint, IsDeterministic) {
  for (const auto& o : sosclbf::testing::oracle_suite()) {
    const SdpSolution a = InteriorPointSolver{}.solve(o.problem);
    const SdpSolution b = InteriorPointSolver{}.solve(o.problem);
    EXPECT_EQ(a.iterations, b.iterations);
    EXPECT_EQ(a.primal_objective, b.primal_objective) << o.name;
    ASSERT_EQ(a.primal_blocks.size(), b.primal_blocks.size());
    for (std::size_t k = 0; k < a.primal_blocks.size(); ++k) EXPECT_TRUE(a.primal_blocks[k] == b.primal_blocks[k]);
  }
}

TEST(InteriorPoint, ScaledProblemSolves) {
  // Rows and objective spanning eight decades; Ruiz scaling must cope.
  SdpProblem p;
  p.block_dims = {2};
  p.equalities = {row({{0, 0, 1, 1e4}}, 1e4), row({{0, 0, 0, 1e-4}, {0, 1, 1, -1e-4}}, 0.0)};
  p.objective_blocks = {{0, 0, 0, 1e3}};
  const SdpSolution sol = InteriorPointSolver{}.solve(p, tight());
  ASSERT_EQ(sol.status, SdpStatus::Optimal);
  EXPECT_NEAR(sol.primal_objective, 1e3, 1e-6 * 1e3);
}

TEST(SdpProblem, ValidateRejectsBadIndices) {
  SdpProblem p;
  p.block_dims = {2};
  p.equalities = {row({{0, 1, 0, 1.0}}, 1.0)};  // lower triangle
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.equalities = {row({{1, 0, 0, 1.0}}, 1.0)};  // missing block
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.equalities = {row({{0, 0, 0, 1.0}}, 1.0, {{0, 1.0}})};  // no free variables
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.equalities = {row({{0, 0, 0, std::nan("")}}, 1.0)};
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.block_dims = {0};
  p.equalities.clear();
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(SdpProblem, ScalarVariableCount) {
  SdpProblem p;
  p.block_dims = {3, 1};
  p.num_free = 2;
  EXPECT_EQ(p.num_scalar_variables(), 6 + 1 + 2);
}

TEST(PsdCheck, DetectsNegativeEigenvalue) {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  const PsdCheck c = psd_project_check(m);
  EXPECT_FALSE(c.passed);
  EXPECT_NEAR(c.min_eigenvalue, -1.0, 1e-14);
  EXPECT_TRUE(psd_project_check(Eigen::MatrixXd::Identity(3, 3)).passed);
  EXPECT_THROW(psd_project_check(Eigen::MatrixXd::Zero(2, 3)), DimensionError);
}

TEST(ExtractPolynomial, ExpandsGramForm) {
  const std::vector<Monomial> basis{Monomial(1), Monomial(std::vector<int>{1})};
  Eigen::MatrixXd Q(2, 2);
  Q << 1.0, 1.0, 1.0, 1.0;  // (1 + x)^2
  const Polynomial p = extract_polynomial(Q, basis);
  EXPECT_DOUBLE_EQ(p.coefficient(Monomial(1)), 1.0);
  EXPECT_DOUBLE_EQ(p.coefficient(Monomial(std::vector<int>{1})), 2.0);
  EXPECT_DOUBLE_EQ(p.coefficient(Monomial(std::vector<int>{2})), 1.0);
  EXPECT_THROW(extract_polynomial(Eigen::MatrixXd::Zero(3, 3), basis), DimensionError);
}

TEST(WriteSdpText, ListsEveryRow) {
  const auto suite = sosclbf::testing::oracle_suite();
  std::ostringstream os;
  write_sdp_text(suite[0].problem, os);
  const std::string s = os.str();
  EXPECT_EQ(s.rfind("sosclbf-sdp 1\nblocks 1 2\nfree 0\nequalities 2\n", 0), 0u);
  EXPECT_NE(s.find("row 1 rhs 0"), std::string::npos);
}

}  // namespace
