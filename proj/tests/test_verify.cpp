#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "sosclbf/alternate.hpp"
#include "sosclbf/verify.hpp"

namespace {

using namespace sosclbf;

const std::string kProblems = SOSCLBF_PROBLEM_DIR;

ProblemSpec toy() { return load_problem(kProblems + "/toy1d.prob").spec; }

const CertificateSet& toy_certificate() {
  static const CertificateSet cs = [] {
    const ProblemSpec spec = toy();
    AlternateConfig cfg;
    cfg.max_outer = spec.algorithm.max_outer;
    cfg.cost_threshold = spec.algorithm.threshold;
    const RunResult r = run(spec, initial_controller(spec), cfg);
    if (!r.has_certificate) throw std::runtime_error("toy synthesis failed: " + r.message);
    return r.best;
  }();
  return cs;
}

Point pt(std::initializer_list<double> v) {
  Point x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x(i++) = d;
  return x;
}

// Closed loop xdot = -x^3 from the toy file's initial controller.
RationalController cubic() { return {{parse_polynomial("-x1^3", 1)}, Polynomial::constant(1, 1.0), 1e-3}; }

TEST(Controller, EvaluatesRationalFeedback) {
  EXPECT_DOUBLE_EQ(eval_controller(cubic(), pt({2.0}))(0), -8.0);
  const RationalController halved{{parse_polynomial("-x1", 1)}, Polynomial::constant(1, 2.0), 1e-3};
  EXPECT_DOUBLE_EQ(eval_controller(halved, pt({1.0}))(0), -0.5);
  const RationalController zero{{Polynomial(1)}, Polynomial::constant(1, 1.0), 1e-3};
  EXPECT_DOUBLE_EQ(eval_controller(zero, pt({0.4}))(0), 0.0);
}

TEST(Controller, SmallDenominatorIsAViolation) {
  const RationalController bad{{parse_polynomial("x1", 1)}, parse_polynomial("x1^2", 1), 1e-3};
  EXPECT_THROW(eval_controller(bad, pt({0.01})), CertificateViolation);
  EXPECT_NO_THROW(eval_controller(bad, pt({0.1})));
}

TEST(Controller, ClosedLoopFieldAddsInputChannel) {
  const ProblemSpec spec = toy();
  EXPECT_DOUBLE_EQ(closed_loop_field(spec, cubic(), pt({0.5}))(0), -0.125);
  const ClosedLoop loop(spec, cubic());
  EXPECT_DOUBLE_EQ(loop.field(pt({0.5}))(0), -0.125);
}

TEST(Integrator, Rk4OnLinearDecay) {
  const VectorField f = [](const Eigen::VectorXd& x) { return Eigen::VectorXd(-x); };
  const Eigen::VectorXd x = integrate_rk4(f, Eigen::VectorXd::Ones(1), 1.0, 1e-3);
  EXPECT_NEAR(x(0), std::exp(-1.0), 1e-6);
}

// xdot = -x^3 has x(t) = x0 / sqrt(1 + 2 x0^2 t).
TEST(Simulate, CubicMatchesClosedForm) {
  const ProblemSpec spec = toy();
  const double x0 = 0.9;
  const Trajectory tr = simulate(spec, cubic(), pt({x0}), 10.0, 1e-3);
  ASSERT_GT(tr.size(), 1u);
  EXPECT_DOUBLE_EQ(tr.times.back(), 10.0);
  EXPECT_FALSE(tr.left_operating_region);
  EXPECT_FALSE(tr.controller_violation);
  for (std::size_t k = 0; k < tr.size(); k += 500) {
    const double t = tr.times[k];
    EXPECT_NEAR(tr.states[k](0), x0 / std::sqrt(1.0 + 2.0 * x0 * x0 * t), 1e-6) << t;
  }
  EXPECT_NEAR(tr.states.back()(0), x0 / std::sqrt(1.0 + 2.0 * x0 * x0 * 10.0), 1e-6);
  for (std::size_t k = 1; k < tr.size(); ++k) EXPECT_GT(tr.times[k], tr.times[k - 1]);
}

TEST(Simulate, EquilibriumIsFixed) {
  const Trajectory tr = simulate(toy(), cubic(), pt({0.0}), 1.0, 1e-2);
  EXPECT_TRUE(tr.entered_equilibrium_ball);
  for (const auto& x : tr.states) EXPECT_EQ(x(0), 0.0);
}

TEST(Simulate, StopsOutsideOperatingRegion) {
  const Trajectory tr = simulate(toy(), cubic(), pt({1.5}), 1.0, 1e-2);
  EXPECT_TRUE(tr.left_operating_region);
  EXPECT_EQ(tr.size(), 1u);
  EXPECT_THROW(simulate(toy(), cubic(), pt({0.1}), 1.0, 0.0), std::invalid_argument);
}

TEST(Simulate, SingularControllerIsReported) {
  const RationalController bad{{parse_polynomial("-x1", 1)}, parse_polynomial("x1^2", 1), 1e-3};
  const Trajectory tr = simulate(toy(), bad, pt({0.5}), 5.0, 1e-2);
  EXPECT_TRUE(tr.controller_violation);
}

TEST(CheckDecrease, Cases) {
  const Trajectory tr = simulate(toy(), cubic(), pt({0.9}), 2.0, 1e-3);
  const DecreaseReport ok = check_decrease(parse_polynomial("x1^2", 1), tr, pt({0.0}));
  EXPECT_TRUE(ok.passed());
  EXPECT_EQ(ok.steps_checked, tr.size() - 1);
  EXPECT_DOUBLE_EQ(ok.fraction(), 1.0);
  const DecreaseReport bad = check_decrease(parse_polynomial("-x1^2", 1), tr, pt({0.0}));
  EXPECT_FALSE(bad.passed());
  EXPECT_EQ(bad.steps_decreasing, 0u);
  EXPECT_GT(bad.worst_increase, 0.0);
  const Trajectory rest = simulate(toy(), cubic(), pt({0.0}), 1.0, 1e-2);
  const DecreaseReport vacuous = check_decrease(parse_polynomial("-x1^2", 1), rest, pt({0.0}));
  EXPECT_EQ(vacuous.steps_checked, 0u);
  EXPECT_TRUE(vacuous.passed());
}

TEST(Residuals, ToyCertificatePasses) {
  const ResidualReport rep = sample_sos_residuals(toy_certificate(), toy(), 2000);
  EXPECT_TRUE(rep.passed());
  EXPECT_EQ(rep.samples, 2000u);
  EXPECT_FALSE(rep.entries.empty());
}

TEST(Residuals, NegatedClfFails) {
  CertificateSet cs = toy_certificate();
  cs.V = -1.0 * cs.V;
  const ResidualReport rep = sample_sos_residuals(cs, toy(), 2000);
  EXPECT_FALSE(rep.passed());
  bool found = false;
  for (const auto& e : rep.entries) {
    if (e.name == "V") {
      found = true;
      EXPECT_LT(e.min_value, 0.0);
    }
  }
  EXPECT_TRUE(found);
  EXPECT_THROW(sample_sos_residuals(cs, toy(), 0), std::invalid_argument);
}

TEST(Residuals, IndependentOfWorkerCount) {
  const ResidualReport a = sample_sos_residuals(toy_certificate(), toy(), 3001, 5, 1);
  const ResidualReport b = sample_sos_residuals(toy_certificate(), toy(), 3001, 5, 4);
  ASSERT_EQ(a.entries.size(), b.entries.size());
  for (std::size_t k = 0; k < a.entries.size(); ++k) EXPECT_EQ(a.entries[k].min_value, b.entries[k].min_value);
}

TEST(Witnesses, ToyCertificatePassesAndTamperingFails) {
  const ProblemSpec spec = toy();
  const WitnessReport ok = check_witnesses(spec, toy_certificate());
  EXPECT_TRUE(ok.passed());
  EXPECT_TRUE(ok.missing.empty());
  for (const auto& c : ok.checks) {
    EXPECT_LE(c.relative_error, 1e-6) << c.name;
    EXPECT_GE(c.min_eigenvalue, -1e-8) << c.name;
  }
  CertificateSet cs = toy_certificate();
  cs.witnesses[0].gram(0, 0) += 1e-3;
  EXPECT_FALSE(check_witnesses(spec, cs).passed());
  cs = toy_certificate();
  cs.witnesses.pop_back();
  EXPECT_FALSE(check_witnesses(spec, cs).passed());
}

TEST(Volume, IntervalLength) {
  const Box box{pt({-2.0}), pt({2.0})};
  const VolumeEstimate v = safe_set_volume({parse_polynomial("x1^2 - 1", 1)}, box, 20000, 3);
  EXPECT_NEAR(v.estimate, 2.0, 3.0 * v.stderr_);
  EXPECT_EQ(v.samples, 20000u);
  const VolumeEstimate empty = safe_set_volume({parse_polynomial("x1^2 + 1", 1)}, box, 1000, 3);
  EXPECT_EQ(empty.estimate, 0.0);
  EXPECT_EQ(empty.hits, 0u);
}

TEST(Volume, DeterministicAndWorkerIndependent) {
  const Box box{pt({-2.0, -2.0}), pt({2.0, 2.0})};
  const std::vector<Polynomial> B{parse_polynomial("x1^2 + x2^2 - 1", 2)};
  const VolumeEstimate a = safe_set_volume(B, box, 10007, 9, 1);
  const VolumeEstimate b = safe_set_volume(B, box, 10007, 9, 1);
  const VolumeEstimate c = safe_set_volume(B, box, 10007, 9, 3);
  EXPECT_EQ(a.hits, b.hits);
  EXPECT_EQ(a.hits, c.hits);
  EXPECT_NEAR(a.estimate, M_PI, 3.0 * a.stderr_);
}

TEST(Volume, StandardErrorShrinksAsRootN) {
  const Box box{pt({-2.0}), pt({2.0})};
  const std::vector<Polynomial> B{parse_polynomial("x1^2 - 1", 1)};
  const double s1 = safe_set_volume(B, box, 10000, 1).stderr_;
  const double s4 = safe_set_volume(B, box, 40000, 1).stderr_;
  EXPECT_NEAR(s1 / s4, 2.0, 0.1);
  EXPECT_THROW(safe_set_volume(B, box, 0), std::invalid_argument);
}

TEST(Safety, ToyCertificateHasNoViolations) {
  const ProblemSpec spec = toy();
  const SafetyReport rep = sample_safety(spec, toy_certificate(), hull(operating_box(spec), allowable_box(spec)), 20000);
  EXPECT_EQ(rep.violations, 0u);
  EXPECT_GT(rep.safe_hits, 0u);
}

TEST(Safety, OversizedBarrierIsCaught) {
  const ProblemSpec spec = toy();
  CertificateSet cs = toy_certificate();
  cs.B = {parse_polynomial("x1^2 - 1.5", 1)};
  const SafetyReport rep = sample_safety(spec, cs, operating_box(spec), 20000);
  EXPECT_GT(rep.violations, 0u);
  EXPECT_GT(spec.w[0].evaluate(rep.first_violation), 1e-6);
}

TEST(SafeStarts, LieInSafeSetAndAreReproducible) {
  const ProblemSpec spec = toy();
  const auto a = sample_safe_starts(spec, toy_certificate(), 25, 4);
  const auto b = sample_safe_starts(spec, toy_certificate(), 25, 4);
  ASSERT_EQ(a.size(), 25u);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_LE(toy_certificate().B[0].evaluate(a[k]), 0.0);
    EXPECT_LE(spec.r.evaluate(a[k]), 0.0);
    EXPECT_EQ(a[k], b[k]);
  }
}

TEST(Slice, UnitCircleSegmentsLieOnCircle) {
  PlaneSpec plane;
  plane.x_lo = plane.y_lo = -2.0;
  plane.x_hi = plane.y_hi = 2.0;
  const SliceData d = contour_slice({{"w1", parse_polynomial("x1^2 + x2^2 - 1", 2)}}, plane, 101, 101);
  EXPECT_EQ(d.samples.size(), 101u * 101u);
  ASSERT_FALSE(d.segments.empty());
  double length = 0.0;
  for (const auto& s : d.segments) {
    EXPECT_NEAR(std::hypot(s.x0, s.y0), 1.0, 1e-2);
    EXPECT_NEAR(std::hypot(s.x1, s.y1), 1.0, 1e-2);
    length += std::hypot(s.x1 - s.x0, s.y1 - s.y0);
    EXPECT_EQ(s.poly_id, "w1");
  }
  EXPECT_NEAR(length, 2.0 * M_PI, 1e-2);
}

TEST(Slice, FixedCoordinatesAndEdgeCases) {
  PlaneSpec plane;
  plane.axis_x = 0;
  plane.axis_y = 2;
  plane.fixed = pt({0.0, 5.0, 0.0});
  const SliceData d = contour_slice({{"c", parse_polynomial("x2 - 5", 3)}}, plane, 5, 5);
  for (const auto& s : d.samples) EXPECT_EQ(s.value, 0.0);
  const SliceData none = contour_slice({{"k", Polynomial::constant(2, 1.0)}}, PlaneSpec{}, 11, 11);
  EXPECT_TRUE(none.segments.empty());
  EXPECT_THROW(contour_slice({{"k", Polynomial::constant(2, 1.0)}}, PlaneSpec{}, 1, 11), std::invalid_argument);
  PlaneSpec same;
  same.axis_y = 0;
  EXPECT_THROW(contour_slice({{"k", Polynomial::constant(2, 1.0)}}, same, 3, 3), DimensionError);
}

TEST(PolyEvaluator, AgreesWithPolynomialEvaluate) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + trial % 4;
    Polynomial p(n);
    for (const auto& m : monomial_basis(n, 3 + trial % 4)) p.add_term(m, u(rng));
    const PolyEvaluator ev(p);
    Point x(n);
    for (int i = 0; i < n; ++i) x(i) = u(rng);
    EXPECT_NEAR(ev(x), p.evaluate(x), 1e-12 * std::max(1.0, std::abs(p.evaluate(x))));
  }
}

TEST(Csv, Headers) {
  std::ostringstream a, b, c;
  write_slice_csv(a, SliceData{});
  write_segments_csv(b, SliceData{});
  EXPECT_EQ(a.str(), "x1,x2,value,poly_id\n");
  EXPECT_EQ(b.str(), "x1_start,x2_start,x1_end,x2_end,poly_id\n");
  const Trajectory tr = simulate(toy(), controller_from(toy_certificate(), toy()), pt({0.3}), 0.01, 1e-3);
  write_trajectory_csv(c, tr, toy_certificate());
  const std::string s = c.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "t,x1,u1,V,B1");
  EXPECT_EQ(static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')), tr.size() + 1);
}

}  // namespace
