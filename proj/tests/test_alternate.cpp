#include <gtest/gtest.h>

#include <filesystem>

#include "sosclbf/alternate.hpp"
#include "toy_suite.hpp"

namespace {

using namespace sosclbf;
namespace fs = std::filesystem;

const std::string kProblems = SOSCLBF_PROBLEM_DIR;

ProblemSpec toy() { return load_problem(kProblems + "/toy1d.prob").spec; }

AlternateConfig config_for(const ProblemSpec& spec) {
  AlternateConfig cfg;
  cfg.max_outer = spec.algorithm.max_outer;
  cfg.cost_threshold = spec.algorithm.threshold;
  return cfg;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sosclbf_alternate_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

TEST(Steps, ToyStepsAreOptimalWithNonPositiveSlack) {
  const ProblemSpec spec = toy();
  const Step1Result r1 = step1(spec, initial_controller(spec));
  ASSERT_TRUE(r1.ok());
  EXPECT_GE(r1.cost, 0.0);
  ASSERT_EQ(r1.B.size(), 1u);
  const Step2Result r2 = step2(spec, r1.V, r1.B);
  ASSERT_TRUE(r2.ok());
  ASSERT_EQ(r2.eps.size(), 1u);
  EXPECT_LE(r2.eps[0], 1e-7);
  EXPECT_GE(r2.controller.s1.evaluate(Point::Constant(1, 0.7)), spec.eps_s1 - 1e-9);
}

TEST(Run, ToyConvergesQuicklyAndBarrierStaysInsideAllowableSet) {
  const ProblemSpec spec = toy();
  const RunResult r = run(spec, initial_controller(spec), config_for(spec));
  ASSERT_EQ(r.status, RunStatus::Converged) << r.message;
  ASSERT_TRUE(r.has_certificate);
  EXPECT_LE(static_cast<int>(r.history.size()), 3);
  EXPECT_TRUE(check_monotone(r.history));
  const Polynomial& B = r.best.B.at(0);
  EXPECT_LT(B.evaluate(Point::Zero(1)), 0.0);
  for (int k = 0; k <= 400; ++k) {
    const double x = -3.0 + 6.0 * k / 400.0;
    if (std::abs(x) > 1.0) EXPECT_GT(B.evaluate(Point::Constant(1, x)), 0.0) << x;
  }
  for (const auto& rec : r.history) {
    EXPECT_EQ(rec.step1.status, SdpStatus::Optimal);
    EXPECT_EQ(rec.step2.status, SdpStatus::Optimal);
    EXPECT_LE(sum(rec.eps), spec.t() * 1e-7);
  }
}

TEST(Run, UnstabilisableStartIsInitInfeasible) {
  ProblemSpec spec = toy();
  spec.f = {parse_polynomial("x1", 1)};
  spec.init.p = PolyVector{Polynomial(1)};
  AlternateConfig cfg = config_for(spec);
  cfg.max_outer = 3;
  const RunResult r = run(spec, initial_controller(spec), cfg);
  EXPECT_EQ(r.status, RunStatus::InitInfeasible);
  EXPECT_FALSE(r.has_certificate);
  EXPECT_FALSE(r.message.empty());
}

TEST(Run, ZeroOuterIterationsKeepsInitialController) {
  const ProblemSpec spec = toy();
  AlternateConfig cfg = config_for(spec);
  cfg.max_outer = 0;
  const RunResult r = run(spec, initial_controller(spec), cfg);
  EXPECT_EQ(r.status, RunStatus::MaxOuter);
  EXPECT_FALSE(r.has_certificate);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history[0].k, 0);
  EXPECT_EQ(r.history[0].snapshot.p, initial_controller(spec).p);
}

TEST(Run, IterationCallbackSeesEveryRecord) {
  const ProblemSpec spec = toy();
  AlternateConfig cfg = config_for(spec);
  int calls = 0;
  cfg.on_iteration = [&](const IterationRecord&) { ++calls; };
  const RunResult r = run(spec, initial_controller(spec), cfg);
  EXPECT_EQ(calls, static_cast<int>(r.history.size()));
}

TEST(CheckMonotone, Cases) {
  EXPECT_TRUE(check_monotone(std::vector<double>{}));
  EXPECT_TRUE(check_monotone(std::vector<double>{3.0}));
  EXPECT_TRUE(check_monotone(std::vector<double>{3.0, 2.0, 2.0, 1.0}));
  EXPECT_TRUE(check_monotone(std::vector<double>{1.0, 1.0 + 5e-7}));
  EXPECT_FALSE(check_monotone(std::vector<double>{1.0, 1.0 + 2e-6}));
  EXPECT_FALSE(check_monotone(std::vector<double>{3.0, 2.0, 2.5}));
  EXPECT_FALSE(check_monotone(std::vector<double>{1.0, std::nan("")}));
}

// Whenever Step 1 succeeds, Step 2 must succeed with non-positive slacks
// and the cost sequence must not increase.
TEST(ToySuite, StepOneSuccessImpliesStepTwoSuccess) {
  for (const auto& tp : sosclbf::testing::toy_suite(1)) {
    const ProblemSpec spec = parse_problem(tp.text, tp.name);
    const RunResult r = run(spec, initial_controller(spec), config_for(spec));
    EXPECT_NE(r.status, RunStatus::SolverFailure) << tp.name << ": " << r.message;
    for (const auto& rec : r.history) {
      if (rec.step1.status != SdpStatus::Optimal) continue;
      EXPECT_EQ(rec.step2.status, SdpStatus::Optimal) << tp.name << " iteration " << rec.k;
      EXPECT_LE(sum(rec.eps), spec.t() * 1e-7) << tp.name << " iteration " << rec.k;
    }
    EXPECT_TRUE(check_monotone(r.history)) << tp.name;
  }
}

TEST(Checkpoint, ResumeReproducesUninterruptedRun) {
  const ProblemSpec spec = toy();
  const fs::path dir = scratch_dir("resume");
  AlternateConfig cfg = config_for(spec);
  cfg.max_outer = 3;
  cfg.cost_threshold = 1e-12;  // force all three iterations
  cfg.checkpoint_dir = dir.string();
  const RunResult full = run(spec, initial_controller(spec), cfg);
  ASSERT_TRUE(full.has_certificate) << full.message;
  ASSERT_TRUE(fs::exists(dir / "iter1_step1.cert"));
  ASSERT_TRUE(fs::exists(dir / "iter1_step2.cert"));

  AlternateConfig again = cfg;
  again.checkpoint_dir.clear();
  for (const char* name : {"iter1_step1.cert", "iter1_step2.cert"}) {
    const RunResult resumed = resume(spec, load_certificate((dir / name).string()), again);
    ASSERT_TRUE(resumed.has_certificate) << name << ": " << resumed.message;
    EXPECT_EQ(resumed.status, full.status) << name;
    EXPECT_EQ(format_certificate(resumed.best), format_certificate(full.best)) << name;
  }
  fs::remove_all(dir);
}

TEST(Run, RepeatedRunsAreIdentical) {
  const ProblemSpec spec = toy();
  const RunResult a = run(spec, initial_controller(spec), config_for(spec));
  const RunResult b = run(spec, initial_controller(spec), config_for(spec));
  ASSERT_TRUE(a.has_certificate);
  EXPECT_EQ(format_certificate(a.best), format_certificate(b.best));
}

}  // namespace
