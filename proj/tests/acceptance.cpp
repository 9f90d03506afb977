// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>

#include "sdp_oracles.hpp"
#include "sosclbf/alternate.hpp"
#include "sosclbf/verify.hpp"
#include "toy_suite.hpp"

namespace {

using namespace sosclbf;
namespace fs = std::filesystem;

const std::string kProblems = SOSCLBF_PROBLEM_DIR;
const std::string kCli = SOSCLBF_CLI;

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

bool within_factor_two(long ours, long reported) { return 2 * ours >= reported && ours <= 2 * reported; }

struct ConverterRun {
  ProblemSpec spec;
  RunResult result;
  double seconds = 0.0;
};

ConverterRun converter_synthesis() {
  ConverterRun c;
  const LoadedProblem lp = load_problem(kProblems + "/powerconverter.prob");
  c.spec = lp.spec;
  AlternateConfig cfg;
  cfg.max_outer = c.spec.algorithm.max_outer;
  cfg.cost_threshold = c.spec.algorithm.threshold;
  cfg.problem_hash = lp.hash;
  const auto t0 = std::chrono::steady_clock::now();
  c.result = run(c.spec, initial_controller(c.spec), cfg);
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

void criterion1(const ConverterRun& c) {
  const auto& h = c.result.history;
  double max_eps = -std::numeric_limits<double>::infinity();
  double it1 = 0.0, it2 = 0.0;
  int solved = 0;
  bool all_optimal = !h.empty();
  for (const auto& r : h) {
    all_optimal = all_optimal && r.step1.status == SdpStatus::Optimal && r.step2.status == SdpStatus::Optimal;
    for (double e : r.eps) max_eps = std::max(max_eps, e);
    it1 += r.step1.iterations;
    it2 += r.step2.iterations;
    ++solved;
  }
  if (solved > 0) {
    it1 /= solved;
    it2 /= solved;
  }
  const CompileStats s1 = h.empty() ? CompileStats{} : h.front().step1.compile;
  const CompileStats s2 = h.empty() ? CompileStats{} : h.front().step2.compile;
  const bool sizes = within_factor_two(s1.decision_coefficients, 337) && within_factor_two(s2.decision_coefficients, 372) &&
                     within_factor_two(s1.psd_entries, 5188) && within_factor_two(s2.psd_entries, 4892);
  const bool ok = c.result.has_certificate && all_optimal && max_eps <= 1e-7 && check_monotone(h) && c.seconds < 600.0 &&
                  it1 >= 10 && it1 <= 100 && it2 >= 10 && it2 <= 100 && sizes;
  report(1, ok,
         "converter synthesis " + std::string(to_string(c.result.status)) + " after " + std::to_string(h.size()) +
             " iterations in " + fmt(c.seconds) + " s; max eps " + fmt(max_eps) + "; monotone " +
             (check_monotone(h) ? "yes" : "no") + "; mean inner iterations " + fmt(it1) + "/" + fmt(it2) +
             "; sizes " + std::to_string(s1.decision_coefficients) + "/" + std::to_string(s2.decision_coefficients) +
             " coefficients, " + std::to_string(s1.psd_entries) + "/" + std::to_string(s2.psd_entries) + " PSD entries");
}

void criterion2(const ConverterRun& c) {
  if (!c.result.has_certificate) {
    report(2, false, "no converter certificate");
    return;
  }
  const ProblemSpec& spec = c.spec;
  const CertificateSet& cs = c.result.best;
  const Box box = hull(operating_box(spec), allowable_box(spec));
  const SafetyReport safety = sample_safety(spec, cs, box, 100000, 1);

  const auto starts = sample_safe_starts(spec, cs, 100, 1);
  const RationalController ctrl = controller_from(cs, spec);
  std::vector<PolyEvaluator> ws;
  for (const auto& w : spec.w) ws.emplace_back(w);
  int escaped = 0, events = 0, not_decreasing = 0;
  for (const auto& x0 : starts) {
    const Trajectory tr = simulate(spec, ctrl, x0, 5.0, 1e-3);
    if (tr.left_operating_region || tr.controller_violation || tr.step_underflow) ++events;
    bool inside = true;
    for (const auto& x : tr.states) {
      for (const auto& w : ws) inside = inside && w(x) <= 1e-6;
    }
    if (!inside) ++escaped;
    if (!check_decrease(cs.V, tr, spec.xstar, 1e-4).passed()) ++not_decreasing;
  }
  const bool ok = safety.violations == 0 && safety.safe_hits > 0 && escaped == 0 && events == 0 && not_decreasing == 0;
  report(2, ok,
         std::to_string(safety.violations) + " unsafe points among " + std::to_string(safety.safe_hits) +
             " safe-set hits of 100000 samples; " + std::to_string(starts.size()) + " trajectories, " +
             std::to_string(escaped) + " left the allowable set, " + std::to_string(events) + " integration events, " +
             std::to_string(not_decreasing) + " with V not decreasing");
}

void criterion3(const ConverterRun& c) {
  std::size_t checked = 0;
  double worst_rel = 0.0;
  double worst_eig = std::numeric_limits<double>::infinity();
  bool ok = c.result.has_certificate;
  auto check = [&](const CertificateSet& cs) {
    const WitnessReport rep = check_witnesses(c.spec, cs, 1e-6, 1e-8);
    ok = ok && rep.passed();
    for (const auto& w : rep.checks) {
      ++checked;
      worst_rel = std::max({worst_rel, w.relative_error, w.consistency_error});
      worst_eig = std::min(worst_eig, w.min_eigenvalue);
    }
  };
  if (c.result.has_certificate) check(c.result.best);
  for (const auto& r : c.result.history) {
    if (r.k > 0 && !r.snapshot.witnesses.empty()) check(r.snapshot);
  }
  report(3, ok && checked > 0,
         std::to_string(checked) + " Gram witnesses; worst relative reconstruction error " + fmt(worst_rel) +
             "; smallest eigenvalue " + fmt(worst_eig));
}

void criterion4() {
  int runs = 0, step1_ok = 0, violations = 0, non_monotone = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& tp : sosclbf::testing::toy_suite(seed)) {
      const ProblemSpec spec = parse_problem(tp.text, tp.name);
      AlternateConfig cfg;
      cfg.max_outer = spec.algorithm.max_outer;
      cfg.cost_threshold = spec.algorithm.threshold;
      const RunResult r = run(spec, initial_controller(spec), cfg);
      ++runs;
      for (const auto& rec : r.history) {
        if (rec.step1.status != SdpStatus::Optimal) continue;
        ++step1_ok;
        double sum = 0.0;
        for (double e : rec.eps) sum += e;
        if (rec.step2.status != SdpStatus::Optimal || !(sum <= spec.t() * 1e-7)) ++violations;
      }
      if (!check_monotone(r.history)) ++non_monotone;
    }
  }
  report(4, runs >= 100 && step1_ok > 0 && violations == 0 && non_monotone == 0,
         std::to_string(runs) + " toy runs, " + std::to_string(step1_ok) + " optimal Step-1 solves, " +
             std::to_string(violations) + " Step-2 violations, " + std::to_string(non_monotone) + " non-monotone cost logs");
}

void criterion5() {
  SdpOptions tight;
  tight.feasibility_tol = 1e-9;
  tight.gap_tol = 1e-9;
  int bad = 0;
  double worst = 0.0;
  const auto suite = sosclbf::testing::oracle_suite();
  for (const auto& o : suite) {
    const SdpSolution sol = InteriorPointSolver{}.solve(o.problem, tight);
    const double err = std::abs(sol.primal_objective - o.optimum);
    worst = std::max(worst, err);
    if (sol.status != SdpStatus::Optimal || !(err <= 1e-6)) ++bad;
  }

  SosProgram motzkin(2);
  motzkin.assert_sos(ParamPolynomial(parse_polynomial("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", 2)),
                     monomial_basis(2, 3), "motzkin");
  const SdpStatus m = InteriorPointSolver{}.solve(motzkin.compile().problem).status;
  SosProgram square(1);
  square.assert_sos(ParamPolynomial(parse_polynomial("x1^2 + 2*x1 + 1", 1)), "square");
  const SdpStatus s = InteriorPointSolver{}.solve(square.compile().problem).status;

  report(5, suite.size() == 20 && bad == 0 && m == SdpStatus::Infeasible && s == SdpStatus::Optimal,
         std::to_string(suite.size() - static_cast<std::size_t>(bad)) + "/" + std::to_string(suite.size()) +
             " oracle SDPs within 1e-6 (worst " + fmt(worst) + "); Motzkin " + to_string(m) + "; x^2+2x+1 " +
             to_string(s));
}

void criterion6() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> coef(-2.0, 2.0), pos(-1.0, 1.0);
  const double h = 1e-4;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 4;
    Polynomial p(n);
    for (const auto& m : monomial_basis(n, 4)) {
      if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) p.add_term(m, coef(rng));
    }
    const PolyVector g = gradient(p);
    Point x(n);
    for (int i = 0; i < n; ++i) x(i) = pos(rng);
    for (int i = 0; i < n; ++i) {
      Point a = x, b = x;
      a(i) += h;
      b(i) -= h;
      const double fd = (p.evaluate(a) - p.evaluate(b)) / (2.0 * h);
      const double an = g[static_cast<std::size_t>(i)].evaluate(x);
      worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(an)));
    }
  }
  const VectorField decay = [](const Eigen::VectorXd& x) { return Eigen::VectorXd(-x); };
  const double rk4_err = std::abs(integrate_rk4(decay, Eigen::VectorXd::Ones(1), 1.0, 1e-3)(0) - std::exp(-1.0));
  report(6, worst <= 1e-6 && rk4_err <= 1e-6,
         "worst gradient relative error " + fmt(worst) + " over 100 polynomials; RK4 error at t=1 " + fmt(rk4_err));
}

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion7() {
  const fs::path dir = fs::temp_directory_path() / "sosclbf_acceptance_repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string a = (dir / "a.cert").string();
  const std::string b = (dir / "b.cert").string();
  const std::string prob = kProblems + "/powerconverter.prob";
  const int ca = shell(kCli + " synth " + prob + " --seed 7 --out " + a + " > /dev/null");
  const int cb = shell(kCli + " synth " + prob + " --seed 7 --out " + b + " > /dev/null");
  const bool exist = fs::exists(a) && fs::exists(b);
  const bool same = exist && read_file(a) == read_file(b);
  report(7, ca == 0 && cb == 0 && same,
         "two synth runs exited " + std::to_string(ca) + "/" + std::to_string(cb) + "; certificates " +
             (same ? "byte-identical" : "differ") + (exist ? " (" + std::to_string(fs::file_size(a)) + " bytes)" : ""));
  fs::remove_all(dir);
}

}  // namespace

int main() {
  const ConverterRun c = converter_synthesis();
  criterion1(c);
  criterion2(c);
  criterion3(c);
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  return failures == 0 ? 0 : 1;
}
