// Command-line front end.
//
//   sosclbf synth     PROBLEM [--out FILE] [--seed N] [--max-outer N] [--threshold X] [--checkpoint-dir DIR]
//   sosclbf verify    PROBLEM CERT [--samples N] [--trajectories K] [--seed N] [--horizon T] [--dt H]
//   sosclbf simulate  PROBLEM CERT [--x0 a,b,...] [--samples K] [--horizon T] [--dt H] [--seed N] [--out FILE]
//   sosclbf plot-data PROBLEM CERT|GLOB [--grid N] [--plane i,j] [--fix v,...] [--out FILE]
//
// Exit codes: 0 success, 1 bad input, 2 infeasible start, 3 solver failure,
// 4 certificate/problem hash mismatch, 5 verification failure.

#include <glob.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sosclbf/alternate.hpp"
#include "sosclbf/io.hpp"
#include "sosclbf/verify.hpp"

namespace {

using namespace sosclbf;

enum Exit : int {
  kOk = 0,
  kBadInput = 1,
  kInfeasible = 2,
  kSolverFailure = 3,
  kHashMismatch = 4,
  kVerificationFailure = 5,
};

class ExitError : public std::runtime_error {
 public:
  ExitError(int code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + fmt(v[i], "%.3e");
  return out;
}

CertificateSet load_bound_certificate(const std::string& path, const LoadedProblem& lp) {
  CertificateSet cs = load_certificate(path);
  if (cs.meta.problem_hash != lp.hash) {
    throw ExitError(kHashMismatch, path + ": certificate was produced for a different problem file (hash " +
                                       cs.meta.problem_hash + ", expected " + lp.hash + ")");
  }
  if (cs.V.nvars() != lp.spec.n || static_cast<int>(cs.p.size()) != lp.spec.m ||
      static_cast<int>(cs.B.size()) != lp.spec.t()) {
    throw ExitError(kBadInput, path + ": certificate dimensions do not match the problem");
  }
  return cs;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string problem;
  std::string out = "certificate.cert";
  std::string checkpoint_dir;
  std::int64_t seed = -1;
  int max_outer = -1;
  double threshold = -1.0;
  bool verbose = false;
};

int cmd_synth(const SynthArgs& a) {
  LoadedProblem lp = load_problem(a.problem);
  ProblemSpec& spec = lp.spec;
  if (a.seed >= 0) spec.algorithm.seed = static_cast<std::uint64_t>(a.seed);
  if (a.max_outer >= 0) spec.algorithm.max_outer = a.max_outer;
  if (a.threshold > 0.0) spec.algorithm.threshold = a.threshold;
  for (const auto& w : validate(spec)) std::cout << "warning: " << w << '\n';

  AlternateConfig cfg;
  cfg.max_outer = spec.algorithm.max_outer;
  cfg.cost_threshold = spec.algorithm.threshold;
  cfg.checkpoint_dir = a.checkpoint_dir;
  cfg.problem_hash = lp.hash;
  cfg.solver.verbose = a.verbose;
  cfg.on_warning = [](const std::string& msg) { std::cout << "warning: " << msg << '\n'; };
  cfg.on_iteration = [](const IterationRecord& r) {
    std::cout << "iter " << r.k << "  cost " << fmt(r.cost, "%.9g") << "  eps " << join(r.eps) << "  step1 "
              << r.step1.iterations << " it " << fmt(r.step1.seconds, "%.2f") << " s  step2 " << r.step2.iterations
              << " it " << fmt(r.step2.seconds, "%.2f") << " s" << std::endl;
  };

  const RunResult res = run(spec, initial_controller(spec), cfg);
  std::cout << "status " << to_string(res.status) << ": " << res.message << '\n';
  if (!res.history.empty()) {
    const auto& first = res.history.front();
    std::cout << "step1 size: " << first.step1.compile.decision_coefficients << " coefficients, "
              << first.step1.compile.psd_entries << " PSD entries, " << first.step1.compile.equalities
              << " equalities\n";
    if (first.step2.compile.psd_blocks > 0) {
      std::cout << "step2 size: " << first.step2.compile.decision_coefficients << " coefficients, "
                << first.step2.compile.psd_entries << " PSD entries, " << first.step2.compile.equalities
                << " equalities\n";
    }
  }
  if (res.has_certificate) {
    save_certificate(a.out, res.best);
    std::cout << "certificate from iteration " << res.best.meta.iteration << " written to " << a.out << '\n';
  }
  switch (res.status) {
    case RunStatus::Converged: return kOk;
    case RunStatus::MaxOuter: return res.has_certificate || cfg.max_outer == 0 ? kOk : kSolverFailure;
    case RunStatus::InitInfeasible: return kInfeasible;
    case RunStatus::SolverFailure: return kSolverFailure;
  }
  return kSolverFailure;
}

// ---- verify ----------------------------------------------------------------

struct VerifyArgs {
  std::string problem;
  std::string certificate;
  std::size_t samples = 100000;
  std::size_t trajectories = 100;
  std::uint64_t seed = 1;
  double horizon = 5.0;
  double dt = 1e-3;
  int workers = 1;
};

int cmd_verify(const VerifyArgs& a) {
  const LoadedProblem lp = load_problem(a.problem);
  const ProblemSpec& spec = lp.spec;
  const CertificateSet cs = load_bound_certificate(a.certificate, lp);
  bool ok = true;
  auto line = [&](bool pass, const std::string& what) {
    std::cout << (pass ? "PASS " : "FAIL ") << what << '\n';
    ok = ok && pass;
  };

  bool eps_pass = true;
  for (double e : cs.meta.eps) eps_pass = eps_pass && e <= 1e-7;
  line(eps_pass, "step-2 slacks <= 1e-7: [" + join(cs.meta.eps) + "]");

  const WitnessReport wr = check_witnesses(spec, cs);
  for (const auto& c : wr.checks) {
    line(c.passed, "witness " + c.name + ": reconstruction " + fmt(c.relative_error, "%.2e") + ", consistency " +
                       fmt(c.consistency_error, "%.2e") + ", min eigenvalue " + fmt(c.min_eigenvalue, "%.2e"));
  }
  for (const auto& m : wr.missing) line(false, "witness " + m + ": missing");

  const ResidualReport rr = sample_sos_residuals(cs, spec, a.samples, a.seed, a.workers);
  for (const auto& e : rr.entries) {
    line(e.min_value >= -rr.tolerance,
         "residual " + e.name + ": min " + fmt(e.min_value, "%.6e") + " over " + std::to_string(rr.samples) + " samples");
  }

  const Box box = hull(operating_box(spec), allowable_box(spec));
  const SafetyReport sr = sample_safety(spec, cs, box, a.samples, a.seed, a.workers);
  line(sr.violations == 0, "safe set inside allowable set: " + std::to_string(sr.violations) + " violations among " +
                               std::to_string(sr.safe_hits) + " safe samples of " + std::to_string(sr.samples));

  const VolumeEstimate vol = safe_set_volume(cs.B, box, a.samples, a.seed, a.workers);
  std::cout << "INFO safe set volume " << fmt(vol.estimate) << " +- " << fmt(vol.stderr_) << '\n';

  if (a.trajectories > 0) {
    const auto starts = sample_safe_starts(spec, cs, a.trajectories, a.seed);
    const RationalController ctrl = controller_from(cs, spec);
    std::vector<PolyEvaluator> ws;
    for (const auto& w : spec.w) ws.emplace_back(w);
    std::size_t unsafe = 0, events = 0, nondecreasing = 0;
    for (const auto& x0 : starts) {
      const Trajectory tr = simulate(spec, ctrl, x0, a.horizon, a.dt);
      bool in_a = true;
      for (const auto& x : tr.states) {
        for (const auto& w : ws) in_a = in_a && w(x) <= 1e-6;
      }
      if (!in_a) ++unsafe;
      if (tr.left_operating_region || tr.controller_violation || tr.step_underflow) ++events;
      if (!check_decrease(cs.V, tr, spec.xstar).passed()) ++nondecreasing;
    }
    const std::string of = " of " + std::to_string(starts.size()) + " trajectories";
    line(unsafe == 0, "trajectories remain in allowable set: " + std::to_string(unsafe) + " violations" + of);
    line(events == 0, "trajectories free of events: " + std::to_string(events) + " flagged" + of);
    line(nondecreasing == 0, "V decreasing outside 1e-4 ball: " + std::to_string(nondecreasing) + " failures" + of);
  }
  std::cout << (ok ? "verification passed" : "verification failed") << '\n';
  return ok ? kOk : kVerificationFailure;
}

// ---- simulate --------------------------------------------------------------

struct SimulateArgs {
  std::string problem;
  std::string certificate;
  std::vector<double> x0;
  std::size_t samples = 1;
  std::uint64_t seed = 1;
  double horizon = 5.0;
  double dt = 1e-3;
  std::string out;
};

std::string numbered_path(const std::string& out, std::size_t k) {
  const std::filesystem::path p(out);
  const std::string name = p.stem().string() + "_" + std::to_string(k) + p.extension().string();
  return (p.parent_path() / name).string();
}

int cmd_simulate(const SimulateArgs& a) {
  const LoadedProblem lp = load_problem(a.problem);
  const ProblemSpec& spec = lp.spec;
  const CertificateSet cs = load_bound_certificate(a.certificate, lp);
  std::vector<Point> starts;
  if (!a.x0.empty()) {
    if (static_cast<int>(a.x0.size()) != spec.n) {
      throw ExitError(kBadInput, "--x0 needs " + std::to_string(spec.n) + " values");
    }
    starts.push_back(Eigen::Map<const Eigen::VectorXd>(a.x0.data(), spec.n));
  } else {
    starts = sample_safe_starts(spec, cs, a.samples, a.seed);
  }
  if (starts.size() > 1 && a.out.empty()) throw ExitError(kBadInput, "several trajectories need --out");

  const RationalController ctrl = controller_from(cs, spec);
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const Trajectory tr = simulate(spec, ctrl, starts[k], a.horizon, a.dt);
    std::string target = a.out;
    if (starts.size() > 1) target = numbered_path(a.out, k);
    if (target.empty()) {
      write_trajectory_csv(std::cout, tr, cs);
    } else {
      std::ofstream os(target, std::ios::binary);
      if (!os) throw ExitError(kBadInput, "cannot write " + target);
      write_trajectory_csv(os, tr, cs);
    }
    std::cerr << "trajectory " << k << ": " << tr.size() << " states, t_end " << fmt(tr.times.back()) << ", rejected "
              << tr.rejected_steps << (tr.left_operating_region ? ", left operating region" : "")
              << (tr.entered_equilibrium_ball ? ", reached equilibrium ball" : "")
              << (tr.controller_violation ? ", controller denominator violation" : "")
              << (tr.step_underflow ? ", step size underflow" : "") << '\n';
  }
  return kOk;
}

// ---- plot-data -------------------------------------------------------------

struct PlotArgs {
  std::string problem;
  std::string certificates;
  int grid = 401;
  std::vector<int> plane{1, 2};
  std::vector<double> fix;
  std::string out;
};

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<std::string> out;
  if (::glob(pattern.c_str(), 0, nullptr, &g) == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  // Numeric-aware order so iter10 follows iter9.
  std::stable_sort(out.begin(), out.end(), [](const std::string& x, const std::string& y) {
    if (x.size() != y.size()) return x.size() < y.size();
    return x < y;
  });
  return out;
}

int cmd_plot(const PlotArgs& a) {
  const LoadedProblem lp = load_problem(a.problem);
  const ProblemSpec& spec = lp.spec;
  const auto files = expand_glob(a.certificates);
  if (files.empty()) throw ExitError(kBadInput, "no certificate matches " + a.certificates);
  if (a.plane.size() != 2) throw ExitError(kBadInput, "--plane needs two axis numbers");

  PlaneSpec plane;
  plane.axis_x = a.plane[0] - 1;
  plane.axis_y = a.plane[1] - 1;
  if (plane.axis_x < 0 || plane.axis_x >= spec.n || plane.axis_y < 0 || plane.axis_y >= spec.n ||
      plane.axis_x == plane.axis_y) {
    throw ExitError(kBadInput, "--plane axes must be two distinct state indices in 1.." + std::to_string(spec.n));
  }
  plane.fixed = Point::Zero(spec.n);
  if (!a.fix.empty()) {
    if (static_cast<int>(a.fix.size()) != spec.n) {
      throw ExitError(kBadInput, "--fix needs " + std::to_string(spec.n) + " values");
    }
    plane.fixed = Eigen::Map<const Eigen::VectorXd>(a.fix.data(), spec.n);
  }
  const Box box = operating_box(spec);
  plane.x_lo = box.lo(plane.axis_x);
  plane.x_hi = box.hi(plane.axis_x);
  plane.y_lo = box.lo(plane.axis_y);
  plane.y_hi = box.hi(plane.axis_y);

  std::vector<NamedPolynomial> polys;
  for (int i = 0; i < spec.t(); ++i) polys.push_back({"w" + std::to_string(i + 1), spec.w[static_cast<std::size_t>(i)]});
  polys.push_back({"r", spec.r});
  for (const auto& f : files) {
    const CertificateSet cs = load_bound_certificate(f, lp);
    const std::string prefix = files.size() > 1 ? std::filesystem::path(f).stem().string() + ":" : "";
    for (std::size_t i = 0; i < cs.B.size(); ++i) polys.push_back({prefix + "B" + std::to_string(i + 1), cs.B[i]});
    polys.push_back({prefix + "V", cs.V});
  }
  const SliceData data = contour_slice(polys, plane, a.grid, a.grid);
  if (a.out.empty()) {
    write_slice_csv(std::cout, data);
  } else {
    std::ofstream os(a.out, std::ios::binary);
    if (!os) throw ExitError(kBadInput, "cannot write " + a.out);
    write_slice_csv(os, data);
    const std::filesystem::path p(a.out);
    const std::string seg = (p.parent_path() / (p.stem().string() + "_segments" + p.extension().string())).string();
    std::ofstream ss(seg, std::ios::binary);
    if (!ss) throw ExitError(kBadInput, "cannot write " + seg);
    write_segments_csv(ss, data);
    std::cerr << data.samples.size() << " samples, " << data.segments.size() << " zero-level segments (" << seg << ")\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compatible control Lyapunov and barrier function synthesis"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Run the alternating synthesis and write a certificate file");
  s->add_option("problem", synth.problem, "Problem file")->required()->check(CLI::ExistingFile);
  s->add_option("--out", synth.out, "Certificate output path")->capture_default_str();
  s->add_option("--seed", synth.seed, "Override the problem's seed");
  s->add_option("--max-outer", synth.max_outer, "Override the outer iteration limit")->check(CLI::NonNegativeNumber);
  s->add_option("--threshold", synth.threshold, "Override the relative cost-change threshold")
      ->check(CLI::PositiveNumber);
  s->add_option("--checkpoint-dir", synth.checkpoint_dir, "Write iter<k>_step<s>.cert after every half-step");
  s->add_flag("--verbose", synth.verbose, "Print SDP solver progress");

  VerifyArgs verify;
  auto* v = app.add_subcommand("verify", "Check a certificate numerically");
  v->add_option("problem", verify.problem, "Problem file")->required()->check(CLI::ExistingFile);
  v->add_option("certificate", verify.certificate, "Certificate file")->required()->check(CLI::ExistingFile);
  v->add_option("--samples", verify.samples, "Monte Carlo samples")->capture_default_str()->check(CLI::PositiveNumber);
  v->add_option("--trajectories", verify.trajectories, "Simulated trajectories")->capture_default_str();
  v->add_option("--seed", verify.seed, "Sampling seed")->capture_default_str();
  v->add_option("--horizon", verify.horizon, "Simulation horizon in seconds")->capture_default_str();
  v->add_option("--dt", verify.dt, "Nominal integration step")->capture_default_str()->check(CLI::PositiveNumber);
  v->add_option("--workers", verify.workers, "Sampling threads")->capture_default_str()->check(CLI::PositiveNumber);

  SimulateArgs sim;
  auto* m = app.add_subcommand("simulate", "Simulate the closed loop and write CSV");
  m->add_option("problem", sim.problem, "Problem file")->required()->check(CLI::ExistingFile);
  m->add_option("certificate", sim.certificate, "Certificate file")->required()->check(CLI::ExistingFile);
  m->add_option("--x0", sim.x0, "Initial state, comma separated")->delimiter(',');
  m->add_option("--samples", sim.samples, "Number of initial states drawn from the safe set")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  m->add_option("--seed", sim.seed, "Sampling seed")->capture_default_str();
  m->add_option("--horizon", sim.horizon, "Simulation horizon in seconds")->capture_default_str();
  m->add_option("--dt", sim.dt, "Nominal integration step")->capture_default_str()->check(CLI::PositiveNumber);
  m->add_option("--out", sim.out, "CSV path; numbered per trajectory when several");

  PlotArgs plot;
  auto* p = app.add_subcommand("plot-data", "Sample polynomials on a coordinate plane for contour plots");
  p->add_option("problem", plot.problem, "Problem file")->required()->check(CLI::ExistingFile);
  p->add_option("certificates", plot.certificates, "Certificate file or glob of checkpoints")->required();
  p->add_option("--grid", plot.grid, "Grid points per axis")->capture_default_str()->check(CLI::Range(2, 100000));
  p->add_option("--plane", plot.plane, "Plotted state axes, 1-based")->delimiter(',')->expected(2);
  p->add_option("--fix", plot.fix, "Full state vector giving the off-plane coordinates")->delimiter(',');
  p->add_option("--out", plot.out, "CSV path; segments go to <stem>_segments<ext>");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadInput;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*v) return cmd_verify(verify);
    if (*m) return cmd_simulate(sim);
    if (*p) return cmd_plot(plot);
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code();
  } catch (const FileFormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const SpecError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  }
  return kBadInput;
}
