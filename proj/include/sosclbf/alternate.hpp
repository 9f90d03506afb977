#pragma once

// The alternating synthesis loop.
//
//   Step 1: hold (s1, p, pm1) fixed; find V, B_i, s2, s3_i, s4_i minimizing
//           sum_i tr(Q_B,i) + (B_i(x_c,i) - B_c,i)^2.
//   Step 2: hold (V, B_i) fixed; find s1, p, pm1_i, s2, s3_i and slacks
//           eps_i minimizing sum_i eps_i.
//
// A feasible Step 1 makes the previous controller with eps = 0 feasible for
// Step 2, so the slacks end up <= 0 and the next Step 1 stays feasible.
// Iteration stops when the relative cost change drops below the threshold.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sosclbf/certs.hpp"
#include "sosclbf/io.hpp"
#include "sosclbf/sdp.hpp"
#include "sosclbf/sos.hpp"

namespace sosclbf {

struct SolveStats {
  SdpStatus status = SdpStatus::NumericalFailure;
  int iterations = 0;
  double seconds = 0.0;
  CompileStats compile;
};

struct Step1Result {
  SolveStats stats;
  double cost = std::numeric_limits<double>::quiet_NaN();
  Polynomial V;
  std::vector<Polynomial> B;
  Polynomial s2;
  std::vector<Polynomial> s3;
  std::vector<Polynomial> s4;
  std::vector<SosWitness> witnesses;
  std::vector<std::pair<std::string, double>> diagnosis;
  bool ok() const { return stats.status == SdpStatus::Optimal; }
};

struct Step2Result {
  SolveStats stats;
  ControllerTriple controller;
  Polynomial s2;
  std::vector<Polynomial> s3;
  std::vector<double> eps;
  std::vector<SosWitness> witnesses;
  std::vector<std::pair<std::string, double>> diagnosis;
  bool ok() const { return stats.status == SdpStatus::Optimal; }
};

struct IterationRecord {
  int k = 0;
  double cost = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> eps;
  SolveStats step1;
  SolveStats step2;
  CertificateSet snapshot;
};

struct AlternateConfig {
  int max_outer = 30;
  double cost_threshold = 1e-3;
  double eps_tolerance = 1e-7;
  SdpOptions solver;
  std::string checkpoint_dir;
  std::string problem_hash;
  std::function<void(const IterationRecord&)> on_iteration;
  std::function<void(const std::string&)> on_warning;
};

enum class RunStatus { Converged, MaxOuter, InitInfeasible, SolverFailure };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return "Converged";
    case RunStatus::MaxOuter: return "MaxOuter";
    case RunStatus::InitInfeasible: return "InitInfeasible";
    case RunStatus::SolverFailure: return "SolverFailure";
  }
  return "Unknown";
}

struct RunResult {
  RunStatus status = RunStatus::MaxOuter;
  bool has_certificate = false;
  CertificateSet best;
  std::vector<IterationRecord> history;
  std::string message;
  std::vector<std::pair<std::string, double>> diagnosis;
};

namespace detail {

template <SdpBackend Solver>
std::pair<SdpSolution, SolveStats> solve_program(const SosProgram& prog, const CompiledProgram& compiled,
                                                 const Solver& solver, const SdpOptions& opts) {
  (void)prog;
  const auto t0 = std::chrono::steady_clock::now();
  SdpSolution sol = solver.solve(compiled.problem, opts);
  int iterations = sol.iterations;
  // A numerically stuck solve is retried once with shorter steps and more
  // refinement; both attempts are deterministic.
  if (sol.status == SdpStatus::NumericalFailure || sol.status == SdpStatus::MaxIters) {
    SdpOptions retry = opts;
    retry.step_fraction = std::min(opts.step_fraction, 0.9);
    retry.refinement_passes = std::max(opts.refinement_passes, 4);
    SdpSolution second = solver.solve(compiled.problem, retry);
    iterations += second.iterations;
    if (second.status != SdpStatus::NumericalFailure && second.status != SdpStatus::MaxIters) sol = std::move(second);
  }
  const auto t1 = std::chrono::steady_clock::now();
  SolveStats st;
  st.status = sol.status;
  st.iterations = iterations;
  st.seconds = std::chrono::duration<double>(t1 - t0).count();
  st.compile = compiled.stats;
  return {std::move(sol), st};
}

inline std::vector<Polynomial> substitute_all(const std::vector<ParamPolynomial>& ps, const std::vector<double>& v) {
  std::vector<Polynomial> out;
  for (const auto& p : ps) out.push_back(p.substitute(v));
  return out;
}

}  // namespace detail

template <SdpBackend Solver = InteriorPointSolver>
Step1Result step1(const ProblemSpec& spec, const ControllerTriple& ctrl, const SdpOptions& opts = {},
                  const Solver& solver = {}) {
  const Step1Program s = build_step1_program(spec, ctrl);
  const CompiledProgram compiled = s.program.compile();
  auto [sol, stats] = detail::solve_program(s.program, compiled, solver, opts);
  Step1Result r;
  r.stats = stats;
  if (sol.status == SdpStatus::Infeasible) r.diagnosis = diagnose_infeasibility(compiled, sol);
  if (!r.ok()) return r;
  const std::vector<double> v = compiled.values(sol);
  r.cost = s.program.objective().evaluate(v) - s.regularizer.evaluate(v);
  r.V = s.V.substitute(v);
  r.B = detail::substitute_all(s.B, v);
  r.s2 = s.s2.substitute(v);
  r.s3 = detail::substitute_all(s.s3, v);
  r.s4 = detail::substitute_all(s.s4, v);
  r.witnesses = extract_witnesses(s.statements, s.program, v);
  return r;
}

template <SdpBackend Solver = InteriorPointSolver>
Step2Result step2(const ProblemSpec& spec, const Polynomial& V, const std::vector<Polynomial>& B,
                  const SdpOptions& opts = {}, const Solver& solver = {}) {
  const Step2Program s = build_step2_program(spec, V, B);
  const CompiledProgram compiled = s.program.compile();
  auto [sol, stats] = detail::solve_program(s.program, compiled, solver, opts);
  Step2Result r;
  r.stats = stats;
  if (sol.status == SdpStatus::Infeasible) r.diagnosis = diagnose_infeasibility(compiled, sol);
  if (!r.ok()) return r;
  const std::vector<double> v = compiled.values(sol);
  r.controller.s1 = s.s1.substitute(v);
  r.controller.p = detail::substitute_all(s.p, v);
  r.controller.pm1 = detail::substitute_all(s.pm1, v);
  r.s2 = s.s2.substitute(v);
  r.s3 = detail::substitute_all(s.s3, v);
  for (const auto& e : s.eps) r.eps.push_back(v[static_cast<std::size_t>(e.index)]);
  r.witnesses = extract_witnesses(s.statements, s.program, v);
  return r;
}

inline bool check_monotone(const std::vector<double>& costs, double slack = 1e-6) {
  for (std::size_t k = 1; k < costs.size(); ++k) {
    if (!(costs[k] <= costs[k - 1] + slack)) return false;
  }
  return true;
}

inline bool check_monotone(const std::vector<IterationRecord>& history, double slack = 1e-6) {
  std::vector<double> costs;
  for (const auto& r : history) {
    if (r.k > 0 && std::isfinite(r.cost)) costs.push_back(r.cost);
  }
  return check_monotone(costs, slack);
}

// Certificate set after Step 1: the fixed controller plus the new
// certificates.
inline CertificateSet merge_step1(const ControllerTriple& ctrl, const Step1Result& s1) {
  CertificateSet cs;
  cs.V = s1.V;
  cs.B = s1.B;
  cs.s1 = ctrl.s1;
  cs.p = ctrl.p;
  cs.pm1 = ctrl.pm1;
  cs.s2 = s1.s2;
  cs.s3 = s1.s3;
  cs.s4 = s1.s4;
  cs.witnesses = s1.witnesses;
  cs.meta.stage = 1;
  cs.meta.cost = s1.cost;
  return cs;
}

// Final set after Step 2: V, B_i, s4_i and containment from Step 1; the
// controller, s2, s3_i, CLF and CBF witnesses from Step 2. The CBF Gram
// matrices absorb the slack so they certify the constraint without eps.
inline CertificateSet merge_step2(const CertificateSet& after_step1, const Step2Result& s2) {
  CertificateSet cs = after_step1;
  cs.s1 = s2.controller.s1;
  cs.p = s2.controller.p;
  cs.pm1 = s2.controller.pm1;
  cs.s2 = s2.s2;
  cs.s3 = s2.s3;
  cs.meta.stage = 2;
  cs.meta.eps = s2.eps;
  std::vector<SosWitness> witnesses;
  for (const auto& w : after_step1.witnesses) {
    if (w.name == "V" || w.name.rfind("s4_", 0) == 0 || w.name.rfind("containment_", 0) == 0) witnesses.push_back(w);
  }
  for (auto w : s2.witnesses) {
    if (w.name.rfind("cbf_", 0) == 0) {
      const int i = std::stoi(w.name.substr(4)) - 1;
      const double eps = s2.eps[static_cast<std::size_t>(i)];
      const Monomial one(w.polynomial.nvars());
      w.polynomial.add_term(one, -eps);
      for (std::size_t b = 0; b < w.basis.size(); ++b) {
        if (w.basis[b].is_constant()) w.gram(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b)) -= eps;
      }
    }
    witnesses.push_back(std::move(w));
  }
  cs.witnesses = std::move(witnesses);
  return cs;
}

inline ControllerTriple controller_of(const CertificateSet& cs) { return {cs.s1, cs.p, cs.pm1}; }

namespace detail {

inline void write_checkpoint(const AlternateConfig& cfg, const CertificateSet& cs) {
  if (cfg.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(cfg.checkpoint_dir);
  const std::string name =
      "iter" + std::to_string(cs.meta.iteration) + "_step" + std::to_string(cs.meta.stage) + ".cert";
  save_certificate((std::filesystem::path(cfg.checkpoint_dir) / name).string(), cs);
}

inline bool eps_ok(const std::vector<double>& eps, double tol) {
  for (double e : eps) {
    if (!(e <= tol)) return false;
  }
  return true;
}

inline std::string format_diagnosis(const std::vector<std::pair<std::string, double>>& d) {
  std::string out;
  for (std::size_t i = 0; i < d.size() && i < 6; ++i) {
    if (i) out += ", ";
    out += d[i].first + " " + format_double(std::round(d[i].second * 1000.0) / 1000.0);
  }
  return out;
}

// Shared loop body. start_k is the first Step-1 iteration to run; when
// pending_step1 is set its Step 2 runs first.
template <SdpBackend Solver>
RunResult run_loop(const ProblemSpec& spec, ControllerTriple ctrl, const AlternateConfig& cfg, const Solver& solver,
                   int start_k, std::vector<double> costs, std::optional<CertificateSet> pending_step1,
                   std::optional<CertificateSet> best) {
  RunResult result;
  if (best) {
    result.best = *best;
    result.has_certificate = true;
  }
  auto warn = [&](const std::string& msg) {
    if (cfg.on_warning) cfg.on_warning(msg);
  };
  auto stamp = [&](CertificateSet& cs, int k) {
    cs.meta.iteration = k;
    cs.meta.cost_history = costs;
    cs.meta.problem_hash = cfg.problem_hash;
    cs.meta.tool_version = kToolVersion;
  };
  auto finish = [&](RunStatus status, std::string message) {
    result.status = status;
    result.message = std::move(message);
    return result;
  };

  for (int k = start_k; k <= cfg.max_outer; ++k) {
    IterationRecord rec;
    rec.k = k;
    CertificateSet after1;
    if (pending_step1 && k == start_k) {
      after1 = *pending_step1;
      rec.cost = after1.meta.cost;
      rec.step1.status = SdpStatus::Optimal;
      rec.step1.iterations = after1.meta.step1_iterations;
    } else {
      const Step1Result s1 = step1(spec, ctrl, cfg.solver, solver);
      rec.step1 = s1.stats;
      if (!s1.ok()) {
        result.diagnosis = s1.diagnosis;
        std::string msg = "step 1 at iteration " + std::to_string(k) + " returned " + to_string(s1.stats.status);
        if (!s1.diagnosis.empty()) msg += "; constraint weights: " + format_diagnosis(s1.diagnosis);
        result.history.push_back(rec);
        if (k == 1) {
          return finish(RunStatus::InitInfeasible,
                        msg + ". The initial controller does not admit certificates; raise the degree bounds "
                              "or override the initial controller in the problem file.");
        }
        return finish(RunStatus::SolverFailure, msg);
      }
      rec.cost = s1.cost;
      costs.push_back(s1.cost);
      after1 = merge_step1(ctrl, s1);
      after1.meta.step1_iterations = s1.stats.iterations;
      stamp(after1, k);
      write_checkpoint(cfg, after1);
    }

    const Step2Result s2 = step2(spec, after1.V, after1.B, cfg.solver, solver);
    rec.step2 = s2.stats;
    if (!s2.ok()) {
      result.diagnosis = s2.diagnosis;
      rec.snapshot = after1;
      result.history.push_back(rec);
      std::string msg = "step 2 at iteration " + std::to_string(k) + " returned " + to_string(s2.stats.status);
      if (!s2.diagnosis.empty()) msg += "; constraint weights: " + format_diagnosis(s2.diagnosis);
      return finish(RunStatus::SolverFailure, msg);
    }
    rec.eps = s2.eps;
    CertificateSet final_set = merge_step2(after1, s2);
    final_set.meta.step1_iterations = after1.meta.step1_iterations;
    final_set.meta.step2_iterations = s2.stats.iterations;
    stamp(final_set, k);
    write_checkpoint(cfg, final_set);
    rec.snapshot = final_set;
    result.history.push_back(rec);
    if (cfg.on_iteration) cfg.on_iteration(rec);

    if (eps_ok(s2.eps, cfg.eps_tolerance)) {
      if (!result.has_certificate || final_set.meta.cost <= result.best.meta.cost) {
        result.best = final_set;
        result.has_certificate = true;
      }
    } else {
      warn("iteration " + std::to_string(k) + ": step 2 slacks exceed tolerance; certificates not yet compatible");
    }
    ctrl = controller_of(final_set);

    if (costs.size() >= 2) {
      const double cur = costs[costs.size() - 1];
      const double prev = costs[costs.size() - 2];
      if (std::abs(cur - prev) / (1.0 + std::abs(cur)) <= cfg.cost_threshold) {
        return finish(result.has_certificate ? RunStatus::Converged : RunStatus::SolverFailure,
                      result.has_certificate ? "cost change below threshold"
                                             : "converged without a snapshot satisfying the slack tolerance");
      }
    }
  }
  if (cfg.max_outer == 0 || start_k > cfg.max_outer) {
    IterationRecord rec;
    rec.k = 0;
    rec.snapshot.s1 = ctrl.s1;
    rec.snapshot.p = ctrl.p;
    rec.snapshot.pm1 = ctrl.pm1;
    rec.snapshot.meta.iteration = 0;
    rec.snapshot.meta.stage = 2;
    if (cfg.max_outer == 0) result.history.push_back(rec);
  }
  return finish(RunStatus::MaxOuter, "reached the outer iteration limit");
}

}  // namespace detail

template <SdpBackend Solver = InteriorPointSolver>
RunResult run(const ProblemSpec& spec, const ControllerTriple& init, const AlternateConfig& cfg,
              const Solver& solver = {}) {
  return detail::run_loop(spec, init, cfg, solver, 1, {}, std::nullopt, std::nullopt);
}

// Continues from a checkpoint written by run(). A Step-1 checkpoint resumes
// with its Step 2; a Step-2 checkpoint resumes with the next Step 1.
template <SdpBackend Solver = InteriorPointSolver>
RunResult resume(const ProblemSpec& spec, const CertificateSet& checkpoint, const AlternateConfig& cfg,
                 const Solver& solver = {}) {
  const int k = checkpoint.meta.iteration;
  if (checkpoint.meta.stage == 1) {
    return detail::run_loop(spec, controller_of(checkpoint), cfg, solver, k, checkpoint.meta.cost_history, checkpoint,
                            std::nullopt);
  }
  std::optional<CertificateSet> best;
  if (detail::eps_ok(checkpoint.meta.eps, cfg.eps_tolerance)) best = checkpoint;
  return detail::run_loop(spec, controller_of(checkpoint), cfg, solver, k + 1, checkpoint.meta.cost_history,
                          std::nullopt, best);
}

}  // namespace sosclbf
