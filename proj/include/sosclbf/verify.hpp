#pragma once

// Numerical validation of synthesized certificates.
//
// Everything here is independent of the SDP machinery: the closed loop is
// simulated under u = p / s1, certificate polynomials are sampled on the
// operating region, and the safe set is measured by Monte Carlo. Sample i
// always draws from its own generator seeded by (seed, i), so results do not
// depend on how the index range is split across workers.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sosclbf/certs.hpp"
#include "sosclbf/poly.hpp"
#include "sosclbf/poly_io.hpp"
#include "sosclbf/sdp.hpp"

namespace sosclbf {

class CertificateViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- fast evaluation -----------------------------------------------------

// A polynomial flattened for repeated evaluation: exponents in one array,
// powers of each coordinate tabulated once per call.
class PolyEvaluator {
 public:
  PolyEvaluator() = default;
  explicit PolyEvaluator(const Polynomial& p) : n_(p.nvars()), maxdeg_(static_cast<std::size_t>(p.nvars()), 0) {
    for (const auto& [m, c] : p.terms()) {
      for (int i = 0; i < n_; ++i) {
        exps_.push_back(m[i]);
        maxdeg_[static_cast<std::size_t>(i)] = std::max(maxdeg_[static_cast<std::size_t>(i)], m[i]);
      }
      coefs_.push_back(c);
    }
    offset_.assign(static_cast<std::size_t>(n_) + 1, 0);
    for (int i = 0; i < n_; ++i) {
      offset_[static_cast<std::size_t>(i) + 1] = offset_[static_cast<std::size_t>(i)] + maxdeg_[static_cast<std::size_t>(i)] + 1;
    }
  }

  int nvars() const { return n_; }

  double operator()(const double* x) const {
    constexpr std::size_t kStack = 128;
    const auto need = static_cast<std::size_t>(offset_.back());
    std::array<double, kStack> stack;
    std::vector<double> heap;
    double* pw = stack.data();
    if (need > kStack) {
      heap.resize(need);
      pw = heap.data();
    }
    for (int i = 0; i < n_; ++i) {
      double* row = pw + offset_[static_cast<std::size_t>(i)];
      row[0] = 1.0;
      for (int e = 1; e <= maxdeg_[static_cast<std::size_t>(i)]; ++e) row[e] = row[e - 1] * x[i];
    }
    double acc = 0.0;
    const int* ex = exps_.data();
    for (double c : coefs_) {
      double term = c;
      for (int i = 0; i < n_; ++i) term *= pw[offset_[static_cast<std::size_t>(i)] + ex[i]];
      ex += n_;
      acc += term;
    }
    return acc;
  }
  double operator()(const Point& x) const {
    if (x.size() != n_) throw DimensionError("PolyEvaluator: point dimension mismatch");
    return (*this)(x.data());
  }

 private:
  int n_ = 0;
  std::vector<int> maxdeg_;
  std::vector<int> offset_{0};
  std::vector<int> exps_;
  std::vector<double> coefs_;
};

// ---- per-sample random streams -------------------------------------------

inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

inline Point uniform_in_box(const Box& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Point x(box.lo.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = box.lo(j) + (box.hi(j) - box.lo(j)) * unif(rng);
  return x;
}

// Uniform draw from {x in box : accept(x)} by rejection, using stream
// (seed, index).
inline Point sample_in(const Box& box, const std::function<bool(const Point&)>& accept, std::uint64_t seed,
                       std::uint64_t index, int max_tries = 100000) {
  auto rng = sample_rng(seed, index);
  for (int k = 0; k < max_tries; ++k) {
    Point x = uniform_in_box(box, rng);
    if (accept(x)) return x;
  }
  throw std::runtime_error("rejection sampling found no point of the target set in " + std::to_string(max_tries) +
                           " draws");
}

inline Box hull(const Box& a, const Box& b) { return {a.lo.cwiseMin(b.lo), a.hi.cwiseMax(b.hi)}; }

inline Box operating_box(const ProblemSpec& spec) { return sublevel_box(spec.r, spec.xstar); }

// Box around the allowable set: the intersection of the boxes of each
// {w_i <= 0}.
inline Box allowable_box(const ProblemSpec& spec) {
  if (spec.t() == 0) return operating_box(spec);
  Box out{Point::Constant(spec.n, -std::numeric_limits<double>::infinity()),
          Point::Constant(spec.n, std::numeric_limits<double>::infinity())};
  for (int i = 0; i < spec.t(); ++i) {
    const auto& wi = spec.w[static_cast<std::size_t>(i)];
    const Point& c = spec.centers[static_cast<std::size_t>(i)].x;
    const Box b = sublevel_box(wi, wi.evaluate(c) <= 0.0 ? c : spec.xstar);
    out.lo = out.lo.cwiseMax(b.lo);
    out.hi = out.hi.cwiseMin(b.hi);
  }
  if ((out.hi.array() < out.lo.array()).any()) return operating_box(spec);
  return out;
}

// Runs body(begin, end, slot) over [0, count) split into contiguous chunks.
inline void parallel_chunks(std::size_t count, int workers,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || count < 2 * w) {
    body(0, count, 0);
    return;
  }
  std::vector<std::thread> threads;
  const std::size_t chunk = (count + w - 1) / w;
  for (std::size_t k = 0; k < w; ++k) {
    const std::size_t b = k * chunk;
    const std::size_t e = std::min(count, b + chunk);
    if (b >= e) break;
    threads.emplace_back(body, b, e, k);
  }
  for (auto& t : threads) t.join();
}

// ---- controller and closed loop -------------------------------------------

struct RationalController {
  PolyVector p;
  Polynomial s1;
  double eps_s1 = 0.0;
};

inline RationalController controller_from(const CertificateSet& cs, const ProblemSpec& spec) {
  return {cs.p, cs.s1, spec.eps_s1};
}

inline Eigen::VectorXd eval_controller(const RationalController& ctrl, const Point& x) {
  const double den = ctrl.s1.evaluate(x);
  if (!(den >= 0.5 * ctrl.eps_s1)) {
    throw CertificateViolation("s1(x) = " + format_double(den) + " is below eps_s1 / 2 = " +
                               format_double(0.5 * ctrl.eps_s1));
  }
  return evaluate(ctrl.p, x) / den;
}

inline Eigen::VectorXd closed_loop_field(const ProblemSpec& spec, const RationalController& ctrl, const Point& x) {
  if (x.size() != spec.n) throw DimensionError("closed_loop_field: state dimension mismatch");
  if (static_cast<int>(ctrl.p.size()) != spec.m) throw DimensionError("closed_loop_field: controller dimension mismatch");
  const Eigen::VectorXd u = eval_controller(ctrl, x);
  return evaluate(spec.f, x) + spec.G.evaluate(x) * u;
}

// The closed loop with every polynomial flattened.
class ClosedLoop {
 public:
  ClosedLoop(const ProblemSpec& spec, const RationalController& ctrl)
      : n_(spec.n), m_(spec.m), s1_(ctrl.s1), eps_s1_(ctrl.eps_s1) {
    if (static_cast<int>(ctrl.p.size()) != spec.m) throw DimensionError("ClosedLoop: controller dimension mismatch");
    for (const auto& fi : spec.f) f_.emplace_back(fi);
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < m_; ++j) G_.emplace_back(spec.G(i, j));
    }
    for (const auto& pj : ctrl.p) p_.emplace_back(pj);
  }

  int n() const { return n_; }
  int m() const { return m_; }

  Eigen::VectorXd input(const Point& x) const {
    const double den = s1_(x);
    if (!(den >= 0.5 * eps_s1_)) {
      throw CertificateViolation("s1(x) = " + format_double(den) + " is below eps_s1 / 2 = " +
                                 format_double(0.5 * eps_s1_));
    }
    Eigen::VectorXd u(m_);
    for (int j = 0; j < m_; ++j) u(j) = p_[static_cast<std::size_t>(j)](x) / den;
    return u;
  }

  Eigen::VectorXd field(const Point& x) const {
    const Eigen::VectorXd u = input(x);
    Eigen::VectorXd dx(n_);
    for (int i = 0; i < n_; ++i) {
      double acc = f_[static_cast<std::size_t>(i)](x);
      for (int j = 0; j < m_; ++j) acc += G_[static_cast<std::size_t>(i * m_ + j)](x) * u(j);
      dx(i) = acc;
    }
    return dx;
  }

 private:
  int n_;
  int m_;
  std::vector<PolyEvaluator> f_;
  std::vector<PolyEvaluator> G_;
  std::vector<PolyEvaluator> p_;
  PolyEvaluator s1_;
  double eps_s1_;
};

// ---- integration ----------------------------------------------------------

using VectorField = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

inline Eigen::VectorXd rk4_step(const VectorField& field, const Eigen::VectorXd& x, double h) {
  const Eigen::VectorXd k1 = field(x);
  const Eigen::VectorXd k2 = field(x + 0.5 * h * k1);
  const Eigen::VectorXd k3 = field(x + 0.5 * h * k2);
  const Eigen::VectorXd k4 = field(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Plain fixed-step RK4 from 0 to T; the last step is shortened to land on T.
inline Eigen::VectorXd integrate_rk4(const VectorField& field, Eigen::VectorXd x, double T, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate_rk4: dt must be positive");
  double t = 0.0;
  while (t < T) {
    const double h = std::min(dt, T - t);
    x = rk4_step(field, x, h);
    t = (T - t <= dt) ? T : t + h;
  }
  return x;
}

struct Trajectory {
  std::vector<double> times;
  std::vector<Point> states;
  std::vector<Eigen::VectorXd> inputs;
  bool left_operating_region = false;
  bool entered_equilibrium_ball = false;
  bool controller_violation = false;
  bool step_underflow = false;
  int rejected_steps = 0;

  std::size_t size() const { return times.size(); }
};

struct SimulateOptions {
  double local_tolerance = 1e-8;
  double equilibrium_radius = 1e-4;
  int max_halvings = 40;
};

// RK4 at the nominal step dt. Each step is compared with two half steps;
// when they differ by more than the tolerance (max-norm) the step is halved
// and retried, and the step grows back toward dt once the estimate is well
// below tolerance. The two-half-step result is the one recorded. Stops at T
// or as soon as a state leaves {r <= 0}.
inline Trajectory simulate(const ProblemSpec& spec, const RationalController& ctrl, const Point& x0, double T,
                           double dt, const SimulateOptions& opts = {}) {
  if (!(dt > 0.0)) throw std::invalid_argument("simulate: dt must be positive");
  if (x0.size() != spec.n) throw DimensionError("simulate: initial state dimension mismatch");
  const ClosedLoop loop(spec, ctrl);
  const PolyEvaluator r(spec.r);
  const VectorField field = [&](const Eigen::VectorXd& x) { return loop.field(x); };

  Trajectory traj;
  auto record = [&](double t, const Point& x) {
    traj.times.push_back(t);
    traj.states.push_back(x);
    traj.inputs.push_back(loop.input(x));
    if ((x - spec.xstar).norm() <= opts.equilibrium_radius) traj.entered_equilibrium_ball = true;
  };

  Point x = x0;
  double t = 0.0;
  try {
    record(t, x);
    if (r(x) > 0.0) {
      traj.left_operating_region = true;
      return traj;
    }
    double h = dt;
    const double h_min = dt * std::ldexp(1.0, -opts.max_halvings);
    while (t < T) {
      const double step = std::min(h, T - t);
      const Eigen::VectorXd full = rk4_step(field, x, step);
      const Eigen::VectorXd mid = rk4_step(field, x, 0.5 * step);
      const Eigen::VectorXd half = rk4_step(field, mid, 0.5 * step);
      const double err = (full - half).cwiseAbs().maxCoeff();
      if (!(err <= opts.local_tolerance)) {
        ++traj.rejected_steps;
        h = 0.5 * step;
        if (h < h_min) {
          traj.step_underflow = true;
          break;
        }
        continue;
      }
      x = half;
      t = (T - t <= step) ? T : t + step;
      record(t, x);
      if (r(x) > 0.0) {
        traj.left_operating_region = true;
        break;
      }
      if (err < opts.local_tolerance / 64.0 && h < dt) h = std::min(dt, 2.0 * h);
    }
  } catch (const CertificateViolation&) {
    traj.controller_violation = true;
  }
  return traj;
}

// ---- checks ---------------------------------------------------------------

struct DecreaseReport {
  std::size_t steps_checked = 0;
  std::size_t steps_decreasing = 0;
  double worst_increase = 0.0;
  double fraction() const {
    return steps_checked == 0 ? 1.0 : static_cast<double>(steps_decreasing) / static_cast<double>(steps_checked);
  }
  bool passed() const { return steps_decreasing == steps_checked; }
};

// A step counts when its starting state lies outside the ball of the given
// radius around x*.
inline DecreaseReport check_decrease(const Polynomial& V, const Trajectory& traj, const Point& xstar,
                                     double radius = 1e-4) {
  DecreaseReport rep;
  const PolyEvaluator ev(V);
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    if ((traj.states[k] - xstar).norm() <= radius) continue;
    const double a = ev(traj.states[k]);
    const double b = ev(traj.states[k + 1]);
    ++rep.steps_checked;
    if (b < a) {
      ++rep.steps_decreasing;
    } else {
      rep.worst_increase = std::max(rep.worst_increase, b - a);
    }
  }
  return rep;
}

struct NamedPolynomial {
  std::string name;
  Polynomial poly;
};

// Every polynomial the certificate claims to be nonnegative: the SOS
// unknowns themselves and the constraint polynomials built from them.
inline std::vector<NamedPolynomial> constraint_polynomials(const ProblemSpec& spec, const CertificateSet& cs) {
  std::vector<NamedPolynomial> out;
  out.push_back({"V", cs.V});
  out.push_back({"s1_positivity", cs.s1 - spec.eps_s1});
  out.push_back({"s2", cs.s2});
  for (int i = 0; i < spec.t(); ++i) out.push_back({"s3_" + std::to_string(i + 1), cs.s3[static_cast<std::size_t>(i)]});
  for (int i = 0; i < spec.t(); ++i) out.push_back({"s4_" + std::to_string(i + 1), cs.s4[static_cast<std::size_t>(i)]});
  out.push_back({"clf", clf_polynomial(spec, cs)});
  for (int i = 0; i < spec.t(); ++i) out.push_back({"cbf_" + std::to_string(i + 1), cbf_polynomial(spec, cs, i)});
  for (int i = 0; i < spec.t(); ++i) {
    out.push_back({"containment_" + std::to_string(i + 1), containment_polynomial(spec, cs, i)});
  }
  return out;
}

struct ResidualEntry {
  std::string name;
  double min_value = std::numeric_limits<double>::infinity();
  Point argmin;
};

struct ResidualReport {
  std::size_t samples = 0;
  double tolerance = 1e-6;
  std::vector<ResidualEntry> entries;
  bool passed() const {
    for (const auto& e : entries) {
      if (!(e.min_value >= -tolerance)) return false;
    }
    return true;
  }
};

// Minimum of each constraint polynomial over N uniform samples of
// {r <= 0}, drawn by rejection from the box around it.
inline ResidualReport sample_sos_residuals(const CertificateSet& cs, const ProblemSpec& spec, std::size_t N,
                                           std::uint64_t seed = 1, int workers = 1, double tolerance = 1e-6) {
  if (N == 0) throw std::invalid_argument("sample_sos_residuals: N must be at least 1");
  const auto named = constraint_polynomials(spec, cs);
  std::vector<PolyEvaluator> evs;
  for (const auto& np : named) evs.emplace_back(np.poly);
  const PolyEvaluator r(spec.r);
  const Box box = operating_box(spec);
  const auto in_op = [&](const Point& x) { return r(x) <= 0.0; };

  const auto w = static_cast<std::size_t>(std::max(1, workers));
  std::vector<std::vector<ResidualEntry>> partial(w, std::vector<ResidualEntry>(named.size()));
  parallel_chunks(N, workers, [&](std::size_t b, std::size_t e, std::size_t slot) {
    auto& mine = partial[slot];
    for (std::size_t i = b; i < e; ++i) {
      const Point x = sample_in(box, in_op, seed, i);
      for (std::size_t k = 0; k < evs.size(); ++k) {
        const double v = evs[k](x);
        if (v < mine[k].min_value) {
          mine[k].min_value = v;
          mine[k].argmin = x;
        }
      }
    }
  });

  ResidualReport rep;
  rep.samples = N;
  rep.tolerance = tolerance;
  for (std::size_t k = 0; k < named.size(); ++k) {
    ResidualEntry best{named[k].name, std::numeric_limits<double>::infinity(), Point()};
    for (const auto& part : partial) {
      if (part[k].min_value < best.min_value) {
        best.min_value = part[k].min_value;
        best.argmin = part[k].argmin;
      }
    }
    rep.entries.push_back(std::move(best));
  }
  return rep;
}

struct WitnessCheck {
  std::string name;
  double relative_error = 0.0;  // max |Z'QZ - asserted| / max(1, max |asserted|)
  double consistency_error = 0.0;  // against the polynomial rebuilt from the certificate
  double min_eigenvalue = 0.0;
  bool passed = false;
};

struct WitnessReport {
  std::vector<WitnessCheck> checks;
  std::vector<std::string> missing;
  bool passed() const {
    if (!missing.empty()) return false;
    for (const auto& c : checks) {
      if (!c.passed) return false;
    }
    return true;
  }
};

// Checks each stored Gram matrix: PSD, reproduces its asserted polynomial,
// and that polynomial is the one the certificate polynomials imply.
inline WitnessReport check_witnesses(const ProblemSpec& spec, const CertificateSet& cs, double rel_tol = 1e-6,
                                     double psd_tol = 1e-8) {
  WitnessReport rep;
  std::vector<NamedPolynomial> expected = constraint_polynomials(spec, cs);
  for (const auto& ex : expected) {
    const SosWitness* w = cs.witness(ex.name);
    if (!w) {
      rep.missing.push_back(ex.name);
      continue;
    }
    WitnessCheck c;
    c.name = ex.name;
    const double scale = std::max(1.0, w->polynomial.max_abs_coefficient());
    c.relative_error = max_coefficient_difference(w->reconstruct(), w->polynomial) / scale;
    c.consistency_error = max_coefficient_difference(w->polynomial, ex.poly) / scale;
    c.min_eigenvalue = psd_project_check(w->gram, psd_tol).min_eigenvalue;
    c.passed = c.relative_error <= rel_tol && c.consistency_error <= rel_tol && c.min_eigenvalue >= -psd_tol;
    rep.checks.push_back(std::move(c));
  }
  return rep;
}

struct VolumeEstimate {
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::size_t hits = 0;
  std::size_t samples = 0;
};

// Volume of {x in box : B_i(x) <= 0 for all i} by uniform sampling.
inline VolumeEstimate safe_set_volume(const std::vector<Polynomial>& B, const Box& box, std::size_t N,
                                      std::uint64_t seed = 1, int workers = 1) {
  if (N == 0) throw std::invalid_argument("safe_set_volume: N must be at least 1");
  std::vector<PolyEvaluator> evs;
  for (const auto& b : B) evs.emplace_back(b);
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  std::vector<std::size_t> hits(w, 0);
  parallel_chunks(N, workers, [&](std::size_t b, std::size_t e, std::size_t slot) {
    for (std::size_t i = b; i < e; ++i) {
      auto rng = sample_rng(seed, i);
      const Point x = uniform_in_box(box, rng);
      bool inside = true;
      for (const auto& ev : evs) inside = inside && ev(x) <= 0.0;
      if (inside) ++hits[slot];
    }
  });
  VolumeEstimate out;
  out.samples = N;
  for (auto h : hits) out.hits += h;
  const double p = static_cast<double>(out.hits) / static_cast<double>(N);
  const double vol = box.volume();
  out.estimate = p * vol;
  out.stderr_ = vol * std::sqrt(p * (1.0 - p) / static_cast<double>(N));
  return out;
}

struct SafetyReport {
  std::size_t samples = 0;
  std::size_t safe_hits = 0;
  std::size_t violations = 0;
  Point first_violation;
};

// Counts samples with every B_i <= 0 but some w_i above the tolerance.
inline SafetyReport sample_safety(const ProblemSpec& spec, const CertificateSet& cs, const Box& box, std::size_t N,
                                  std::uint64_t seed = 1, int workers = 1, double w_tol = 1e-6) {
  if (N == 0) throw std::invalid_argument("sample_safety: N must be at least 1");
  std::vector<PolyEvaluator> bs, ws;
  for (const auto& b : cs.B) bs.emplace_back(b);
  for (const auto& wi : spec.w) ws.emplace_back(wi);
  const auto wk = static_cast<std::size_t>(std::max(1, workers));
  std::vector<SafetyReport> part(wk);
  parallel_chunks(N, workers, [&](std::size_t b, std::size_t e, std::size_t slot) {
    auto& mine = part[slot];
    for (std::size_t i = b; i < e; ++i) {
      auto rng = sample_rng(seed, i);
      const Point x = uniform_in_box(box, rng);
      bool safe = true;
      for (const auto& ev : bs) safe = safe && ev(x) <= 0.0;
      if (!safe) continue;
      ++mine.safe_hits;
      bool allowed = true;
      for (const auto& ev : ws) allowed = allowed && ev(x) <= w_tol;
      if (!allowed) {
        if (mine.violations == 0) mine.first_violation = x;
        ++mine.violations;
      }
    }
  });
  SafetyReport out;
  out.samples = N;
  for (const auto& p : part) {
    out.safe_hits += p.safe_hits;
    if (out.violations == 0 && p.violations > 0) out.first_violation = p.first_violation;
    out.violations += p.violations;
  }
  return out;
}

// Initial states drawn uniformly from the safe set intersected with the
// operating region.
inline std::vector<Point> sample_safe_starts(const ProblemSpec& spec, const CertificateSet& cs, std::size_t K,
                                             std::uint64_t seed = 1) {
  std::vector<PolyEvaluator> bs;
  for (const auto& b : cs.B) bs.emplace_back(b);
  const PolyEvaluator r(spec.r);
  const Box box = operating_box(spec);
  const auto accept = [&](const Point& x) {
    if (r(x) > 0.0) return false;
    for (const auto& ev : bs) {
      if (ev(x) > 0.0) return false;
    }
    return true;
  };
  std::vector<Point> out;
  for (std::size_t k = 0; k < K; ++k) out.push_back(sample_in(box, accept, seed, k, 1000000));
  return out;
}

// ---- plane slices ---------------------------------------------------------

struct PlaneSpec {
  int axis_x = 0;
  int axis_y = 1;
  Point fixed;  // values of the remaining coordinates (full vector; axis entries ignored)
  double x_lo = -1.0;
  double x_hi = 1.0;
  double y_lo = -1.0;
  double y_hi = 1.0;
};

struct SliceSample {
  double x = 0.0;
  double y = 0.0;
  double value = 0.0;
  std::string poly_id;
};

struct SliceSegment {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
  std::string poly_id;
};

struct SliceData {
  std::vector<SliceSample> samples;
  std::vector<SliceSegment> segments;
};

namespace detail {

// Zero-level segments of one grid cell with corner values v (counter-
// clockwise from the lower left) at corners c. Saddle cells are split by the
// sign of the cell-centre average.
inline void march_cell(const std::array<double, 4>& v, const std::array<std::array<double, 2>, 4>& c,
                       const std::string& id, std::vector<SliceSegment>& out) {
  int mask = 0;
  for (int k = 0; k < 4; ++k) {
    if (v[static_cast<std::size_t>(k)] <= 0.0) mask |= 1 << k;
  }
  if (mask == 0 || mask == 15) return;
  auto edge_point = [&](int a, int b) {
    const auto ia = static_cast<std::size_t>(a);
    const auto ib = static_cast<std::size_t>(b);
    const double t = v[ia] / (v[ia] - v[ib]);
    return std::array<double, 2>{c[ia][0] + t * (c[ib][0] - c[ia][0]), c[ia][1] + t * (c[ib][1] - c[ia][1])};
  };
  // Edge k joins corner k and corner k+1.
  auto crosses = [&](int k) { return ((mask >> k) & 1) != ((mask >> ((k + 1) % 4)) & 1); };
  std::vector<int> edges;
  for (int k = 0; k < 4; ++k) {
    if (crosses(k)) edges.push_back(k);
  }
  auto emit = [&](int ea, int eb) {
    const auto pa = edge_point(ea, (ea + 1) % 4);
    const auto pb = edge_point(eb, (eb + 1) % 4);
    out.push_back({pa[0], pa[1], pb[0], pb[1], id});
  };
  if (edges.size() == 2) {
    emit(edges[0], edges[1]);
    return;
  }
  const double centre = 0.25 * (v[0] + v[1] + v[2] + v[3]);
  const bool centre_in = centre <= 0.0;
  const bool corner0_in = (mask & 1) != 0;
  if (centre_in == corner0_in) {
    emit(0, 1);
    emit(2, 3);
  } else {
    emit(3, 0);
    emit(1, 2);
  }
}

}  // namespace detail

// Grid samples of each polynomial on a coordinate plane plus the
// marching-squares zero level.
inline SliceData contour_slice(const std::vector<NamedPolynomial>& polys, const PlaneSpec& plane, int nx, int ny) {
  if (nx < 2 || ny < 2) throw std::invalid_argument("contour_slice: grid must be at least 2 x 2");
  SliceData out;
  for (const auto& np : polys) {
    const int n = np.poly.nvars();
    if (plane.axis_x < 0 || plane.axis_x >= n || plane.axis_y < 0 || plane.axis_y >= n || plane.axis_x == plane.axis_y) {
      throw DimensionError("contour_slice: plane axes out of range");
    }
    Point x = plane.fixed.size() == n ? plane.fixed : Point::Zero(n);
    const PolyEvaluator ev(np.poly);
    std::vector<double> xs(static_cast<std::size_t>(nx)), ys(static_cast<std::size_t>(ny));
    for (int i = 0; i < nx; ++i) xs[static_cast<std::size_t>(i)] = plane.x_lo + (plane.x_hi - plane.x_lo) * i / (nx - 1);
    for (int j = 0; j < ny; ++j) ys[static_cast<std::size_t>(j)] = plane.y_lo + (plane.y_hi - plane.y_lo) * j / (ny - 1);
    std::vector<double> grid(static_cast<std::size_t>(nx * ny));
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        x(plane.axis_x) = xs[static_cast<std::size_t>(i)];
        x(plane.axis_y) = ys[static_cast<std::size_t>(j)];
        const double v = ev(x);
        grid[static_cast<std::size_t>(j * nx + i)] = v;
        out.samples.push_back({xs[static_cast<std::size_t>(i)], ys[static_cast<std::size_t>(j)], v, np.name});
      }
    }
    auto at = [&](int i, int j) { return grid[static_cast<std::size_t>(j * nx + i)]; };
    for (int j = 0; j + 1 < ny; ++j) {
      for (int i = 0; i + 1 < nx; ++i) {
        const auto xi = static_cast<std::size_t>(i);
        const auto yj = static_cast<std::size_t>(j);
        const std::array<double, 4> v{at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)};
        const std::array<std::array<double, 2>, 4> c{{{xs[xi], ys[yj]},
                                                      {xs[xi + 1], ys[yj]},
                                                      {xs[xi + 1], ys[yj + 1]},
                                                      {xs[xi], ys[yj + 1]}}};
        detail::march_cell(v, c, np.name, out.segments);
      }
    }
  }
  return out;
}

// ---- CSV ------------------------------------------------------------------

inline void write_slice_csv(std::ostream& os, const SliceData& d) {
  os << "x1,x2,value,poly_id\n";
  for (const auto& s : d.samples) {
    os << format_double(s.x) << ',' << format_double(s.y) << ',' << format_double(s.value) << ',' << s.poly_id << '\n';
  }
}

inline void write_segments_csv(std::ostream& os, const SliceData& d) {
  os << "x1_start,x2_start,x1_end,x2_end,poly_id\n";
  for (const auto& s : d.segments) {
    os << format_double(s.x0) << ',' << format_double(s.y0) << ',' << format_double(s.x1) << ',' << format_double(s.y1)
       << ',' << s.poly_id << '\n';
  }
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj, const CertificateSet& cs) {
  const int n = cs.V.nvars();
  const int m = static_cast<int>(cs.p.size());
  os << 't';
  for (int i = 0; i < n; ++i) os << ",x" << i + 1;
  for (int j = 0; j < m; ++j) os << ",u" << j + 1;
  os << ",V";
  for (std::size_t i = 0; i < cs.B.size(); ++i) os << ",B" << i + 1;
  os << '\n';
  const PolyEvaluator V(cs.V);
  std::vector<PolyEvaluator> B;
  for (const auto& b : cs.B) B.emplace_back(b);
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const Point& x = traj.states[k];
    os << format_double(traj.times[k]);
    for (int i = 0; i < n; ++i) os << ',' << format_double(x(i));
    for (int j = 0; j < m; ++j) os << ',' << format_double(traj.inputs[k](j));
    os << ',' << format_double(V(x));
    for (const auto& b : B) os << ',' << format_double(b(x));
    os << '\n';
  }
}

}  // namespace sosclbf
