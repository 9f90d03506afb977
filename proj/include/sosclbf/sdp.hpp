#pragma once

// Standard-form semidefinite programs and a dense primal-dual interior-point
// solver.
//
//   minimize    sum_b <C_b, X_b> + c_f' x_f + c0
//   subject to  sum_b <A_ib, X_b> + F_i' x_f = b_i      i = 1..m
//               X_b PSD, x_f free.
//
// Sparse symmetric coefficients are stored once per unordered index pair:
// an entry (i, j, v) with i <= j contributes v * X(i, j) to the row.
//
// Reported residuals are max-norms in the original scaling, divided by
// 1 + |b|_inf (primal) and 1 + |C|_inf (dual). The reported dual slack is
// the PSD projection of C - A'y.
//
// The solver runs a homogeneous self-dual embedding with Nesterov-Todd
// scaling and Mehrotra predictor-corrector steps. Free variables enter the
// reduced Newton system as a saddle block [M F; F' 0].

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "sosclbf/poly.hpp"

namespace sosclbf {

struct BlockEntry {
  int block = 0;
  int row = 0;
  int col = 0;
  double value = 0.0;
};

struct FreeEntry {
  int index = 0;
  double value = 0.0;
};

struct EqualityRow {
  std::vector<BlockEntry> entries;
  std::vector<FreeEntry> free;
  double rhs = 0.0;
  std::string label;
};

struct SdpProblem {
  std::vector<int> block_dims;
  int num_free = 0;
  std::vector<EqualityRow> equalities;
  std::vector<BlockEntry> objective_blocks;
  std::vector<FreeEntry> objective_free;
  double objective_constant = 0.0;

  int num_blocks() const { return static_cast<int>(block_dims.size()); }
  int num_equalities() const { return static_cast<int>(equalities.size()); }

  // Scalar unknowns: upper triangles of all blocks plus free variables.
  long num_scalar_variables() const {
    long n = num_free;
    for (int k : block_dims) n += static_cast<long>(k) * (k + 1) / 2;
    return n;
  }

  void validate() const {
    auto check_entry = [&](const BlockEntry& e, const char* where) {
      if (e.block < 0 || e.block >= num_blocks()) throw std::invalid_argument(std::string(where) + ": block index");
      const int k = block_dims[static_cast<std::size_t>(e.block)];
      if (e.row < 0 || e.col < e.row || e.col >= k) throw std::invalid_argument(std::string(where) + ": entry index");
      if (!std::isfinite(e.value)) throw std::invalid_argument(std::string(where) + ": non-finite coefficient");
    };
    for (int k : block_dims) {
      if (k <= 0) throw std::invalid_argument("SdpProblem: block dimension must be positive");
    }
    for (const auto& row : equalities) {
      for (const auto& e : row.entries) check_entry(e, "equality");
      for (const auto& f : row.free) {
        if (f.index < 0 || f.index >= num_free) throw std::invalid_argument("equality: free index");
        if (!std::isfinite(f.value)) throw std::invalid_argument("equality: non-finite coefficient");
      }
      if (!std::isfinite(row.rhs)) throw std::invalid_argument("equality: non-finite rhs");
    }
    for (const auto& e : objective_blocks) check_entry(e, "objective");
    for (const auto& f : objective_free) {
      if (f.index < 0 || f.index >= num_free) throw std::invalid_argument("objective: free index");
    }
  }
};

enum class SdpStatus { Optimal, Infeasible, Unbounded, MaxIters, NumericalFailure };

inline const char* to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::Optimal: return "Optimal";
    case SdpStatus::Infeasible: return "Infeasible";
    case SdpStatus::Unbounded: return "Unbounded";
    case SdpStatus::MaxIters: return "MaxIters";
    case SdpStatus::NumericalFailure: return "NumericalFailure";
  }
  return "Unknown";
}

struct SdpSolution {
  SdpStatus status = SdpStatus::NumericalFailure;
  std::vector<Eigen::MatrixXd> primal_blocks;
  Eigen::VectorXd free_values;
  // Equality multipliers. For Infeasible this is the Farkas ray.
  Eigen::VectorXd dual;
  std::vector<Eigen::MatrixXd> dual_slack;
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
  int iterations = 0;
};

struct SdpOptions {
  double feasibility_tol = 1e-7;
  double gap_tol = 1e-7;
  double infeasibility_tol = 1e-8;
  int max_iterations = 200;
  int ruiz_passes = 12;
  int refinement_passes = 2;
  int stall_iterations = 10;
  double step_fraction = 0.98;
  bool verbose = false;
};

template <class S>
concept SdpBackend = requires(const S& solver, const SdpProblem& p, const SdpOptions& o) {
  { solver.solve(p, o) } -> std::same_as<SdpSolution>;
};

struct PsdCheck {
  bool passed = false;
  double min_eigenvalue = 0.0;
};

inline PsdCheck psd_project_check(const Eigen::MatrixXd& m, double tol = 1e-8) {
  if (m.rows() != m.cols()) throw DimensionError("psd_project_check: matrix not square");
  if (m.rows() == 0) return {true, 0.0};
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues()(0);
  return {lmin >= -tol, lmin};
}

// Z' Q Z for a Gram matrix Q over the monomial vector Z.
inline Polynomial extract_polynomial(const Eigen::MatrixXd& gram, const std::vector<Monomial>& basis) {
  const auto k = static_cast<Eigen::Index>(basis.size());
  if (gram.rows() != k || gram.cols() != k) throw DimensionError("extract_polynomial: Gram/basis size mismatch");
  if (basis.empty()) return Polynomial();
  Polynomial p(basis.front().nvars());
  for (Eigen::Index i = 0; i < k; ++i) {
    p.add_term(basis[static_cast<std::size_t>(i)] * basis[static_cast<std::size_t>(i)], gram(i, i));
    for (Eigen::Index j = i + 1; j < k; ++j) {
      p.add_term(basis[static_cast<std::size_t>(i)] * basis[static_cast<std::size_t>(j)], gram(i, j) + gram(j, i));
    }
  }
  return p;
}

// One equality per line: "row <i> rhs <b> | <blk> <i> <j> <v> ... | f <j> <v> ...".
inline void write_sdp_text(const SdpProblem& p, std::ostream& os) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  os << "sosclbf-sdp 1\n";
  os << "blocks " << p.num_blocks();
  for (int k : p.block_dims) os << ' ' << k;
  os << "\nfree " << p.num_free << "\nequalities " << p.num_equalities() << "\n";
  os << "objective constant " << num(p.objective_constant);
  for (const auto& e : p.objective_blocks) os << " | " << e.block << ' ' << e.row << ' ' << e.col << ' ' << num(e.value);
  for (const auto& f : p.objective_free) os << " | f " << f.index << ' ' << num(f.value);
  os << '\n';
  for (int i = 0; i < p.num_equalities(); ++i) {
    const auto& row = p.equalities[static_cast<std::size_t>(i)];
    os << "row " << i << " rhs " << num(row.rhs);
    for (const auto& e : row.entries) os << " | " << e.block << ' ' << e.row << ' ' << e.col << ' ' << num(e.value);
    for (const auto& f : row.free) os << " | f " << f.index << ' ' << num(f.value);
    os << '\n';
  }
}

namespace detail {

struct SymEntry {
  int row;
  int col;
  double value;
};

struct BlockRow {
  int eq;
  std::vector<SymEntry> entries;
};

// Problem data in solver-internal form; all quantities may be rescaled.
struct SdpData {
  int m = 0;
  int nf = 0;
  std::vector<int> dims;
  std::vector<std::vector<BlockRow>> block_rows;  // per block
  std::vector<Eigen::MatrixXd> C;
  Eigen::VectorXd cf;
  Eigen::MatrixXd F;  // m x nf
  Eigen::VectorXd b;

  int nb() const { return static_cast<int>(dims.size()); }

  Eigen::VectorXd apply_A(const std::vector<Eigen::MatrixXd>& X) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(m);
    for (int blk = 0; blk < nb(); ++blk) {
      const auto& Xb = X[static_cast<std::size_t>(blk)];
      for (const auto& br : block_rows[static_cast<std::size_t>(blk)]) {
        double acc = 0.0;
        for (const auto& e : br.entries) acc += e.value * Xb(e.row, e.col);
        out(br.eq) += acc;
      }
    }
    return out;
  }

  Eigen::MatrixXd apply_At(int blk, const Eigen::VectorXd& y) const {
    const int k = dims[static_cast<std::size_t>(blk)];
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k, k);
    for (const auto& br : block_rows[static_cast<std::size_t>(blk)]) {
      const double yi = y(br.eq);
      if (yi == 0.0) continue;
      for (const auto& e : br.entries) {
        if (e.row == e.col) {
          out(e.row, e.row) += yi * e.value;
        } else {
          out(e.row, e.col) += 0.5 * yi * e.value;
          out(e.col, e.row) += 0.5 * yi * e.value;
        }
      }
    }
    return out;
  }
};

inline double inner(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a.array() * b.array()).sum(); }

inline double max_abs(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }
inline double max_abs(const Eigen::MatrixXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

// Nesterov-Todd scaling of one block: W = G G', G^-1 X G^-T = G' S G = diag(lambda).
struct NtScaling {
  Eigen::MatrixXd G;
  Eigen::MatrixXd Ginv;
  Eigen::MatrixXd W;
  Eigen::VectorXd lambda;
};

inline bool nt_scaling(const Eigen::MatrixXd& X, const Eigen::MatrixXd& S, NtScaling& out) {
  Eigen::LLT<Eigen::MatrixXd> lx(X);
  Eigen::LLT<Eigen::MatrixXd> ls(S);
  if (lx.info() != Eigen::Success || ls.info() != Eigen::Success) return false;
  const Eigen::MatrixXd Lx = lx.matrixL();
  const Eigen::MatrixXd Ls = ls.matrixL();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Ls.transpose() * Lx, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd.singularValues();
  if (sv.minCoeff() <= 0.0 || !sv.allFinite()) return false;
  const Eigen::VectorXd inv_sqrt = sv.array().rsqrt();
  const Eigen::VectorXd sqrt_sv = sv.array().sqrt();
  out.G = Lx * svd.matrixV() * inv_sqrt.asDiagonal();
  // G^-1 = diag(sqrt(sv)) V' Lx^-1
  const Eigen::MatrixXd LxInv = Lx.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd::Identity(X.rows(), X.cols()));
  out.Ginv = sqrt_sv.asDiagonal() * svd.matrixV().transpose() * LxInv;
  out.W = out.G * out.G.transpose();
  out.lambda = sv;
  return true;
}

// Largest alpha in [0, inf) with diag(lambda) + alpha * D PSD.
inline double max_step_psd(const Eigen::VectorXd& lambda, const Eigen::MatrixXd& D) {
  const Eigen::VectorXd s = lambda.array().rsqrt();
  Eigen::MatrixXd T = s.asDiagonal() * D * s.asDiagonal();
  T = 0.5 * (T + T.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues()(0);
  if (lmin >= 0.0) return std::numeric_limits<double>::infinity();
  return -1.0 / lmin;
}

inline double max_step_scalar(double v, double dv) {
  return dv >= 0.0 ? std::numeric_limits<double>::infinity() : -v / dv;
}

}  // namespace detail

class InteriorPointSolver {
 public:
  SdpSolution solve(const SdpProblem& problem, const SdpOptions& opts = {}) const {
    problem.validate();
    Prepared prep = prepare(problem, opts.ruiz_passes);
    if (prep.trivially_infeasible) return infeasible_by_row(problem, prep.bad_row);
    return run(problem, prep, opts);
  }

 private:
  struct Prepared {
    detail::SdpData data;
    std::vector<int> kept_rows;  // internal row -> original equality index
    // Unscaling: X = beta * D X~ D, xf = beta * E xf~, y_i = gamma * rho_i y~_i,
    // S = gamma * D^-1 S~ D^-1.
    std::vector<Eigen::VectorXd> d;
    Eigen::VectorXd e;
    Eigen::VectorXd rho;
    double beta = 1.0;
    double gamma = 1.0;
    bool trivially_infeasible = false;
    int bad_row = -1;
  };

  struct Iterate {
    std::vector<Eigen::MatrixXd> X;
    std::vector<Eigen::MatrixXd> S;
    Eigen::VectorXd xf;
    Eigen::VectorXd y;
    double tau = 1.0;
    double kappa = 1.0;
  };

  struct Direction {
    std::vector<Eigen::MatrixXd> dX;
    std::vector<Eigen::MatrixXd> dS;
    Eigen::VectorXd dxf;
    Eigen::VectorXd dy;
    double dtau = 0.0;
    double dkappa = 0.0;
  };

  // Original-scale quantities for an iterate normalized by tau.
  struct Report {
    std::vector<Eigen::MatrixXd> X;
    std::vector<Eigen::MatrixXd> S;
    Eigen::VectorXd xf;
    Eigen::VectorXd y;  // length = original equality count
    double pres = 0.0;
    double dres = 0.0;
    double pobj = 0.0;
    double dobj = 0.0;
    double gap = 0.0;
  };

  static SdpSolution infeasible_by_row(const SdpProblem& problem, int row) {
    SdpSolution sol;
    sol.status = SdpStatus::Infeasible;
    sol.dual = Eigen::VectorXd::Zero(problem.num_equalities());
    sol.dual(row) = problem.equalities[static_cast<std::size_t>(row)].rhs > 0 ? 1.0 : -1.0;
    for (int k : problem.block_dims) {
      sol.primal_blocks.push_back(Eigen::MatrixXd::Zero(k, k));
      sol.dual_slack.push_back(Eigen::MatrixXd::Zero(k, k));
    }
    sol.free_values = Eigen::VectorXd::Zero(problem.num_free);
    return sol;
  }

  static Prepared prepare(const SdpProblem& problem, int ruiz_passes) {
    Prepared prep;
    auto& D = prep.data;
    D.dims = problem.block_dims;
    D.nf = problem.num_free;
    const int nb = problem.num_blocks();

    // Rows with no coefficients are either vacuous or a direct certificate
    // of infeasibility.
    for (int i = 0; i < problem.num_equalities(); ++i) {
      const auto& row = problem.equalities[static_cast<std::size_t>(i)];
      bool empty = true;
      for (const auto& e : row.entries) empty = empty && e.value == 0.0;
      for (const auto& f : row.free) empty = empty && f.value == 0.0;
      if (empty) {
        if (row.rhs != 0.0) {
          prep.trivially_infeasible = true;
          prep.bad_row = i;
          return prep;
        }
        continue;
      }
      prep.kept_rows.push_back(i);
    }
    D.m = static_cast<int>(prep.kept_rows.size());
    const int m = D.m;

    // Raw internal copies.
    D.block_rows.assign(static_cast<std::size_t>(nb), {});
    D.F = Eigen::MatrixXd::Zero(m, D.nf);
    D.b = Eigen::VectorXd::Zero(m);
    for (int r = 0; r < m; ++r) {
      const auto& row = problem.equalities[static_cast<std::size_t>(prep.kept_rows[static_cast<std::size_t>(r)])];
      D.b(r) = row.rhs;
      std::vector<std::vector<detail::SymEntry>> per_block(static_cast<std::size_t>(nb));
      for (const auto& e : row.entries) {
        if (e.value != 0.0) per_block[static_cast<std::size_t>(e.block)].push_back({e.row, e.col, e.value});
      }
      for (int blk = 0; blk < nb; ++blk) {
        auto& ents = per_block[static_cast<std::size_t>(blk)];
        if (ents.empty()) continue;
        // Merge duplicates.
        std::sort(ents.begin(), ents.end(), [](const auto& a, const auto& b2) {
          return a.row != b2.row ? a.row < b2.row : a.col < b2.col;
        });
        std::vector<detail::SymEntry> merged;
        for (const auto& en : ents) {
          if (!merged.empty() && merged.back().row == en.row && merged.back().col == en.col) {
            merged.back().value += en.value;
          } else {
            merged.push_back(en);
          }
        }
        D.block_rows[static_cast<std::size_t>(blk)].push_back({r, std::move(merged)});
      }
      for (const auto& f : row.free) D.F(r, f.index) += f.value;
    }
    D.C.clear();
    for (int blk = 0; blk < nb; ++blk) {
      const int k = D.dims[static_cast<std::size_t>(blk)];
      D.C.push_back(Eigen::MatrixXd::Zero(k, k));
    }
    for (const auto& e : problem.objective_blocks) {
      auto& Cb = D.C[static_cast<std::size_t>(e.block)];
      if (e.row == e.col) {
        Cb(e.row, e.row) += e.value;
      } else {
        Cb(e.row, e.col) += 0.5 * e.value;
        Cb(e.col, e.row) += 0.5 * e.value;
      }
    }
    D.cf = Eigen::VectorXd::Zero(D.nf);
    for (const auto& f : problem.objective_free) D.cf(f.index) += f.value;

    // Ruiz equilibration with congruence scaling inside each block.
    prep.rho = Eigen::VectorXd::Ones(m);
    prep.e = Eigen::VectorXd::Ones(D.nf);
    prep.d.clear();
    for (int blk = 0; blk < nb; ++blk) prep.d.push_back(Eigen::VectorXd::Ones(D.dims[static_cast<std::size_t>(blk)]));
    for (int pass = 0; pass < ruiz_passes; ++pass) {
      Eigen::VectorXd row_max = Eigen::VectorXd::Zero(m);
      std::vector<Eigen::VectorXd> col_max;
      for (int blk = 0; blk < nb; ++blk) col_max.push_back(Eigen::VectorXd::Zero(D.dims[static_cast<std::size_t>(blk)]));
      Eigen::VectorXd free_max = Eigen::VectorXd::Zero(D.nf);
      for (int blk = 0; blk < nb; ++blk) {
        auto& cm = col_max[static_cast<std::size_t>(blk)];
        for (const auto& br : D.block_rows[static_cast<std::size_t>(blk)]) {
          for (const auto& en : br.entries) {
            const double a = std::abs(en.value);
            row_max(br.eq) = std::max(row_max(br.eq), a);
            cm(en.row) = std::max(cm(en.row), a);
            cm(en.col) = std::max(cm(en.col), a);
          }
        }
      }
      for (int r = 0; r < m; ++r) {
        for (int j = 0; j < D.nf; ++j) {
          const double a = std::abs(D.F(r, j));
          row_max(r) = std::max(row_max(r), a);
          free_max(j) = std::max(free_max(j), a);
        }
      }
      bool converged = true;
      auto factor = [&](double mx) {
        if (mx <= 0.0) return 1.0;
        const double f = 1.0 / std::sqrt(mx);
        if (std::abs(mx - 1.0) > 1e-2) converged = false;
        return f;
      };
      Eigen::VectorXd fr(m);
      for (int r = 0; r < m; ++r) fr(r) = factor(row_max(r));
      std::vector<Eigen::VectorXd> fd;
      for (int blk = 0; blk < nb; ++blk) {
        const auto& cm = col_max[static_cast<std::size_t>(blk)];
        Eigen::VectorXd f(cm.size());
        for (Eigen::Index i = 0; i < cm.size(); ++i) f(i) = factor(cm(i));
        fd.push_back(f);
      }
      Eigen::VectorXd fe(D.nf);
      for (int j = 0; j < D.nf; ++j) fe(j) = factor(free_max(j));
      if (converged) break;
      for (int blk = 0; blk < nb; ++blk) {
        const auto& f = fd[static_cast<std::size_t>(blk)];
        for (auto& br : D.block_rows[static_cast<std::size_t>(blk)]) {
          for (auto& en : br.entries) en.value *= fr(br.eq) * f(en.row) * f(en.col);
        }
        prep.d[static_cast<std::size_t>(blk)].array() *= f.array();
      }
      for (int r = 0; r < m; ++r) D.F.row(r) *= fr(r);
      for (int j = 0; j < D.nf; ++j) D.F.col(j) *= fe(j);
      prep.rho.array() *= fr.array();
      prep.e.array() *= fe.array();
    }
    for (int blk = 0; blk < nb; ++blk) {
      const auto& dv = prep.d[static_cast<std::size_t>(blk)];
      D.C[static_cast<std::size_t>(blk)] = dv.asDiagonal() * D.C[static_cast<std::size_t>(blk)] * dv.asDiagonal();
    }
    D.cf.array() *= prep.e.array();
    D.b.array() *= prep.rho.array();

    prep.beta = std::max(1.0, detail::max_abs(D.b));
    double cmax = detail::max_abs(D.cf);
    for (const auto& Cb : D.C) cmax = std::max(cmax, detail::max_abs(Cb));
    prep.gamma = std::max(1.0, cmax);
    D.b /= prep.beta;
    D.cf /= prep.gamma;
    for (auto& Cb : D.C) Cb /= prep.gamma;
    return prep;
  }

  static Report report(const SdpProblem& problem, const Prepared& prep, const Iterate& it) {
    const auto& D = prep.data;
    Report rep;
    const int nb = D.nb();
    for (int blk = 0; blk < nb; ++blk) {
      const auto& dv = prep.d[static_cast<std::size_t>(blk)];
      rep.X.push_back(prep.beta / it.tau * (dv.asDiagonal() * it.X[static_cast<std::size_t>(blk)] * dv.asDiagonal()));
      const Eigen::VectorXd dinv = dv.cwiseInverse();
      rep.S.push_back(prep.gamma / it.tau * (dinv.asDiagonal() * it.S[static_cast<std::size_t>(blk)] * dinv.asDiagonal()));
    }
    rep.xf = prep.beta / it.tau * prep.e.cwiseProduct(it.xf);
    rep.y = Eigen::VectorXd::Zero(problem.num_equalities());
    for (int r = 0; r < D.m; ++r) {
      rep.y(prep.kept_rows[static_cast<std::size_t>(r)]) = prep.gamma / it.tau * prep.rho(r) * it.y(r);
    }
    residuals(problem, rep);
    return rep;
  }

  // Residuals and objectives of original-scale (X, xf, y, S).
  static void residuals(const SdpProblem& problem, Report& rep) {
    const int nb = problem.num_blocks();
    double bnorm = 0.0;
    double pres = 0.0;
    std::vector<Eigen::MatrixXd> aty;
    for (int blk = 0; blk < nb; ++blk) {
      const int k = problem.block_dims[static_cast<std::size_t>(blk)];
      aty.push_back(Eigen::MatrixXd::Zero(k, k));
    }
    Eigen::VectorXd fty = Eigen::VectorXd::Zero(problem.num_free);
    double dobj = 0.0;
    for (int i = 0; i < problem.num_equalities(); ++i) {
      const auto& row = problem.equalities[static_cast<std::size_t>(i)];
      double ax = 0.0;
      const double yi = rep.y(i);
      for (const auto& e : row.entries) {
        ax += e.value * rep.X[static_cast<std::size_t>(e.block)](e.row, e.col);
        auto& T = aty[static_cast<std::size_t>(e.block)];
        if (e.row == e.col) {
          T(e.row, e.row) += yi * e.value;
        } else {
          T(e.row, e.col) += 0.5 * yi * e.value;
          T(e.col, e.row) += 0.5 * yi * e.value;
        }
      }
      for (const auto& f : row.free) {
        ax += f.value * rep.xf(f.index);
        fty(f.index) += yi * f.value;
      }
      pres = std::max(pres, std::abs(ax - row.rhs));
      bnorm = std::max(bnorm, std::abs(row.rhs));
      dobj += row.rhs * yi;
    }
    double cnorm = 0.0;
    double pobj = 0.0;
    std::vector<Eigen::MatrixXd> C;
    for (int blk = 0; blk < nb; ++blk) {
      const int k = problem.block_dims[static_cast<std::size_t>(blk)];
      C.push_back(Eigen::MatrixXd::Zero(k, k));
    }
    for (const auto& e : problem.objective_blocks) {
      cnorm = std::max(cnorm, std::abs(e.value));
      pobj += e.value * rep.X[static_cast<std::size_t>(e.block)](e.row, e.col);
      auto& Cb = C[static_cast<std::size_t>(e.block)];
      if (e.row == e.col) {
        Cb(e.row, e.row) += e.value;
      } else {
        Cb(e.row, e.col) += 0.5 * e.value;
        Cb(e.col, e.row) += 0.5 * e.value;
      }
    }
    Eigen::VectorXd cf = Eigen::VectorXd::Zero(problem.num_free);
    for (const auto& f : problem.objective_free) {
      cf(f.index) += f.value;
      cnorm = std::max(cnorm, std::abs(f.value));
    }
    pobj += cf.dot(rep.xf);
    // The reported dual slack is the PSD part of C - A'y: of all admissible
    // slacks it leaves the smallest residual, namely the negative part.
    double dres = 0.0;
    for (int blk = 0; blk < nb; ++blk) {
      const auto b = static_cast<std::size_t>(blk);
      const Eigen::MatrixXd Z = C[b] - aty[b];
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Z);
      const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
      rep.S[b] = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
      dres = std::max(dres, detail::max_abs(Eigen::MatrixXd(Z - rep.S[b])));
    }
    dres = std::max(dres, detail::max_abs(Eigen::VectorXd(cf - fty)));
    rep.pres = pres / (1.0 + bnorm);
    rep.dres = dres / (1.0 + cnorm);
    rep.pobj = pobj + problem.objective_constant;
    rep.dobj = dobj + problem.objective_constant;
    rep.gap = std::abs(pobj - dobj) / (1.0 + 0.5 * (std::abs(pobj) + std::abs(dobj)));
  }

  static SdpSolution to_solution(SdpStatus status, const Report& rep, int iterations) {
    SdpSolution sol;
    sol.status = status;
    sol.primal_blocks = rep.X;
    sol.dual_slack = rep.S;
    sol.free_values = rep.xf;
    sol.dual = rep.y;
    sol.primal_objective = rep.pobj;
    sol.dual_objective = rep.dobj;
    sol.primal_residual = rep.pres;
    sol.dual_residual = rep.dres;
    sol.gap = rep.gap;
    sol.iterations = iterations;
    return sol;
  }

  // Tests the current (scaled) iterate for a primal or dual infeasibility
  // ray, in original units.
  static SdpStatus ray_status(const SdpProblem& problem, const Prepared& prep, const Iterate& it,
                              const SdpOptions& opts, SdpSolution& ray) {
    const auto& D = prep.data;
    // Primal infeasibility: b'y > 0, A*y + S = 0, F'y = 0.
    {
      Report rep;
      Iterate scaled = it;
      scaled.tau = 1.0;
      rep = report(problem, prep, scaled);
      // rep.y, rep.S are the ray in original units; rescale the check.
      const double bty = rep.dobj - problem.objective_constant;
      if (bty > 0.0) {
        Report cert = rep;
        // Residual of A*y + S (no C) and F'y.
        double res = 0.0;
        std::vector<Eigen::MatrixXd> aty;
        for (int k : problem.block_dims) aty.push_back(Eigen::MatrixXd::Zero(k, k));
        Eigen::VectorXd fty = Eigen::VectorXd::Zero(problem.num_free);
        for (int i = 0; i < problem.num_equalities(); ++i) {
          const auto& row = problem.equalities[static_cast<std::size_t>(i)];
          const double yi = rep.y(i);
          for (const auto& e : row.entries) {
            auto& T = aty[static_cast<std::size_t>(e.block)];
            if (e.row == e.col) {
              T(e.row, e.row) += yi * e.value;
            } else {
              T(e.row, e.col) += 0.5 * yi * e.value;
              T(e.col, e.row) += 0.5 * yi * e.value;
            }
          }
          for (const auto& f : row.free) fty(f.index) += yi * f.value;
        }
        for (int blk = 0; blk < problem.num_blocks(); ++blk) {
          res = std::max(res, detail::max_abs(Eigen::MatrixXd(aty[static_cast<std::size_t>(blk)] +
                                                               rep.S[static_cast<std::size_t>(blk)])));
        }
        res = std::max(res, detail::max_abs(fty));
        if (res <= opts.infeasibility_tol * bty && it.tau < it.kappa) {
          ray = to_solution(SdpStatus::Infeasible, rep, 0);
          return SdpStatus::Infeasible;
        }
      }
      // Dual infeasibility: <C,X> + c'xf < 0, AX + F xf = 0.
      const double ctx = rep.pobj - problem.objective_constant;
      if (ctx < 0.0) {
        double res = 0.0;
        for (int i = 0; i < problem.num_equalities(); ++i) {
          const auto& row = problem.equalities[static_cast<std::size_t>(i)];
          double ax = 0.0;
          for (const auto& e : row.entries) ax += e.value * rep.X[static_cast<std::size_t>(e.block)](e.row, e.col);
          for (const auto& f : row.free) ax += f.value * rep.xf(f.index);
          res = std::max(res, std::abs(ax));
        }
        if (res <= opts.infeasibility_tol * (-ctx) && it.tau < it.kappa) {
          ray = to_solution(SdpStatus::Unbounded, rep, 0);
          return SdpStatus::Unbounded;
        }
      }
    }
    (void)D;
    return SdpStatus::Optimal;  // no ray detected
  }

  static void form_schur(const detail::SdpData& D, const std::vector<detail::NtScaling>& nt, Eigen::MatrixXd& M) {
    M.setZero(D.m, D.m);
    for (int blk = 0; blk < D.nb(); ++blk) {
      const auto& rows = D.block_rows[static_cast<std::size_t>(blk)];
      if (rows.empty()) continue;
      const Eigen::MatrixXd& W = nt[static_cast<std::size_t>(blk)].W;
      const int k = D.dims[static_cast<std::size_t>(blk)];
      Eigen::MatrixXd T(k, k);
      Eigen::MatrixXd Adense(k, k);
      for (std::size_t jj = 0; jj < rows.size(); ++jj) {
        const auto& rj = rows[jj];
        if (static_cast<int>(rj.entries.size()) < 2 * k) {
          T.setZero();
          for (const auto& e : rj.entries) {
            if (e.row == e.col) {
              T.noalias() += e.value * W.col(e.row) * W.row(e.row);
            } else {
              T.noalias() += (0.5 * e.value) * W.col(e.row) * W.row(e.col);
              T.noalias() += (0.5 * e.value) * W.col(e.col) * W.row(e.row);
            }
          }
        } else {
          Adense.setZero();
          for (const auto& e : rj.entries) {
            if (e.row == e.col) {
              Adense(e.row, e.row) += e.value;
            } else {
              Adense(e.row, e.col) += 0.5 * e.value;
              Adense(e.col, e.row) += 0.5 * e.value;
            }
          }
          T.noalias() = W * Adense * W;
        }
        for (std::size_t ii = 0; ii <= jj; ++ii) {
          const auto& ri = rows[ii];
          double acc = 0.0;
          for (const auto& e : ri.entries) acc += e.value * T(e.row, e.col);
          M(ri.eq, rj.eq) += acc;
          if (ii != jj) M(rj.eq, ri.eq) += acc;
        }
      }
    }
  }

  class KktSolver {
   public:
    KktSolver(const Eigen::MatrixXd& M, const Eigen::MatrixXd& F) : m_(M.rows()), nf_(F.cols()) {
      const Eigen::Index n = m_ + nf_;
      K_.setZero(n, n);
      K_.topLeftCorner(m_, m_) = M;
      K_.topRightCorner(m_, nf_) = F;
      K_.bottomLeftCorner(nf_, m_) = F.transpose();
      // Regularization is relative to each row's own diagonal; a global
      // scale would swamp the small rows once the diagonal spans many decades.
      Eigen::MatrixXd Kreg = K_;
      for (Eigen::Index i = 0; i < m_; ++i) Kreg(i, i) += 1e-13 * std::abs(M(i, i)) + 1e-300;
      double fscale = 0.0;
      if (nf_ > 0 && m_ > 0) fscale = F.cwiseAbs().maxCoeff();
      for (Eigen::Index i = m_; i < n; ++i) Kreg(i, i) -= 1e-13 * fscale * fscale + 1e-300;
      lu_.compute(Kreg);
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
      Eigen::VectorXd z = lu_.solve(rhs);
      for (int pass = 0; pass < 3; ++pass) {
        const Eigen::VectorXd r = rhs - K_ * z;
        if (!r.allFinite()) break;
        z += lu_.solve(r);
      }
      return z;
    }

   private:
    Eigen::Index m_;
    Eigen::Index nf_;
    Eigen::MatrixXd K_;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  };

  SdpSolution fail(const char* why, const Report& best, int iter, const SdpOptions& opts) const {
    if (opts.verbose) std::fprintf(stderr, "numerical failure: %s\n", why);
    return to_solution(SdpStatus::NumericalFailure, best, iter);
  }

  SdpSolution run(const SdpProblem& problem, const Prepared& prep, const SdpOptions& opts) const {
    const auto& D = prep.data;
    const int nb = D.nb();
    const int m = D.m;
    const int nf = D.nf;
    double nu = 1.0;
    for (int k : D.dims) nu += k;

    Iterate it;
    double bn = std::max(1.0, detail::max_abs(D.b));
    double cn = std::max(1.0, detail::max_abs(D.cf));
    for (const auto& Cb : D.C) cn = std::max(cn, detail::max_abs(Cb));
    const double zeta = std::sqrt(bn * cn);
    for (int blk = 0; blk < nb; ++blk) {
      const int k = D.dims[static_cast<std::size_t>(blk)];
      it.X.push_back(zeta * Eigen::MatrixXd::Identity(k, k));
      it.S.push_back(zeta * Eigen::MatrixXd::Identity(k, k));
    }
    it.xf = Eigen::VectorXd::Zero(nf);
    it.y = Eigen::VectorXd::Zero(m);
    it.tau = 1.0;
    it.kappa = 1.0;

    Report best;
    double best_merit = std::numeric_limits<double>::infinity();
    int best_iter = 0;
    int small_steps = 0;

    std::vector<detail::NtScaling> nt(static_cast<std::size_t>(nb));
    Eigen::MatrixXd M;

    for (int iter = 0; iter <= opts.max_iterations; ++iter) {
      // Residuals (scaled space).
      const Eigen::VectorXd rp = D.b * it.tau - D.apply_A(it.X) - D.F * it.xf;
      std::vector<Eigen::MatrixXd> Rd;
      double ctx = D.cf.dot(it.xf);
      double xs = 0.0;
      for (int blk = 0; blk < nb; ++blk) {
        const auto& Cb = D.C[static_cast<std::size_t>(blk)];
        Rd.push_back(Cb * it.tau - D.apply_At(blk, it.y) - it.S[static_cast<std::size_t>(blk)]);
        ctx += detail::inner(Cb, it.X[static_cast<std::size_t>(blk)]);
        xs += detail::inner(it.X[static_cast<std::size_t>(blk)], it.S[static_cast<std::size_t>(blk)]);
      }
      const Eigen::VectorXd rf = D.cf * it.tau - D.F.transpose() * it.y;
      const double rg = it.kappa + ctx - D.b.dot(it.y);
      const double mu = (xs + it.tau * it.kappa) / nu;

      const Report rep = report(problem, prep, it);
      const double merit = std::max({rep.pres / opts.feasibility_tol, rep.dres / opts.feasibility_tol,
                                     rep.gap / opts.gap_tol});
      if (merit < best_merit && std::isfinite(merit)) {
        best_merit = merit;
        best = rep;
        best_iter = iter;
      } else if (iter - best_iter >= opts.stall_iterations) {
        return fail("no progress", best, iter, opts);
      }
      if (opts.verbose) {
        std::fprintf(stderr, "%3d pobj %+.8e dobj %+.8e pres %.2e dres %.2e gap %.2e tau %.2e kappa %.2e mu %.2e\n",
                     iter, rep.pobj, rep.dobj, rep.pres, rep.dres, rep.gap, it.tau, it.kappa, mu);
      }
      if (rep.pres <= opts.feasibility_tol && rep.dres <= opts.feasibility_tol && rep.gap <= opts.gap_tol) {
        return to_solution(SdpStatus::Optimal, rep, iter);
      }
      {
        SdpSolution ray;
        const SdpStatus rs = ray_status(problem, prep, it, opts, ray);
        if (rs != SdpStatus::Optimal) {
          ray.iterations = iter;
          return ray;
        }
      }
      if (iter == opts.max_iterations) break;

      // Scaling.
      bool ok = true;
      for (int blk = 0; blk < nb && ok; ++blk) {
        ok = detail::nt_scaling(it.X[static_cast<std::size_t>(blk)], it.S[static_cast<std::size_t>(blk)],
                                nt[static_cast<std::size_t>(blk)]);
      }
      if (!ok) return fail("scaling", best, iter, opts);

      form_schur(D, nt, M);
      const KktSolver kkt(M, D.F);

      std::vector<Eigen::MatrixXd> WCW;
      double cwcw = 0.0;
      for (int blk = 0; blk < nb; ++blk) {
        const auto& W = nt[static_cast<std::size_t>(blk)].W;
        WCW.push_back(W * D.C[static_cast<std::size_t>(blk)] * W);
        cwcw += detail::inner(D.C[static_cast<std::size_t>(blk)], WCW.back());
      }
      const Eigen::VectorXd a = D.apply_A(WCW);
      const Eigen::VectorXd g = D.b - a;
      Eigen::VectorXd rhs2(m + nf);
      rhs2.head(m) = a + D.b;
      rhs2.tail(nf) = D.cf;
      const Eigen::VectorXd z2 = kkt.solve(rhs2);
      // The Schur-complement part of the denominator is nonnegative in exact
      // arithmetic; rounding can push it below zero near convergence.
      const double schur_part = cwcw + g.dot(z2.head(m)) - D.cf.dot(z2.tail(nf));
      const double den = it.kappa / it.tau + std::max(schur_part, 0.0);
      if (!(den > 0.0) || !std::isfinite(den)) return fail("tau denominator", best, iter, opts);

      // Solves the linearized system for complementarity targets Z (scaled
      // space) and tau-kappa target rtau, with residual weight eta.
      auto direction = [&](double eta, const std::vector<Eigen::MatrixXd>& Z, double rtau) {
        Direction d;
        std::vector<Eigen::MatrixXd> T;
        double ct = 0.0;
        for (int blk = 0; blk < nb; ++blk) {
          const auto& s = nt[static_cast<std::size_t>(blk)];
          Eigen::MatrixXd Tb = s.G * Z[static_cast<std::size_t>(blk)] * s.G.transpose();
          if (eta != 0.0) Tb -= eta * (s.W * Rd[static_cast<std::size_t>(blk)] * s.W);
          ct += detail::inner(D.C[static_cast<std::size_t>(blk)], Tb);
          T.push_back(std::move(Tb));
        }
        Eigen::VectorXd rhs1(m + nf);
        rhs1.head(m) = eta * rp - D.apply_A(T);
        rhs1.tail(nf) = eta * rf;
        const Eigen::VectorXd z1 = kkt.solve(rhs1);
        const double num = eta * rg + ct + rtau / it.tau - g.dot(z1.head(m)) + D.cf.dot(z1.tail(nf));
        d.dtau = num / den;
        d.dy = z1.head(m) + d.dtau * z2.head(m);
        d.dxf = z1.tail(nf) + d.dtau * z2.tail(nf);
        d.dkappa = (rtau - it.kappa * d.dtau) / it.tau;
        for (int blk = 0; blk < nb; ++blk) {
          const auto& s = nt[static_cast<std::size_t>(blk)];
          const Eigen::MatrixXd aty = D.apply_At(blk, d.dy);
          Eigen::MatrixXd dS = eta * Rd[static_cast<std::size_t>(blk)] - aty + d.dtau * D.C[static_cast<std::size_t>(blk)];
          Eigen::MatrixXd dX = T[static_cast<std::size_t>(blk)] + s.W * aty * s.W - d.dtau * WCW[static_cast<std::size_t>(blk)];
          d.dS.push_back(0.5 * (dS + dS.transpose()));
          d.dX.push_back(0.5 * (dX + dX.transpose()));
        }
        // Iterative refinement of the primal and free-dual equations against
        // the exact operators; dtau is held fixed, so the dual and
        // complementarity equations stay satisfied by construction.
        for (int pass = 0; pass < opts.refinement_passes; ++pass) {
          Eigen::VectorXd err(m + nf);
          err.head(m) = eta * rp - (D.apply_A(d.dX) + D.F * d.dxf - D.b * d.dtau);
          err.tail(nf) = eta * rf - (D.F.transpose() * d.dy - D.cf * d.dtau);
          if (!err.allFinite() || err.norm() == 0.0) break;
          const Eigen::VectorXd z = kkt.solve(err);
          d.dy += z.head(m);
          d.dxf += z.tail(nf);
          for (int blk = 0; blk < nb; ++blk) {
            const auto& s = nt[static_cast<std::size_t>(blk)];
            const Eigen::MatrixXd aty = D.apply_At(blk, z.head(m));
            const Eigen::MatrixXd wx = s.W * aty * s.W;
            d.dX[static_cast<std::size_t>(blk)] += 0.5 * (wx + wx.transpose());
            d.dS[static_cast<std::size_t>(blk)] -= aty;
          }
        }
        return d;
      };

      auto max_step = [&](const Direction& d) {
        double alpha = std::numeric_limits<double>::infinity();
        for (int blk = 0; blk < nb; ++blk) {
          const auto& s = nt[static_cast<std::size_t>(blk)];
          const Eigen::MatrixXd dXs = s.Ginv * d.dX[static_cast<std::size_t>(blk)] * s.Ginv.transpose();
          const Eigen::MatrixXd dSs = s.G.transpose() * d.dS[static_cast<std::size_t>(blk)] * s.G;
          alpha = std::min(alpha, detail::max_step_psd(s.lambda, dXs));
          alpha = std::min(alpha, detail::max_step_psd(s.lambda, dSs));
        }
        alpha = std::min(alpha, detail::max_step_scalar(it.tau, d.dtau));
        alpha = std::min(alpha, detail::max_step_scalar(it.kappa, d.dkappa));
        return alpha;
      };

      // Predictor.
      std::vector<Eigen::MatrixXd> Zaff;
      for (int blk = 0; blk < nb; ++blk) {
        Zaff.push_back(Eigen::MatrixXd((-nt[static_cast<std::size_t>(blk)].lambda).asDiagonal()));
      }
      const Direction aff = direction(1.0, Zaff, -it.tau * it.kappa);
      const double alpha_aff = std::min(1.0, max_step(aff));
      double mu_aff = (it.tau + alpha_aff * aff.dtau) * (it.kappa + alpha_aff * aff.dkappa);
      for (int blk = 0; blk < nb; ++blk) {
        const auto b = static_cast<std::size_t>(blk);
        mu_aff += detail::inner(it.X[b] + alpha_aff * aff.dX[b], it.S[b] + alpha_aff * aff.dS[b]);
      }
      mu_aff /= nu;
      const double sigma = std::clamp(std::pow(std::max(mu_aff, 0.0) / mu, 3.0), 0.0, 1.0);

      // Corrector.
      std::vector<Eigen::MatrixXd> Zc;
      for (int blk = 0; blk < nb; ++blk) {
        const auto& s = nt[static_cast<std::size_t>(blk)];
        const auto b = static_cast<std::size_t>(blk);
        const Eigen::MatrixXd dXs = s.Ginv * aff.dX[b] * s.Ginv.transpose();
        const Eigen::MatrixXd dSs = s.G.transpose() * aff.dS[b] * s.G;
        Eigen::MatrixXd R = -0.5 * (dXs * dSs + dSs * dXs);
        R.diagonal().array() += sigma * mu - s.lambda.array().square();
        const auto k = s.lambda.size();
        Eigen::MatrixXd Z(k, k);
        for (Eigen::Index i = 0; i < k; ++i) {
          for (Eigen::Index j = 0; j < k; ++j) Z(i, j) = 2.0 * R(i, j) / (s.lambda(i) + s.lambda(j));
        }
        Zc.push_back(std::move(Z));
      }
      const double rtau = sigma * mu - it.tau * it.kappa - aff.dtau * aff.dkappa;
      const Direction dir = direction(1.0 - sigma, Zc, rtau);
      const double alpha_max = max_step(dir);
      const double alpha = std::min(1.0, opts.step_fraction * alpha_max);
      if (!std::isfinite(alpha) || alpha <= 0.0) return fail("step length", best, iter, opts);

      for (int blk = 0; blk < nb; ++blk) {
        const auto b = static_cast<std::size_t>(blk);
        it.X[b] += alpha * dir.dX[b];
        it.S[b] += alpha * dir.dS[b];
      }
      it.xf += alpha * dir.dxf;
      it.y += alpha * dir.dy;
      it.tau += alpha * dir.dtau;
      it.kappa += alpha * dir.dkappa;

      small_steps = alpha < 1e-8 ? small_steps + 1 : 0;
      if (small_steps >= 5) return fail("stalled", best, iter, opts);
    }
    return to_solution(SdpStatus::MaxIters, best, opts.max_iterations);
  }
};

}  // namespace sosclbf
