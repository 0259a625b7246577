#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "banditpert/common.hpp"

namespace banditpert {

// Minimum-Euclidean-norm perturbation subject to affine inequality
// constraints:
//
//     min ||delta||^2   s.t.   A delta >= b
//
// Solved through the nonnegative dual (least-distance programming):
// delta = A^T lambda with lambda >= 0 minimizing
// 1/2 lambda^T G lambda - b^T lambda, G = A A^T. The Gram matrix is the
// working object: constraint counts stay far below the variable dimension
// in every regime this library runs in.

enum class QpStatus { optimal, infeasible, iteration_limit };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::iteration_limit: return "iteration_limit";
  }
  return "unknown";
}

inline QpStatus qp_status_from_string(const std::string& s) {
  if (s == "optimal") return QpStatus::optimal;
  if (s == "infeasible") return QpStatus::infeasible;
  if (s == "iteration_limit") return QpStatus::iteration_limit;
  throw std::invalid_argument("unknown qp status: " + s);
}

struct QpTolerances {
  double feasibility = 1e-8;       // A delta >= b - feasibility
  double stationarity = 1e-6;      // ||delta - A^T lambda||_inf
  double complementarity = 1e-6;   // |lambda^T (A delta - b)| / (1 + ||b||_inf)
  std::uint64_t max_sweeps = 1'000'000;
  double lambda_blowup = 1e8;      // unbounded-dual trigger
  double farkas_ray = 1e-6;        // ||A^T u|| threshold on the normalized ray
};

struct QpProblem {
  Eigen::MatrixXd constraints;  // one row per constraint normal
  Eigen::VectorXd bounds;       // right-hand sides, margin already folded in
  double margin = 1e-6;

  int n_vars() const { return static_cast<int>(constraints.cols()); }
  int n_constraints() const { return static_cast<int>(constraints.rows()); }

  void validate() const {
    if (constraints.rows() != bounds.size())
      throw std::invalid_argument("qp: rows(A) != len(b)");
    if (!constraints.allFinite() || !bounds.allFinite())
      throw std::invalid_argument("qp: non-finite entries");
  }
};

struct QpSolution {
  Eigen::VectorXd delta;
  Eigen::VectorXd lambda;             // dual multipliers, >= 0
  QpStatus status = QpStatus::iteration_limit;
  double primal_violation = 0.0;      // max(0, max_i b_i - (A delta)_i)
  double stationarity_residual = 0.0; // ||delta - A^T lambda||_inf
  double complementarity = 0.0;       // |lambda^T (A delta - b)|
  std::uint64_t sweeps = 0;
};

// Incremental solver: constraints append one at a time (the online attack
// re-solves after each addition) and the previous duals warm-start the next
// solve. Batch use goes through solve_min_norm below.
class MinNormSolver {
 public:
  explicit MinNormSolver(int n_vars) : dim_(n_vars) {
    if (n_vars < 1) throw std::invalid_argument("qp: n_vars must be >= 1");
    reserve(16);
  }

  int n_vars() const { return dim_; }
  int n_constraints() const { return rows_; }

  void add_constraint(const Eigen::VectorXd& normal, double bound) {
    if (normal.size() != dim_)
      throw std::invalid_argument("qp: constraint dimension mismatch");
    if (!normal.allFinite() || !std::isfinite(bound))
      throw std::invalid_argument("qp: non-finite constraint");
    if (rows_ == capacity_) reserve(2 * capacity_);
    a_.row(rows_) = normal.transpose();
    b_(rows_) = bound;
    // Gram row against every stored constraint, including itself.
    gram_.block(rows_, 0, 1, rows_ + 1) =
        (a_.topRows(rows_ + 1) * normal).transpose();
    gram_.block(0, rows_, rows_, 1) = gram_.block(rows_, 0, 1, rows_).transpose();
    lambda_.conservativeResize(rows_ + 1);
    lambda_(rows_) = 0.0;
    ++rows_;
  }

  QpSolution solve(const QpTolerances& tol = {}) {
    QpSolution out;
    out.delta = Eigen::VectorXd::Zero(dim_);
    if (rows_ == 0) {
      out.lambda = Eigen::VectorXd();
      out.status = QpStatus::optimal;
      return out;
    }

    const auto A = a_.topRows(rows_);
    const auto G = gram_.topLeftCorner(rows_, rows_);
    const auto b = b_.head(rows_);
    const double b_scale = 1.0 + b.cwiseAbs().maxCoeff();
    const double comp_tol = tol.complementarity * b_scale;
    const double row_scale =
        std::sqrt(G.diagonal().maxCoeff() + std::numeric_limits<double>::min());

    // Degenerate zero-normal rows: either vacuous or a trivial certificate.
    for (int i = 0; i < rows_; ++i) {
      if (G(i, i) <= 0.0) {
        if (b(i) > tol.feasibility) {
          out.lambda = Eigen::VectorXd::Unit(rows_, i);
          out.status = QpStatus::infeasible;
          return out;
        }
        lambda_(i) = 0.0;
      }
    }

    auto finish_optimal = [&](const Eigen::VectorXd& lam,
                              const Eigen::VectorXd& gl) {
      lambda_.head(rows_) = lam;
      out.lambda = lam;
      out.delta = A.transpose() * lam;
      out.primal_violation = std::max(0.0, (b - gl).maxCoeff());
      out.stationarity_residual = 0.0;  // delta is A^T lambda by construction
      out.complementarity = std::abs(lam.dot(gl - b));
      out.status = QpStatus::optimal;
    };

    Eigen::VectorXd lambda = lambda_.head(rows_).cwiseMax(0.0);
    Eigen::VectorXd w = G.selfadjointView<Eigen::Lower>() * lambda;  // A A^T lambda

    // Fast path: active-set pivoting seeded by the warm-start support.
    {
      Eigen::VectorXd lam_as, w_as;
      if (active_set_refine(G, b, support_mask(lambda), tol, comp_tol, lam_as,
                            w_as)) {
        finish_optimal(lam_as, w_as);
        return out;
      }
    }

    // Fallback: Hildreth coordinate ascent on the dual. Converges on
    // feasible problems, diverges along a certifiable ray on infeasible
    // ones, and periodically retries the active-set refinement.
    Eigen::VectorXd lambda_prev_sweep = lambda;
    for (std::uint64_t sweep = 1; sweep <= tol.max_sweeps; ++sweep) {
      for (int i = 0; i < rows_; ++i) {
        const double gii = G(i, i);
        if (gii <= 0.0) continue;
        const double target = lambda(i) - (w(i) - b(i)) / gii;
        const double next = target > 0.0 ? target : 0.0;
        const double step = next - lambda(i);
        if (step != 0.0) {
          w.noalias() += step * G.col(i);
          lambda(i) = next;
        }
      }
      out.sweeps = sweep;

      const double viol = std::max(0.0, (b - w).maxCoeff());
      const double comp = std::abs(lambda.dot(w - b));
      if (viol <= tol.feasibility && comp <= comp_tol) {
        finish_optimal(lambda, w);
        return out;
      }
      if (sweep % 25 == 0) {
        Eigen::VectorXd lam_as, w_as;
        if (active_set_refine(G, b, support_mask(lambda), tol, comp_tol,
                              lam_as, w_as)) {
          finish_optimal(lam_as, w_as);
          return out;
        }
      }

      // Ray detection: on infeasible problems the iterate grows along a
      // direction u >= 0 with A^T u ~ 0 and b^T u > 0.
      if (sweep % 8 == 0) {
        const Eigen::VectorXd inc = lambda - lambda_prev_sweep;
        lambda_prev_sweep = lambda;
        if (is_certified_ray(G, b, inc, tol, row_scale, b_scale)) {
          lambda_.head(rows_) = lambda;
          out.lambda = lambda;
          out.status = QpStatus::infeasible;
          return out;
        }
      }
      if (lambda.lpNorm<Eigen::Infinity>() > tol.lambda_blowup &&
          is_certified_ray(G, b, lambda, tol, row_scale, b_scale)) {
        lambda_.head(rows_) = lambda;
        out.lambda = lambda;
        out.status = QpStatus::infeasible;
        return out;
      }
    }

    lambda_.head(rows_) = lambda;
    out.lambda = lambda;
    out.delta = A.transpose() * lambda;
    out.primal_violation = std::max(0.0, (b - w).maxCoeff());
    out.complementarity = std::abs(lambda.dot(w - b));
    out.status = QpStatus::iteration_limit;
    return out;
  }

  void reset_warm_start() { lambda_.head(rows_).setZero(); }

  void set_warm_start(const Eigen::VectorXd& lambda) {
    if (lambda.size() != rows_)
      throw std::invalid_argument("qp: warm start size mismatch");
    lambda_.head(rows_) = lambda.cwiseMax(0.0);
  }

  // Compacts the system to the given rows (ascending, unique). Dropping a
  // zero-multiplier constraint leaves the optimum unchanged, which is what
  // the online attack relies on when it prunes slack rows.
  void remove_constraints(const std::vector<int>& keep) {
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (keep[i] < 0 || keep[i] >= rows_ ||
          (i > 0 && keep[i] <= keep[i - 1]))
        throw std::invalid_argument("qp: bad keep list");
    }
    const int m = static_cast<int>(keep.size());
    for (int r = 0; r < m; ++r) {
      if (keep[r] == r) continue;
      a_.row(r) = a_.row(keep[r]);
      b_(r) = b_(keep[r]);
      lambda_(r) = lambda_(keep[r]);
    }
    for (int r = 0; r < m; ++r)
      for (int c = 0; c <= r; ++c) {
        const double v = gram_(keep[r], keep[c]);
        gram_(r, c) = v;
        gram_(c, r) = v;
      }
    rows_ = m;
  }

 private:
  void reserve(int cap) {
    a_.conservativeResize(cap, dim_);
    b_.conservativeResize(cap);
    gram_.conservativeResize(cap, cap);
    capacity_ = cap;
  }

  static Eigen::VectorXi support_mask(const Eigen::VectorXd& lambda) {
    Eigen::VectorXi mask(lambda.size());
    for (int i = 0; i < lambda.size(); ++i) mask(i) = lambda(i) > 0.0 ? 1 : 0;
    return mask;
  }

  // Active-set pivoting on the dual: solve the equality subproblem on the
  // working set, drop coordinates whose multipliers go negative, add the most
  // violated constraint, repeat. On success the solution satisfies KKT to
  // solver precision; failure (singular subproblem, iteration cap) falls back
  // to coordinate ascent.
  template <typename GramT, typename BT>
  bool active_set_refine(const GramT& G, const BT& b,
                         const Eigen::VectorXi& seed_support,
                         const QpTolerances& tol, double comp_tol,
                         Eigen::VectorXd& lam_out,
                         Eigen::VectorXd& w_out) const {
    std::vector<char> in_set(rows_, 0);
    std::vector<int> working;
    for (int i = 0; i < rows_; ++i)
      if (seed_support(i) && G(i, i) > 0.0) {
        in_set[i] = 1;
        working.push_back(i);
      }

    Eigen::VectorXd lam = Eigen::VectorXd::Zero(rows_);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(rows_);
    const int max_pivots = 60 + 8 * rows_;
    for (int pivot = 0; pivot < max_pivots; ++pivot) {
      if (!working.empty()) {
        const int s = static_cast<int>(working.size());
        Eigen::MatrixXd gs(s, s);
        Eigen::VectorXd bs(s);
        for (int r = 0; r < s; ++r) {
          bs(r) = b(working[r]);
          for (int c = 0; c < s; ++c) gs(r, c) = G(working[r], working[c]);
        }
        // Working sets can carry exactly dependent rows (full-trajectory
        // constraints repeat sample-mean differences), so the Gram block may
        // be singular while the equalities stay consistent. A hair of
        // Tikhonov picks a well-defined multiplier; acceptance is still
        // decided by the exact KKT checks below.
        const double ridge = 1e-12 * (gs.diagonal().maxCoeff() +
                                      std::numeric_limits<double>::min());
        gs.diagonal().array() += ridge;
        Eigen::LLT<Eigen::MatrixXd> llt(gs);
        if (llt.info() != Eigen::Success) return false;
        const Eigen::VectorXd xs = llt.solve(bs);

        // Drop the most negative multiplier and re-solve.
        int drop = -1;
        double most_negative = -1e-10 * (1.0 + xs.lpNorm<Eigen::Infinity>());
        for (int r = 0; r < s; ++r)
          if (xs(r) < most_negative) {
            most_negative = xs(r);
            drop = r;
          }
        if (drop >= 0) {
          in_set[working[drop]] = 0;
          working.erase(working.begin() + drop);
          continue;
        }
        lam.setZero();
        for (int r = 0; r < s; ++r) lam(working[r]) = std::max(xs(r), 0.0);
      } else {
        lam.setZero();
      }

      w.noalias() = G.template selfadjointView<Eigen::Lower>() * lam;
      int worst = -1;
      double worst_violation = tol.feasibility;
      for (int i = 0; i < rows_; ++i) {
        if (in_set[i] || G(i, i) <= 0.0) continue;
        const double v = b(i) - w(i);
        if (v > worst_violation) {
          worst_violation = v;
          worst = i;
        }
      }
      if (worst < 0) {
        if (std::abs(lam.dot(w - b)) > comp_tol) return false;
        lam_out = lam;
        w_out = w;
        return true;
      }
      in_set[worst] = 1;
      working.push_back(worst);
    }
    return false;
  }

  template <typename GramT, typename BT>
  static bool is_certified_ray(const GramT& G, const BT& b,
                               const Eigen::VectorXd& dir,
                               const QpTolerances& tol, double row_scale,
                               double b_scale) {
    const double nrm = dir.norm();
    if (nrm <= 0.0 || !std::isfinite(nrm)) return false;
    const Eigen::VectorXd u = dir / nrm;
    if (u.minCoeff() < -1e-12) return false;
    const double quad = u.dot(G.template selfadjointView<Eigen::Lower>() * u);
    const double atu = std::sqrt(std::max(quad, 0.0));  // ||A^T u||
    return atu <= tol.farkas_ray * row_scale && b.dot(u) > 1e-10 * b_scale;
  }

  int dim_;
  int rows_ = 0;
  int capacity_ = 0;
  Eigen::MatrixXd a_;
  Eigen::VectorXd b_;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd lambda_;
};

inline QpSolution solve_min_norm(
    const QpProblem& problem,
    const std::optional<Eigen::VectorXd>& warm_start_lambda = std::nullopt,
    const QpTolerances& tol = {}) {
  problem.validate();
  MinNormSolver solver(problem.n_vars());
  for (int i = 0; i < problem.n_constraints(); ++i)
    solver.add_constraint(problem.constraints.row(i).transpose(),
                          problem.bounds(i));
  if (warm_start_lambda) solver.set_warm_start(*warm_start_lambda);
  return solver.solve(tol);
}

// Moore-Penrose upper bound: the minimum-norm solution of A delta = b is
// feasible for A delta >= b, so its norm bounds the inequality optimum.
inline std::pair<Eigen::VectorXd, double> pseudo_inverse_bound(
    const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
    double max_condition = 1e12) {
  if (A.rows() != b.size())
    throw std::invalid_argument("pseudo_inverse_bound: rows(A) != len(b)");
  if (A.rows() == 0)
    return {Eigen::VectorXd::Zero(A.cols()), 0.0};
  if (A.rows() > A.cols())
    throw std::invalid_argument(
        "pseudo_inverse_bound: more constraints than variables");
  const Eigen::MatrixXd G = A * A.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("pseudo_inverse_bound: eigendecomposition failed");
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  if (!(lmin > 0.0) || lmax / lmin > max_condition)
    throw std::runtime_error(
        "pseudo_inverse_bound: A A^T rank-deficient or ill-conditioned");
  const Eigen::VectorXd y =
      es.eigenvectors() *
      (es.eigenvectors().transpose() * b).cwiseQuotient(es.eigenvalues());
  Eigen::VectorXd delta = A.transpose() * y;
  const double norm = delta.norm();
  return {std::move(delta), norm};
}

// Dense text dump for offline debugging: header line, then one row per
// constraint with the bound appended as the trailing column.
inline void dump_problem(std::ostream& os, const QpProblem& p) {
  os << "%%banditpert-qp dense\n"
     << p.n_constraints() << ' ' << p.n_vars() << ' ' << format_double(p.margin)
     << '\n';
  for (int i = 0; i < p.n_constraints(); ++i) {
    for (int j = 0; j < p.n_vars(); ++j)
      os << format_double(p.constraints(i, j)) << ' ';
    os << format_double(p.bounds(i)) << '\n';
  }
}

}  // namespace banditpert
