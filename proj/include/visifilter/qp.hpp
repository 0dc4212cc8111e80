#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "visifilter/common.hpp"

namespace visifilter {

/// min 0.5 u'Hu + f'u  s.t.  G u <= g, with H symmetric positive definite.
struct QpProblem {
  Mat H;
  Vec f;
  Mat G;
  Vec g;

  Eigen::Index dim() const { return H.rows(); }
  Eigen::Index rows() const { return G.rows(); }

  double objective(const Vec& u) const { return 0.5 * u.dot(H * u) + f.dot(u); }
};

enum class QpStatus { kOptimal, kInfeasible, kMaxIterations };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::kOptimal:
      return "optimal";
    case QpStatus::kInfeasible:
      return "infeasible";
    case QpStatus::kMaxIterations:
      return "max_iterations";
  }
  return "unknown";
}

struct QpSolution {
  QpStatus status = QpStatus::kOptimal;
  Vec u_star;
  Vec duals;                    // one per row of G, >= 0
  std::vector<int> active_set;  // ascending row indices
  int iterations = 0;
  double kkt_residual = 0.0;
  int most_violated_row = -1;   // set when infeasible
  bool warm_started = false;    // the warm-start guess was accepted
  bool used_fallback = false;   // primal route from the supplied feasible point

  bool ok() const { return status == QpStatus::kOptimal; }
};

struct SolverSettings {
  double tol = 1e-9;
  int max_iter = 0;  // 0 -> 50 * (rows + dim)
  std::optional<std::vector<int>> warm_start;
};

/// Max of stationarity, primal violation, dual negativity and complementarity.
inline double kkt_residual(const QpProblem& qp, const Vec& u, const Vec& duals) {
  double r = (qp.H * u + qp.f + qp.G.transpose() * duals).lpNorm<Eigen::Infinity>();
  if (qp.rows() > 0) {
    const Vec slack = qp.G * u - qp.g;
    r = std::max(r, slack.cwiseMax(0.0).maxCoeff());
    r = std::max(r, (-duals).cwiseMax(0.0).maxCoeff());
    r = std::max(r, duals.cwiseProduct(slack).cwiseAbs().maxCoeff());
  }
  return r;
}

inline double kkt_residual(const QpProblem& qp, const QpSolution& s) { return kkt_residual(qp, s.u_star, s.duals); }

namespace detail {

inline void check_problem(const QpProblem& qp) {
  const auto k = qp.H.rows();
  if (qp.H.cols() != k) throw ShapeError("QP: H must be square");
  if (qp.f.size() != k) throw ShapeError("QP: f has wrong length");
  if (qp.G.cols() != k && qp.G.rows() > 0) throw ShapeError("QP: G has wrong column count");
  if (qp.g.size() != qp.G.rows()) throw ShapeError("QP: g has wrong length");
  if ((qp.H - qp.H.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, qp.H.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("QP: H is not symmetric");
  }
}

// Row tolerance for primal feasibility, scaled to the row's magnitude.
inline double feasibility_slack(const QpProblem& qp, Eigen::Index i, const Vec& u, double tol) {
  return tol * (1.0 + std::abs(qp.g(i)) + qp.G.row(i).cwiseAbs().dot(u.cwiseAbs()));
}

inline void finalize(const QpProblem& qp, QpSolution& sol) {
  sol.active_set.clear();
  for (Eigen::Index i = 0; i < qp.rows(); ++i) {
    if (sol.duals(i) > 0.0) sol.active_set.push_back(static_cast<int>(i));
  }
  sol.kkt_residual = kkt_residual(qp, sol);
}

// Solution of the problem with rows W held as equalities, or nullopt when the
// rows are numerically dependent.
inline std::optional<std::pair<Vec, Vec>> equality_solve(const QpProblem& qp, const Eigen::LLT<Mat>& llt,
                                                         const std::vector<int>& W) {
  const auto k = qp.dim();
  const Vec hinv_f = llt.solve(qp.f);
  if (W.empty()) return std::make_pair(Vec(-hinv_f), Vec());
  Mat A(static_cast<Eigen::Index>(W.size()), k);
  Vec b(static_cast<Eigen::Index>(W.size()));
  for (std::size_t j = 0; j < W.size(); ++j) {
    A.row(static_cast<Eigen::Index>(j)) = qp.G.row(W[j]);
    b(static_cast<Eigen::Index>(j)) = qp.g(W[j]);
  }
  const Mat hinv_at = llt.solve(A.transpose());
  const Mat S = A * hinv_at;
  Eigen::LDLT<Mat> ldlt(S);
  const Vec D = ldlt.vectorD();
  const double scale = std::max(1.0, S.diagonal().cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success || (D.array() <= 1e-10 * scale).any()) return std::nullopt;
  const Vec y = ldlt.solve(-(b + A * hinv_f));
  return std::make_pair(Vec(-hinv_f - hinv_at * y), y);
}

/// Goldfarb-Idnani dual active-set method. Constraints are written as
/// s_i(u) = g_i - G_i u >= 0 internally.
class DualActiveSet {
 public:
  DualActiveSet(const QpProblem& qp, const Eigen::LLT<Mat>& llt, double tol, int max_iter)
      : qp_(qp), tol_(tol), max_iter_(max_iter), n_(qp.dim()) {
    const Mat L = llt.matrixL();
    J_ = L.transpose().triangularView<Eigen::Upper>().solve(Mat::Identity(n_, n_));
    R_ = Mat::Zero(n_, n_);
    u_ = -llt.solve(qp.f);
    row_norm_ = qp.G.rowwise().norm();
  }

  QpSolution run() {
    QpSolution sol;
    const auto p = qp_.rows();
    int iter = 0;
    Vec d(n_), z(n_), r;
    while (true) {
      // Most violated row, normalized so that row scaling cannot change the pick.
      int pick = -1;
      double worst = 0.0;
      for (Eigen::Index i = 0; i < p; ++i) {
        if (is_active(i) || row_norm_(i) == 0.0) continue;
        const double s = qp_.g(i) - qp_.G.row(i).dot(u_);
        if (s >= -feasibility_slack(qp_, i, u_, tol_ * 1e-3)) continue;
        const double v = s / row_norm_(i);
        if (v < worst) {
          worst = v;
          pick = static_cast<int>(i);
        }
      }
      if (pick < 0) {
        // Rows with zero normal: feasible iff g_i >= 0.
        for (Eigen::Index i = 0; i < p; ++i) {
          if (row_norm_(i) == 0.0 && qp_.g(i) < -tol_) return infeasible(sol, static_cast<int>(i), iter);
        }
        sol.status = QpStatus::kOptimal;
        break;
      }
      double mult_p = 0.0;
      const Vec normal = -qp_.G.row(pick).transpose();
      while (true) {
        if (++iter > max_iter_) {
          sol.status = QpStatus::kMaxIterations;
          return pack(sol, iter);
        }
        d.noalias() = J_.transpose() * normal;
        z.noalias() = J_.rightCols(n_ - q_) * d.tail(n_ - q_);
        r = R_.topLeftCorner(q_, q_).triangularView<Eigen::Upper>().solve(d.head(q_));
        // Partial (dual) step: first active multiplier to hit zero.
        double t1 = std::numeric_limits<double>::infinity();
        int drop = -1;
        for (int j = 0; j < q_; ++j) {
          if (r(j) > 0.0) {
            const double ratio = mult_(j) / r(j);
            if (ratio < t1) {
              t1 = ratio;
              drop = j;
            }
          }
        }
        // Full (primal) step: makes the picked row active.
        double t2 = std::numeric_limits<double>::infinity();
        const double d2 = d.tail(n_ - q_).squaredNorm();
        const bool dependent = d2 <= 1e-20 * d.squaredNorm();
        if (!dependent) {
          const double s = qp_.g(pick) - qp_.G.row(pick).dot(u_);
          t2 = std::max(0.0, -s / z.dot(normal));
        }
        const double t = std::min(t1, t2);
        if (!std::isfinite(t)) return infeasible(sol, pick, iter);
        if (!dependent) u_ += t * z;
        for (int j = 0; j < q_; ++j) mult_(j) -= t * r(j);
        mult_p += t;
        if (!dependent && t == t2) {
          add_constraint(normal, pick, mult_p);
          break;
        }
        drop_constraint(drop);
      }
    }
    return pack(sol, iter);
  }

 private:
  bool is_active(Eigen::Index i) const {
    return std::find(active_.begin(), active_.begin() + q_, static_cast<int>(i)) != active_.begin() + q_;
  }

  void add_constraint(const Vec& normal, int row, double mult) {
    Vec d = J_.transpose() * normal;
    for (Eigen::Index j = n_ - 1; j > q_; --j) {
      const double h = std::hypot(d(j - 1), d(j));
      if (h == 0.0) continue;
      const double c = d(j - 1) / h;
      const double s = d(j) / h;
      d(j - 1) = h;
      d(j) = 0.0;
      for (Eigen::Index k = 0; k < n_; ++k) {
        const double a = J_(k, j - 1);
        const double b = J_(k, j);
        J_(k, j - 1) = c * a + s * b;
        J_(k, j) = -s * a + c * b;
      }
    }
    R_.col(q_).head(q_ + 1) = d.head(q_ + 1);
    if (static_cast<Eigen::Index>(active_.size()) <= q_) {
      active_.resize(q_ + 1);
      mult_.conservativeResize(q_ + 1);
    }
    active_[q_] = row;
    mult_(q_) = mult;
    ++q_;
  }

  void drop_constraint(int l) {
    for (int j = l; j < q_ - 1; ++j) {
      R_.col(j) = R_.col(j + 1);
      active_[j] = active_[j + 1];
      mult_(j) = mult_(j + 1);
    }
    R_.col(q_ - 1).setZero();
    for (int j = l; j < q_ - 1; ++j) {
      const double h = std::hypot(R_(j, j), R_(j + 1, j));
      if (h == 0.0) continue;
      const double c = R_(j, j) / h;
      const double s = R_(j + 1, j) / h;
      for (int k = j; k < q_ - 1; ++k) {
        const double a = R_(j, k);
        const double b = R_(j + 1, k);
        R_(j, k) = c * a + s * b;
        R_(j + 1, k) = -s * a + c * b;
      }
      for (Eigen::Index k = 0; k < n_; ++k) {
        const double a = J_(k, j);
        const double b = J_(k, j + 1);
        J_(k, j) = c * a + s * b;
        J_(k, j + 1) = -s * a + c * b;
      }
    }
    --q_;
  }

  QpSolution& infeasible(QpSolution& sol, int row, int iter) {
    sol.status = QpStatus::kInfeasible;
    sol.most_violated_row = row;
    return pack(sol, iter);
  }

  QpSolution& pack(QpSolution& sol, int iter) {
    sol.u_star = u_;
    sol.duals = Vec::Zero(qp_.rows());
    for (int j = 0; j < q_; ++j) sol.duals(active_[j]) = std::max(0.0, mult_(j));
    sol.iterations = iter;
    finalize(qp_, sol);
    return sol;
  }

  const QpProblem& qp_;
  double tol_;
  int max_iter_;
  Eigen::Index n_;
  Mat J_;
  Mat R_;
  Vec u_;
  Vec row_norm_;
  std::vector<int> active_;
  Vec mult_;
  int q_ = 0;
};

/// Primal active-set method from a feasible point (range-space EQP solves).
inline QpSolution primal_active_set(const QpProblem& qp, const Eigen::LLT<Mat>& llt, Vec u, double tol,
                                    int max_iter) {
  QpSolution sol;
  const auto p = qp.rows();
  std::vector<int> W;
  int iter = 0;
  while (true) {
    if (++iter > max_iter) {
      sol.status = QpStatus::kMaxIterations;
      break;
    }
    // Step p solving min 0.5 p'Hp + c'p, G_W p = 0.
    const Vec c = qp.H * u + qp.f;
    Vec step;
    Vec y;
    if (W.empty()) {
      step = -llt.solve(c);
    } else {
      Mat A(static_cast<Eigen::Index>(W.size()), qp.dim());
      for (std::size_t j = 0; j < W.size(); ++j) A.row(static_cast<Eigen::Index>(j)) = qp.G.row(W[j]);
      const Mat hinv_at = llt.solve(A.transpose());
      const Vec hinv_c = llt.solve(c);
      y = (A * hinv_at).ldlt().solve(-(A * hinv_c));
      step = -hinv_c - hinv_at * y;
    }
    if (step.lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + u.lpNorm<Eigen::Infinity>())) {
      if (W.empty()) {
        sol.status = QpStatus::kOptimal;
        break;
      }
      Eigen::Index jmin = 0;
      const double ymin = y.minCoeff(&jmin);
      if (ymin >= -tol) {
        sol.status = QpStatus::kOptimal;
        break;
      }
      W.erase(W.begin() + jmin);
      continue;
    }
    double alpha = 1.0;
    int blocking = -1;
    for (Eigen::Index i = 0; i < p; ++i) {
      if (std::find(W.begin(), W.end(), static_cast<int>(i)) != W.end()) continue;
      const double gp = qp.G.row(i).dot(step);
      if (gp <= 1e-14 * qp.G.row(i).norm() * step.norm()) continue;
      const double ratio = std::max(0.0, (qp.g(i) - qp.G.row(i).dot(u)) / gp);
      if (ratio < alpha) {
        alpha = ratio;
        blocking = static_cast<int>(i);
      }
    }
    u += alpha * step;
    if (blocking >= 0) W.push_back(blocking);
  }
  sol.u_star = u;
  sol.duals = Vec::Zero(p);
  if (!W.empty()) {
    Mat A(static_cast<Eigen::Index>(W.size()), qp.dim());
    for (std::size_t j = 0; j < W.size(); ++j) A.row(static_cast<Eigen::Index>(j)) = qp.G.row(W[j]);
    const Vec c = qp.H * u + qp.f;
    // Least-squares multipliers for H u + f + A'y = 0.
    const Vec y = A.transpose().colPivHouseholderQr().solve(-c);
    for (std::size_t j = 0; j < W.size(); ++j) sol.duals(W[j]) = std::max(0.0, y(static_cast<Eigen::Index>(j)));
  }
  sol.iterations = iter;
  sol.used_fallback = true;
  finalize(qp, sol);
  return sol;
}

}  // namespace detail

/// Solves a strictly convex QP.
///
/// The dual active-set route starts at the unconstrained minimum, so only
/// binding rows ever enter the working set. A warm-start set is tried first
/// as an equality-constrained guess and accepted only if it is KKT-optimal.
/// When a feasible point is supplied and the dual route reports infeasibility
/// or stalls, a primal active-set solve from that point is used instead.
inline QpSolution solve(const QpProblem& qp, const SolverSettings& settings = {},
                        const std::optional<Vec>& feasible_point = std::nullopt) {
  detail::check_problem(qp);
  if (!(settings.tol > 0.0)) throw std::invalid_argument("QP: tol must be positive");
  const int max_iter =
      settings.max_iter > 0 ? settings.max_iter : static_cast<int>(50 * (qp.rows() + qp.dim()));
  Eigen::LLT<Mat> llt(qp.H);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("QP: H is not positive definite");

  if (settings.warm_start && !settings.warm_start->empty()) {
    std::vector<int> W = *settings.warm_start;
    std::sort(W.begin(), W.end());
    W.erase(std::unique(W.begin(), W.end()), W.end());
    const bool in_range =
        std::all_of(W.begin(), W.end(), [&](int i) { return i >= 0 && i < static_cast<int>(qp.rows()); });
    if (in_range) {
      if (auto guess = detail::equality_solve(qp, llt, W)) {
        QpSolution sol;
        sol.u_star = guess->first;
        sol.duals = Vec::Zero(qp.rows());
        for (std::size_t j = 0; j < W.size(); ++j) sol.duals(W[j]) = guess->second(static_cast<Eigen::Index>(j));
        bool feasible = (guess->second.array() >= -settings.tol).all();
        for (Eigen::Index i = 0; feasible && i < qp.rows(); ++i) {
          feasible = qp.G.row(i).dot(sol.u_star) - qp.g(i) <=
                     detail::feasibility_slack(qp, i, sol.u_star, settings.tol * 1e-3);
        }
        if (feasible) {
          sol.duals = sol.duals.cwiseMax(0.0);
          sol.iterations = 1;
          sol.warm_started = true;
          detail::finalize(qp, sol);
          if (sol.kkt_residual <= settings.tol) return sol;
        }
      }
    }
  }

  QpSolution sol = detail::DualActiveSet(qp, llt, settings.tol, max_iter).run();
  if (!sol.ok() && feasible_point) {
    require_size(*feasible_point, qp.dim(), "feasible point");
    if (qp.rows() == 0 || (qp.G * *feasible_point - qp.g).maxCoeff() <= settings.tol) {
      QpSolution fb = detail::primal_active_set(qp, llt, *feasible_point, settings.tol, max_iter);
      fb.iterations += sol.iterations;
      if (fb.ok() || sol.status == QpStatus::kInfeasible) return fb;
    }
  }
  if (sol.status == QpStatus::kInfeasible) {
    // Report the row violated most at the final iterate.
    const Vec viol = qp.G * sol.u_star - qp.g;
    Eigen::Index worst = 0;
    if (viol.size() > 0) viol.maxCoeff(&worst);
    if (sol.most_violated_row < 0) sol.most_violated_row = static_cast<int>(worst);
  }
  return sol;
}

}  // namespace visifilter
