#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "visifilter/constraints.hpp"
#include "visifilter/kinematics.hpp"
#include "visifilter/qp.hpp"
#include "visifilter/visibility.hpp"
#include "visifilter/world.hpp"

namespace visifilter {

struct FilterConfig {
  Mat R_q;  // m x m, symmetric positive definite
  double k_lambda = 1e-3;
  double k_mu = 1e-3;
  ConstraintParams params;
  double dt = 0.01;
  double camera_rate = 10.0;  // Hz
  std::size_t n_max = 50;
  std::uint64_t seed = 0;
  SolverSettings solver;
  int max_corrections = 6;  // secant re-solves per tick before backtracking
  int max_backtracks = 40;

  void validate(int m) const {
    if (R_q.rows() != m || R_q.cols() != m) throw ShapeError("R_q must be m x m");
    if ((R_q - R_q.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw std::invalid_argument("R_q must be symmetric");
    if (Eigen::LLT<Mat>(R_q).info() != Eigen::Success) throw std::invalid_argument("R_q must be positive definite");
    if (!(k_lambda > 0.0 && k_mu > 0.0)) throw std::invalid_argument("k_lambda and k_mu must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (!(camera_rate > 0.0)) throw std::invalid_argument("camera_rate must be positive");
    if (n_max < 1) throw std::invalid_argument("n_max must be at least 1");
    params.validate();
  }
};

struct SolverStats {
  QpStatus status = QpStatus::kOptimal;
  int iterations = 0;
  double kkt_residual = 0.0;
  bool warm_started = false;
  int corrections = 0;  // secant re-solves
  int backtracks = 0;   // halvings of the QP step
};

struct FilterOutput {
  Vec v;
  Vec v_lambda;
  Vec v_mu;
  double deviation = 0.0;
  std::vector<std::string> active_constraints;
  SolverStats stats;
  bool emergency_stop = false;  // solver failed, stopping input applied
  bool breach = false;          // some row was below -eps_num on entry
};

/// Everything one tick produced, including the QP that was finally solved.
struct StepResult {
  FilterOutput out;
  AugmentedState next;
  std::vector<ConstraintRow> rows;  // at the input state
  QpProblem qp;
  QpSolution solution;
};

inline double deviation_cost(const Vec& v, const Vec& v_ref, const Mat& R_q) {
  if (v.size() != v_ref.size() || R_q.rows() != v.size() || R_q.cols() != v.size()) {
    throw ShapeError("deviation_cost: shape mismatch");
  }
  const Vec d = v - v_ref;
  return d.dot(R_q * d);
}

/// True when an observation event falls on tick k (events at i / camera_rate).
inline bool is_event_tick(std::int64_t k, double dt, double camera_rate) {
  if (k <= 0) return true;
  const auto idx = [&](std::int64_t j) { return std::floor(static_cast<double>(j) * dt * camera_rate + 1e-9); };
  return idx(k) > idx(k - 1);
}

/// One tick of zero-order hold: RK4 on q, exact on lambda and mu, then
/// clamps values within 1e-9 of their bounds.
inline AugmentedState advance_state(const AugmentedState& x, const Vec& u, const RobotModel& model, double dt) {
  const int m = model.input_dim();
  const auto n = static_cast<Eigen::Index>(x.num_active());
  require_size(u, m + 2 * n, "augmented input");
  AugmentedState y = x;
  y.q = integrate_configuration(model, x.q, u.head(m), dt);
  y.aux.lambda = x.aux.lambda + dt * u.segment(m, n);
  y.aux.mu = x.aux.mu + dt * u.segment(m + n, n);
  constexpr double clamp_tol = 1e-9;
  for (Eigen::Index i = 0; i < n; ++i) {
    double& lam = y.aux.lambda(i);
    double& mu = y.aux.mu(i);
    if (lam > 1.0 && lam <= 1.0 + clamp_tol) lam = 1.0;
    if (mu < 0.0 && mu >= -clamp_tol) mu = 0.0;
    if (mu > 1.0 && mu <= 1.0 + clamp_tol) mu = 1.0;
  }
  return y;
}

/// The per-tick safety filter. Holds references to the scene; keeps only a
/// warm-start cache between ticks.
class SafetyFilter {
 public:
  SafetyFilter(FilterConfig cfg, const RobotModel& model, const VisibilityModel& vis, const LandmarkStore& store,
               const World& world)
      : cfg_(std::move(cfg)), model_(model), vis_(vis), store_(store), world_(world) {
    cfg_.validate(model_.input_dim());
  }

  const FilterConfig& config() const { return cfg_; }
  const RobotModel& model() const { return model_; }
  const VisibilityModel& visibility() const { return vis_; }
  const LandmarkStore& store() const { return store_; }
  const World& world() const { return world_; }

  AugmentedState initialize(const Vec& q0) const {
    return visifilter::initialize(q0, model_, vis_, store_, cfg_.params, world_, sampling(0));
  }

  /// Observation-time reset on the capped visible set.
  AugmentedState observation_event(const AugmentedState& x, std::uint64_t tick) const {
    return reinitialize(x, model_, vis_, store_, sampling(tick));
  }

  StepResult step(const AugmentedState& x, const Vec& v_ref);

 private:
  FeatureSampling sampling(std::uint64_t tick) const { return {cfg_.n_max, cfg_.seed, tick}; }

  QpProblem assemble(const std::vector<ConstraintRow>& rows, const std::vector<Vec>& corrections,
                     const Vec& u_ref) const;
  bool certified(const std::vector<ConstraintRow>& rows, const std::vector<ConstraintRow>& next,
                 std::vector<int>* failing) const;

  FilterConfig cfg_;
  const RobotModel& model_;
  const VisibilityModel& vis_;
  const LandmarkStore& store_;
  const World& world_;
  std::vector<LandmarkId> cached_ids_;
  std::vector<int> cached_active_;
};

inline QpProblem SafetyFilter::assemble(const std::vector<ConstraintRow>& rows, const std::vector<Vec>& corrections,
                                        const Vec& u_ref) const {
  const int m = model_.input_dim();
  const auto k = u_ref.size();
  const auto n = (k - m) / 2;
  Mat R = Mat::Zero(k, k);
  R.topLeftCorner(m, m) = cfg_.R_q;
  for (Eigen::Index i = 0; i < n; ++i) {
    R(m + i, m + i) = cfg_.k_lambda;
    R(m + n + i, m + n + i) = cfg_.k_mu;
  }
  const InputPolytope& V = model_.input_polytope();
  const auto nr = static_cast<Eigen::Index>(rows.size());
  QpProblem qp;
  qp.H = 2.0 * R;
  qp.f = -2.0 * (R * u_ref);
  qp.G = Mat::Zero(nr + V.A.rows(), k);
  qp.g = Vec(nr + V.A.rows());
  // h' >= -alpha h  <=>  -c u <= alpha h; h is floored at 0 so u = 0 stays feasible.
  for (Eigen::Index i = 0; i < nr; ++i) {
    const ConstraintRow& row = rows[static_cast<std::size_t>(i)];
    qp.G.row(i) = -(row.coeffs + corrections[static_cast<std::size_t>(i)]).transpose();
    qp.g(i) = row.alpha * std::max(row.value, 0.0);
  }
  qp.G.block(nr, 0, V.A.rows(), m) = V.A;
  qp.g.tail(V.A.rows()) = V.b;
  return qp;
}

// Sampled-data check: every row keeps at least twice the decay the continuous
// condition allows (h+ >= (1 - 2 alpha dt) h), and rows already below zero do
// not get worse. Visibility rows are checked exactly, since a landmark with
// lambda > 0 must stay inside the field of view for w_hat <= w to hold; the
// others get kCertifySlack to absorb rounding at h ~ 1e-15.
inline constexpr double kCertifySlack = 1e-12;

inline bool SafetyFilter::certified(const std::vector<ConstraintRow>& rows, const std::vector<ConstraintRow>& next,
                                    std::vector<int>* failing) const {
  bool ok = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double h = rows[i].value;
    const double decay = std::max(0.5, 1.0 - 2.0 * rows[i].alpha * cfg_.dt);
    const double slack = rows[i].family == Family::kVisibility ? 0.0 : kCertifySlack;
    const double target = h >= 0.0 ? decay * h - slack : h;
    if (!(next[i].value >= target)) {
      ok = false;
      if (failing) failing->push_back(static_cast<int>(i));
    }
  }
  return ok;
}

inline StepResult SafetyFilter::step(const AugmentedState& x, const Vec& v_ref) {
  const int m = model_.input_dim();
  require_size(v_ref, m, "reference input");
  const auto n = static_cast<Eigen::Index>(x.num_active());
  const Eigen::Index k = m + 2 * n;

  StepResult res;
  res.rows = build_rows(x, model_, vis_, store_, cfg_.params, world_);
  FilterOutput& out = res.out;
  for (const ConstraintRow& r : res.rows) out.breach = out.breach || r.value < -kNumericalTolerance;

  Vec u_ref = Vec::Zero(k);
  u_ref.head(m) = v_ref;
  std::vector<Vec> corrections(res.rows.size(), Vec::Zero(k));
  const auto nr = static_cast<int>(res.rows.size());

  SolverSettings settings = cfg_.solver;
  if (x.active_ids == cached_ids_ && !cached_active_.empty()) settings.warm_start = cached_active_;

  Vec u = Vec::Zero(k);
  bool accepted = false;
  for (int round = 0; round <= cfg_.max_corrections; ++round) {
    res.qp = assemble(res.rows, corrections, u_ref);
    res.solution = solve(res.qp, settings, Vec(Vec::Zero(k)));
    settings.warm_start = res.solution.active_set;
    out.stats.iterations += res.solution.iterations;
    out.stats.status = res.solution.status;
    out.stats.kkt_residual = res.solution.kkt_residual;
    out.stats.warm_started = out.stats.warm_started || res.solution.warm_started;
    if (!res.solution.ok()) break;
    u = res.solution.u_star;
    res.next = advance_state(x, u, model_, cfg_.dt);
    const auto next = evaluate_rows(res.next, model_, vis_, store_, cfg_.params, world_);
    std::vector<int> failing;
    if (certified(res.rows, next, &failing)) {
      accepted = true;
      break;
    }
    if (round == cfg_.max_corrections) break;
    // Secant update through the origin: make the corrected linear model
    // reproduce the observed one-step change at u.
    const double uu = u.squaredNorm();
    if (uu == 0.0) break;
    for (int i : failing) {
      Vec& c = corrections[static_cast<std::size_t>(i)];
      const Vec coeff = res.rows[static_cast<std::size_t>(i)].coeffs + c;
      const double observed = (next[static_cast<std::size_t>(i)].value - res.rows[static_cast<std::size_t>(i)].value) / cfg_.dt;
      c += ((observed - coeff.dot(u)) / uu) * u;
    }
    ++out.stats.corrections;
  }

  if (!res.solution.ok()) {
    out.emergency_stop = true;
    u.setZero();
    res.next = advance_state(x, u, model_, cfg_.dt);
    accepted = true;
  }
  if (!accepted) {
    // Shrink toward the stopping input, which always certifies.
    Vec base = u;
    double s = 1.0;
    for (int b = 0; b < cfg_.max_backtracks && !accepted; ++b) {
      s *= 0.5;
      ++out.stats.backtracks;
      u = s * base;
      res.next = advance_state(x, u, model_, cfg_.dt);
      accepted = certified(res.rows, evaluate_rows(res.next, model_, vis_, store_, cfg_.params, world_), nullptr);
    }
    if (!accepted) {
      u.setZero();
      res.next = advance_state(x, u, model_, cfg_.dt);
    }
  }

  out.v = u.head(m);
  out.v_lambda = u.segment(m, n);
  out.v_mu = u.segment(m + n, n);
  out.deviation = deviation_cost(out.v, v_ref, cfg_.R_q);
  if (out.emergency_stop) {
    out.active_constraints.push_back("emergency_stop");
  } else {
    for (int i : res.solution.active_set) {
      out.active_constraints.push_back(i < nr ? res.rows[static_cast<std::size_t>(i)].label()
                                              : "V[" + std::to_string(i - nr) + "]");
    }
    if (out.stats.backtracks > 0) out.active_constraints.push_back("backtrack");
  }
  cached_ids_ = x.active_ids;
  cached_active_ = res.solution.ok() ? res.solution.active_set : std::vector<int>{};
  return res;
}

/// Stateless single tick (cold solver start).
inline std::pair<FilterOutput, AugmentedState> filter_step(const AugmentedState& x, const Vec& v_ref,
                                                           const FilterConfig& cfg, const RobotModel& model,
                                                           const VisibilityModel& vis, const LandmarkStore& store,
                                                           const World& world) {
  SafetyFilter f(cfg, model, vis, store, world);
  StepResult r = f.step(x, v_ref);
  return {std::move(r.out), std::move(r.next)};
}

inline AugmentedState run_observation_event(const AugmentedState& x, const RobotModel& model,
                                            const VisibilityModel& vis, const LandmarkStore& store,
                                            const FilterConfig& cfg, std::uint64_t tick) {
  return reinitialize(x, model, vis, store, {cfg.n_max, cfg.seed, tick});
}

}  // namespace visifilter
