#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "visifilter/common.hpp"
#include "visifilter/kinematics.hpp"
#include "visifilter/visibility.hpp"
#include "visifilter/world.hpp"

namespace visifilter {

/// Auxiliary states, indexed like AugmentedState::active_ids.
struct AuxState {
  Vec lambda;
  Vec mu;
};

/// x = (q, lambda, mu). active_ids fixes the lambda/mu index order.
struct AugmentedState {
  Vec q;
  AuxState aux;
  std::vector<LandmarkId> active_ids;

  std::size_t num_active() const { return active_ids.size(); }
};

enum class Family : int { kScore = 1, kLambdaUpper = 2, kVisibility = 3, kMuLower = 4, kMuUpper = 5, kCollision = 6 };

inline constexpr int kNumFamilies = 6;

inline int family_index(Family f) { return static_cast<int>(f) - 1; }

/// One scalar constraint h(x) >= 0 with h' = coeffs . u, u = (v, v_lambda, v_mu).
struct ConstraintRow {
  Family family = Family::kScore;
  LandmarkId landmark = -1;  // families 2-5
  int component = -1;        // family 3: rho component
  double value = 0.0;
  Vec coeffs;
  double alpha = 1.0;
  bool frozen = false;  // family 3 row replaced by its mu = 1 branch

  std::string label() const {
    std::string s = "h" + std::to_string(static_cast<int>(family));
    if (landmark >= 0) s += "[" + std::to_string(landmark) + "]";
    if (component >= 0) s += "." + std::to_string(component);
    return s;
  }
};

struct ConstraintParams {
  double W = 1.0;                    // required score
  std::array<double, kNumFamilies> alphas{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  bool collision_enabled = false;
  double robot_radius = 0.3;

  void validate() const {
    if (!(W > 0.0)) throw std::invalid_argument("required score W must be positive");
    for (double a : alphas) {
      if (!(a > 0.0)) throw std::invalid_argument("class-K gains must be positive");
    }
    if (!(robot_radius >= 0.0)) throw std::invalid_argument("robot radius must be nonnegative");
  }
  double alpha(Family f) const { return alphas[family_index(f)]; }
};

/// Feature-cap settings for the visible set handed to the filter.
struct FeatureSampling {
  std::size_t n_max = 50;
  std::uint64_t seed = 0;
  std::uint64_t tick = 0;
};

class InfeasibleStart : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double smoothed_score(const AuxState& aux, const Vec& weights) {
  if (weights.size() != aux.lambda.size()) throw ShapeError("smoothed_score: weights/lambda length mismatch");
  return aux.lambda.dot(weights);
}

inline Vec active_weights(const AugmentedState& x, const LandmarkStore& store) {
  Vec w(static_cast<Eigen::Index>(x.num_active()));
  for (std::size_t i = 0; i < x.num_active(); ++i) w(static_cast<Eigen::Index>(i)) = store.at(x.active_ids[i]).weight;
  return w;
}

inline void check_consistent(const AugmentedState& x, const RobotModel& model) {
  require_size(x.q, model.config_dim(), "configuration");
  const auto n = static_cast<Eigen::Index>(x.num_active());
  if (x.aux.lambda.size() != n || x.aux.mu.size() != n) {
    throw std::logic_error("augmented state: lambda/mu length differs from the active id list");
  }
}

/// Number of rows emitted by build_rows: 1 + (d + 3) N' + [collision].
inline std::size_t row_count(std::size_t n_active, int d, bool collision) {
  return 1 + static_cast<std::size_t>(d + 3) * n_active + (collision ? 1 : 0);
}

namespace detail {

inline std::vector<ConstraintRow> build_rows_impl(const AugmentedState& x, const RobotModel& model,
                                                  const VisibilityModel& vis, const LandmarkStore& store,
                                                  const ConstraintParams& params, const World& world,
                                                  bool with_coeffs);

}  // namespace detail

/// Builds the constraint set h1..h6 at x with the linear maps u -> h'.
inline std::vector<ConstraintRow> build_rows(const AugmentedState& x, const RobotModel& model,
                                             const VisibilityModel& vis, const LandmarkStore& store,
                                             const ConstraintParams& params, const World& world) {
  return detail::build_rows_impl(x, model, vis, store, params, world, true);
}

/// Row values only (coeffs left empty), same order as build_rows().
inline std::vector<ConstraintRow> evaluate_rows(const AugmentedState& x, const RobotModel& model,
                                                const VisibilityModel& vis, const LandmarkStore& store,
                                                const ConstraintParams& params, const World& world) {
  return detail::build_rows_impl(x, model, vis, store, params, world, false);
}

inline std::vector<ConstraintRow> detail::build_rows_impl(const AugmentedState& x, const RobotModel& model,
                                                          const VisibilityModel& vis, const LandmarkStore& store,
                                                          const ConstraintParams& params, const World& world,
                                                          bool with_coeffs) {
  check_consistent(x, model);
  const int m = model.input_dim();
  const auto N = static_cast<Eigen::Index>(x.num_active());
  const Eigen::Index k = m + 2 * N;
  const int d = vis.dim();
  std::vector<ConstraintRow> rows;
  rows.reserve(row_count(x.num_active(), d, params.collision_enabled));

  const Vec weights = active_weights(x, store);
  {
    ConstraintRow r;
    r.family = Family::kScore;
    r.value = smoothed_score(x.aux, weights) - params.W;
    if (with_coeffs) {
      r.coeffs = Vec::Zero(k);
      r.coeffs.segment(m, N) = weights;
    }
    r.alpha = params.alpha(Family::kScore);
    rows.push_back(std::move(r));
  }

  const Pose T = model.sensor_pose(x.q);
  const Pose T_inv = T.inverse(Eigen::Isometry);
  const TwistMaps maps = with_coeffs ? model.twist_maps_unchecked(x.q) : TwistMaps{};
  for (Eigen::Index l = 0; l < N; ++l) {
    const LandmarkId id = x.active_ids[static_cast<std::size_t>(l)];
    const double lam = x.aux.lambda(l);
    const double mu = x.aux.mu(l);
    const Eigen::Index il = m + l;
    const Eigen::Index im = m + N + l;

    ConstraintRow h2;
    h2.family = Family::kLambdaUpper;
    h2.landmark = id;
    h2.value = 1.0 - lam;
    if (with_coeffs) {
      h2.coeffs = Vec::Zero(k);
      h2.coeffs(il) = -1.0;
    }
    h2.alpha = params.alpha(Family::kLambdaUpper);
    rows.push_back(std::move(h2));

    const Vec3 p = T_inv * store.at(id).world_position;
    if (vis.in_domain(p)) {
      const Vec rho = vis.rho_unchecked(p);
      Mat drho_dv;  // d x m
      if (with_coeffs) drho_dv = vis.rho_grad_unchecked(p) * landmark_rate_jacobian(p, maps);
      for (int c = 0; c < d; ++c) {
        ConstraintRow h3;
        h3.family = Family::kVisibility;
        h3.landmark = id;
        h3.component = c;
        h3.value = -mu * lam + (1.0 - mu) * rho(c);
        if (with_coeffs) {
          h3.coeffs = Vec::Zero(k);
          h3.coeffs.head(m) = (1.0 - mu) * drho_dv.row(c).transpose();
          h3.coeffs(il) = -mu;
          h3.coeffs(im) = -(lam + rho(c));
        }
        h3.alpha = params.alpha(Family::kVisibility);
        rows.push_back(std::move(h3));
      }
    } else {
      // Outside the differentiable domain: keep only the mu = 1 branch, -lambda.
      for (int c = 0; c < d; ++c) {
        ConstraintRow h3;
        h3.family = Family::kVisibility;
        h3.landmark = id;
        h3.component = c;
        h3.value = -lam;
        if (with_coeffs) {
          h3.coeffs = Vec::Zero(k);
          h3.coeffs(il) = -1.0;
        }
        h3.alpha = params.alpha(Family::kVisibility);
        h3.frozen = true;
        rows.push_back(std::move(h3));
      }
    }

    ConstraintRow h4;
    h4.family = Family::kMuLower;
    h4.landmark = id;
    h4.value = mu;
    if (with_coeffs) {
      h4.coeffs = Vec::Zero(k);
      h4.coeffs(im) = 1.0;
    }
    h4.alpha = params.alpha(Family::kMuLower);
    rows.push_back(std::move(h4));

    ConstraintRow h5;
    h5.family = Family::kMuUpper;
    h5.landmark = id;
    h5.value = 1.0 - mu;
    if (with_coeffs) {
      h5.coeffs = Vec::Zero(k);
      h5.coeffs(im) = -1.0;
    }
    h5.alpha = params.alpha(Family::kMuUpper);
    rows.push_back(std::move(h5));
  }

  if (params.collision_enabled) {
    const Vec2 pos = x.q.head<2>();
    const DistanceQuery dq = signed_distance(world, pos);
    ConstraintRow h6;
    h6.family = Family::kCollision;
    h6.value = dq.s - params.robot_radius;
    if (with_coeffs) {
      h6.coeffs = Vec::Zero(k);
      h6.coeffs.head(m) = (dq.grad.transpose() * model.jacobian_unchecked(x.q).topRows(2)).transpose();
    }
    h6.alpha = params.alpha(Family::kCollision);
    rows.push_back(std::move(h6));
  }
  return rows;
}

/// Values of build_rows() only, in the same order.
inline Vec row_values(const std::vector<ConstraintRow>& rows) {
  Vec v(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) v(static_cast<Eigen::Index>(i)) = rows[i].value;
  return v;
}

/// Minimum value per family (+inf where a family has no rows).
inline std::array<double, kNumFamilies> family_minima(const std::vector<ConstraintRow>& rows) {
  std::array<double, kNumFamilies> out;
  out.fill(std::numeric_limits<double>::infinity());
  for (const ConstraintRow& r : rows) {
    double& slot = out[family_index(r.family)];
    slot = std::min(slot, r.value);
  }
  return out;
}

namespace detail {

inline AugmentedState fresh_state(const Vec& q, std::vector<LandmarkId> ids) {
  AugmentedState x;
  x.q = q;
  const auto n = static_cast<Eigen::Index>(ids.size());
  x.active_ids = std::move(ids);
  x.aux.lambda = Vec::Ones(n);
  x.aux.mu = Vec::Zero(n);
  return x;
}

inline std::vector<LandmarkId> capped_visible(const Vec& q, const RobotModel& model, const VisibilityModel& vis,
                                              const LandmarkStore& store, const FeatureSampling& sampling) {
  const auto ids = visible_set(vis, model.sensor_pose(q), store);
  return sample_features(ids, sampling.n_max, sampling.seed, sampling.tick);
}

}  // namespace detail

/// Valid starting state: the (capped) visible set with lambda = 1, mu = 0.
inline AugmentedState initialize(const Vec& q0, const RobotModel& model, const VisibilityModel& vis,
                                 const LandmarkStore& store, const ConstraintParams& params, const World& world,
                                 const FeatureSampling& sampling) {
  params.validate();
  require_size(q0, model.config_dim(), "initial configuration");
  AugmentedState x = detail::fresh_state(q0, detail::capped_visible(q0, model, vis, store, sampling));
  const double w = total_weight(store, x.active_ids);
  if (w < params.W) {
    throw InfeasibleStart("initial score " + std::to_string(w) + " is below W = " + std::to_string(params.W) +
                          " (deficit " + std::to_string(params.W - w) + ")");
  }
  if (params.collision_enabled) {
    const double c = signed_distance(world, q0.head<2>()).s - params.robot_radius;
    if (c < 0.0) throw InfeasibleStart("initial configuration in collision (clearance " + std::to_string(c) + ")");
  }
  return x;
}

/// Observation-time reset: the active set becomes the currently visible
/// (capped) set with lambda = 1, mu = 0; q is unchanged.
inline AugmentedState reinitialize(const AugmentedState& x_minus, const RobotModel& model,
                                   const VisibilityModel& vis, const LandmarkStore& store,
                                   const FeatureSampling& sampling) {
  return detail::fresh_state(x_minus.q, detail::capped_visible(x_minus.q, model, vis, store, sampling));
}

/// Test oracle for the disjunction (lambda <= 0) or (rho >= 0): true iff some
/// mu on a uniform grid over [0, 1] gives -mu lambda + (1 - mu) rho_k >= 0 for all k.
inline bool check_equivalence_sample(double lambda, const Vec& rho_vals, int mu_grid_size) {
  if (mu_grid_size < 2) throw std::invalid_argument("mu grid needs at least two points");
  for (int i = 0; i < mu_grid_size; ++i) {
    const double mu = static_cast<double>(i) / (mu_grid_size - 1);
    if (((-mu * lambda + (1.0 - mu) * rho_vals.array()) >= 0.0).all()) return true;
  }
  return false;
}

}  // namespace visifilter
