#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "visifilter/constraints.hpp"
#include "visifilter/filter.hpp"
#include "visifilter/kinematics.hpp"
#include "visifilter/qp.hpp"
#include "visifilter/visibility.hpp"
#include "visifilter/world.hpp"

namespace visifilter {

enum class RunMode { kFiltered, kBaseline };

enum class ReferenceKind { kCircular, kWallInspection, kExternal, kPiecewise };

struct ReferenceSpec {
  ReferenceKind kind = ReferenceKind::kCircular;
  // circular tracker around `center`
  Vec2 center = Vec2::Zero();
  double radius = 1.0;
  double omega = 1.0;
  double gain = 2.0;
  // wall inspection along world.walls[wall]
  double v_r = 0.3;
  double k_heading = 1.0;
  double k_servo = 2.0;
  int wall = 0;
  // external: (tick, command) pairs, held until the next entry; 0 before the first
  std::vector<std::pair<std::int64_t, Vec>> commands;
  // piecewise constant: values[i] on [i period, (i + 1) period), last one held
  double period = 1.0;
  std::vector<Vec> values;
};

struct RobotSpec {
  std::string model = "planar_cam_bot";  // or "diff_drive_gimbal"
  Vec q0 = Vec::Zero(3);
  Vec input_lower = Vec::Constant(3, -1.0);
  Vec input_upper = Vec::Constant(3, 1.0);
  std::optional<SensorMount> mount;  // defaults: forward_x (planar), optical (gimbal)
};

struct VisibilitySpec {
  std::string model = "sector_fov_2d";  // or "stereo_frustum"
  double psi = 1.0;
  double range = 1.0;
  CameraIntrinsics intrinsics;
  double r_min = 0.3;
  double r_max = 5.0;
};

struct LandmarkSpec {
  std::string distribution = "uniform_box";  // or "walls"
  UniformBoxSpec box;
  double weight = 1.0;  // walls
};

struct Scenario {
  std::string name = "scenario";
  RunMode mode = RunMode::kFiltered;
  double duration = 20.0;
  RobotSpec robot;
  VisibilitySpec visibility;
  World world;
  LandmarkSpec landmarks;
  FilterConfig filter;  // filter.dt is the tick length
  ReferenceSpec reference;

  std::int64_t num_ticks() const { return std::llround(duration / filter.dt); }
};

inline std::unique_ptr<RobotModel> make_model(const RobotSpec& spec) {
  const InputPolytope V = InputPolytope::box(spec.input_lower, spec.input_upper);
  if (!V.contains_origin()) throw std::invalid_argument("input box must contain the stopping input 0");
  if (spec.model == "planar_cam_bot") {
    return std::make_unique<PlanarCamBot>(V, spec.mount.value_or(SensorMount::kForwardX));
  }
  if (spec.model == "diff_drive_gimbal") {
    return std::make_unique<DiffDriveGimbal>(V, spec.mount.value_or(SensorMount::kOptical));
  }
  throw std::invalid_argument("unknown robot model '" + spec.model + "'");
}

inline std::unique_ptr<VisibilityModel> make_visibility(const VisibilitySpec& spec) {
  if (spec.model == "sector_fov_2d") return std::make_unique<SectorFov2D>(spec.psi, spec.range);
  if (spec.model == "stereo_frustum") return std::make_unique<StereoFrustum>(spec.intrinsics, spec.r_min, spec.r_max);
  throw std::invalid_argument("unknown visibility model '" + spec.model + "'");
}

inline LandmarkStore make_landmarks(const LandmarkSpec& spec, const World& world) {
  if (spec.distribution == "uniform_box") return generate_landmarks(spec.box);
  if (spec.distribution == "walls") return generate_landmarks(world, spec.weight);
  throw std::invalid_argument("unknown landmark distribution '" + spec.distribution + "'");
}

/// v_ref at tick k for the built-in generators. External references return
/// the held command.
inline Vec reference_input(const ReferenceSpec& ref, const World& world, const RobotModel& model, std::int64_t tick,
                           double t, const Vec& q) {
  const int m = model.input_dim();
  Vec v = Vec::Zero(m);
  switch (ref.kind) {
    case ReferenceKind::kCircular: {
      const double r = ref.radius, w = ref.omega, k = ref.gain;
      v(0) = -r * w * std::sin(w * t) + k * (ref.center.x() + r * std::cos(w * t) - q(0));
      v(1) = r * w * std::cos(w * t) + k * (ref.center.y() + r * std::sin(w * t) - q(1));
      return v;
    }
    case ReferenceKind::kWallInspection: {
      if (model.config_dim() != 4) throw std::invalid_argument("wall_inspection reference needs diff_drive_gimbal");
      if (ref.wall < 0 || static_cast<std::size_t>(ref.wall) >= world.walls.size()) {
        throw std::invalid_argument("wall_inspection reference: no such wall");
      }
      const FeatureWall& wall = world.walls[static_cast<std::size_t>(ref.wall)];
      const Vec2 dir = (wall.end - wall.start).normalized();
      const double along = std::atan2(dir.y(), dir.x());
      Vec2 normal(-dir.y(), dir.x());
      if (normal.dot(wall.start - q.head<2>()) < 0.0) normal = -normal;  // toward the wall
      const double facing = std::atan2(normal.y(), normal.x());
      v(0) = ref.v_r;
      v(1) = ref.k_heading * wrap_angle(along - q(2));
      // Servo: proportional on the camera heading, base yaw fed forward.
      v(2) = ref.k_servo * wrap_angle(facing - (q(2) + q(3))) - v(1);
      return v;
    }
    case ReferenceKind::kExternal: {
      for (const auto& [k, cmd] : ref.commands) {
        if (k > tick) break;
        v = cmd;
      }
      return v;
    }
    case ReferenceKind::kPiecewise: {
      if (ref.values.empty()) return v;
      const auto i = static_cast<std::size_t>(std::max(0.0, std::floor(t / ref.period + 1e-9)));
      return ref.values[std::min(i, ref.values.size() - 1)];
    }
  }
  return v;
}

struct TraceRecord {
  std::int64_t tick = 0;
  double t = 0.0;
  Vec q;                  // angles wrapped
  double w = 0.0;         // score over the whole store
  int visible = 0;        // visible landmark count
  int n_active = 0;       // landmarks handed to the filter
  double w_hat = std::numeric_limits<double>::quiet_NaN();
  std::array<double, kNumFamilies> h_min;  // per family, after any event reset
  double h1_before_event = std::numeric_limits<double>::quiet_NaN();
  Vec v_ref;
  Vec v_star;
  double deviation = 0.0;
  bool event = false;
  int iters = 0;
  int corrections = 0;
  int backtracks = 0;
  bool emergency_stop = false;
  std::vector<std::string> active_constraints;
  std::vector<LandmarkId> active_ids;
  Vec lambda;
  Vec mu;
  Vec v_lambda;
  Vec v_mu;
};

struct Trace {
  std::vector<TraceRecord> records;
  int config_dim = 0;
  int input_dim = 0;
};

/// Steppable scenario execution. Each call to step() emits the record for the
/// current tick (event reset, filter, bookkeeping) and then advances one dt.
class Simulator {
 public:
  explicit Simulator(Scenario sc)
      : sc_(std::move(sc)),
        model_(make_model(sc_.robot)),
        vis_(make_visibility(sc_.visibility)),
        store_(make_landmarks(sc_.landmarks, sc_.world)) {
    if (!(sc_.duration >= 0.0)) throw std::invalid_argument("duration must be nonnegative");
    require_size(sc_.robot.q0, model_->config_dim(), "initial configuration");
    filter_.emplace(sc_.filter, *model_, *vis_, store_, sc_.world);
    q_ = sc_.robot.q0;
    if (sc_.mode == RunMode::kFiltered) x_ = filter_->initialize(q_);
  }

  // The filter holds references into this object.
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  const Scenario& scenario() const { return sc_; }
  const RobotModel& model() const { return *model_; }
  const VisibilityModel& visibility() const { return *vis_; }
  const LandmarkStore& store() const { return store_; }
  const World& world() const { return sc_.world; }
  const Vec& q() const { return sc_.mode == RunMode::kFiltered ? x_.q : q_; }
  const AugmentedState& state() const { return x_; }
  std::int64_t tick() const { return tick_; }
  std::int64_t num_ticks() const { return sc_.num_ticks(); }
  bool finished() const { return tick_ > num_ticks(); }
  double time() const { return static_cast<double>(tick_) * sc_.filter.dt; }

  /// Reference from the scenario's generator at the current tick.
  Vec reference() const {
    return reference_input(sc_.reference, sc_.world, *model_, tick_, time(), q());
  }

  TraceRecord step() { return step(reference()); }

  TraceRecord step(const Vec& v_ref) {
    require_size(v_ref, model_->input_dim(), "reference input");
    const FilterConfig& cfg = sc_.filter;
    TraceRecord rec;
    rec.tick = tick_;
    rec.t = time();
    rec.v_ref = v_ref;
    rec.event = is_event_tick(tick_, cfg.dt, cfg.camera_rate);

    if (sc_.mode == RunMode::kFiltered) {
      if (rec.event && tick_ > 0) {
        rec.h1_before_event = build_rows(x_, *model_, *vis_, store_, cfg.params, sc_.world).front().value;
        x_ = filter_->observation_event(x_, static_cast<std::uint64_t>(tick_));
      }
      StepResult r = filter_->step(x_, v_ref);
      rec.h_min = family_minima(r.rows);
      rec.w_hat = smoothed_score(x_.aux, active_weights(x_, store_));
      rec.v_star = r.out.v;
      rec.v_lambda = r.out.v_lambda;
      rec.v_mu = r.out.v_mu;
      rec.deviation = r.out.deviation;
      rec.iters = r.out.stats.iterations;
      rec.corrections = r.out.stats.corrections;
      rec.backtracks = r.out.stats.backtracks;
      rec.emergency_stop = r.out.emergency_stop;
      rec.active_constraints = std::move(r.out.active_constraints);
      rec.active_ids = x_.active_ids;
      rec.lambda = x_.aux.lambda;
      rec.mu = x_.aux.mu;
      rec.n_active = static_cast<int>(x_.num_active());
      fill_observation(rec, x_.q);
      x_ = std::move(r.next);
    } else {
      rec.h_min.fill(std::numeric_limits<double>::quiet_NaN());
      rec.h_min[family_index(Family::kCollision)] = collision_value(q_);
      const QpSolution proj = project_to_inputs(v_ref);
      rec.v_star = proj.u_star;
      rec.iters = proj.iterations;
      rec.deviation = deviation_cost(rec.v_star, v_ref, cfg.R_q);
      const auto ids = visible_set(*vis_, model_->sensor_pose(q_), store_);
      rec.n_active = static_cast<int>(std::min(ids.size(), cfg.n_max));
      fill_observation(rec, q_);
      q_ = integrate_configuration(*model_, q_, rec.v_star, cfg.dt);
    }
    ++tick_;
    return rec;
  }

 private:
  void fill_observation(TraceRecord& rec, const Vec& q) const {
    rec.q = model_->reported(q);
    const auto ids = visible_set(*vis_, model_->sensor_pose(q), store_);
    rec.visible = static_cast<int>(ids.size());
    rec.w = total_weight(store_, ids);
  }

  double collision_value(const Vec& q) const {
    if (!sc_.filter.params.collision_enabled) return std::numeric_limits<double>::infinity();
    return signed_distance(sc_.world, q.head<2>()).s - sc_.filter.params.robot_radius;
  }

  // Euclidean projection of v_ref onto the input polytope.
  QpSolution project_to_inputs(const Vec& v_ref) const {
    const InputPolytope& V = model_->input_polytope();
    QpProblem qp;
    const auto m = v_ref.size();
    qp.H = Mat::Identity(m, m);
    qp.f = -v_ref;
    qp.G = V.A;
    qp.g = V.b;
    QpSolution s = solve(qp, {}, Vec(Vec::Zero(m)));
    if (!s.ok()) s.u_star = Vec::Zero(m);
    return s;
  }

  Scenario sc_;
  std::unique_ptr<RobotModel> model_;
  std::unique_ptr<VisibilityModel> vis_;
  LandmarkStore store_;
  std::optional<SafetyFilter> filter_;
  AugmentedState x_;
  Vec q_;
  std::int64_t tick_ = 0;
};

/// Runs a scenario to completion: num_ticks() + 1 records at t = k dt.
inline Trace run(const Scenario& sc) {
  Simulator sim(sc);
  Trace trace;
  trace.config_dim = sim.model().config_dim();
  trace.input_dim = sim.model().input_dim();
  trace.records.reserve(static_cast<std::size_t>(sim.num_ticks() + 1));
  while (!sim.finished()) trace.records.push_back(sim.step());
  return trace;
}

struct Metrics {
  std::int64_t ticks = 0;
  std::int64_t events = 0;
  double min_w = 0.0;
  double mean_w = 0.0;
  double min_w_hat = std::numeric_limits<double>::quiet_NaN();
  double mean_w_hat = std::numeric_limits<double>::quiet_NaN();
  std::array<double, kNumFamilies> h_min;
  double total_deviation = 0.0;
  std::int64_t breaches = 0;  // ticks with some row below -eps_num
  int min_visible = 0;
  int min_active = 0;
};

/// Summary of the per-tick columns. Uses only values that trace.csv carries,
/// so a replay of the CSV reproduces it exactly.
inline Metrics metrics(std::span<const double> t, std::span<const double> w, std::span<const double> w_hat,
                       std::span<const std::array<double, kNumFamilies>> h, std::span<const double> deviation,
                       std::span<const int> event, std::span<const int> visible, std::span<const int> active) {
  const std::size_t n = t.size();
  if (n == 0) throw std::invalid_argument("metrics: empty trace");
  Metrics out;
  out.ticks = static_cast<std::int64_t>(n);
  out.h_min.fill(std::numeric_limits<double>::infinity());
  out.min_w = std::numeric_limits<double>::infinity();
  double sum_w = 0.0, sum_wh = 0.0, min_wh = std::numeric_limits<double>::infinity();
  std::size_t n_wh = 0;
  out.min_visible = visible[0];
  out.min_active = active[0];
  for (std::size_t i = 0; i < n; ++i) {
    out.min_w = std::min(out.min_w, w[i]);
    sum_w += w[i];
    if (std::isfinite(w_hat[i])) {
      min_wh = std::min(min_wh, w_hat[i]);
      sum_wh += w_hat[i];
      ++n_wh;
    }
    bool breach = false;
    for (int f = 0; f < kNumFamilies; ++f) {
      const double v = h[i][static_cast<std::size_t>(f)];
      if (std::isnan(v)) continue;
      out.h_min[static_cast<std::size_t>(f)] = std::min(out.h_min[static_cast<std::size_t>(f)], v);
      breach = breach || v < -kNumericalTolerance;
    }
    out.breaches += breach ? 1 : 0;
    out.events += event[i] ? 1 : 0;
    out.min_visible = std::min(out.min_visible, visible[i]);
    out.min_active = std::min(out.min_active, active[i]);
    if (i + 1 < n) out.total_deviation += deviation[i] * (t[i + 1] - t[i]);
  }
  out.mean_w = sum_w / static_cast<double>(n);
  if (n_wh > 0) {
    out.min_w_hat = min_wh;
    out.mean_w_hat = sum_wh / static_cast<double>(n_wh);
  }
  return out;
}

inline Metrics metrics(const Trace& trace) {
  std::vector<double> t, w, wh, dev;
  std::vector<std::array<double, kNumFamilies>> h;
  std::vector<int> ev, vis, act;
  for (const TraceRecord& r : trace.records) {
    t.push_back(r.t);
    w.push_back(r.w);
    wh.push_back(r.w_hat);
    h.push_back(r.h_min);
    dev.push_back(r.deviation);
    ev.push_back(r.event ? 1 : 0);
    vis.push_back(r.visible);
    act.push_back(r.n_active);
  }
  return metrics(t, w, wh, h, dev, ev, vis, act);
}

/// Circular-tracking running example: 30 unit-weight landmarks in [-1, 1]^2,
/// W = 4.5, sector camera (psi = 1, R = 1) starting at (1, 0) facing the origin.
inline Scenario example3_scenario(std::uint64_t landmark_seed) {
  Scenario sc;
  sc.name = "example3";
  sc.duration = 20.0;
  sc.robot.model = "planar_cam_bot";
  sc.robot.q0 = Vec3(1.0, 0.0, std::numbers::pi);
  sc.robot.input_lower = Vec3(-2.0, -2.0, -1.0);
  sc.robot.input_upper = Vec3(2.0, 2.0, 1.0);
  sc.visibility.model = "sector_fov_2d";
  sc.visibility.psi = 1.0;
  sc.visibility.range = 1.0;
  sc.landmarks.distribution = "uniform_box";
  sc.landmarks.box.count = 30;
  sc.landmarks.box.lo = Vec3(-1.0, -1.0, 0.0);
  sc.landmarks.box.hi = Vec3(1.0, 1.0, 0.0);
  sc.landmarks.box.seed = landmark_seed;
  sc.filter.R_q = Vec3(1.0, 1.0, 0.001).asDiagonal();
  sc.filter.k_lambda = 0.001;
  sc.filter.k_mu = 0.001;
  sc.filter.params.W = 4.5;
  sc.filter.dt = 0.01;
  sc.filter.camera_rate = 10.0;
  sc.filter.n_max = 50;
  sc.reference.kind = ReferenceKind::kCircular;
  return sc;
}

struct WallInspectionParams {
  int M = 20;                                    // required tracked features
  double section_length = 4.0 / 3.0;             // m, three sections: a 4 m wall
  std::array<double, 3> density{20.0, 1.0, 20.0};  // features per meter
  double wall_offset = 1.0;                      // wall line y, robot starts on y = 0
  double v_r = 0.3;
  double duration = 15.0;                        // past the far end at v_r = 0.3
  std::uint64_t seed = 1;
};

/// Differential-drive robot with a gimballed stereo camera driving past a wall
/// whose middle section is nearly featureless. W = M - 0.5.
inline Scenario wall_inspection_scenario(const WallInspectionParams& p = {}) {
  Scenario sc;
  sc.name = "wall_inspection";
  sc.duration = p.duration;
  sc.robot.model = "diff_drive_gimbal";
  sc.robot.q0 = Eigen::Vector4d(1.0, 0.0, 0.0, std::numbers::pi / 2);
  sc.robot.input_lower = Vec3(-0.5, -1.0, -1.5);
  sc.robot.input_upper = Vec3(0.5, 1.0, 1.5);
  sc.visibility.model = "stereo_frustum";
  sc.visibility.r_min = 0.3;
  sc.visibility.r_max = 5.0;
  FeatureWall wall;
  wall.start = Vec2(0.0, p.wall_offset);
  wall.end = Vec2(3.0 * p.section_length, p.wall_offset);
  wall.z_min = -0.4;
  wall.z_max = 0.4;
  for (double d : p.density) wall.sections.push_back({p.section_length, d});
  wall.seed = p.seed;
  sc.world.walls.push_back(wall);
  sc.world.segments.push_back({wall.start, wall.end, 0.0});
  sc.landmarks.distribution = "walls";
  sc.filter.R_q = Vec3(1.0, 1.0, 0.1).asDiagonal();
  sc.filter.k_lambda = 0.001;
  sc.filter.k_mu = 0.001;
  sc.filter.params.W = p.M - 0.5;
  sc.filter.params.collision_enabled = true;
  sc.filter.params.robot_radius = 0.3;
  sc.filter.dt = 0.01;
  sc.filter.camera_rate = 10.0;
  sc.filter.n_max = 50;
  sc.filter.seed = p.seed;
  sc.reference.kind = ReferenceKind::kWallInspection;
  sc.reference.v_r = p.v_r;
  sc.reference.k_servo = 2.0;
  return sc;
}

}  // namespace visifilter
