#pragma once

#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "visifilter/common.hpp"

namespace visifilter {

/// Convex input set {v : A v <= b}. Must contain the stopping input v = 0.
struct InputPolytope {
  Mat A;
  Vec b;

  static InputPolytope box(const Vec& lower, const Vec& upper) {
    if (lower.size() != upper.size()) throw ShapeError("box bounds differ in length");
    const auto m = lower.size();
    InputPolytope p;
    p.A = Mat::Zero(2 * m, m);
    p.b = Vec(2 * m);
    for (Eigen::Index i = 0; i < m; ++i) {
      p.A(2 * i, i) = 1.0;
      p.b(2 * i) = upper(i);
      p.A(2 * i + 1, i) = -1.0;
      p.b(2 * i + 1) = -lower(i);
    }
    return p;
  }

  bool contains(const Vec& v, double tol = 1e-9) const {
    return ((A * v - b).array() <= tol).all();
  }

  bool contains_origin() const { return (b.array() >= 0.0).all(); }

  /// Per-component bounds of the polytope's bounding box, assuming it is
  /// described by axis-aligned rows (rows with a single nonzero entry).
  std::pair<Vec, Vec> bounding_box() const {
    const auto m = A.cols();
    Vec lo = Vec::Constant(m, -std::numeric_limits<double>::infinity());
    Vec hi = Vec::Constant(m, std::numeric_limits<double>::infinity());
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
      Eigen::Index nz = -1;
      int count = 0;
      for (Eigen::Index c = 0; c < m; ++c) {
        if (A(r, c) != 0.0) {
          nz = c;
          ++count;
        }
      }
      if (count != 1) continue;
      const double bound = b(r) / A(r, nz);
      if (A(r, nz) > 0.0) {
        hi(nz) = std::min(hi(nz), bound);
      } else {
        lo(nz) = std::max(lo(nz), bound);
      }
    }
    return {lo, hi};
  }
};

/// Maps from the input v to the sensor's body angular and linear velocity.
struct TwistMaps {
  Mat J_omega;  // 3 x m
  Mat J_v;      // 3 x m
};

struct BodyTwist {
  Vec3 omega_s = Vec3::Zero();
  Vec3 v_s = Vec3::Zero();
};

/// How the sensor frame sits on the planar heading frame.
///  kForwardX: camera axis along sensor x, sensor z = world z.
///  kOptical:  camera axis along sensor z, x to the right, y down.
enum class SensorMount { kForwardX, kOptical };

inline Mat3 mount_rotation(SensorMount mount) {
  if (mount == SensorMount::kForwardX) return Mat3::Identity();
  // Columns are the optical axes expressed in the heading frame.
  Mat3 r;
  r << 0.0, 0.0, 1.0,  //
      -1.0, 0.0, 0.0,  //
      0.0, -1.0, 0.0;
  return r;
}

/// First-order kinematic model q' = J(q) v with a rigidly attached sensor.
///
/// The first two configuration entries are always the planar base position
/// (used by the collision constraint).
class RobotModel {
 public:
  explicit RobotModel(InputPolytope polytope) : polytope_(std::move(polytope)) {}
  virtual ~RobotModel() = default;

  virtual std::string_view kind() const = 0;
  virtual int config_dim() const = 0;
  virtual int input_dim() const = 0;

  virtual Mat jacobian_unchecked(const Vec& q) const = 0;
  virtual TwistMaps twist_maps_unchecked(const Vec& q) const = 0;
  virtual Pose sensor_pose_unchecked(const Vec& q) const = 0;
  /// Configuration entries that are angles (wrapped only when reported).
  virtual std::vector<int> angle_indices() const = 0;
  /// Heading of the sensor's viewing direction in the world plane.
  virtual double camera_heading(const Vec& q) const = 0;

  const InputPolytope& input_polytope() const { return polytope_; }

  Mat jacobian(const Vec& q) const {
    require_size(q, config_dim(), "configuration");
    return jacobian_unchecked(q);
  }
  TwistMaps twist_maps(const Vec& q) const {
    require_size(q, config_dim(), "configuration");
    return twist_maps_unchecked(q);
  }
  Pose sensor_pose(const Vec& q) const {
    require_size(q, config_dim(), "configuration");
    return sensor_pose_unchecked(q);
  }

  /// Configuration with angle entries wrapped to (-pi, pi].
  Vec reported(const Vec& q) const {
    Vec out = q;
    for (int i : angle_indices()) out(i) = wrap_angle(out(i));
    return out;
  }

 private:
  InputPolytope polytope_;
};

using RobotModelPtr = std::shared_ptr<const RobotModel>;

namespace detail {

// Sensor at planar position (x, y), heading theta_c. xy_rate and heading_rate
// give d(x, y)/dt and d(theta_c)/dt as linear maps of v.
inline TwistMaps planar_twist(double theta_c, const Mat& xy_rate, const Eigen::RowVectorXd& heading_rate,
                              SensorMount mount) {
  const auto m = xy_rate.cols();
  const Mat3 rm_t = mount_rotation(mount).transpose();
  const double c = std::cos(theta_c);
  const double s = std::sin(theta_c);
  // Heading-frame linear velocity: R_z(theta_c)^T [x'; y'; 0].
  Mat v_heading = Mat::Zero(3, m);
  v_heading.row(0) = c * xy_rate.row(0) + s * xy_rate.row(1);
  v_heading.row(1) = -s * xy_rate.row(0) + c * xy_rate.row(1);
  Mat w_heading = Mat::Zero(3, m);
  w_heading.row(2) = heading_rate;
  return {rm_t * w_heading, rm_t * v_heading};
}

inline Pose planar_pose(double x, double y, double theta_c, SensorMount mount) {
  Pose T = Pose::Identity();
  T.linear() = Eigen::AngleAxisd(theta_c, Vec3::UnitZ()).toRotationMatrix() * mount_rotation(mount);
  T.translation() = Vec3(x, y, 0.0);
  return T;
}

}  // namespace detail

/// Holonomic planar base with a camera: q = (x, y, theta), q' = v.
class PlanarCamBot final : public RobotModel {
 public:
  explicit PlanarCamBot(InputPolytope polytope, SensorMount mount = SensorMount::kForwardX)
      : RobotModel(std::move(polytope)), mount_(mount) {
    if (input_polytope().A.cols() != 3) throw ShapeError("PlanarCamBot polytope must have 3 columns");
  }

  std::string_view kind() const override { return "planar_cam_bot"; }
  int config_dim() const override { return 3; }
  int input_dim() const override { return 3; }
  SensorMount mount() const { return mount_; }

  Mat jacobian_unchecked(const Vec&) const override { return Mat::Identity(3, 3); }

  TwistMaps twist_maps_unchecked(const Vec& q) const override {
    Mat xy = Mat::Zero(2, 3);
    xy(0, 0) = 1.0;
    xy(1, 1) = 1.0;
    Eigen::RowVectorXd heading = Eigen::RowVectorXd::Zero(3);
    heading(2) = 1.0;
    return detail::planar_twist(q(2), xy, heading, mount_);
  }

  Pose sensor_pose_unchecked(const Vec& q) const override {
    return detail::planar_pose(q(0), q(1), q(2), mount_);
  }

  std::vector<int> angle_indices() const override { return {2}; }
  double camera_heading(const Vec& q) const override { return q(2); }

 private:
  SensorMount mount_;
};

/// Differential-drive base carrying a camera on a yaw servo:
/// q = (x, y, theta_r, theta_m), v = (v_r, omega_r, omega_m),
/// camera heading theta_c = theta_r + theta_m.
class DiffDriveGimbal final : public RobotModel {
 public:
  explicit DiffDriveGimbal(InputPolytope polytope, SensorMount mount = SensorMount::kOptical)
      : RobotModel(std::move(polytope)), mount_(mount) {
    if (input_polytope().A.cols() != 3) throw ShapeError("DiffDriveGimbal polytope must have 3 columns");
  }

  std::string_view kind() const override { return "diff_drive_gimbal"; }
  int config_dim() const override { return 4; }
  int input_dim() const override { return 3; }
  SensorMount mount() const { return mount_; }

  Mat jacobian_unchecked(const Vec& q) const override {
    Mat J = Mat::Zero(4, 3);
    J(0, 0) = std::cos(q(2));
    J(1, 0) = std::sin(q(2));
    J(2, 1) = 1.0;
    J(3, 2) = 1.0;
    return J;
  }

  TwistMaps twist_maps_unchecked(const Vec& q) const override {
    const Mat J = jacobian_unchecked(q);
    Eigen::RowVectorXd heading = J.row(2) + J.row(3);
    return detail::planar_twist(q(2) + q(3), J.topRows(2), heading, mount_);
  }

  Pose sensor_pose_unchecked(const Vec& q) const override {
    return detail::planar_pose(q(0), q(1), q(2) + q(3), mount_);
  }

  std::vector<int> angle_indices() const override { return {2, 3}; }
  double camera_heading(const Vec& q) const override { return q(2) + q(3); }

 private:
  SensorMount mount_;
};

inline Mat jacobian(const RobotModel& model, const Vec& q) { return model.jacobian(q); }
inline TwistMaps twist_maps(const RobotModel& model, const Vec& q) { return model.twist_maps(q); }

inline BodyTwist body_twist(const RobotModel& model, const Vec& q, const Vec& v) {
  require_size(v, model.input_dim(), "input");
  const TwistMaps maps = model.twist_maps(q);
  return {maps.J_omega * v, maps.J_v * v};
}

/// Sensor-frame landmark velocity for a stationary world point: -w x p - v.
inline Vec3 landmark_rate(const Vec3& p, const BodyTwist& twist) {
  return -twist.omega_s.cross(p) - twist.v_s;
}

/// d p / d v for a stationary landmark at sensor-frame position p:
/// p' = ([p]x J_omega - J_v) v.
inline Mat landmark_rate_jacobian(const Vec3& p, const TwistMaps& maps) {
  return skew(p) * maps.J_omega - maps.J_v;
}

/// Sensor-frame position of a world point.
inline Vec3 to_sensor(const Pose& sensor_pose, const Vec3& world_point) {
  return sensor_pose.inverse(Eigen::Isometry) * world_point;
}

/// One classical RK4 step of q' = J(q) v with v held over the step.
inline Vec integrate_configuration(const RobotModel& model, const Vec& q, const Vec& v, double dt) {
  require_size(q, model.config_dim(), "configuration");
  require_size(v, model.input_dim(), "input");
  if (!(dt > 0.0)) throw std::invalid_argument("integrate_configuration: dt must be positive");
  const Vec k1 = model.jacobian_unchecked(q) * v;
  const Vec k2 = model.jacobian_unchecked(q + 0.5 * dt * k1) * v;
  const Vec k3 = model.jacobian_unchecked(q + 0.5 * dt * k2) * v;
  const Vec k4 = model.jacobian_unchecked(q + dt * k3) * v;
  return q + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Forward-integrates a landmark's sensor-frame position along a sampled
/// trajectory: p' = -J_w(q) v x p - J_v(q) v, p(t0) = p0.
///
/// q_traj[k] and v_traj[k] are the configuration and (held) input at
/// t0 + k dt. Each step integrates (q, p) jointly with RK4, restarting q from
/// the recorded sample.
inline Vec3 propagate_landmark(const RobotModel& model, std::span<const Vec> q_traj, std::span<const Vec> v_traj,
                               const Vec3& p0, double t0, double t1, double dt) {
  if (t1 < t0) throw std::invalid_argument("propagate_landmark: t1 < t0");
  if (!(dt > 0.0)) throw std::invalid_argument("propagate_landmark: dt must be positive");
  const auto steps = static_cast<std::size_t>(std::llround((t1 - t0) / dt));
  if (steps > v_traj.size() || steps > q_traj.size()) {
    throw ShapeError("propagate_landmark: trajectory shorter than the requested interval");
  }
  const auto n = model.config_dim();
  auto rate = [&](const Vec& q, const Vec3& p, const Vec& v, Vec& dq, Vec3& dp) {
    dq = model.jacobian_unchecked(q) * v;
    const TwistMaps maps = model.twist_maps_unchecked(q);
    dp = landmark_rate(p, {maps.J_omega * v, maps.J_v * v});
  };
  Vec3 p = p0;
  Vec dq1(n), dq2(n), dq3(n), dq4(n);
  Vec3 dp1, dp2, dp3, dp4;
  for (std::size_t k = 0; k < steps; ++k) {
    const Vec& q = q_traj[k];
    const Vec& v = v_traj[k];
    require_size(q, n, "q_traj sample");
    rate(q, p, v, dq1, dp1);
    rate(q + 0.5 * dt * dq1, p + 0.5 * dt * dp1, v, dq2, dp2);
    rate(q + 0.5 * dt * dq2, p + 0.5 * dt * dp2, v, dq3, dp3);
    rate(q + dt * dq3, p + dt * dp3, v, dq4, dp4);
    p += (dt / 6.0) * (dp1 + 2.0 * dp2 + 2.0 * dp3 + dp4);
  }
  return p;
}

}  // namespace visifilter
