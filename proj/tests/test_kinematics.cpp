#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "visifilter/kinematics.hpp"

using namespace visifilter;
using Vec4 = Eigen::Vector4d;

namespace {

InputPolytope example_box() { return InputPolytope::box(Vec3(-2, -2, -1), Vec3(2, 2, 1)); }

// Sensor pose flattened to (translation, rotation columns) for differencing.
Vec pose_vector(const Pose& T) {
  Vec out(12);
  out.head(3) = T.translation();
  for (int c = 0; c < 3; ++c) out.segment(3 + 3 * c, 3) = T.linear().col(c);
  return out;
}

// Body twist from a finite-difference derivative of the sensor pose.
BodyTwist fd_twist(const RobotModel& model, const Vec& q, const Vec& v, double h = 1e-6) {
  const Pose Tp = model.sensor_pose(q + h * model.jacobian(q) * v);
  const Pose Tm = model.sensor_pose(q - h * model.jacobian(q) * v);
  const Pose T = model.sensor_pose(q);
  const Mat3 Rdot = (Tp.linear() - Tm.linear()) / (2 * h);
  const Vec3 pdot = (Tp.translation() - Tm.translation()) / (2 * h);
  const Mat3 W = T.linear().transpose() * Rdot;
  return {Vec3(W(2, 1), W(0, 2), W(1, 0)), T.linear().transpose() * pdot};
}

}  // namespace

TEST(Kinematics, GimbalJacobianAtZeroHeading) {
  DiffDriveGimbal model(example_box());
  Mat expected(4, 3);
  expected << 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1;
  EXPECT_TRUE(jacobian(model, Eigen::Vector4d(0, 0, 0, 0.3)).isApprox(expected));
}

TEST(Kinematics, PlanarJacobianIsIdentity) {
  PlanarCamBot model(example_box());
  EXPECT_EQ(jacobian(model, Vec3(0.3, -2, 1.1)), Mat::Identity(3, 3));
}

TEST(Kinematics, GimbalJacobianAtQuarterTurn) {
  DiffDriveGimbal model(example_box());
  const Mat J = jacobian(model, Eigen::Vector4d(0, 0, std::numbers::pi / 2, 0));
  EXPECT_NEAR(J(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(J(1, 0), 1.0, 1e-15);
  EXPECT_EQ(J(2, 0), 0.0);
  EXPECT_EQ(J(3, 0), 0.0);
}

TEST(Kinematics, ShapeErrors) {
  PlanarCamBot model(example_box());
  EXPECT_THROW(jacobian(model, Vec2(0, 0)), ShapeError);
  EXPECT_THROW(body_twist(model, Vec3::Zero(), Vec2::Zero()), ShapeError);
}

TEST(Kinematics, PlanarTwistMaps) {
  PlanarCamBot model(example_box());
  const double th = 0.7;
  const TwistMaps m = twist_maps(model, Vec3(1, 2, th));
  Mat Jw = Mat::Zero(3, 3);
  Jw(2, 2) = 1.0;
  EXPECT_TRUE(m.J_omega.isApprox(Jw));
  Mat Jv = Mat::Zero(3, 3);
  Jv << std::cos(th), std::sin(th), 0, -std::sin(th), std::cos(th), 0, 0, 0, 0;
  EXPECT_TRUE(m.J_v.isApprox(Jv, 1e-14));
  const BodyTwist zero = body_twist(model, Vec3(1, 2, th), Vec3::Zero());
  EXPECT_EQ(zero.omega_s, Vec3::Zero());
  EXPECT_EQ(zero.v_s, Vec3::Zero());
}

TEST(Kinematics, GimbalYawRateIsSumOfRates) {
  DiffDriveGimbal model(example_box(), SensorMount::kForwardX);
  const BodyTwist t = body_twist(model, Eigen::Vector4d(0.5, 0.2, 0.3, -0.4), Vec3(0.1, 0.25, 0.5));
  EXPECT_NEAR(t.omega_s.z(), 0.75, 1e-15);
  // Optical mount: world z is -y in the camera frame.
  DiffDriveGimbal optical(example_box());
  const BodyTwist to = body_twist(optical, Eigen::Vector4d(0.5, 0.2, 0.3, -0.4), Vec3(0.1, 0.25, 0.5));
  EXPECT_NEAR(to.omega_s.y(), -0.75, 1e-15);
}

TEST(Kinematics, LandmarkRateExamples) {
  const Vec3 a = landmark_rate(Vec3(3, -1, 2), {Vec3::Zero(), Vec3(1, 0, 0)});
  EXPECT_EQ(a, Vec3(-1, 0, 0));
  const Vec3 b = landmark_rate(Vec3(1, 0, 0), {Vec3(0, 0, 1), Vec3::Zero()});
  EXPECT_EQ(b, Vec3(0, -1, 0));
}

TEST(Kinematics, PlanarLandmarkRateMatchesClosedForm) {
  PlanarCamBot model(example_box());
  std::mt19937_64 eng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const double th = uniform_real(eng, -3.0, 3.0);
    const Vec3 p(uniform_real(eng, -2, 2), uniform_real(eng, -2, 2), 0.0);
    const TwistMaps maps = twist_maps(model, Vec3(0.1, 0.2, th));
    for (int i = 0; i < 10; ++i) {
      for (int j = 0; j < 10; ++j) {
        for (int k = 0; k < 10; ++k) {
          const Vec3 v(-2 + 4.0 * i / 9, -2 + 4.0 * j / 9, -1 + 2.0 * k / 9);
          const Vec3 rate = landmark_rate(p, {maps.J_omega * v, maps.J_v * v});
          Mat3 M;
          M << -std::cos(th), -std::sin(th), p.y(),  //
              std::sin(th), -std::cos(th), -p.x(),   //
              0, 0, 0;
          ASSERT_LE((rate - M * v).norm(), 1e-13);
        }
      }
    }
  }
}

TEST(Kinematics, TwistMatchesPoseDerivative) {
  std::mt19937_64 eng(17);
  PlanarCamBot planar(example_box());
  DiffDriveGimbal gimbal(example_box());
  DiffDriveGimbal gimbal_fx(example_box(), SensorMount::kForwardX);
  const std::vector<const RobotModel*> models{&planar, &gimbal, &gimbal_fx};
  for (const RobotModel* model : models) {
    for (int trial = 0; trial < 200; ++trial) {
      Vec q(model->config_dim());
      for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = uniform_real(eng, -3.0, 3.0);
      Vec v(3);
      v << uniform_real(eng, -2, 2), uniform_real(eng, -2, 2), uniform_real(eng, -1, 1);
      ASSERT_TRUE(model->input_polytope().contains(v));
      const BodyTwist exact = body_twist(*model, q, v);
      const BodyTwist fd = fd_twist(*model, q, v);
      EXPECT_LE((exact.omega_s - fd.omega_s).norm(), 1e-5) << model->kind();
      EXPECT_LE((exact.v_s - fd.v_s).norm(), 1e-5) << model->kind();
    }
  }
}

TEST(Kinematics, TwistMapsAreContinuous) {
  std::mt19937_64 eng(23);
  DiffDriveGimbal model(example_box());
  for (int trial = 0; trial < 100; ++trial) {
    Vec q(4);
    for (int i = 0; i < 4; ++i) q(i) = uniform_real(eng, -3, 3);
    Vec dq(4);
    for (int i = 0; i < 4; ++i) dq(i) = uniform_real(eng, -1e-7, 1e-7);
    const TwistMaps a = model.twist_maps(q);
    const TwistMaps b = model.twist_maps(q + dq);
    EXPECT_LE((a.J_v - b.J_v).norm(), 1e-6);
    EXPECT_LE((a.J_omega - b.J_omega).norm(), 1e-6);
    EXPECT_LE((model.jacobian(q) - model.jacobian(q + dq)).norm(), 1e-6);
  }
}

TEST(Kinematics, LandmarkRateIsLinearInTwist) {
  std::mt19937_64 eng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    Vec3 p, w1, v1, w2, v2;
    for (int i = 0; i < 3; ++i) {
      p(i) = uniform_real(eng, -5, 5);
      w1(i) = uniform_real(eng, -1, 1);
      v1(i) = uniform_real(eng, -1, 1);
      w2(i) = uniform_real(eng, -1, 1);
      v2(i) = uniform_real(eng, -1, 1);
    }
    const double a = uniform_real(eng, -3, 3), b = uniform_real(eng, -3, 3);
    const Vec3 lhs = landmark_rate(p, {a * w1 + b * w2, a * v1 + b * v2});
    const Vec3 rhs = a * landmark_rate(p, {w1, v1}) + b * landmark_rate(p, {w2, v2});
    EXPECT_LE((lhs - rhs).lpNorm<Eigen::Infinity>(), 1e-13);
  }
}

TEST(Kinematics, StoppingInputIsAdmissible) {
  PlanarCamBot planar(example_box());
  EXPECT_TRUE(planar.input_polytope().contains_origin());
  EXPECT_TRUE(planar.input_polytope().contains(Vec3::Zero()));
}

TEST(Kinematics, IntegrateHoldsStillAtZeroInput) {
  DiffDriveGimbal model(example_box());
  const Vec q = Eigen::Vector4d(0.3, -0.2, 1.0, 2.0);
  EXPECT_EQ(integrate_configuration(model, q, Vec3::Zero(), 0.01), q);
  EXPECT_THROW(integrate_configuration(model, q, Vec3::Zero(), 0.0), std::invalid_argument);
}

TEST(Kinematics, IntegrateConstantRate) {
  PlanarCamBot model(example_box());
  const Vec q1 = integrate_configuration(model, Vec3(0.0, 0, 0), Vec3(1, 0, 0), 0.1);
  EXPECT_DOUBLE_EQ(q1(0), 0.1);
  EXPECT_EQ(q1(1), 0.0);
}

namespace {

double unicycle_error(double dt, double horizon) {
  DiffDriveGimbal model(example_box());
  Vec q = Vec4::Zero();
  const auto steps = std::llround(horizon / dt);
  for (long k = 0; k < steps; ++k) q = integrate_configuration(model, q, Vec3(1, 1, 0), dt);
  const double th = horizon;
  return std::hypot(q(0) - std::sin(th), q(1) - (1 - std::cos(th)));
}

}  // namespace

TEST(Kinematics, UnicycleArcSingleStep) { EXPECT_LE(unicycle_error(0.01, 0.01), 1e-8); }

TEST(Kinematics, UnicycleArcOverOneSecond) { EXPECT_LE(unicycle_error(0.01, 1.0), 1e-8); }

TEST(Kinematics, Rk4ObservedOrder) {
  const double e1 = unicycle_error(0.2, 2.0);
  const double e2 = unicycle_error(0.1, 2.0);
  const double e3 = unicycle_error(0.05, 2.0);
  EXPECT_GE(std::log2(e1 / e2), 3.9);
  EXPECT_GE(std::log2(e2 / e3), 3.9);
}

TEST(Kinematics, PropagateStationary) {
  PlanarCamBot model(example_box());
  const std::vector<Vec> q(100, Vec3(0.1, 0.2, 0.3));
  const std::vector<Vec> v(100, Vec3::Zero());
  const Vec3 p0(0.4, -0.3, 0.0);
  EXPECT_EQ(propagate_landmark(model, q, v, p0, 0.0, 1.0, 0.01), p0);
  EXPECT_THROW(propagate_landmark(model, q, v, p0, 1.0, 0.5, 0.01), std::invalid_argument);
}

TEST(Kinematics, PropagatePureRotation) {
  PlanarCamBot model(example_box());
  const double dt = std::numbers::pi / 1000;
  std::vector<Vec> q, v;
  Vec qk = Vec3::Zero();
  for (int k = 0; k < 1000; ++k) {
    q.push_back(qk);
    v.push_back(Vec3(0, 0, 1));
    qk = integrate_configuration(model, qk, v.back(), dt);
  }
  const Vec3 p0(0.7, 0.2, 0.1);
  const Vec3 p = propagate_landmark(model, q, v, p0, 0.0, std::numbers::pi, dt);
  const Vec3 expected = Eigen::AngleAxisd(-std::numbers::pi, Vec3::UnitZ()) * p0;
  EXPECT_LE((p - expected).norm(), 1e-6);
}

TEST(Kinematics, PropagateAlongCircularReference) {
  PlanarCamBot model(example_box());
  const double dt = 0.01;
  std::vector<Vec> q, v;
  Vec qk = Vec3(1, 0, std::numbers::pi);
  for (int k = 0; k < 1000; ++k) {
    const double t = k * dt;
    const Vec3 vk(-std::sin(t) + 2 * (std::cos(t) - qk(0)), std::cos(t) + 2 * (std::sin(t) - qk(1)), 0.0);
    q.push_back(qk);
    v.push_back(vk);
    qk = integrate_configuration(model, qk, vk, dt);
  }
  const Vec3 world(0.3, -0.5, 0.0);
  const Vec3 p0 = to_sensor(model.sensor_pose(q.front()), world);
  const Vec3 p = propagate_landmark(model, q, v, p0, 0.0, 10.0, dt);
  EXPECT_LE((p - to_sensor(model.sensor_pose(qk), world)).norm(), 1e-4);
}

TEST(Kinematics, ReportedWrapsAngles) {
  DiffDriveGimbal model(example_box());
  const Vec r = model.reported(Eigen::Vector4d(5.0, 1.0, 4.0, -4.0));
  EXPECT_EQ(r(0), 5.0);
  EXPECT_NEAR(r(2), 4.0 - 2 * std::numbers::pi, 1e-15);
  EXPECT_NEAR(r(3), -4.0 + 2 * std::numbers::pi, 1e-15);
  EXPECT_EQ(wrap_angle(std::numbers::pi), std::numbers::pi);
}
