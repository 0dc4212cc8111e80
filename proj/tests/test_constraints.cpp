#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "visifilter/constraints.hpp"

using namespace visifilter;

namespace {

InputPolytope example_box() { return InputPolytope::box(Vec3(-2, -2, -1), Vec3(2, 2, 1)); }

struct Fixture {
  PlanarCamBot model{example_box()};
  SectorFov2D fov{1.0, 1.0};
  World world;
  ConstraintParams params;
};

// n weight-1 landmarks on the camera axis of a robot at the origin facing +x.
LandmarkStore line_of_landmarks(int n) {
  std::vector<Landmark> lms;
  for (int i = 0; i < n; ++i) lms.push_back({i, Vec3(0.2 + 0.1 * i, 0.01 * (i % 3), 0), 1.0});
  return LandmarkStore(lms);
}

}  // namespace

TEST(Constraints, SmoothedScoreExamples) {
  AuxState a{Vec::Ones(5), Vec::Zero(5)};
  EXPECT_EQ(smoothed_score(a, Vec::Ones(5)), 5.0);
  AuxState b{Vec2(0.5, 1.0), Vec2::Zero()};
  EXPECT_EQ(smoothed_score(b, Vec2(1.0, 2.0)), 2.5);
  EXPECT_THROW(smoothed_score(b, Vec3::Ones()), ShapeError);
}

TEST(Constraints, RowCountForOneLandmark) {
  Fixture f;
  f.params.W = 0.5;
  f.params.collision_enabled = true;
  f.world.discs.push_back({Vec2(-3, 0), 0.5});
  const LandmarkStore store = line_of_landmarks(1);
  const AugmentedState x = initialize(Vec3::Zero(), f.model, f.fov, store, f.params, f.world, {});
  const auto rows = build_rows(x, f.model, f.fov, store, f.params, f.world);
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows.size(), row_count(1, 3, true));
  for (const ConstraintRow& r : rows) EXPECT_EQ(r.coeffs.size(), 5);
  EXPECT_EQ(rows.back().label(), "h6");
  EXPECT_EQ(rows[2].label(), "h3[0].0");
}

TEST(Constraints, MuZeroGivesRho) {
  Fixture f;
  f.params.W = 0.5;
  const LandmarkStore store = line_of_landmarks(1);
  const AugmentedState x = initialize(Vec3::Zero(), f.model, f.fov, store, f.params, f.world, {});
  const auto rows = build_rows(x, f.model, f.fov, store, f.params, f.world);
  const Vec rho = f.fov.rho(store.at(0).world_position);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(rows[2 + c].value, rho(c));
    EXPECT_GT(rows[2 + c].value, 0.0);
  }
}

TEST(Constraints, MuOneGivesMinusLambda) {
  Fixture f;
  f.params.W = 0.1;
  const LandmarkStore store = line_of_landmarks(1);
  AugmentedState x = initialize(Vec3::Zero(), f.model, f.fov, store, f.params, f.world, {});
  x.aux.mu(0) = 1.0;
  x.aux.lambda(0) = 0.3;
  const auto rows = build_rows(x, f.model, f.fov, store, f.params, f.world);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(rows[2 + c].value, -0.3);
}

TEST(Constraints, InitializeExamples) {
  Fixture f;
  f.params.W = 4.5;
  const LandmarkStore seven = line_of_landmarks(7);
  const AugmentedState x = initialize(Vec3::Zero(), f.model, f.fov, seven, f.params, f.world, {});
  EXPECT_EQ(x.num_active(), 7u);
  const auto rows = build_rows(x, f.model, f.fov, seven, f.params, f.world);
  EXPECT_EQ(rows[0].value, 2.5);
  for (const ConstraintRow& r : rows) EXPECT_GE(r.value, 0.0) << r.label();
  for (const ConstraintRow& r : rows) {
    if (r.family == Family::kMuLower) EXPECT_EQ(r.value, 0.0);
    if (r.family == Family::kMuUpper) EXPECT_EQ(r.value, 1.0);
  }
  const LandmarkStore three = line_of_landmarks(3);
  try {
    initialize(Vec3::Zero(), f.model, f.fov, three, f.params, f.world, {});
    FAIL() << "expected an infeasible start";
  } catch (const InfeasibleStart& e) {
    EXPECT_NE(std::string(e.what()).find("deficit 1.5"), std::string::npos) << e.what();
  }
}

TEST(Constraints, InitializeRejectsCollision) {
  Fixture f;
  f.params.W = 0.5;
  f.params.collision_enabled = true;
  f.world.discs.push_back({Vec2(0, 0.4), 0.2});
  EXPECT_THROW(initialize(Vec3::Zero(), f.model, f.fov, line_of_landmarks(3), f.params, f.world, {}),
               InfeasibleStart);
}

TEST(Constraints, InconsistentStateIsInternalError) {
  Fixture f;
  f.params.W = 0.5;
  const LandmarkStore store = line_of_landmarks(2);
  AugmentedState x = initialize(Vec3::Zero(), f.model, f.fov, store, f.params, f.world, {});
  x.active_ids.pop_back();
  EXPECT_THROW(build_rows(x, f.model, f.fov, store, f.params, f.world), std::logic_error);
}

TEST(Constraints, ReinitializeResetsAndDoesNotLowerScore) {
  Fixture f;
  f.params.W = 2.0;
  const LandmarkStore store = line_of_landmarks(5);
  AugmentedState x = initialize(Vec3::Zero(), f.model, f.fov, store, f.params, f.world, {});
  x.aux.lambda << 0.9, 0.5, 0.7, 0.2, 0.8;
  x.aux.mu << 0.1, 0.3, 0.0, 0.2, 0.4;
  const double h1_before = build_rows(x, f.model, f.fov, store, f.params, f.world)[0].value;
  const AugmentedState y = reinitialize(x, f.model, f.fov, store, {});
  EXPECT_EQ(y.q, x.q);
  EXPECT_EQ(y.aux.lambda, Vec::Ones(5));
  EXPECT_EQ(y.aux.mu, Vec::Zero(5));
  const auto rows = build_rows(y, f.model, f.fov, store, f.params, f.world);
  EXPECT_GE(rows[0].value, h1_before);
  EXPECT_EQ(rows[0].value, 3.0);
  for (const ConstraintRow& r : rows) EXPECT_GE(r.value, 0.0);
}

TEST(Constraints, ReinitializeWithSupersetRaisesScore) {
  Fixture f;
  f.params.W = 1.0;
  std::vector<Landmark> lms{{0, Vec3(0.5, 0, 0), 1.0}, {1, Vec3(0.6, 0.05, 0), 1.0}, {2, Vec3(-0.5, 0, 0), 1.0}};
  const LandmarkStore store(lms);
  AugmentedState x = initialize(Vec3::Zero(), f.model, f.fov, store, f.params, f.world, {});
  ASSERT_EQ(x.num_active(), 2u);
  x.q(2) = std::numbers::pi / 2;  // landmark 2 stays out of view; nothing new yet
  x.q = Vec3(0.0, 0.0, 0.0);
  std::vector<Landmark> more = lms;
  more.push_back({3, Vec3(0.4, -0.05, 0), 1.0});
  const LandmarkStore bigger(more);
  const AugmentedState y = reinitialize(x, f.model, f.fov, bigger, {});
  EXPECT_EQ(y.num_active(), 3u);
  const double h1 = build_rows(y, f.model, f.fov, bigger, f.params, f.world)[0].value;
  EXPECT_GT(h1, build_rows(x, f.model, f.fov, store, f.params, f.world)[0].value);
}

TEST(Constraints, FeatureCapLimitsActiveSet) {
  Fixture f;
  f.params.W = 3.5;
  const LandmarkStore store = line_of_landmarks(8);
  FeatureSampling cap;
  cap.n_max = 4;
  cap.seed = 77;
  const AugmentedState x = initialize(Vec3::Zero(), f.model, f.fov, store, f.params, f.world, cap);
  EXPECT_EQ(x.num_active(), 4u);
  EXPECT_EQ(build_rows(x, f.model, f.fov, store, f.params, f.world)[0].value, 0.5);
}

TEST(Constraints, EquivalenceExamples) {
  EXPECT_TRUE(check_equivalence_sample(-0.5, Vec2(-1, -1), 1001));
  EXPECT_TRUE(check_equivalence_sample(0.5, Vec2(0.2, 0.1), 1001));
  EXPECT_FALSE(check_equivalence_sample(0.5, Vec2(-0.1, 0.3), 1001));
  EXPECT_THROW(check_equivalence_sample(0.5, Vec2(0.1, 0.3), 1), std::invalid_argument);
}

TEST(Constraints, EquivalenceMatchesDisjunction) {
  std::mt19937_64 eng(71);
  int checked = 0;
  while (checked < 10000) {
    const double lam = uniform_real(eng, -1, 1);
    Vec rho(3);
    for (int c = 0; c < 3; ++c) rho(c) = uniform_real(eng, -1, 1);
    if (std::abs(lam) < 1e-3 || rho.cwiseAbs().minCoeff() < 1e-3) continue;
    ++checked;
    ASSERT_EQ(check_equivalence_sample(lam, rho, 1001), lam <= 0.0 || rho.minCoeff() >= 0.0);
  }
}

TEST(Constraints, CoefficientsMatchSlopeAlongTrajectories) {
  std::mt19937_64 eng(73);
  const double delta = 1e-4;
  DiffDriveGimbal gimbal(example_box());
  StereoFrustum cam(CameraIntrinsics{}, 0.3, 5.0);
  PlanarCamBot planar(example_box());
  SectorFov2D fov(1.0, 2.0);
  World world;
  world.discs.push_back({Vec2(-4, -4), 0.5});
  ConstraintParams params;
  params.W = 0.5;
  params.collision_enabled = true;

  struct Case {
    const RobotModel* model;
    const VisibilityModel* vis;
    Vec q;
    std::vector<Landmark> lms;
  };
  std::vector<Landmark> planar_lms, cam_lms;
  for (int i = 0; i < 6; ++i) planar_lms.push_back({i, Vec3(0.5 + 0.2 * i, 0.1 * (i - 3), 0), 1.0 + i});
  for (int i = 0; i < 6; ++i) cam_lms.push_back({i, Vec3(1.5 + 0.3 * i, 0.1 * (i - 3), 0.1 * (i % 2)), 1.0});
  const std::vector<Case> cases{{&planar, &fov, Vec3(0, 0, 0), planar_lms},
                                {&gimbal, &cam, Eigen::Vector4d(0, 0, 0.2, -0.2), cam_lms}};
  for (const Case& c : cases) {
    const LandmarkStore store(c.lms);
    AugmentedState x = initialize(c.q, *c.model, *c.vis, store, params, world, {});
    const auto n = static_cast<Eigen::Index>(x.num_active());
    ASSERT_GT(n, 0);
    for (int trial = 0; trial < 20; ++trial) {
      for (Eigen::Index l = 0; l < n; ++l) {
        x.aux.lambda(l) = uniform_real(eng, -0.5, 1.0);
        x.aux.mu(l) = uniform_real(eng, 0.0, 1.0);
      }
      Vec u(3 + 2 * n);
      u(0) = uniform_real(eng, -1, 1);
      u(1) = uniform_real(eng, -1, 1);
      u(2) = uniform_real(eng, -1, 1);
      for (Eigen::Index i = 3; i < u.size(); ++i) u(i) = uniform_real(eng, -1, 1);
      const auto rows = build_rows(x, *c.model, *c.vis, store, params, world);
      AugmentedState xp = x;
      xp.q = integrate_configuration(*c.model, x.q, u.head(3), delta);
      xp.aux.lambda += delta * u.segment(3, n);
      xp.aux.mu += delta * u.segment(3 + n, n);
      const auto next = evaluate_rows(xp, *c.model, *c.vis, store, params, world);
      ASSERT_EQ(rows.size(), next.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double slope = (next[i].value - rows[i].value) / delta;
        const double predicted = rows[i].coeffs.dot(u);
        // Stereo pixel rows are O(f); compare relative to the row scale.
        const double scale = std::max(1.0, rows[i].coeffs.cwiseAbs().maxCoeff());
        EXPECT_LE(std::abs(slope - predicted) / scale, 1e-3) << c.model->kind() << " " << rows[i].label();
      }
    }
  }
}

TEST(Constraints, FamilyMinima) {
  Fixture f;
  f.params.W = 1.5;
  const LandmarkStore store = line_of_landmarks(3);
  const AugmentedState x = initialize(Vec3::Zero(), f.model, f.fov, store, f.params, f.world, {});
  const auto mins = family_minima(build_rows(x, f.model, f.fov, store, f.params, f.world));
  EXPECT_EQ(mins[0], 1.5);
  EXPECT_EQ(mins[1], 0.0);
  EXPECT_EQ(mins[3], 0.0);
  EXPECT_EQ(mins[4], 1.0);
  EXPECT_TRUE(std::isinf(mins[5]));
}
