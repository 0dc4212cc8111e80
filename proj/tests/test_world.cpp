#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "visifilter/world.hpp"

using namespace visifilter;

TEST(World, DiscDistance) {
  World w;
  w.discs.push_back({Vec2(0, 0), 1.0});
  const DistanceQuery q = signed_distance(w, Vec2(3, 0));
  EXPECT_EQ(q.s, 2.0);
  EXPECT_EQ(q.grad, Vec2(1, 0));
}

TEST(World, EmptyWorldIsFar) {
  const DistanceQuery q = signed_distance(World{}, Vec2(3, 0));
  EXPECT_EQ(q.s, kFarDistance);
  EXPECT_EQ(q.grad, Vec2::Zero());
}

TEST(World, SegmentDistance) {
  World w;
  w.segments.push_back({Vec2(0, 0), Vec2(2, 0), 0.0});
  const DistanceQuery q = signed_distance(w, Vec2(1, 1));
  EXPECT_EQ(q.s, 1.0);
  EXPECT_EQ(q.grad, Vec2(0, 1));
  EXPECT_THROW(signed_distance(w, Vec2(NAN, 0)), std::invalid_argument);
}

TEST(World, TieGoesToLowestIndex) {
  World w;
  w.discs.push_back({Vec2(-1, 0), 0.5});
  w.discs.push_back({Vec2(1, 0), 0.5});
  EXPECT_EQ(signed_distance(w, Vec2(0, 0)).grad, Vec2(1, 0));
}

namespace {

World random_world(std::mt19937_64& eng) {
  World w;
  for (int i = 0; i < 4; ++i) w.discs.push_back({Vec2(uniform_real(eng, -5, 5), uniform_real(eng, -5, 5)), uniform_real(eng, 0.1, 1)});
  for (int i = 0; i < 3; ++i) {
    w.segments.push_back({Vec2(uniform_real(eng, -5, 5), uniform_real(eng, -5, 5)),
                          Vec2(uniform_real(eng, -5, 5), uniform_real(eng, -5, 5)), uniform_real(eng, 0, 0.3)});
  }
  return w;
}

}  // namespace

TEST(World, GradientIsUnitAndMatchesFiniteDifferences) {
  std::mt19937_64 eng(61);
  const World w = random_world(eng);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec2 x(uniform_real(eng, -6, 6), uniform_real(eng, -6, 6));
    const DistanceQuery q = signed_distance(w, x);
    if (q.s <= 0.0) continue;
    // Skip points near an equidistant locus (two primitives within 1e-4).
    int near = 0;
    for (const Disc& d : w.discs) near += std::abs(detail::disc_distance(d, x).s - q.s) < 1e-4;
    for (const Segment& s : w.segments) near += std::abs(detail::segment_distance(s, x).s - q.s) < 1e-4;
    if (near > 1) continue;
    ++checked;
    EXPECT_NEAR(q.grad.norm(), 1.0, 1e-9);
    auto fn = [&](const Vec& p) { return Vec::Constant(1, signed_distance(w, Vec2(p)).s); };
    const Mat fd = oracle::finite_difference(fn, x);
    EXPECT_LE((fd.row(0).transpose() - q.grad).norm(), 1e-5);
  }
  EXPECT_GT(checked, 500);
}

TEST(World, DistanceIsOneLipschitz) {
  std::mt19937_64 eng(67);
  const World w = random_world(eng);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec2 a(uniform_real(eng, -6, 6), uniform_real(eng, -6, 6));
    const Vec2 b(uniform_real(eng, -6, 6), uniform_real(eng, -6, 6));
    EXPECT_LE(std::abs(signed_distance(w, a).s - signed_distance(w, b).s), (a - b).norm() + 1e-12);
  }
}

TEST(World, UniformLandmarks) {
  UniformBoxSpec spec;
  spec.count = 30;
  spec.seed = 12;
  const LandmarkStore a = generate_landmarks(spec);
  const LandmarkStore b = generate_landmarks(spec);
  ASSERT_EQ(a.size(), 30u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.landmarks()[i].world_position, b.landmarks()[i].world_position);
    EXPECT_LE(a.landmarks()[i].world_position.head<2>().lpNorm<Eigen::Infinity>(), 1.0);
  }
  spec.count = 0;
  EXPECT_TRUE(generate_landmarks(spec).empty());
}

TEST(World, WallSectionCounts) {
  FeatureWall wall;
  wall.start = Vec2(0, 1);
  wall.end = Vec2(4, 1);
  const double third = 4.0 / 3.0;
  wall.sections = {{third, 20.0}, {third, 1.0}, {third, 20.0}};
  wall.seed = 5;
  EXPECT_EQ(wall.section_counts(), (std::vector<long>{27, 1, 27}));
  const auto lms = generate_wall_landmarks(wall);
  ASSERT_EQ(lms.size(), 55u);
  int middle = 0;
  for (const Landmark& l : lms) {
    EXPECT_NEAR(l.world_position.y(), 1.0, 1e-15);
    EXPECT_GE(l.world_position.z(), wall.z_min);
    EXPECT_LE(l.world_position.z(), wall.z_max);
    middle += l.world_position.x() > third && l.world_position.x() < 2 * third;
  }
  EXPECT_EQ(middle, 1);
  World w;
  w.walls.push_back(wall);
  const LandmarkStore store = generate_landmarks(w);
  EXPECT_EQ(store.size(), 55u);
  EXPECT_EQ(store.landmarks()[3].world_position, lms[3].world_position);
}
