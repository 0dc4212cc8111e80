#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "visifilter/common.hpp"
#include "visifilter/visibility.hpp"

namespace visifilter {

struct Disc {
  Vec2 center = Vec2::Zero();
  double radius = 0.0;
};

struct Segment {
  Vec2 a = Vec2::Zero();
  Vec2 b = Vec2::Zero();
  double thickness = 0.0;  // full width; the surface sits thickness/2 from the centerline
};

/// A stretch of constant feature density along a wall.
struct WallSection {
  double length = 0.0;   // m
  double density = 0.0;  // features per meter
};

/// Textured wall: features are scattered on the vertical plane through the
/// segment from `start` to `end`, between heights z_min and z_max.
struct FeatureWall {
  Vec2 start = Vec2::Zero();
  Vec2 end = Vec2::Zero();
  double z_min = -0.4;
  double z_max = 0.4;
  std::vector<WallSection> sections;
  std::uint64_t seed = 0;

  double length() const { return (end - start).norm(); }

  /// Number of features generated in each section: round(density * length).
  std::vector<long> section_counts() const {
    std::vector<long> out;
    out.reserve(sections.size());
    for (const WallSection& s : sections) out.push_back(std::lround(s.density * s.length));
    return out;
  }
};

struct Bounds2 {
  Vec2 min = Vec2::Constant(-10.0);
  Vec2 max = Vec2::Constant(10.0);
};

struct DistanceQuery {
  double s = 0.0;
  Vec2 grad = Vec2::Zero();
};

/// Proxy distance reported when the world holds no obstacles.
inline constexpr double kFarDistance = 1e9;

struct World {
  std::vector<Disc> discs;
  std::vector<Segment> segments;
  std::vector<FeatureWall> walls;
  Bounds2 bounds;

  bool has_obstacles() const { return !discs.empty() || !segments.empty(); }
};

namespace detail {

inline DistanceQuery disc_distance(const Disc& d, const Vec2& x) {
  const Vec2 r = x - d.center;
  const double n = r.norm();
  return {n - d.radius, n > 0.0 ? Vec2(r / n) : Vec2::Zero()};
}

inline DistanceQuery segment_distance(const Segment& seg, const Vec2& x) {
  const Vec2 ab = seg.b - seg.a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (x - seg.a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec2 r = x - (seg.a + t * ab);
  const double n = r.norm();
  return {n - 0.5 * seg.thickness, n > 0.0 ? Vec2(r / n) : Vec2::Zero()};
}

}  // namespace detail

/// Distance to the nearest obstacle surface (positive outside) and its
/// gradient. Discs are indexed before segments; ties go to the lowest index.
inline DistanceQuery signed_distance(const World& world, const Vec2& point) {
  if (!point.allFinite()) throw std::invalid_argument("signed_distance: non-finite query point");
  if (!world.has_obstacles()) return {kFarDistance, Vec2::Zero()};
  DistanceQuery best{std::numeric_limits<double>::infinity(), Vec2::Zero()};
  for (const Disc& d : world.discs) {
    const DistanceQuery q = detail::disc_distance(d, point);
    if (q.s < best.s) best = q;
  }
  for (const Segment& s : world.segments) {
    const DistanceQuery q = detail::segment_distance(s, point);
    if (q.s < best.s) best = q;
  }
  return best;
}

struct UniformBoxSpec {
  int count = 0;
  Vec3 lo = Vec3(-1.0, -1.0, 0.0);
  Vec3 hi = Vec3(1.0, 1.0, 0.0);
  double weight = 1.0;
  std::uint64_t seed = 0;
};

/// Landmarks uniform in an axis-aligned box, ids first_id, first_id + 1, ...
inline LandmarkStore generate_landmarks(const UniformBoxSpec& spec, LandmarkId first_id = 0) {
  if (spec.count < 0) throw std::invalid_argument("landmark count must be nonnegative");
  std::mt19937_64 eng(spec.seed);
  std::vector<Landmark> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    Vec3 p;
    for (int k = 0; k < 3; ++k) p(k) = uniform_real(eng, spec.lo(k), spec.hi(k));
    out.push_back({first_id + i, p, spec.weight});
  }
  return LandmarkStore(std::move(out), spec.seed);
}

/// Landmarks on a feature wall, section by section.
inline std::vector<Landmark> generate_wall_landmarks(const FeatureWall& wall, LandmarkId first_id = 0,
                                                     double weight = 1.0) {
  std::mt19937_64 eng(wall.seed);
  const double len = wall.length();
  if (!(len > 0.0)) throw std::invalid_argument("feature wall has zero length");
  const Vec2 dir = (wall.end - wall.start) / len;
  std::vector<Landmark> out;
  LandmarkId id = first_id;
  double offset = 0.0;
  const auto counts = wall.section_counts();
  for (std::size_t s = 0; s < wall.sections.size(); ++s) {
    const WallSection& sec = wall.sections[s];
    for (long i = 0; i < counts[s]; ++i) {
      const double along = offset + uniform_real(eng, 0.0, sec.length);
      const double z = uniform_real(eng, wall.z_min, wall.z_max);
      const Vec2 xy = wall.start + along * dir;
      out.push_back({id++, Vec3(xy.x(), xy.y(), z), weight});
    }
    offset += sec.length;
  }
  return out;
}

inline LandmarkStore generate_landmarks(const World& world, double weight = 1.0, LandmarkId first_id = 0) {
  std::vector<Landmark> all;
  std::uint64_t seed = 0;
  for (const FeatureWall& w : world.walls) {
    auto part = generate_wall_landmarks(w, first_id + static_cast<LandmarkId>(all.size()), weight);
    all.insert(all.end(), part.begin(), part.end());
    seed ^= w.seed;
  }
  return LandmarkStore(std::move(all), seed);
}

}  // namespace visifilter
