#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "visifilter/common.hpp"

namespace visifilter {

using LandmarkId = std::int64_t;

struct Landmark {
  LandmarkId id = 0;
  Vec3 world_position = Vec3::Zero();
  double weight = 1.0;
};

/// Landmarks with unique ids and nonnegative weights.
class LandmarkStore {
 public:
  LandmarkStore() = default;
  explicit LandmarkStore(std::vector<Landmark> landmarks, std::uint64_t rng_seed = 0)
      : landmarks_(std::move(landmarks)), rng_seed_(rng_seed) {
    index_.reserve(landmarks_.size());
    for (std::size_t i = 0; i < landmarks_.size(); ++i) {
      const Landmark& l = landmarks_[i];
      if (!(l.weight >= 0.0)) throw std::invalid_argument("landmark weight must be nonnegative");
      if (!index_.emplace(l.id, i).second) {
        throw std::invalid_argument("duplicate landmark id " + std::to_string(l.id));
      }
    }
  }

  std::span<const Landmark> landmarks() const { return landmarks_; }
  std::size_t size() const { return landmarks_.size(); }
  bool empty() const { return landmarks_.empty(); }
  std::uint64_t rng_seed() const { return rng_seed_; }

  const Landmark& at(LandmarkId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw std::out_of_range("unknown landmark id " + std::to_string(id));
    return landmarks_[it->second];
  }
  bool contains(LandmarkId id) const { return index_.count(id) != 0; }

 private:
  std::vector<Landmark> landmarks_;
  std::unordered_map<LandmarkId, std::size_t> index_;
  std::uint64_t rng_seed_ = 0;
};

/// Sensor-frame visibility test rho(p) >= 0 (componentwise) with gradient.
class VisibilityModel {
 public:
  virtual ~VisibilityModel() = default;

  virtual std::string_view kind() const = 0;
  virtual int dim() const = 0;
  /// Points where rho is differentiable; outside it rho() throws DomainError.
  virtual bool in_domain(const Vec3& p) const = 0;
  virtual Vec rho_unchecked(const Vec3& p) const = 0;
  virtual Mat rho_grad_unchecked(const Vec3& p) const = 0;

  Vec rho(const Vec3& p) const {
    if (!in_domain(p)) throw DomainError(std::string(kind()) + ": point outside the differentiable domain");
    return rho_unchecked(p);
  }
  Mat rho_grad(const Vec3& p) const {
    if (!in_domain(p)) throw DomainError(std::string(kind()) + ": point outside the differentiable domain");
    return rho_grad_unchecked(p);
  }
  bool visible(const Vec3& p) const { return in_domain(p) && rho_unchecked(p).minCoeff() >= 0.0; }
};

using VisibilityModelPtr = std::shared_ptr<const VisibilityModel>;

/// Planar circular sector: half-angle psi/2 about sensor x, radius R.
class SectorFov2D final : public VisibilityModel {
 public:
  static constexpr double kGuardRadius = 1e-6;

  SectorFov2D(double psi, double range) : psi_(psi), range_(range) {
    if (!(psi > 0.0 && psi < 2.0 * std::numbers::pi)) throw std::invalid_argument("angle of view out of range");
    if (!(range > 0.0)) throw std::invalid_argument("sensing range must be positive");
  }

  std::string_view kind() const override { return "sector_fov_2d"; }
  int dim() const override { return 3; }
  double psi() const { return psi_; }
  double range() const { return range_; }

  bool in_domain(const Vec3& p) const override { return p.head<2>().norm() >= kGuardRadius; }

  Vec rho_unchecked(const Vec3& p) const override {
    const double s = std::sin(0.5 * psi_);
    const double c = std::cos(0.5 * psi_);
    Vec r(3);
    r << s * p.x() + c * p.y(), s * p.x() - c * p.y(), range_ - p.head<2>().norm();
    return r;
  }

  Mat rho_grad_unchecked(const Vec3& p) const override {
    const double s = std::sin(0.5 * psi_);
    const double c = std::cos(0.5 * psi_);
    const double n = p.head<2>().norm();
    Mat g(3, 3);
    g << s, c, 0.0,  //
        s, -c, 0.0,  //
        -p.x() / n, -p.y() / n, 0.0;
    return g;
  }

 private:
  double psi_;
  double range_;
};

struct CameraIntrinsics {
  double fx = 350.0;
  double fy = 350.0;
  double cx = 336.0;
  double cy = 188.0;
  double width = 672.0;
  double height = 376.0;
};

/// Pinhole frustum with depth bounds, optical axis along sensor z.
/// Six one-sided rows: m_u, I_w - m_u, m_v, I_h - m_v, p_z - r_min, r_max - p_z,
/// with (m_u, m_v) = (f_x p_x / p_z + c_x, f_y p_y / p_z + c_y).
class StereoFrustum final : public VisibilityModel {
 public:
  static constexpr double kGuardDepth = 1e-6;

  StereoFrustum(CameraIntrinsics k, double r_min, double r_max) : k_(k), r_min_(r_min), r_max_(r_max) {
    if (!(k.fx > 0.0 && k.fy > 0.0 && k.width > 0.0 && k.height > 0.0)) {
      throw std::invalid_argument("invalid camera intrinsics");
    }
    if (!(r_min > kGuardDepth && r_max > r_min)) throw std::invalid_argument("invalid depth bounds");
  }

  std::string_view kind() const override { return "stereo_frustum"; }
  int dim() const override { return 6; }
  const CameraIntrinsics& intrinsics() const { return k_; }
  double r_min() const { return r_min_; }
  double r_max() const { return r_max_; }

  bool in_domain(const Vec3& p) const override { return p.z() >= kGuardDepth; }

  Vec3 measure(const Vec3& p) const {
    return {k_.fx * p.x() / p.z() + k_.cx, k_.fy * p.y() / p.z() + k_.cy, p.z()};
  }

  Vec rho_unchecked(const Vec3& p) const override {
    const Vec3 m = measure(p);
    Vec r(6);
    r << m.x(), k_.width - m.x(), m.y(), k_.height - m.y(), m.z() - r_min_, r_max_ - m.z();
    return r;
  }

  Mat rho_grad_unchecked(const Vec3& p) const override {
    const double iz = 1.0 / p.z();
    Eigen::RowVector3d du(k_.fx * iz, 0.0, -k_.fx * p.x() * iz * iz);
    Eigen::RowVector3d dv(0.0, k_.fy * iz, -k_.fy * p.y() * iz * iz);
    Eigen::RowVector3d dd(0.0, 0.0, 1.0);
    Mat g(6, 3);
    g.row(0) = du;
    g.row(1) = -du;
    g.row(2) = dv;
    g.row(3) = -dv;
    g.row(4) = dd;
    g.row(5) = -dd;
    return g;
  }

 private:
  CameraIntrinsics k_;
  double r_min_;
  double r_max_;
};

inline Vec rho(const VisibilityModel& model, const Vec3& p) { return model.rho(p); }
inline Mat rho_grad(const VisibilityModel& model, const Vec3& p) { return model.rho_grad(p); }

/// Ids (in store order) of landmarks satisfying every rho component.
inline std::vector<LandmarkId> visible_set(const VisibilityModel& model, const Pose& sensor_pose,
                                           const LandmarkStore& store) {
  const Pose inv = sensor_pose.inverse(Eigen::Isometry);
  std::vector<LandmarkId> ids;
  for (const Landmark& l : store.landmarks()) {
    if (model.visible(inv * l.world_position)) ids.push_back(l.id);
  }
  return ids;
}

inline double score(const VisibilityModel& model, const Pose& sensor_pose, const LandmarkStore& store) {
  const Pose inv = sensor_pose.inverse(Eigen::Isometry);
  double w = 0.0;
  for (const Landmark& l : store.landmarks()) {
    if (model.visible(inv * l.world_position)) w += l.weight;
  }
  return w;
}

inline double total_weight(const LandmarkStore& store, std::span<const LandmarkId> ids) {
  double w = 0.0;
  for (LandmarkId id : ids) w += store.at(id).weight;
  return w;
}

/// Caps the visible set at n_max by uniform sampling without replacement.
/// The draw depends only on (seed, tick) and the input; output is sorted.
inline std::vector<LandmarkId> sample_features(std::span<const LandmarkId> visible_ids, std::size_t n_max,
                                               std::uint64_t seed, std::uint64_t tick) {
  if (n_max < 1) throw std::invalid_argument("feature cap must be at least 1");
  std::vector<LandmarkId> ids(visible_ids.begin(), visible_ids.end());
  if (ids.size() > n_max) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tick), static_cast<std::uint32_t>(tick >> 32)};
    std::mt19937_64 eng(seq);
    for (std::size_t i = 0; i < n_max; ++i) {
      const auto j = i + uniform_index(eng, ids.size() - i);
      std::swap(ids[i], ids[j]);
    }
    ids.resize(n_max);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace visifilter
