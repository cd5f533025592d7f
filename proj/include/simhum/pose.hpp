#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace simhum {

// Planar pose used by the toy world: translation in workspace units and a
// heading angle in radians, kept in (-pi, pi].
struct Pose2 {
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();
  double theta = 0.0;

  static Pose2 identity() { return {}; }
};

// Spatial pose. Quaternions are (w, x, y, z), unit norm, canonical w >= 0.
struct Pose3 {
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();

  static Pose3 identity() { return {}; }
};

inline constexpr double kUnitQuaternionTolerance = 1e-9;

double wrap_angle(double theta);
Eigen::Quaterniond canonicalize(const Eigen::Quaterniond& q);

// Delta expressed in the base frame: compose(base, relative_action(base, t)) == t.
Pose2 relative_action(const Pose2& base, const Pose2& target);
Pose3 relative_action(const Pose3& base, const Pose3& target);

Pose2 compose(const Pose2& base, const Pose2& delta);
Pose3 compose(const Pose3& base, const Pose3& delta);

}  // namespace simhum
