#include "simhum/pose.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "simhum/errors.hpp"

namespace simhum {

namespace {

void check_unit(const Eigen::Quaterniond& q, const char* what) {
  const double err = std::abs(q.norm() - 1.0);
  if (!(err <= kUnitQuaternionTolerance)) {
    throw ArgumentError(std::string(what) + " quaternion is not unit norm (|q|-1 = " +
                        std::to_string(err) + ")");
  }
}

}  // namespace

double wrap_angle(double theta) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double r = std::remainder(theta, kTwoPi);  // [-pi, pi]
  if (r <= -std::numbers::pi) r += kTwoPi;
  return r;
}

Eigen::Quaterniond canonicalize(const Eigen::Quaterniond& q) {
  Eigen::Quaterniond out = q.normalized();
  if (out.w() < 0.0) out.coeffs() = -out.coeffs();
  return out;
}

Pose2 relative_action(const Pose2& base, const Pose2& target) {
  const Eigen::Rotation2Dd inv(-base.theta);
  Pose2 delta;
  delta.translation = inv * (target.translation - base.translation);
  delta.theta = wrap_angle(target.theta - base.theta);
  return delta;
}

Pose2 compose(const Pose2& base, const Pose2& delta) {
  Pose2 out;
  out.translation = base.translation + Eigen::Rotation2Dd(base.theta) * delta.translation;
  out.theta = wrap_angle(base.theta + delta.theta);
  return out;
}

Pose3 relative_action(const Pose3& base, const Pose3& target) {
  check_unit(base.rotation, "base");
  check_unit(target.rotation, "target");
  const Eigen::Quaterniond inv = base.rotation.conjugate();
  Pose3 delta;
  delta.translation = inv * (target.translation - base.translation);
  delta.rotation = canonicalize(inv * target.rotation);
  return delta;
}

Pose3 compose(const Pose3& base, const Pose3& delta) {
  check_unit(base.rotation, "base");
  check_unit(delta.rotation, "delta");
  Pose3 out;
  out.translation = base.translation + base.rotation * delta.translation;
  out.rotation = canonicalize(base.rotation * delta.rotation);
  return out;
}

}  // namespace simhum
