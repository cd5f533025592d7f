#pragma once

#include <Eigen/Core>

#include "simhum/dataset.hpp"
#include "simhum/pose.hpp"

namespace simhum {

inline constexpr double kDefaultMotionThreshold = 1e-4;

// Reads / writes an (x, y, theta) block of any Eigen vector or row expression.
template <typename V>
Pose2 pose_at(const V& v, int offset) {
  Pose2 p;
  p.translation = Eigen::Vector2d(v(offset), v(offset + 1));
  p.theta = v(offset + 2);
  return p;
}

template <typename V>
void set_pose(V&& v, int offset, const Pose2& pose) {
  v(offset) = pose.translation.x();
  v(offset + 1) = pose.translation.y();
  v(offset + 2) = pose.theta;
}

// Converts absolute target-pose actions into per-step deltas in the frame of
// the current pose. Relative episodes are returned unchanged.
Episode relativize(const Episode& episode);

// Integrates the relative actions from the first recorded pose. Row t is the
// pose block configuration before action t; the final row is the pose after
// the last action (T + 1 rows).
Matrix pose_chain(const Episode& episode);

// Keeps the source frame nearest to each tick of the target clock (starting
// at frame 0) and re-derives relative actions between the retained poses.
Episode resample(const Episode& episode, double target_hz);

// Drops the leading and trailing spans whose per-step motion stays below the
// threshold. Gripper (and fingertip) changes count as motion when requested.
Episode prune_static(const Episode& episode, double motion_threshold = kDefaultMotionThreshold,
                     bool gripper_changes_count = true);

}  // namespace simhum
