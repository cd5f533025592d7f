#include "simhum/pipeline.hpp"

#include <cmath>
#include <vector>

#include "simhum/errors.hpp"
#include "simhum/text.hpp"

namespace simhum {

Episode relativize(const Episode& ep) {
  if (ep.action_frame == ActionFrame::Relative) return ep;
  Episode out = ep;
  const auto layout = layout_for(ep.domain, static_cast<int>(ep.actions.cols()));
  for (Eigen::Index t = 0; t < ep.actions.rows(); ++t) {
    Eigen::RowVectorXd row = ep.actions.row(t);
    for (int o : layout.pose_offsets) {
      set_pose(row, o, relative_action(pose_at(ep.states.row(t), o), pose_at(ep.actions.row(t), o)));
    }
    out.actions.row(t) = row;
  }
  out.action_frame = ActionFrame::Relative;
  return out;
}

Matrix pose_chain(const Episode& ep) {
  if (ep.action_frame != ActionFrame::Relative) throw PipelineError("pose chain needs relative actions");
  const auto layout = layout_for(ep.domain, static_cast<int>(ep.actions.cols()));
  const Eigen::Index T = ep.actions.rows();
  Matrix chain(T + 1, ep.states.cols());
  chain.row(0) = ep.states.row(0);
  for (Eigen::Index t = 0; t < T; ++t) {
    Eigen::RowVectorXd next = chain.row(t);
    for (int o : layout.pose_offsets) {
      set_pose(next, o, compose(pose_at(chain.row(t), o), pose_at(ep.actions.row(t), o)));
    }
    chain.row(t + 1) = next;
  }
  return chain;
}

Episode resample(const Episode& ep, double target_hz) {
  if (!(target_hz > 0.0)) throw ArgumentError("target_hz must be positive, got " + format_double(target_hz));
  if (target_hz > ep.frequency_hz) {
    throw ArgumentError("cannot upsample from " + format_double(ep.frequency_hz) + " Hz to " +
                        format_double(target_hz) + " Hz");
  }
  if (target_hz == ep.frequency_hz) return ep;

  const int T = ep.length();
  const double ratio = ep.frequency_hz / target_hz;
  const int n_out = static_cast<int>(std::floor((T - 1) / ratio + 1e-9)) + 1;
  std::vector<int> keep(static_cast<std::size_t>(n_out));
  for (int k = 0; k < n_out; ++k) keep[static_cast<std::size_t>(k)] = std::min(T - 1, static_cast<int>(std::lround(k * ratio)));

  Episode out = ep;
  out.frequency_hz = target_hz;
  out.observations.clear();
  out.states.resize(n_out, ep.states.cols());
  out.actions.resize(n_out, ep.actions.cols());

  const bool relative = ep.action_frame == ActionFrame::Relative;
  const auto layout = layout_for(ep.domain, static_cast<int>(ep.actions.cols()));
  const Matrix chain = relative ? pose_chain(ep) : Matrix();

  for (int k = 0; k < n_out; ++k) {
    const int i = keep[static_cast<std::size_t>(k)];
    const int next = (k + 1 < n_out) ? keep[static_cast<std::size_t>(k + 1)] : T;
    out.observations.push_back(ep.observations[static_cast<std::size_t>(i)]);
    out.states.row(k) = ep.states.row(i);
    // Non-pose entries come from the last command issued inside the span.
    Eigen::RowVectorXd action = ep.actions.row(next - 1);
    if (relative) {
      for (int o : layout.pose_offsets) {
        set_pose(action, o, relative_action(pose_at(chain.row(i), o), pose_at(chain.row(next), o)));
      }
    }
    out.actions.row(k) = action;
  }
  return out;
}

Episode prune_static(const Episode& ep, double motion_threshold, bool gripper_changes_count) {
  const int T = ep.length();
  if (T < 1) throw ArgumentError("cannot prune an empty episode");
  const auto layout = layout_for(ep.domain, static_cast<int>(ep.states.cols()));

  auto moving = [&](int t) {
    double motion = 0.0;
    for (int o : layout.pose_offsets) {
      const Pose2 a = pose_at(ep.states.row(t), o);
      const Pose2 b = pose_at(ep.states.row(t + 1), o);
      motion = std::max(motion, (b.translation - a.translation).norm() + std::abs(wrap_angle(b.theta - a.theta)));
    }
    if (motion >= motion_threshold) return true;
    if (gripper_changes_count) {
      for (int g : layout.gripper_dims)
        if (ep.states(t, g) != ep.states(t + 1, g)) return true;
      for (int g : layout.absolute_dims)
        if (ep.states(t, g) != ep.states(t + 1, g)) return true;
    }
    return false;
  };

  int first = -1;
  int last = -1;
  for (int t = 0; t + 1 < T; ++t) {
    if (moving(t)) {
      if (first < 0) first = t;
      last = t;
    }
  }
  if (first < 0) throw PipelineError("no motion content: every step is below the motion threshold");

  const int begin = first;
  const int end = last + 1;  // inclusive
  Episode out = ep;
  out.observations.assign(ep.observations.begin() + begin, ep.observations.begin() + end + 1);
  out.states = ep.states.middleRows(begin, end - begin + 1);
  out.actions = ep.actions.middleRows(begin, end - begin + 1);
  return out;
}

}  // namespace simhum
