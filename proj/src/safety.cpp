// Copyright 2026 The TwinArm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "twinarm/safety.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "twinarm/errors.hpp"

namespace twinarm {

namespace {

constexpr double kParallelTolerance = 1e-10;

double clamp_to(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

}  // namespace

void WorkspaceLimits::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (!(min[i] <= max[i])) {
      throw ConfigError("workspace limits: min exceeds max on axis " +
                        std::to_string(i));
    }
  }
}

Transform base_to_base(const CalibrationSet& cal) {
  return cal.base_to_ee.probe * cal.ee_to_cam.probe * cal.cam_to_marker.probe *
         invert(cal.cam_to_marker.needle) * invert(cal.ee_to_cam.needle) *
         invert(cal.base_to_ee.needle);
}

BoundingCylinder tool_cylinder(const Pose& ee_pose, const ToolSpec& tool) {
  return {ee_pose.position,
          ee_pose.orientation.rotate(tool.local_axis.normalized()),
          tool.length, tool.radius};
}

Vec3 tool_tip(const Pose& ee_pose, const ToolSpec& tool) {
  return ee_pose.position + ee_pose.orientation.rotate(tool.tip_offset());
}

SegmentDistance segment_min_distance(const BoundingCylinder& c1,
                                     const BoundingCylinder& c2) {
  const Vec3& u = c1.axis;
  const Vec3& v = c2.axis;
  const Vec3 r = c1.anchor - c2.anchor;
  const double a = u.dot(u);
  const double e = v.dot(v);
  const double b = u.dot(v);
  const double c = u.dot(r);
  const double f = v.dot(r);
  const double l1 = c1.length;
  const double l2 = c2.length;

  double s = 0.0;
  if (std::abs(b) / std::sqrt(a * e) <= 1.0 - kParallelTolerance) {
    // Closest points of the infinite lines, first parameter clamped.
    const double denom = a * e - b * b;
    s = clamp_to((b * f - c * e) / denom, 0.0, l1);
  }
  // Parallel axes: any s is a line minimizer, so start from the anchor and
  // let the clamping below slide it onto the overlap.
  double t = (b * s + f) / e;
  if (t < 0.0) {
    t = 0.0;
    s = clamp_to(-c / a, 0.0, l1);
  } else if (t > l2) {
    t = l2;
    s = clamp_to((b * l2 - c) / a, 0.0, l1);
  }
  return {(c1.point(s) - c2.point(t)).norm(), s, t};
}

Vec3 clamp_position(const Vec3& p, const WorkspaceLimits& limits) {
  return p.cwiseMax(limits.min).cwiseMin(limits.max);
}

Pose clamp_workspace(const Pose& target, const WorkspaceLimits& limits) {
  return {clamp_position(target.position, limits), target.orientation};
}

const char* verdict_name(VerdictKind k) {
  switch (k) {
    case VerdictKind::kAllowed:
      return "Allowed";
    case VerdictKind::kClamped:
      return "Clamped";
    case VerdictKind::kBlocked:
      return "Blocked";
  }
  return "Unknown";
}

std::optional<VerdictKind> parse_verdict(const std::string& s) {
  if (s == "Allowed") return VerdictKind::kAllowed;
  if (s == "Clamped") return VerdictKind::kClamped;
  if (s == "Blocked") return VerdictKind::kBlocked;
  return std::nullopt;
}

double tool_distance(const ArmPair<Pose>& poses, const ArmPair<ToolSpec>& tools,
                     const Transform& probe_T_needle) {
  const BoundingCylinder probe = tool_cylinder(poses.probe, tools.probe);
  const BoundingCylinder needle = tool_cylinder(
      transform_pose(probe_T_needle, poses.needle), tools.needle);
  return segment_min_distance(probe, needle).d_min;
}

SafetyVerdict gate(const ArmPair<Pose>& targets, const ArmPair<Pose>& last_safe,
                   const ArmPair<ToolSpec>& tools, const CalibrationSet* cal,
                   double clearance) {
  SafetyVerdict verdict;
  if (cal == nullptr) {
    verdict.kind = VerdictKind::kBlocked;
    verdict.adjusted_target = last_safe;
    verdict.d_min = std::numeric_limits<double>::quiet_NaN();
    verdict.configuration_error = true;
    return verdict;
  }
  verdict.d_min = tool_distance(targets, tools, base_to_base(*cal));
  const double threshold = tools.probe.radius + tools.needle.radius + clearance;
  if (verdict.d_min >= threshold) {
    verdict.kind = VerdictKind::kAllowed;
    verdict.adjusted_target = targets;
  } else {
    verdict.kind = VerdictKind::kBlocked;
    verdict.adjusted_target = last_safe;
  }
  return verdict;
}

SafetyGate::SafetyGate(const SafetyConfig& config,
                       std::optional<CalibrationSet> cal,
                       const ArmPair<Pose>& initial_safe)
    : config_(config), calibration_(std::move(cal)), last_safe_(initial_safe) {
  config_.workspace.probe.validate();
  config_.workspace.needle.validate();
  for (Arm arm : kArms) {
    const ToolSpec& tool = config_.tools[arm];
    if (!(tool.length > 0.0) || !(tool.radius > 0.0)) {
      throw ConfigError(std::string("tool geometry must be positive for ") +
                        arm_name(arm));
    }
  }
  if (!(config_.clearance >= 0.0)) throw ConfigError("clearance must be >= 0");
  if (calibration_) {
    probe_T_needle_ = base_to_base(*calibration_);
    const double d = tool_distance(initial_safe, config_.tools, probe_T_needle_);
    if (d < threshold()) {
      throw ConfigError("initial poses violate the collision gate (d_min = " +
                        std::to_string(d) + ")");
    }
  }
}

SafetyVerdict SafetyGate::evaluate(const ArmPair<Pose>& candidate) {
  ArmPair<Pose> clamped;
  bool was_clamped = false;
  for (Arm arm : kArms) {
    clamped[arm] = clamp_workspace(candidate[arm], config_.workspace[arm]);
    was_clamped =
        was_clamped || clamped[arm].position != candidate[arm].position;
  }
  SafetyVerdict v = gate(clamped, last_safe_, config_.tools,
                         calibration_ ? &*calibration_ : nullptr,
                         config_.clearance);
  if (v.kind == VerdictKind::kAllowed) {
    if (was_clamped) v.kind = VerdictKind::kClamped;
    last_safe_ = v.adjusted_target;
  }
  return v;
}

void SafetyGate::reset_last_safe(const ArmPair<Pose>& safe) {
  if (calibration_ &&
      tool_distance(safe, config_.tools, probe_T_needle_) < threshold()) {
    throw ConfigError("reset_last_safe: pose pair violates the gate");
  }
  last_safe_ = safe;
}

}  // namespace twinarm
