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

// Two-level safety gate for the dual-arm setup.
//
// Level one saturates each arm's commanded position into a box in that arm's
// base frame. Level two expresses both tools as bounding cylinders in the
// probe arm's base frame (via the calibration chain) and blocks any command
// whose centerline distance falls below r_probe + r_needle + clearance.

#pragma once

#include <optional>
#include <string>

#include "twinarm/geo.hpp"

namespace twinarm {

struct WorkspaceLimits {
  Vec3 min = Vec3::Constant(-1.0);
  Vec3 max = Vec3::Constant(1.0);

  /// Throws ConfigError unless min <= max componentwise.
  void validate() const;
};

/// Hand-eye calibration data for both arms. Naming follows a_T_b:
/// base_to_ee = base_T_ee (forward kinematics at calibration time),
/// ee_to_cam = ee_T_cam (hand-eye result), cam_to_marker = cam_T_marker
/// (board pose seen by the wrist camera).
struct CalibrationSet {
  ArmPair<Transform> base_to_ee;
  ArmPair<Transform> ee_to_cam;
  ArmPair<Transform> cam_to_marker;
};

/// probeBase_T_needleBase from the six-term chain
///   bTe_p * eTc_p * cTm_p * cTm_n^-1 * eTc_n^-1 * bTe_n^-1.
Transform base_to_base(const CalibrationSet& cal);

/// Tool geometry in the end-effector frame: a segment leaving the attachment
/// point along `local_axis` for `length` meters, with bounding `radius`.
struct ToolSpec {
  double length = 0.1;
  double radius = 0.01;
  Vec3 local_axis = Vec3::UnitZ();

  Vec3 tip_offset() const { return local_axis.normalized() * length; }
};

struct BoundingCylinder {
  Vec3 anchor = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
  double length = 0.1;
  double radius = 0.01;

  Vec3 point(double lambda) const { return anchor + lambda * axis; }
};

/// Cylinder of `tool` mounted at `ee_pose` (pose in the frame of interest).
BoundingCylinder tool_cylinder(const Pose& ee_pose, const ToolSpec& tool);

/// World-frame tool tip for an end-effector pose.
Vec3 tool_tip(const Pose& ee_pose, const ToolSpec& tool);

struct SegmentDistance {
  double d_min = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

/// Minimum distance over lambda1 in [0, L1], lambda2 in [0, L2] between the
/// two centerlines, with the minimizing parameters. Closed form with clamping;
/// near-parallel axes (|u.v| > 1 - 1e-10) take a dedicated branch.
SegmentDistance segment_min_distance(const BoundingCylinder& c1,
                                     const BoundingCylinder& c2);

Vec3 clamp_position(const Vec3& p, const WorkspaceLimits& limits);

/// Position saturated into the box; orientation unchanged.
Pose clamp_workspace(const Pose& target, const WorkspaceLimits& limits);

enum class VerdictKind { kAllowed, kClamped, kBlocked };

const char* verdict_name(VerdictKind k);
std::optional<VerdictKind> parse_verdict(const std::string& s);

struct SafetyVerdict {
  VerdictKind kind = VerdictKind::kAllowed;
  ArmPair<Pose> adjusted_target;
  double d_min = 0.0;
  /// Set when the gate refused because calibration is missing.
  bool configuration_error = false;
};

struct SafetyConfig {
  ArmPair<WorkspaceLimits> workspace;
  ArmPair<ToolSpec> tools;
  double clearance = 0.02;

  double threshold() const {
    return tools.probe.radius + tools.needle.radius + clearance;
  }
};

/// Centerline distance between the two tools at the given per-arm poses
/// (each in its own base frame), evaluated in the probe base frame.
double tool_distance(const ArmPair<Pose>& poses, const ArmPair<ToolSpec>& tools,
                     const Transform& probe_T_needle);

/// Collision gate for already-clamped targets. Blocked verdicts carry
/// `last_safe`. A null calibration blocks everything.
SafetyVerdict gate(const ArmPair<Pose>& targets, const ArmPair<Pose>& last_safe,
                   const ArmPair<ToolSpec>& tools, const CalibrationSet* cal,
                   double clearance);

/// Stateful gate: workspace clamp per arm, then the joint collision gate,
/// remembering the last target pair that passed.
class SafetyGate {
 public:
  /// Throws ConfigError if `initial_safe` itself violates the gate or the
  /// workspace limits are malformed.
  SafetyGate(const SafetyConfig& config, std::optional<CalibrationSet> cal,
             const ArmPair<Pose>& initial_safe);

  SafetyVerdict evaluate(const ArmPair<Pose>& candidate);

  const ArmPair<Pose>& last_safe() const { return last_safe_; }
  const SafetyConfig& config() const { return config_; }
  bool calibrated() const { return calibration_.has_value(); }
  /// probe-base <- needle-base; identity when uncalibrated.
  const Transform& probe_T_needle() const { return probe_T_needle_; }
  double threshold() const { return config_.threshold(); }
  void reset_last_safe(const ArmPair<Pose>& safe);

 private:
  SafetyConfig config_;
  std::optional<CalibrationSet> calibration_;
  Transform probe_T_needle_;
  ArmPair<Pose> last_safe_;
};

}  // namespace twinarm
