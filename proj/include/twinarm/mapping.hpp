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

// Leader -> follower pose mapping anchored at the engagement pose pair.
//
// Targets are always computed from the displacement relative to the frozen
// engagement reference, never by integrating frame-to-frame deltas:
//
//   p_target = p_follower_zero + dp
//   q_target = dq * q_follower_zero,  dq = q_leader_now * q_leader_zero^-1

#pragma once

#include <optional>

#include "twinarm/geo.hpp"

namespace twinarm {

class EngagementReference {
 public:
  EngagementReference(const Pose& leader_zero, const Pose& follower_zero)
      : leader_zero_(leader_zero), follower_zero_(follower_zero) {}

  const Pose& leader_zero() const { return leader_zero_; }
  const Pose& follower_zero() const { return follower_zero_; }

 private:
  Pose leader_zero_;
  Pose follower_zero_;
};

struct LeaderDisplacement {
  Vec3 delta_p = Vec3::Zero();
  Quat delta_q;
};

inline EngagementReference engage(const Pose& leader_pose,
                                  const Pose& follower_pose) {
  return EngagementReference(leader_pose, follower_pose);
}

LeaderDisplacement leader_displacement(const EngagementReference& ref,
                                       const Pose& leader_now);

Pose map_target(const EngagementReference& ref, const LeaderDisplacement& disp);

/// Optional fixed rotation from the tracker frame into the follower base
/// frame, for setups where the two are not axis-aligned at engagement.
/// The displacement is conjugated: dp' = R dp, dq' = R dq R^-1.
LeaderDisplacement align_displacement(const LeaderDisplacement& disp,
                                      const Quat& tracker_to_base);

/// Per-arm mapping state: holds the current engagement (if any) and an
/// optional alignment rotation. Re-engaging replaces the reference.
class ArmMapper {
 public:
  ArmMapper() = default;
  explicit ArmMapper(std::optional<Quat> alignment)
      : alignment_(alignment) {}

  void engage(const Pose& leader_pose, const Pose& follower_pose) {
    ref_.emplace(leader_pose, follower_pose);
  }
  void disengage() { ref_.reset(); }
  bool engaged() const { return ref_.has_value(); }
  const std::optional<EngagementReference>& reference() const { return ref_; }

  /// Target for the current leader pose; empty when not engaged.
  std::optional<Pose> target(const Pose& leader_now) const;

 private:
  std::optional<EngagementReference> ref_;
  std::optional<Quat> alignment_;
};

/// The leader pose that maps onto `target` under `ref` (the inverse mapping).
/// Used by scripted experts that act as the leader.
Pose leader_for_target(const EngagementReference& ref, const Pose& target);

}  // namespace twinarm
