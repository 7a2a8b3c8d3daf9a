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

#include "twinarm/mapping.hpp"

namespace twinarm {

LeaderDisplacement leader_displacement(const EngagementReference& ref,
                                       const Pose& leader_now) {
  // q * q^-1 can land an ulp off identity; a leader back at its engagement
  // orientation has no rotational displacement, so return it exactly.
  const Quat& q0 = ref.leader_zero().orientation;
  const Quat dq = leader_now.orientation == q0 ? Quat::identity()
                                               : leader_now.orientation * q0.inverse();
  return {leader_now.position - ref.leader_zero().position, dq};
}

Pose map_target(const EngagementReference& ref,
                const LeaderDisplacement& disp) {
  return {ref.follower_zero().position + disp.delta_p,
          disp.delta_q * ref.follower_zero().orientation};
}

LeaderDisplacement align_displacement(const LeaderDisplacement& disp,
                                      const Quat& tracker_to_base) {
  return {tracker_to_base.rotate(disp.delta_p),
          tracker_to_base * disp.delta_q * tracker_to_base.inverse()};
}

std::optional<Pose> ArmMapper::target(const Pose& leader_now) const {
  if (!ref_) return std::nullopt;
  LeaderDisplacement d = leader_displacement(*ref_, leader_now);
  if (alignment_) d = align_displacement(d, *alignment_);
  return map_target(*ref_, d);
}

Pose leader_for_target(const EngagementReference& ref, const Pose& target) {
  const Vec3 dp = target.position - ref.follower_zero().position;
  const Quat dq = target.orientation * ref.follower_zero().orientation.inverse();
  return {ref.leader_zero().position + dp, dq * ref.leader_zero().orientation};
}

}  // namespace twinarm
