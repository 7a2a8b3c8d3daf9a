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

#pragma once

#include <cstddef>
#include <deque>
#include <mutex>

#include "twinarm/geo.hpp"

namespace twinarm {

struct SmoothingLimits {
  double max_linear_speed = 0.5;   // m/s
  double max_angular_speed = 1.5;  // rad/s
  std::size_t queue_cap = 8;
};

/// Buffers absolute pose targets and emits setpoints at the control rate.
///
/// Each head target is approached along one segment that starts at the
/// setpoint held when the target became head: position by lerp, orientation
/// by slerp after hemisphere alignment, both driven by a shared progress
/// alpha. alpha advances at the largest rate that keeps both the linear and
/// the angular speed within limits, so the slower axis sets the pace and the
/// two arrive together. Time left over after reaching a head carries into the
/// next target within the same step.
///
/// One producer may call enqueue() while one consumer calls step().
class TargetQueue {
 public:
  TargetQueue(const Pose& initial, const SmoothingLimits& limits);

  /// Appends a target; beyond the cap the oldest pending targets are dropped.
  void enqueue(const Pose& target);

  /// Advances by dt seconds and returns the new setpoint.
  Pose step(double dt);

  /// Drops pending targets and holds `setpoint`.
  void reset(const Pose& setpoint);

  Pose current_setpoint() const;
  double alpha() const;
  std::size_t depth() const;
  const SmoothingLimits& limits() const { return limits_; }

 private:
  mutable std::mutex mutex_;
  SmoothingLimits limits_;
  std::deque<Pose> pending_;
  Pose setpoint_;
  Pose segment_start_;
  bool segment_active_ = false;
  double alpha_ = 0.0;
};

}  // namespace twinarm
