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

#include "twinarm/smoothing.hpp"

#include <algorithm>
#include <stdexcept>

namespace twinarm {

TargetQueue::TargetQueue(const Pose& initial, const SmoothingLimits& limits)
    : limits_(limits), setpoint_(initial), segment_start_(initial) {
  if (!(limits.max_linear_speed > 0.0) || !(limits.max_angular_speed > 0.0)) {
    throw std::invalid_argument("TargetQueue: speed limits must be positive");
  }
  if (limits.queue_cap == 0) {
    throw std::invalid_argument("TargetQueue: queue cap must be at least 1");
  }
}

void TargetQueue::enqueue(const Pose& target) {
  std::lock_guard<std::mutex> lock(mutex_);
  pending_.push_back(target);
  while (pending_.size() > limits_.queue_cap) {
    pending_.pop_front();
    // The head changed, so the next step starts a fresh segment.
    segment_active_ = false;
  }
}

Pose TargetQueue::step(double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("TargetQueue::step: dt <= 0");
  std::lock_guard<std::mutex> lock(mutex_);
  double budget = dt;
  // Bounded: each iteration either pops a target or exhausts the budget.
  while (budget > 0.0 && !pending_.empty()) {
    if (!segment_active_) {
      segment_start_ = setpoint_;
      segment_active_ = true;
      alpha_ = 0.0;
    }
    const Pose& head = pending_.front();
    const Quat aligned =
        hemisphere_align(segment_start_.orientation, head.orientation);
    const double dist = (head.position - segment_start_.position).norm();
    const double angle = geodesic_distance(segment_start_.orientation, aligned);
    const double segment_time = std::max(dist / limits_.max_linear_speed,
                                         angle / limits_.max_angular_speed);
    const double time_needed = (1.0 - alpha_) * segment_time;
    if (time_needed <= budget) {
      budget -= time_needed;
      alpha_ = 1.0;
      setpoint_ = {head.position, aligned};
      pending_.pop_front();
      segment_active_ = false;
    } else {
      alpha_ += budget / segment_time;
      budget = 0.0;
      setpoint_ = {lerp(segment_start_.position, head.position, alpha_),
                   slerp(segment_start_.orientation, aligned, alpha_)};
    }
  }
  return setpoint_;
}

void TargetQueue::reset(const Pose& setpoint) {
  std::lock_guard<std::mutex> lock(mutex_);
  pending_.clear();
  setpoint_ = setpoint;
  segment_start_ = setpoint;
  segment_active_ = false;
  alpha_ = 0.0;
}

Pose TargetQueue::current_setpoint() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return setpoint_;
}

double TargetQueue::alpha() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return alpha_;
}

std::size_t TargetQueue::depth() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return pending_.size();
}

}  // namespace twinarm
