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

#include "twinarm/pipeline.hpp"

namespace twinarm {

PipelineSettings pipeline_settings(const RunConfig& c, const Scene& scene) {
  PipelineSettings s;
  s.dt = c.dt();
  s.smoothing = c.smoothing;
  s.safety = safety_config(c, scene);
  s.triggers = c.triggers;
  return s;
}

TeleopPipeline::TeleopPipeline(const Scene& scene,
                               const PipelineSettings& settings,
                               std::optional<CalibrationSet> calibration,
                               std::uint64_t seed)
    : settings_(settings),
      sim_(scene, seed),
      gate_(settings.safety, std::move(calibration), scene.initial_pose),
      queues_{TargetQueue(scene.initial_pose.probe, settings.smoothing),
              TargetQueue(scene.initial_pose.needle, settings.smoothing)},
      mappers_{ArmMapper(settings.leader_alignment),
               ArmMapper(settings.leader_alignment)} {
  settings_.triggers.validate();
  observation_ = sim_.observe();
  external_ = sim_.external_features();
  follower_snapshot_ = sim_.poses();
  last_leader_ = follower_snapshot_;
  last_commanded_ = follower_snapshot_;
}

void TeleopPipeline::engage(Arm arm, const Pose& leader) {
  std::lock_guard<std::mutex> lock(mutex_);
  mappers_[arm].engage(leader, follower_snapshot_[arm]);
  last_leader_[arm] = leader;
}

bool TeleopPipeline::engaged(Arm arm) const {
  std::lock_guard<std::mutex> lock(mutex_);
  return mappers_[arm].engaged();
}

void TeleopPipeline::submit_leader(Arm arm, const Pose& leader) {
  std::lock_guard<std::mutex> lock(mutex_);
  last_leader_[arm] = leader;
  const std::optional<Pose> target = mappers_[arm].target(leader);
  if (!target) return;
  last_commanded_[arm] = *target;
  queues_[arm].enqueue(*target);
}

void TeleopPipeline::submit_target(Arm arm, const Pose& target) {
  std::lock_guard<std::mutex> lock(mutex_);
  last_commanded_[arm] = target;
  queues_[arm].enqueue(target);
}

DemonstrationRecord TeleopPipeline::advance() {
  DemonstrationRecord r;
  r.t = tick_;
  r.dt = settings_.dt;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    r.leader = last_leader_;
    r.commanded = last_commanded_;
  }
  ArmPair<Pose> setpoints;
  for (Arm a : kArms) setpoints[a] = queues_[a].step(settings_.dt);
  const SafetyVerdict v = gate_.evaluate(setpoints);
  r.executed = v.adjusted_target;
  r.verdict = v.kind;
  r.d_min = v.d_min;

  sim_.step(r.executed, settings_.dt);
  r.follower = sim_.poses();
  observation_ = sim_.observe();
  external_ = sim_.external_features();
  r.observation = observation_;
  r.external = external_;

  const PhaseSignals signals{observation_.contact, observation_.plane_quality,
                             sim_.alignment_distance()};
  phase_ = transition(phase_, signals, settings_.triggers, tick_);
  r.phase = phase_;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    follower_snapshot_ = r.follower;
  }
  ++tick_;
  return r;
}

DemonstrationRecord TeleopPipeline::step_leader(const ArmPair<Pose>& leader) {
  for (Arm a : kArms) submit_leader(a, leader[a]);
  return advance();
}

DemonstrationRecord TeleopPipeline::step_targets(const ArmPair<Pose>& targets) {
  for (Arm a : kArms) submit_target(a, targets[a]);
  return advance();
}

ArmPair<Pose> TeleopPipeline::follower() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return follower_snapshot_;
}

}  // namespace twinarm
