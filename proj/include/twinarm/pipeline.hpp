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

// One control tick of the teleoperation stack:
//
//   leader pose -> mapping -> target queue -> workspace clamp + collision
//   gate -> follower dynamics -> ultrasound / external observation -> phase
//
// The same object backs the live service, scripted demonstrations and policy
// rollouts, so every path exercises identical safety logic.

#pragma once

#include <cstdint>
#include <mutex>
#include <optional>

#include <Eigen/Core>

#include "twinarm/config.hpp"
#include "twinarm/data.hpp"
#include "twinarm/mapping.hpp"
#include "twinarm/phase.hpp"
#include "twinarm/safety.hpp"
#include "twinarm/sim.hpp"
#include "twinarm/smoothing.hpp"

namespace twinarm {

struct PipelineSettings {
  double dt = 1.0 / 30.0;
  SmoothingLimits smoothing;
  SafetyConfig safety;
  PhaseTriggers triggers;
  std::optional<Quat> leader_alignment;
};

PipelineSettings pipeline_settings(const RunConfig& c, const Scene& scene);

class TeleopPipeline {
 public:
  /// Throws ConfigError if the scene's initial poses violate the gate.
  TeleopPipeline(const Scene& scene, const PipelineSettings& settings,
                 std::optional<CalibrationSet> calibration, std::uint64_t seed);

  // Producer side; safe to call from the ingestion thread.

  /// Freezes the zero reference of `arm` at its current follower pose.
  void engage(Arm arm, const Pose& leader);
  bool engaged(Arm arm) const;
  /// Maps a leader pose and enqueues the target. Ignored while disengaged.
  void submit_leader(Arm arm, const Pose& leader);
  /// Enqueues an absolute target directly (policy actions).
  void submit_target(Arm arm, const Pose& target);

  // Consumer side; control-loop thread only.

  /// Advances one tick with whatever has been submitted.
  DemonstrationRecord advance();

  /// Convenience for offline drivers: submit both leader poses, then advance.
  DemonstrationRecord step_leader(const ArmPair<Pose>& leader);
  /// Submit both absolute targets, then advance.
  DemonstrationRecord step_targets(const ArmPair<Pose>& targets);

  std::int64_t tick() const { return tick_; }
  double dt() const { return settings_.dt; }
  const PhaseState& phase() const { return phase_; }
  /// Observation after the most recent tick (or of the initial state).
  const UltrasoundObservation& observation() const { return observation_; }
  const Eigen::VectorXd& external() const { return external_; }
  ArmPair<Pose> follower() const;
  const Simulator& simulator() const { return sim_; }
  Simulator& simulator() { return sim_; }
  const SafetyGate& gate() const { return gate_; }
  const PipelineSettings& settings() const { return settings_; }

 private:
  PipelineSettings settings_;
  Simulator sim_;
  SafetyGate gate_;
  ArmPair<TargetQueue> queues_;
  ArmPair<ArmMapper> mappers_;
  PhaseState phase_;
  UltrasoundObservation observation_;
  Eigen::VectorXd external_;
  std::int64_t tick_ = 0;

  mutable std::mutex mutex_;  // guards the members below
  ArmPair<Pose> follower_snapshot_;
  ArmPair<Pose> last_leader_;
  ArmPair<Pose> last_commanded_;
};

}  // namespace twinarm
