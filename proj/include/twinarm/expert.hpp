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

// Scripted expert standing in for a human operator. It reads the latent
// phantom geometry and produces one absolute target per arm per tick:
//
//   I    probe carrot towards the target plane at transit speed
//   II   probe proportional step up the quality kernel, capped at scan speed
//   III  needle carrot towards the pre-alignment pose at transit speed
//   IV   needle tip carried along the planned line to the lesion
//
// The arm that is not active holds its last command. Demonstrations drive the
// full pipeline through the leader side: each target is converted back into
// a tracker pose with the inverse mapping, so recorded episodes look exactly
// like teleoperated ones.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "twinarm/config.hpp"
#include "twinarm/data.hpp"
#include "twinarm/phase.hpp"
#include "twinarm/pipeline.hpp"
#include "twinarm/sim.hpp"

namespace twinarm {

/// Moves at most `max_step` metres and `max_angle` radians from `from`
/// towards `goal`.
Pose carrot(const Pose& from, const Pose& goal, double max_step,
            double max_angle);

/// World orientation that turns the tool axis onto `direction` with the
/// smallest rotation from `current`.
Quat aim_along(const Quat& current, const Vec3& local_axis,
               const Vec3& direction);

class ScriptedExpert {
 public:
  ScriptedExpert(const Scene& scene, const ExpertConfig& config);

  /// Targets in each arm's own base frame, from follower poses in the same
  /// frames.
  ArmPair<Pose> command(const ArmPair<Pose>& follower, Phase phase);

 private:
  Pose probe_command(const Pose& probe, Phase phase) const;
  Pose needle_command(const Pose& needle_world, Phase phase) const;

  Scene scene_;
  ExpertConfig config_;
  ArmPair<Pose> hold_;
};

/// Fixed tracker-frame pose each leader tool is docked at on engagement.
ArmPair<Pose> leader_dock_poses();

struct ExpertEpisode {
  EpisodeLog log;
  bool success = false;
};

/// One demonstration on `scene` (already jittered), driven through mapping.
ExpertEpisode run_expert_episode(const RunConfig& config, const Scene& scene,
                                 const std::optional<CalibrationSet>& calibration,
                                 std::uint64_t seed);

/// Jittered scene for demonstration or evaluation episode `index`.
Scene episode_scene(const Scene& base, std::uint64_t seed, int index);

/// Writes `count` demonstrations as demo_NNNN.jsonl into `dir`. Returns the
/// written paths.
std::vector<std::filesystem::path> generate_demos(
    const RunConfig& config, const Scene& base,
    const std::optional<CalibrationSet>& calibration,
    const std::filesystem::path& dir, int count, std::uint64_t seed,
    const Json& config_doc);

}  // namespace twinarm
