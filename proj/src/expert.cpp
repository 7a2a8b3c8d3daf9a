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

#include "twinarm/expert.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include <Eigen/Geometry>

#include "twinarm/errors.hpp"
#include "twinarm/mapping.hpp"

namespace twinarm {

namespace {

Vec3 clamp_norm(const Vec3& v, double max_norm) {
  const double n = v.norm();
  return n > max_norm ? v * (max_norm / n) : v;
}

Quat rotate_towards(const Quat& from, const Quat& goal, double max_angle) {
  const Quat aligned = hemisphere_align(from, goal);
  const double theta = geodesic_distance(from, aligned);
  if (theta <= max_angle) return aligned;
  return slerp(from, aligned, max_angle / theta);
}

}  // namespace

Pose carrot(const Pose& from, const Pose& goal, double max_step,
            double max_angle) {
  return {from.position + clamp_norm(goal.position - from.position, max_step),
          rotate_towards(from.orientation, goal.orientation, max_angle)};
}

Quat aim_along(const Quat& current, const Vec3& local_axis,
               const Vec3& direction) {
  const Vec3 axis_now = current.rotate(local_axis.normalized());
  const Eigen::Quaterniond turn =
      Eigen::Quaterniond::FromTwoVectors(axis_now, direction.normalized());
  return Quat(turn.w(), turn.x(), turn.y(), turn.z()) * current;
}

ScriptedExpert::ScriptedExpert(const Scene& scene, const ExpertConfig& config)
    : scene_(scene), config_(config), hold_(scene.initial_pose) {}

ArmPair<Pose> ScriptedExpert::command(const ArmPair<Pose>& follower,
                                      Phase phase) {
  const bool probe_active = phase == Phase::kProbeGrossPositioning ||
                            phase == Phase::kAnatomicalScanning;
  if (probe_active) {
    hold_.probe = probe_command(follower.probe, phase);
  } else {
    const Pose needle_world = transform_pose(scene_.probe_T_needle, follower.needle);
    hold_.needle = transform_pose(invert(scene_.probe_T_needle),
                                  needle_command(needle_world, phase));
  }
  return hold_;
}

Pose ScriptedExpert::probe_command(const Pose& probe, Phase phase) const {
  const Pose& goal = scene_.phantom.target_plane;
  const double la = config_.lookahead;
  if (phase == Phase::kProbeGrossPositioning) {
    return carrot(probe, goal, config_.probe_transit_speed * la,
                  config_.probe_transit_angular * la);
  }
  // The quality kernel is a Gaussian around the target plane, so its ascent
  // direction points at the plane; the step is proportional and capped.
  const double k = config_.probe_scan_gain;
  const Vec3 dp = goal.position - probe.position;
  const Quat aligned = hemisphere_align(probe.orientation, goal.orientation);
  const double theta = geodesic_distance(probe.orientation, aligned);
  const double step = std::min(k * dp.norm(), config_.probe_scan_speed * la);
  const double turn = std::min(k * theta, config_.probe_scan_angular * la);
  return carrot(probe, goal, step, turn);
}

Pose ScriptedExpert::needle_command(const Pose& needle_world, Phase phase) const {
  const Phantom& ph = scene_.phantom;
  const ToolSpec& tool = scene_.tools.needle;
  const Vec3 dir = ph.insertion_direction.normalized();
  const double la = config_.lookahead;
  const Quat aimed = aim_along(needle_world.orientation, tool.local_axis, dir);
  const Vec3 tip = tool_tip(needle_world, tool);

  Vec3 tip_goal;
  Quat q_goal;
  if (phase == Phase::kNeedlePrealignment) {
    tip_goal = tip + clamp_norm(ph.prealign_tip() - tip,
                                config_.needle_transit_speed * la);
    q_goal = rotate_towards(needle_world.orientation, aimed,
                            config_.needle_transit_angular * la);
  } else {
    // Project onto the planned line and advance towards the lesion.
    const double remaining = (ph.lesion_point - tip).dot(dir);
    const double ahead =
        std::max(remaining - config_.needle_insert_speed * la, 0.0);
    tip_goal = ph.lesion_point - ahead * dir;
    q_goal = rotate_towards(needle_world.orientation, aimed,
                            config_.needle_transit_angular * la);
  }
  return {tip_goal - q_goal.rotate(tool.tip_offset()), q_goal};
}

ArmPair<Pose> leader_dock_poses() {
  return {Pose{Vec3(-0.15, 0.30, 1.10), Quat()},
          Pose{Vec3(0.15, 0.30, 1.10), Quat()}};
}

ExpertEpisode run_expert_episode(const RunConfig& config, const Scene& scene,
                                 const std::optional<CalibrationSet>& calibration,
                                 std::uint64_t seed) {
  TeleopPipeline pipe(scene, pipeline_settings(config, scene), calibration, seed);
  ScriptedExpert expert(scene, config.expert);
  const ArmPair<Pose> dock = leader_dock_poses();
  ArmPair<std::optional<EngagementReference>> refs;
  const ArmPair<Pose> start = pipe.follower();
  for (Arm a : kArms) {
    pipe.engage(a, dock[a]);
    refs[a].emplace(dock[a], start[a]);
  }
  Rng tremor(seed ^ 0x5eedc0ffeeULL);
  std::normal_distribution<double> noise(0.0, 1.0);

  ExpertEpisode out;
  // Success is declared once; the episode keeps recording for the hold so
  // the data shows the needle stopping at the lesion.
  int remaining = -1;
  const int hold_ticks =
      static_cast<int>(std::lround(config.expert.hold_after_success / config.dt()));
  for (int i = 0; i < config.rollout.max_steps && remaining != 0; ++i) {
    const ArmPair<Pose> cmd = expert.command(pipe.follower(), pipe.phase().phase);
    ArmPair<Pose> leader;
    for (Arm a : kArms) {
      leader[a] = leader_for_target(*refs[a], cmd[a]);
      if (config.expert.leader_noise > 0.0) {
        leader[a].position += config.expert.leader_noise *
                              Vec3(noise(tremor), noise(tremor), noise(tremor));
      }
    }
    if (config.expert.needle_execution_noise > 0.0) {
      pipe.simulator().arm(Arm::kNeedle).position_bias =
          config.expert.needle_execution_noise *
          Vec3(noise(tremor), noise(tremor), noise(tremor));
    }
    out.log.records.push_back(pipe.step_leader(leader));
    if (remaining > 0) {
      --remaining;
    } else if (!out.success && pipe.phase().phase == Phase::kFineInsertion &&
               pipe.simulator().needle_tip_error() <= config.rollout.success_tolerance) {
      out.success = true;
      remaining = hold_ticks;
    }
  }
  finalize_transitions(out.log);
  out.log.seed = seed;
  return out;
}

Scene episode_scene(const Scene& base, std::uint64_t seed, int index) {
  Rng rng(seed * 1000003ULL + static_cast<std::uint64_t>(index));
  return jittered_scene(base, rng);
}

std::vector<std::filesystem::path> generate_demos(
    const RunConfig& config, const Scene& base,
    const std::optional<CalibrationSet>& calibration,
    const std::filesystem::path& dir, int count, std::uint64_t seed,
    const Json& config_doc) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::string hash = json_hash(config_doc);
  std::vector<std::filesystem::path> paths;
  for (int i = 0; i < count; ++i) {
    const Scene scene = episode_scene(base, seed, i);
    const std::uint64_t episode_seed = seed * 7919ULL + static_cast<std::uint64_t>(i);
    ExpertEpisode ep = run_expert_episode(config, scene, calibration, episode_seed);
    ep.log.config = config_doc;
    ep.log.config_hash = hash;
    ep.log.summary = summarize_episode(ep.log, SettleCriteria{});
    ep.log.summary["success"] = ep.success;
    ep.log.summary["scene"] = scene_to_json(scene);
    char name[32];
    std::snprintf(name, sizeof(name), "demo_%04d.jsonl", i);
    paths.push_back(dir / name);
    write_episode(paths.back(), ep.log);
  }
  return paths;
}

}  // namespace twinarm
