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

// Task-space dual-arm follower simulator with a virtual phantom and a
// synthetic ultrasound observation model.
//
// Frames: the probe arm's base frame is the world frame. Needle-arm poses live
// in the needle base frame and reach the world through the ground-truth
// probe_T_needle transform of the scene.

#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

#include "twinarm/geo.hpp"
#include "twinarm/safety.hpp"

namespace twinarm {

using Rng = std::mt19937_64;

struct FollowerArm {
  Arm name = Arm::kProbe;
  Pose pose;            // own base frame
  double tau = 0.1;     // s
  ToolSpec tool;
  /// Constant offset between the commanded and the reached position, used to
  /// model a calibration bias.
  Vec3 position_bias = Vec3::Zero();
};

/// First-order tracking: the position closes (1 - exp(-dt/tau)) of the gap to
/// setpoint + bias, orientation slerps by the same fraction.
Pose step_arm(const FollowerArm& arm, const Pose& setpoint, double dt);

struct Phantom {
  double surface_height = 0.10;  // world z of the tissue surface
  /// Probe end-effector pose giving the optimal acoustic window (latent).
  Pose target_plane;
  Vec3 lesion_point = Vec3::Zero();
  /// Planned needle direction (unit, world) along the line through the lesion.
  Vec3 insertion_direction = -Vec3::UnitZ();
  /// Needle tip stand-off above the entry point for pre-alignment.
  double prealign_standoff = 0.02;

  /// Where the planned insertion line crosses the surface.
  Vec3 entry_point() const;
  Vec3 prealign_tip() const;
  /// Throws ConfigError if the lesion is not below the surface.
  void validate() const;
};

struct UltrasoundModel {
  double sigma_position = 0.01;  // m
  double sigma_angle = 0.1;      // rad
  double contact_tolerance = 0.005;  // m above the surface that still counts
  double noise_std = 0.01;
};

inline constexpr int kUltrasoundFeatureDim = 8;
inline constexpr int kExternalFeatureDim = 15;

struct UltrasoundObservation {
  Eigen::VectorXd features = Eigen::VectorXd::Zero(kUltrasoundFeatureDim);
  double plane_quality = 0.0;
  bool contact = false;
};

/// Contact holds when the probe tip is within contact_tolerance above the
/// surface. Quality is a Gaussian kernel of the pose error to the target plane
/// scaled by a contact ramp that is 0 at the contact boundary and 1 at the
/// surface, which keeps it Lipschitz in the probe pose. `rng` adds feature
/// noise when not null.
UltrasoundObservation observe_ultrasound(const Pose& probe_world,
                                         const ToolSpec& probe_tool,
                                         const Phantom& phantom,
                                         const UltrasoundModel& model,
                                         Rng* rng);

/// Distance from the needle tip to the lesion.
double needle_tip_error(const Pose& needle_world, const ToolSpec& needle_tool,
                        const Phantom& phantom);

/// Distance of the needle axis to the planned insertion line: the larger of
/// the distances of the tip and of a point `back` meters up the shaft.
double needle_alignment_distance(const Pose& needle_world,
                                 const ToolSpec& needle_tool,
                                 const Phantom& phantom, double back = 0.05);

struct SceneJitter {
  double phantom_offset = 0.01;  // m, uniform per horizontal axis
  double start_offset = 0.01;    // m, uniform per axis
  double start_angle = 0.05;     // rad, uniform about a random axis
};

struct Scene {
  Phantom phantom;
  UltrasoundModel ultrasound;
  ArmPair<ToolSpec> tools;
  ArmPair<double> tau{0.1, 0.1};
  /// Initial end-effector poses, each in its own base frame.
  ArmPair<Pose> initial_pose;
  /// Ground-truth probeBase_T_needleBase.
  Transform probe_T_needle;
  double external_noise_std = 0.0005;  // m-equivalent
  std::uint64_t noise_seed = 7;
  SceneJitter jitter;
};

/// The desk-scale reference scene.
Scene reference_scene();

/// A per-episode variant: phantom shifted horizontally, start poses perturbed.
Scene jittered_scene(const Scene& base, Rng& rng);

/// Six-term calibration consistent with scene.probe_T_needle, synthesized for
/// a board at a fixed world pose seen by both wrist cameras.
CalibrationSet synthesize_calibration(const Scene& scene);

class Simulator {
 public:
  Simulator(const Scene& scene, std::uint64_t seed);

  void step(const ArmPair<Pose>& setpoints, double dt);

  const Scene& scene() const { return scene_; }
  const ArmPair<FollowerArm>& arms() const { return arms_; }
  FollowerArm& arm(Arm a) { return arms_[a]; }
  ArmPair<Pose> poses() const { return {arms_.probe.pose, arms_.needle.pose}; }
  Pose world_pose(Arm a) const;

  UltrasoundObservation observe();
  /// Probe and needle poses relative to phantom landmarks, in decimeters,
  /// with seeded noise: probe flange error to the target plane (3), probe
  /// rotation error (3), needle tip to pre-alignment point (3), needle tip to
  /// lesion (3), needle axis minus planned direction (3).
  Eigen::VectorXd external_features();

  double needle_tip_error() const;
  double alignment_distance() const;

 private:
  Scene scene_;
  ArmPair<FollowerArm> arms_;
  Rng rng_;
};

}  // namespace twinarm
