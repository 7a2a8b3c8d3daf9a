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

#include "twinarm/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "twinarm/errors.hpp"

namespace twinarm {

namespace {

constexpr double kPi = std::numbers::pi;

Quat about(const Vec3& axis, double angle) {
  return Quat::from_axis_angle(axis, angle);
}

/// Tool pointing straight down: local +z onto world -z.
Quat tool_down() { return about(Vec3::UnitX(), kPi); }

double point_line_distance(const Vec3& p, const Vec3& origin, const Vec3& dir) {
  const Vec3 d = p - origin;
  return (d - d.dot(dir) * dir).norm();
}

}  // namespace

Pose step_arm(const FollowerArm& arm, const Pose& setpoint, double dt) {
  const double k = 1.0 - std::exp(-dt / arm.tau);
  const Vec3 goal = setpoint.position + arm.position_bias;
  const Quat target = hemisphere_align(arm.pose.orientation, setpoint.orientation);
  return {arm.pose.position + k * (goal - arm.pose.position),
          slerp(arm.pose.orientation, target, k)};
}

Vec3 Phantom::entry_point() const {
  const Vec3 d = insertion_direction.normalized();
  // lesion - s d lies on z = surface_height
  const double s = (surface_height - lesion_point.z()) / -d.z();
  return lesion_point - s * d;
}

Vec3 Phantom::prealign_tip() const {
  return entry_point() - prealign_standoff * insertion_direction.normalized();
}

void Phantom::validate() const {
  if (!(lesion_point.z() < surface_height)) {
    throw ConfigError("phantom: lesion must lie below the surface");
  }
  if (!(insertion_direction.z() < 0.0)) {
    throw ConfigError("phantom: insertion direction must point into tissue");
  }
}

UltrasoundObservation observe_ultrasound(const Pose& probe_world,
                                         const ToolSpec& probe_tool,
                                         const Phantom& phantom,
                                         const UltrasoundModel& model,
                                         Rng* rng) {
  UltrasoundObservation obs;
  const double tip_z = tool_tip(probe_world, probe_tool).z();
  const double boundary = phantom.surface_height + model.contact_tolerance;
  obs.contact = tip_z <= boundary;
  const double ramp =
      std::clamp((boundary - tip_z) / model.contact_tolerance, 0.0, 1.0);

  const Vec3 dp = probe_world.position - phantom.target_plane.position;
  const Vec3 dr = rotation_vector(phantom.target_plane.orientation.inverse() *
                                  probe_world.orientation);
  const double sp2 = model.sigma_position * model.sigma_position;
  const double sa2 = model.sigma_angle * model.sigma_angle;
  obs.plane_quality =
      ramp * std::exp(-(dp.squaredNorm() / sp2 + dr.squaredNorm() / sa2));

  Eigen::VectorXd f(kUltrasoundFeatureDim);
  for (int i = 0; i < 3; ++i) {
    f[i] = ramp * std::tanh(dp[i] / (2.0 * model.sigma_position));
    f[3 + i] = ramp * std::tanh(dr[i] / (2.0 * model.sigma_angle));
  }
  f[6] = obs.plane_quality;
  f[7] = ramp;
  if (rng != nullptr && model.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, model.noise_std);
    for (int i = 0; i < f.size(); ++i) f[i] += noise(*rng);
  }
  obs.features = f;
  return obs;
}

double needle_tip_error(const Pose& needle_world, const ToolSpec& needle_tool,
                        const Phantom& phantom) {
  return (tool_tip(needle_world, needle_tool) - phantom.lesion_point).norm();
}

double needle_alignment_distance(const Pose& needle_world,
                                 const ToolSpec& needle_tool,
                                 const Phantom& phantom, double back) {
  const Vec3 dir = phantom.insertion_direction.normalized();
  const Vec3 tip = tool_tip(needle_world, needle_tool);
  const Vec3 shaft = tip - back * needle_world.orientation.rotate(
                                      needle_tool.local_axis.normalized());
  return std::max(point_line_distance(tip, phantom.lesion_point, dir),
                  point_line_distance(shaft, phantom.lesion_point, dir));
}

Scene reference_scene() {
  Scene s;
  s.tools.probe = {0.15, 0.015, Vec3::UnitZ()};
  s.tools.needle = {0.12, 0.015, Vec3::UnitZ()};
  s.tau = {0.1, 0.1};

  s.phantom.surface_height = 0.10;
  s.phantom.target_plane = {Vec3(0.50, 0.0, 0.10 + s.tools.probe.length),
                            tool_down()};
  s.phantom.lesion_point = Vec3(0.52, 0.0, 0.02);
  s.phantom.insertion_direction = Vec3(-1.0, 0.0, -1.0).normalized();
  s.phantom.prealign_standoff = 0.02;

  s.probe_T_needle = {about(Vec3::UnitZ(), kPi), Vec3(1.1, 0.0, 0.0)};

  s.initial_pose.probe = {Vec3(0.50, -0.05, 0.265),
                          about(Vec3::UnitY(), 0.08) * tool_down()};
  // Needle starts up and to the side, shaft tilted away from the plan.
  const Quat needle_world_q = about(Vec3::UnitY(), -1.9);
  const Vec3 needle_tip_world(0.78, 0.10, 0.26);
  const Pose needle_world{
      needle_tip_world - needle_world_q.rotate(s.tools.needle.tip_offset()),
      needle_world_q};
  s.initial_pose.needle = transform_pose(invert(s.probe_T_needle), needle_world);
  return s;
}

Scene jittered_scene(const Scene& base, Rng& rng) {
  Scene s = base;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Vec3 shift(s.jitter.phantom_offset * unit(rng),
                   s.jitter.phantom_offset * unit(rng), 0.0);
  s.phantom.target_plane.position += shift;
  s.phantom.lesion_point += shift;
  for (Arm arm : kArms) {
    Pose& p = s.initial_pose[arm];
    p.position += s.jitter.start_offset * Vec3(unit(rng), unit(rng), unit(rng));
    Vec3 axis(unit(rng), unit(rng), unit(rng));
    if (axis.norm() < 1e-6) axis = Vec3::UnitX();
    p.orientation = about(axis, s.jitter.start_angle * unit(rng)) * p.orientation;
  }
  return s;
}

CalibrationSet synthesize_calibration(const Scene& scene) {
  const Transform world_T_marker{about(Vec3(0.2, 0.1, 1.0), 0.3),
                                 Vec3(0.75, -0.25, 0.0)};
  CalibrationSet cal;
  cal.base_to_ee.probe = {about(Vec3::UnitX(), 2.8), Vec3(0.55, -0.1, 0.45)};
  cal.ee_to_cam.probe = {about(Vec3(0.0, 1.0, 0.2), 0.4), Vec3(0.05, 0.0, 0.03)};
  cal.base_to_ee.needle = {about(Vec3(1.0, 0.3, 0.0), 2.6), Vec3(0.4, 0.2, 0.4)};
  cal.ee_to_cam.needle = {about(Vec3(0.3, 1.0, 0.0), -0.35),
                          Vec3(0.04, 0.01, 0.035)};
  cal.cam_to_marker.probe =
      invert(cal.base_to_ee.probe * cal.ee_to_cam.probe) * world_T_marker;
  const Transform needle_T_marker = invert(scene.probe_T_needle) * world_T_marker;
  cal.cam_to_marker.needle =
      invert(cal.base_to_ee.needle * cal.ee_to_cam.needle) * needle_T_marker;
  return cal;
}

Simulator::Simulator(const Scene& scene, std::uint64_t seed)
    : scene_(scene), rng_(seed) {
  scene_.phantom.validate();
  for (Arm a : kArms) {
    if (!(scene_.tau[a] > 0.0)) throw ConfigError("tau must be positive");
    arms_[a] = {a, scene_.initial_pose[a], scene_.tau[a], scene_.tools[a],
                Vec3::Zero()};
  }
}

void Simulator::step(const ArmPair<Pose>& setpoints, double dt) {
  for (Arm a : kArms) arms_[a].pose = step_arm(arms_[a], setpoints[a], dt);
}

Pose Simulator::world_pose(Arm a) const {
  if (a == Arm::kProbe) return arms_.probe.pose;
  return transform_pose(scene_.probe_T_needle, arms_.needle.pose);
}

UltrasoundObservation Simulator::observe() {
  return observe_ultrasound(world_pose(Arm::kProbe), scene_.tools.probe,
                            scene_.phantom, scene_.ultrasound, &rng_);
}

Eigen::VectorXd Simulator::external_features() {
  const Phantom& ph = scene_.phantom;
  const Pose probe = world_pose(Arm::kProbe);
  const Pose needle = world_pose(Arm::kNeedle);
  const Vec3 needle_tip = tool_tip(needle, scene_.tools.needle);
  const Vec3 needle_axis =
      needle.orientation.rotate(scene_.tools.needle.local_axis.normalized());

  Eigen::VectorXd f(kExternalFeatureDim);
  f.segment<3>(0) = probe.position - ph.target_plane.position;
  f.segment<3>(3) =
      rotation_vector(ph.target_plane.orientation.inverse() * probe.orientation) *
      0.1;
  f.segment<3>(6) = needle_tip - ph.prealign_tip();
  f.segment<3>(9) = needle_tip - ph.lesion_point;
  f.segment<3>(12) = (needle_axis - ph.insertion_direction.normalized()) * 0.1;
  if (scene_.external_noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, scene_.external_noise_std);
    for (int i = 0; i < f.size(); ++i) f[i] += noise(rng_);
  }
  return f * 10.0;
}

double Simulator::needle_tip_error() const {
  return twinarm::needle_tip_error(world_pose(Arm::kNeedle), scene_.tools.needle,
                                   scene_.phantom);
}

double Simulator::alignment_distance() const {
  return needle_alignment_distance(world_pose(Arm::kNeedle), scene_.tools.needle,
                                   scene_.phantom);
}

}  // namespace twinarm
