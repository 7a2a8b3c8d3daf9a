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

// Acceptance suite: one PASS/FAIL line per criterion.
//
//   twinarm_acceptance            run everything
//   twinarm_acceptance --list     print criterion names
//   twinarm_acceptance NAME...    run the named criteria

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Geometry>

#include "oracle.hpp"
#include "twinarm/config.hpp"
#include "twinarm/data.hpp"
#include "twinarm/expert.hpp"
#include "twinarm/geo.hpp"
#include "twinarm/mapping.hpp"
#include "twinarm/phase.hpp"
#include "twinarm/pipeline.hpp"
#include "twinarm/policy.hpp"
#include "twinarm/rollout.hpp"
#include "twinarm/safety.hpp"
#include "twinarm/service.hpp"
#include "twinarm/sim.hpp"

namespace fs = std::filesystem;
using namespace twinarm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// --- shared helpers ----------------------------------------------------------

Quat random_quat(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Quat(n(rng), n(rng), n(rng), n(rng));
}

Vec3 random_unit(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

oracle::Quat4 q4(const Quat& q) { return q.coeffs_wxyz(); }

oracle::Segment segment_of(const BoundingCylinder& c) { return {c.anchor, c.axis, c.length}; }

/// Translation and angle between two transforms computed with 4x4 matrices.
std::pair<double, double> transform_gap(const Eigen::Matrix4d& a, const Eigen::Matrix4d& b) {
  const Eigen::Matrix3d r = a.topLeftCorner<3, 3>().transpose() * b.topLeftCorner<3, 3>();
  const Eigen::Vector3d skew(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return {(a.topRightCorner<3, 1>() - b.topRightCorner<3, 1>()).norm(),
          std::atan2(0.5 * skew.norm(), 0.5 * (r.trace() - 1.0))};
}

Eigen::Matrix4d random_rigid(Rng& rng, double reach) {
  std::uniform_real_distribution<double> u(-reach, reach);
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  const Quat q = random_quat(rng);
  m.topLeftCorner<3, 3>() = Eigen::Quaterniond(q.w(), q.x(), q.y(), q.z()).toRotationMatrix();
  m.topRightCorner<3, 1>() = Eigen::Vector3d(u(rng), u(rng), u(rng));
  return m;
}

Transform transform_of(const Eigen::Matrix4d& m) {
  return {Quat::from_matrix(m.topLeftCorner<3, 3>()), m.topRightCorner<3, 1>()};
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(fs::temp_directory_path() /
              ("twinarm_acceptance_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

struct Workbench {
  RunConfig config;
  Scene scene;
  std::optional<CalibrationSet> calibration;
  Json doc;
};

Workbench reference_workbench() {
  Workbench w;
  w.config = load_run_config(std::nullopt, {}, std::nullopt);
  w.scene = load_scene(w.config);
  w.calibration = load_calibration(w.config, w.scene);
  w.doc = resolved_document(w.config, w.scene);
  return w;
}

/// Writes the configured number of jittered expert demos and reads them back.
Dataset demo_dataset(const Workbench& w, const fs::path& dir, int* successes) {
  const auto paths = generate_demos(w.config, w.scene, w.calibration, dir, w.config.demos,
                                    w.config.seed, w.doc);
  std::vector<EpisodeLog> logs;
  *successes = 0;
  for (const fs::path& p : paths) {
    logs.push_back(read_episode(p, json_hash(w.doc)).log);
    *successes += logs.back().summary.value("success", false) ? 1 : 0;
  }
  return build_dataset(logs, w.config.policy.horizon, w.config.policy.stride);
}

// --- criteria ---------------------------------------------------------------

Outcome segment_oracle() {
  Rng rng(101);
  std::uniform_real_distribution<double> pos(-0.5, 0.5);
  std::uniform_real_distribution<double> len(0.05, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  int below = 0;
  int parallel = 0;
  for (int i = 0; i < 1000; ++i) {
    BoundingCylinder c1{Vec3(pos(rng), pos(rng), pos(rng)), random_unit(rng), len(rng), 0.01};
    BoundingCylinder c2{Vec3(pos(rng), pos(rng), pos(rng)), random_unit(rng), len(rng), 0.01};
    if (i % 10 == 0) {
      // Near-parallel: tilt c1's axis by at most 1e-3 rad, sometimes exactly
      // parallel or anti-parallel, with overlapping or disjoint extents.
      const double tilt = (i % 30 == 0) ? 0.0 : 1e-3 * std::pow(unit(rng), 3.0);
      const Vec3 perp = c1.axis.cross(random_unit(rng)).normalized();
      c2.axis = (std::cos(tilt) * c1.axis + std::sin(tilt) * perp).normalized();
      if (i % 20 == 0) c2.axis = -c2.axis;
      c2.anchor = c1.anchor + (unit(rng) - 0.3) * c1.length * c1.axis + 0.2 * unit(rng) * perp;
      ++parallel;
    }
    const double closed = segment_min_distance(c1, c2).d_min;
    const double brute = oracle::brute_segment_distance(segment_of(c1), segment_of(c2), 200, 2);
    worst = std::max(worst, std::abs(closed - brute));
    if (brute < closed - 1e-12) ++below;
  }
  return {worst <= 1e-6 && below == 0 && parallel >= 50,
          fmt("1000 pairs (%d near-parallel), max |closed - brute| = %.2e m", parallel, worst)};
}

Outcome slerp_properties() {
  Rng rng(202);
  std::uniform_real_distribution<double> tiny(1e-9, 5e-8);
  bool endpoints = true;
  double path_gap = 0.0;
  double velocity_spread = 0.0;
  double expmap_gap = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Quat q1 = random_quat(rng);
    Quat q2 = random_quat(rng);
    if (i % 50 == 0) q2 = q1 * Quat::from_axis_angle(random_unit(rng), tiny(rng));
    const Quat q2a = hemisphere_align(q1, q2);
    endpoints = endpoints && slerp(q1, q2a, 0.0) == q1 && slerp(q1, q2a, 1.0) == q2a;

    constexpr int kSteps = 10;
    std::vector<double> inc;
    for (int k = 0; k < kSteps; ++k) {
      inc.push_back(oracle::rotation_angle(q4(slerp(q1, q2a, double(k) / kSteps)),
                                           q4(slerp(q1, q2a, double(k + 1) / kSteps))));
    }
    const auto [lo, hi] = std::minmax_element(inc.begin(), inc.end());
    velocity_spread = std::max(velocity_spread, *hi - *lo);
    double length = 0.0;
    for (double d : inc) length += d;
    // Shortest rotation between the raw pair, independent of their signs.
    path_gap = std::max(path_gap, std::abs(length - oracle::rotation_angle(q4(q1), q4(q2))));

    const oracle::Quat4 ref = oracle::expmap_slerp(q4(q1), q4(q2a), 1.0 / 3.0);
    expmap_gap = std::max(expmap_gap, (q4(slerp(q1, q2a, 1.0 / 3.0)) - ref).cwiseAbs().maxCoeff());
  }
  const bool pass = endpoints && path_gap <= 1e-9 && velocity_spread <= 1e-9 && expmap_gap <= 1e-9;
  return {pass, fmt("1000 pairs: endpoints %s, shortest-path gap %.1e, increment spread %.1e, "
                    "exp-map gap %.1e rad",
                    endpoints ? "exact" : "WRONG", path_gap, velocity_spread, expmap_gap)};
}

Outcome drift_freedom() {
  Rng rng(303);
  std::normal_distribution<double> n(0.0, 1.0);
  const Pose leader_zero{Vec3(0.1, 0.3, 1.1), random_quat(rng)};
  const Pose follower_zero{Vec3(0.45, -0.05, 0.3), random_quat(rng)};
  const EngagementReference ref = engage(leader_zero, follower_zero);
  oracle::FoilPose lz{leader_zero.position, q4(leader_zero.orientation)};
  oracle::FoilPose fz{follower_zero.position, q4(follower_zero.orientation)};

  auto run_loop = [&](bool translate) {
    constexpr int kSteps = 100000;
    std::vector<oracle::FoilPose> seq;
    seq.reserve(kSteps);
    Pose last = leader_zero;
    for (int k = 1; k <= kSteps; ++k) {
      Pose p = leader_zero;
      if (k < kSteps) {
        const double s = 2.0 * std::numbers::pi * k / kSteps;
        if (translate) {
          p.position += Vec3(0.05 * std::sin(s), 0.03 * std::sin(2 * s), 0.02 * (1 - std::cos(s))) +
                        2e-4 * Vec3(n(rng), n(rng), n(rng));
        }
        const Vec3 axis(std::sin(s), std::cos(s), 0.5);
        p.orientation = Quat::from_axis_angle(axis, 0.4 * std::sin(s) + 2e-3 * n(rng)) *
                        leader_zero.orientation;
      }
      seq.push_back({p.position, q4(p.orientation)});
      last = p;
    }
    const Pose mapped = map_target(ref, leader_displacement(ref, last));
    const oracle::FoilPose foil = oracle::drift_foil(lz, fz, seq);
    const double foil_pos = (foil.position - follower_zero.position).norm();
    const double foil_ang = oracle::rotation_angle(foil.orientation, q4(follower_zero.orientation));
    return std::tuple{mapped == follower_zero, foil_pos, foil_ang};
  };
  const auto [exact_full, full_pos, full_ang] = run_loop(true);
  const auto [exact_rot, rot_pos, rot_ang] = run_loop(false);
  (void)rot_pos;

  bool decoupled = true;
  for (int i = 0; i < 1000; ++i) {
    Pose moved = leader_zero;
    moved.position += 0.1 * Vec3(n(rng), n(rng), n(rng));
    decoupled = decoupled && map_target(ref, leader_displacement(ref, moved)).orientation ==
                                 follower_zero.orientation;
    Pose turned = leader_zero;
    turned.orientation = random_quat(rng) * leader_zero.orientation;
    decoupled = decoupled && map_target(ref, leader_displacement(ref, turned)).position ==
                                 follower_zero.position;
  }
  const bool pass = exact_full && exact_rot && (full_pos > 0.0 || full_ang > 0.0) &&
                    rot_ang > 0.0 && decoupled;
  return {pass, fmt("1e5-step loops: absolute mapping %s; foil drift %.2e m / %.2e rad "
                    "(noisy), %.2e rad (pure rotation); decoupling %s",
                    exact_full && exact_rot ? "returns follower_zero exactly" : "INEXACT",
                    full_pos, full_ang, rot_ang, decoupled ? "exact" : "BROKEN")};
}

Outcome chain_recovery() {
  Rng rng(404);
  double worst = 0.0;
  double weakest_detection = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Matrix4d world_probe_base = random_rigid(rng, 1.0);
    const Eigen::Matrix4d world_needle_base = random_rigid(rng, 1.0);
    const Eigen::Matrix4d world_marker = random_rigid(rng, 1.0);
    const Eigen::Matrix4d truth = world_probe_base.inverse() * world_needle_base;
    ArmPair<Eigen::Matrix4d> b_e{random_rigid(rng, 0.6), random_rigid(rng, 0.6)};
    ArmPair<Eigen::Matrix4d> e_c{random_rigid(rng, 0.1), random_rigid(rng, 0.1)};
    ArmPair<Eigen::Matrix4d> c_m;
    c_m.probe = (world_probe_base * b_e.probe * e_c.probe).inverse() * world_marker;
    c_m.needle = (world_needle_base * b_e.needle * e_c.needle).inverse() * world_marker;

    auto cal_of = [&](int corrupt) {
      CalibrationSet cal;
      ArmPair<Eigen::Matrix4d> be = b_e, ec = e_c, cm = c_m;
      Eigen::Matrix4d* terms[6] = {&be.probe, &ec.probe, &cm.probe,
                                   &be.needle, &ec.needle, &cm.needle};
      if (corrupt >= 0) {
        Eigen::Matrix4d d = Eigen::Matrix4d::Identity();
        d.topLeftCorner<3, 3>() =
            Eigen::AngleAxisd(1e-3, random_unit(rng)).toRotationMatrix();
        d.topRightCorner<3, 1>() = 1e-3 * random_unit(rng);
        *terms[corrupt] = *terms[corrupt] * d;
      }
      for (Arm a : kArms) {
        cal.base_to_ee[a] = transform_of(be[a]);
        cal.ee_to_cam[a] = transform_of(ec[a]);
        cal.cam_to_marker[a] = transform_of(cm[a]);
      }
      return cal;
    };
    const auto [dp, da] = transform_gap(base_to_base(cal_of(-1)).matrix(), truth);
    worst = std::max({worst, dp, da});
    for (int k = 0; k < 6; ++k) {
      const auto [cp, ca] = transform_gap(base_to_base(cal_of(k)).matrix(), truth);
      weakest_detection = std::min(weakest_detection, std::max(cp, ca));
    }
  }
  return {worst <= 1e-9 && weakest_detection > 1e-9,
          fmt("20 synthetic scenes: recovery error %.1e; smallest error with one corrupted "
              "term %.1e",
              worst, weakest_detection)};
}

Outcome safety_trace() {
  Workbench w = reference_workbench();
  TeleopPipeline pipe(w.scene, pipeline_settings(w.config, w.scene), w.calibration, 17);
  const ArmPair<Pose> dock = leader_dock_poses();
  const ArmPair<Pose> start = pipe.follower();
  ArmPair<std::optional<EngagementReference>> refs;
  for (Arm a : kArms) {
    pipe.engage(a, dock[a]);
    refs[a].emplace(dock[a], start[a]);
  }
  const Transform p_T_n = pipe.gate().probe_T_needle();
  const double threshold = pipe.gate().threshold();
  Rng rng(505);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  ArmPair<Pose> last_executed = pipe.gate().last_safe();
  int violations = 0, unsafe_holds = 0, blocked = 0, clamped = 0;
  double closest = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 10000; ++k) {
    const ArmPair<Pose> now = pipe.follower();
    ArmPair<Pose> target = now;
    const double mode = u(rng);
    if (mode < 0.45) {
      // Aim the needle at a point near the probe tool.
      const Pose probe_in_needle = transform_pose(invert(p_T_n), now.probe);
      target.needle.position = probe_in_needle.position + 0.03 * Vec3(n(rng), n(rng), n(rng));
      target.needle.orientation = random_quat(rng);
    } else if (mode < 0.6) {
      const Pose needle_in_probe = transform_pose(p_T_n, now.needle);
      target.probe.position = needle_in_probe.position + 0.03 * Vec3(n(rng), n(rng), n(rng));
    } else if (mode < 0.75) {
      for (Arm a : kArms) target[a].position += 0.6 * Vec3(n(rng), n(rng), n(rng));
    } else {
      for (Arm a : kArms) {
        target[a].position += 0.02 * Vec3(n(rng), n(rng), n(rng));
        target[a].orientation = Quat::from_axis_angle(random_unit(rng), 0.2 * n(rng)) *
                                target[a].orientation;
      }
    }
    for (Arm a : kArms) pipe.submit_leader(a, leader_for_target(*refs[a], target[a]));
    const DemonstrationRecord r = pipe.advance();
    const double d = tool_distance(r.executed, w.scene.tools, p_T_n);
    closest = std::min(closest, d);
    if (d < threshold) ++violations;
    if (r.verdict == VerdictKind::kBlocked) {
      ++blocked;
      if (!(r.executed == last_executed)) ++unsafe_holds;
    }
    if (r.verdict == VerdictKind::kClamped) ++clamped;
    last_executed = r.executed;
  }
  return {violations == 0 && unsafe_holds == 0 && blocked > 0,
          fmt("10000 commands: %d blocked, %d clamped; %d executed states below 2r + c = "
              "%.3f m (closest %.4f m); %d blocked ticks not holding the last safe target",
              blocked, clamped, violations, threshold, closest, unsafe_holds)};
}

Outcome latency_sanity() {
  Workbench w = reference_workbench();
  w.scene.tau = {0.1, 0.1};
  const double analytic = oracle::analytic_settle_time(0.1, 0.02);
  Rng rng(606);
  std::uniform_real_distribution<double> size(0.005, 0.015);
  double worst_rel = 0.0;
  double sum = 0.0;
  int trials = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Arm arm = trial % 2 == 0 ? Arm::kProbe : Arm::kNeedle;
    TeleopPipeline pipe(w.scene, pipeline_settings(w.config, w.scene), w.calibration,
                        100 + trial);
    const ArmPair<Pose> dock = leader_dock_poses();
    const ArmPair<Pose> start = pipe.follower();
    for (Arm a : kArms) pipe.engage(a, dock[a]);
    const double step = size(rng);
    ArmPair<Pose> leader = dock;
    EpisodeLog log;
    for (int k = 0; k < 10; ++k) log.records.push_back(pipe.step_leader(leader));
    leader[arm].position += step * random_unit(rng);
    for (int k = 0; k < 75; ++k) log.records.push_back(pipe.step_leader(leader));
    (void)start;
    SettleCriteria c;
    c.eps_position = 0.02 * step;
    const LatencyResult r = endpoint_latency(log, arm, c);
    if (!r.settled) return {false, fmt("trial %d never settled", trial)};
    worst_rel = std::max(worst_rel, std::abs(r.latency - analytic) / analytic);
    sum += r.latency;
    ++trials;
  }
  return {worst_rel <= 0.2,
          fmt("20 trials: mean latency %.3f s vs analytic tau ln 50 = %.3f s, worst deviation "
              "%.1f%%",
              sum / trials, analytic, 100.0 * worst_rel)};
}

using LVec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

LVec flatten(const PolicyParams& p) {
  LVec v(static_cast<Eigen::Index>(p.parameter_count()));
  Eigen::Index i = 0;
  p.for_each_tensor([&](const std::string&, const Eigen::MatrixXd& t) {
    for (Eigen::Index k = 0; k < t.size(); ++k) v[i++] = t.data()[k];
  });
  return v;
}

PolicyParamsT<long double> unflatten(const PolicyParamsT<long double>& shape, const LVec& v) {
  PolicyParamsT<long double> p = shape;
  Eigen::Index i = 0;
  p.for_each_tensor([&](const std::string&, MatrixX<long double>& t) {
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = v[i++];
  });
  return p;
}

Outcome gradient_check() {
  const PolicyDims dims;
  double worst = 0.0;
  std::string worst_at;
  std::set<std::string> groups;
  int checked = 0;
  double smallest = std::numeric_limits<double>::infinity();
  for (int state = 0; state < 3; ++state) {
    PolicyParams p = init_params(dims, 0.05, 0.1, 1000 + state);
    Rng rng(700 + state);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> gap(0.05, 0.1);
    // Initialization plus noise that moves the zero biases. Much larger noise
    // saturates tanh units until some gradients fall below the resolution of
    // a long double central difference (about 1e-13 here).
    p.for_each_tensor([&](const std::string&, Eigen::MatrixXd& t) {
      for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] += 0.1 * n(rng);
    });
    std::vector<Sample> samples(kNumPhases);
    for (int s = 0; s < kNumPhases; ++s) {
      PolicyObservation& o = samples[s].obs;
      for (Eigen::Index i = 0; i < o.ultrasound.size(); ++i) o.ultrasound[i] = n(rng);
      for (Eigen::Index i = 0; i < o.external.size(); ++i) o.external[i] = n(rng);
      o.proprio.probe = {Vec3(0.5, 0.0, 0.25) + 0.01 * Vec3(n(rng), n(rng), n(rng)),
                         random_quat(rng)};
      o.proprio.needle = {Vec3(0.4, 0.0, 0.2) + 0.01 * Vec3(n(rng), n(rng), n(rng)),
                          random_quat(rng)};
      o.phase = phase_from_index(s);
      // Targets sit a margin away from the prediction so no coordinate is at
      // an L1 kink within the finite-difference step.
      const ActionChunk pred = forward(p, o);
      for (Arm a : kArms) {
        samples[s].target[a] = pred[a];
        for (Eigen::Index i = 0; i < pred[a].size(); ++i) {
          samples[s].target[a].data()[i] += (n(rng) > 0 ? 1.0 : -1.0) * gap(rng);
        }
      }
    }
    std::vector<const Sample*> batch;
    for (const Sample& s : samples) batch.push_back(&s);
    const MaskSchedule schedule = MaskSchedule::interactive(10.0, 0.5);

    PolicyParams grad = p.zeros_like();
    batch_loss(p, batch, schedule, LossKind::kL1, &grad);
    const LVec analytic = flatten(grad);

    // One coordinate from every tensor, the rest uniformly at random.
    std::vector<Eigen::Index> coords;
    std::vector<std::string> names;
    std::vector<std::string> owner(static_cast<std::size_t>(analytic.size()));
    Eigen::Index offset = 0;
    p.for_each_tensor([&](const std::string& name, const Eigen::MatrixXd& t) {
      std::uniform_int_distribution<Eigen::Index> pick(0, t.size() - 1);
      coords.push_back(offset + pick(rng));
      for (Eigen::Index k = 0; k < t.size(); ++k) owner[offset + k] = name;
      offset += t.size();
    });
    std::uniform_int_distribution<Eigen::Index> any(0, analytic.size() - 1);
    while (coords.size() < 200) coords.push_back(any(rng));

    const PolicyParamsT<long double> shape = p.cast<long double>();
    const auto loss = [&](const LVec& v) {
      return batch_loss(unflatten(shape, v), batch, schedule, LossKind::kL1);
    };
    const std::vector<long double> fd = oracle::fd_gradient(loss, flatten(p), 1e-5L, coords);
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const long double a = analytic[coords[i]];
      const long double rel =
          std::abs(a - fd[i]) / std::max({std::abs(a), std::abs(fd[i]), 1e-12L});
      groups.insert(owner[coords[i]]);
      smallest = std::min(smallest, static_cast<double>(std::abs(a)));
      ++checked;
      if (rel > worst) {
        worst = static_cast<double>(rel);
        worst_at = owner[coords[i]];
      }
    }
  }
  return {worst < 1e-4,
          fmt("%d coordinates over 3 states covering %zu tensors: worst relative error %.2e "
              "(%s), smallest |gradient| %.1e",
              checked, groups.size(), worst, worst_at.c_str(), smallest)};
}

Outcome head_decoupling() {
  Rng rng(808);
  std::normal_distribution<double> n(0.0, 1.0);
  int cases = 0;
  bool ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const PolicyParams p = init_params(PolicyDims{}, 0.05, 0.1, 50 + trial);
    PolicyObservation o;
    for (Eigen::Index i = 0; i < o.ultrasound.size(); ++i) o.ultrasound[i] = n(rng);
    for (Eigen::Index i = 0; i < o.external.size(); ++i) o.external[i] = n(rng);
    o.proprio.probe = {Vec3(0.5, 0.0, 0.25), random_quat(rng)};
    o.proprio.needle = {Vec3(0.4, 0.0, 0.2), random_quat(rng)};
    o.phase = phase_from_index(trial % kNumPhases);
    const ActionChunk base = forward(p, o);

    PolicyParams needle_moved = p;
    for (Eigen::MatrixXd* t : {&needle_moved.needle_w, &needle_moved.needle_b}) {
      for (Eigen::Index k = 0; k < t->size(); ++k) t->data()[k] += n(rng);
    }
    PolicyParams probe_moved = p;
    for (Eigen::MatrixXd* t : {&probe_moved.probe_w, &probe_moved.probe_b}) {
      for (Eigen::Index k = 0; k < t->size(); ++k) t->data()[k] += n(rng);
    }
    const ActionChunk a = forward(needle_moved, o);
    const ActionChunk b = forward(probe_moved, o);
    ok = ok && a.probe == base.probe && a.needle != base.needle;
    ok = ok && b.needle == base.needle && b.probe != base.probe;
    cases += 2;
  }
  return {ok, fmt("%d perturbations: the other head's actions are %s", cases,
                  ok ? "bitwise unchanged" : "CHANGED")};
}

Outcome phase_machine() {
  const PhaseTriggers triggers;
  Rng rng(909);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  bool monotone = true, replay = true, hold_exact = true;
  int transitions = 0;
  for (int trace = 0; trace < 100; ++trace) {
    std::vector<PhaseSignals> signals(400);
    double quality = 0.0;
    for (PhaseSignals& s : signals) {
      s.contact = u(rng) < 0.8;
      quality = std::clamp(quality + 0.15 * (u(rng) - 0.4), 0.0, 1.0);
      s.plane_quality = s.contact ? quality : 0.0;
      s.alignment_distance = 0.02 * u(rng);
    }
    auto run = [&]() {
      std::vector<PhaseState> out;
      PhaseState st;
      for (std::size_t k = 0; k < signals.size(); ++k) {
        st = transition(st, signals[k], triggers, static_cast<std::int64_t>(k));
        out.push_back(st);
      }
      return out;
    };
    const std::vector<PhaseState> a = run();
    const std::vector<PhaseState> b = run();
    replay = replay && a == b;
    int prev = 0;
    for (const PhaseState& s : a) {
      const int idx = phase_index(s.phase);
      monotone = monotone && (idx == prev || idx == prev + 1);
      transitions += idx != prev;
      prev = idx;
    }

    // Hold counter: a qualifying run of N steps after a reset by a dip.
    PhaseTriggers t = triggers;
    t.plane_hold_steps = 1 + static_cast<int>(u(rng) * 30);
    PhaseState st{Phase::kAnatomicalScanning, 0, 0};
    const PhaseSignals good{true, 0.95, 1.0};
    const PhaseSignals dip{true, 0.5, 1.0};
    std::int64_t tick = 1;
    // Fewer good steps than the hold length never fire; a dip resets the count.
    const int prefix = static_cast<int>(u(rng) * t.plane_hold_steps);
    for (int k = 0; k < prefix; ++k) st = transition(st, good, t, tick++);
    hold_exact = hold_exact && st.phase == Phase::kAnatomicalScanning;
    st = transition(st, dip, t, tick++);
    hold_exact = hold_exact && st.phase == Phase::kAnatomicalScanning && st.stability_counter == 0;
    for (int k = 1; k < t.plane_hold_steps; ++k) {
      st = transition(st, good, t, tick++);
      hold_exact = hold_exact && st.phase == Phase::kAnatomicalScanning;
    }
    st = transition(st, good, t, tick++);
    hold_exact = hold_exact && st.phase == Phase::kNeedlePrealignment;
  }
  return {monotone && replay && hold_exact,
          fmt("100 traces (%d transitions): monotone %s, replay %s, hold counter %s",
              transitions, monotone ? "yes" : "NO", replay ? "identical" : "DIFFERS",
              hold_exact ? "fires on the N-th step" : "WRONG")};
}

Outcome ablation_trend() {
  Workbench w = reference_workbench();
  TempDir dir("ablation");
  int demo_ok = 0;
  const Dataset data = demo_dataset(w, dir.path() / "demos", &demo_ok);
  std::map<std::string, std::vector<AblationRow>> sweeps;
  for (const std::string phase : {"II", "IV"}) {
    RunConfig c = w.config;
    c.ablation.phase = phase;
    c.ablation.weights = {0.1, 1.0, 10.0};
    AblationOptions opts;
    opts.on_row = [&](const AblationRow& r) {
      std::fprintf(stderr, "  %s w=%-4g II %.2f s (n=%d)  IV fine %.2f mm (n=%d)\n",
                   phase.c_str(), r.weight, r.eval.durations[1].mean, r.eval.durations[1].n,
                   1e3 * r.eval.fine_error.mean, r.eval.fine_error.n);
    };
    sweeps[phase] = ablate(data, c, w.scene, w.calibration, opts);
  }
  const auto& ii = sweeps["II"];
  const auto& iv = sweeps["IV"];
  bool ok = demo_ok == w.config.demos && ii.size() == 3 && iv.size() == 3;
  for (const auto* rows : {&ii, &iv}) {
    for (const AblationRow& r : *rows) ok = ok && !r.failed;
  }
  if (!ok) return {false, fmt("%d/%d demos succeeded or a training run failed", demo_ok,
                              w.config.demos)};
  auto dur = [](const AblationRow& r) { return r.eval.durations[1]; };
  auto fine = [](const AblationRow& r) { return r.eval.fine_error; };
  bool enough = true;
  for (int i = 0; i < 3; ++i) enough = enough && dur(ii[i]).n >= 4 && fine(iv[i]).n >= 4;
  const bool up = dur(ii[0]).mean < dur(ii[1]).mean && dur(ii[1]).mean < dur(ii[2]).mean;
  const bool down = fine(iv[0]).mean > fine(iv[1]).mean && fine(iv[1]).mean > fine(iv[2]).mean;
  return {enough && up && down,
          fmt("Phase-II duration %.2f / %.2f / %.2f s (%s); Phase-IV fine error "
              "%.2f / %.2f / %.2f mm (%s); w = 0.1 / 1 / 10, %d eval seeds",
              dur(ii[0]).mean, dur(ii[1]).mean, dur(ii[2]).mean, up ? "increasing" : "NOT increasing",
              1e3 * fine(iv[0]).mean, 1e3 * fine(iv[1]).mean, 1e3 * fine(iv[2]).mean,
              down ? "decreasing" : "NOT decreasing", w.config.ablation.trials)};
}

Outcome end_to_end() {
  Workbench w = reference_workbench();
  TempDir dir("e2e");
  int demo_ok = 0;
  const Dataset data = demo_dataset(w, dir.path() / "demos", &demo_ok);
  TrainOptions t;
  t.policy = w.config.policy;
  t.schedule = MaskSchedule::interactive(1.0, 1.0);
  t.seed = w.config.seed;
  const TrainResult trained = train(data, t);
  const EvalSummary s =
      evaluate(policy_from_params(trained.params), w.config, w.scene, w.calibration, 10);
  int ok = 0;
  std::ostringstream tips;
  for (const EpisodeMetrics& m : s.episodes) {
    ok += m.final_tip_error <= 0.005;
    tips << fmt(" %.1f", 1e3 * m.final_tip_error);
  }
  return {ok >= 8, fmt("%d/10 eval seeds end within 5 mm (final tip errors, mm:%s)", ok,
                       tips.str().c_str())};
}

Outcome control_rate() {
  Workbench w = reference_workbench();
  ServiceOptions opts;
  opts.port = 0;
  opts.duration = 60.0;
  opts.config_doc = w.doc;
  std::promise<int> port;
  opts.on_listening = [&port](int p) { port.set_value(p); };
  auto service = std::async(std::launch::async, [&] {
    return run_service(w.config, w.scene, w.calibration, opts);
  });
  const int p = port.get_future().get();
  const ScriptedClientReport client = run_scripted_client("127.0.0.1", p, 65.0, 30.0);
  const ServiceReport r = service.get();
  const bool summary_agrees =
      client.summary && client.summary->value("deadline_misses", -1) == r.deadline_misses;
  return {r.deadline_misses == 0 && r.ticks == 1800 && summary_agrees &&
              client.states >= 1790,
          fmt("60 s at 30 Hz: %lld ticks, %lld deadline misses, slowest tick %.2f ms, "
              "client saw %lld states",
              static_cast<long long>(r.ticks), static_cast<long long>(r.deadline_misses),
              1e3 * r.max_tick_seconds, static_cast<long long>(client.states))};
}

struct Criterion {
  const char* name;
  double budget_s;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {"segment_oracle", 30, segment_oracle},
    {"slerp_properties", 5, slerp_properties},
    {"drift_freedom", 10, drift_freedom},
    {"chain_recovery", 1, chain_recovery},
    {"safety_trace", 60, safety_trace},
    {"latency_sanity", 30, latency_sanity},
    {"gradient_check", 60, gradient_check},
    {"head_decoupling", 5, head_decoupling},
    {"phase_machine", 10, phase_machine},
    {"ablation_trend", 600, ablation_trend},
    {"end_to_end", 300, end_to_end},
    {"control_rate", 75, control_rate},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> wanted(argv + 1, argv + argc);
  if (wanted.size() == 1 && wanted[0] == "--list") {
    for (const Criterion& c : kCriteria) std::printf("%s\n", c.name);
    return 0;
  }
  for (const std::string& w : wanted) {
    if (std::none_of(std::begin(kCriteria), std::end(kCriteria),
                     [&](const Criterion& c) { return w == c.name; })) {
      std::fprintf(stderr, "unknown criterion: %s\n", w.c_str());
      return 2;
    }
  }
  int failed = 0;
  for (const Criterion& c : kCriteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.name) == wanted.end()) {
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_s;
    const bool pass = o.pass && in_budget;
    std::printf("%s %-17s %s [%.1f s of %.0f s budget]\n", pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), secs, c.budget_s);
    std::fflush(stdout);
    failed += !pass;
  }
  return failed == 0 ? 0 : 1;
}
