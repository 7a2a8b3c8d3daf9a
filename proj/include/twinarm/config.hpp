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

// Run configuration. Every tunable of the stack lives here; the resolved
// document (defaults included) is written into every output artifact.
//
// A configuration file is a JSON object whose keys are a subset of
// default_config_json(). Unknown keys are rejected so typos fail loudly.
// Command-line overrides use dotted paths, e.g. `policy.epochs=40`; the
// value is parsed as JSON and falls back to a plain string.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "twinarm/io.hpp"
#include "twinarm/phase.hpp"
#include "twinarm/safety.hpp"
#include "twinarm/sim.hpp"
#include "twinarm/smoothing.hpp"

namespace twinarm {

struct ExpertConfig {
  double lookahead = 0.1;              // s; carrot distance = speed * lookahead
  double probe_transit_speed = 0.06;   // m/s, phase I
  double probe_transit_angular = 0.6;  // rad/s
  double probe_scan_speed = 0.003;     // m/s, phase II
  double probe_scan_angular = 0.05;    // rad/s
  double probe_scan_gain = 0.5;        // fraction of the error per lookahead
  double needle_transit_speed = 0.08;  // m/s, phase III
  double needle_transit_angular = 0.5;
  double needle_insert_speed = 0.02;  // m/s, phase IV
  double leader_noise = 0.0005;       // m, per-tick tremor on the leader
  double hold_after_success = 1.0;    // s recorded at the lesion after success
  /// Per-tick white offset between the needle setpoint and the reached
  /// position during demonstrations (m std). The expert reacts to the
  /// perturbed follower while the recorded commands stay clean, so the data
  /// shows recoveries around the nominal path.
  double needle_execution_noise = 0.003;
};

enum class LossKind { kL1, kL2 };

struct PolicyConfig {
  int encoder_hidden = 32;
  int embed_dim = 24;
  int ffn_hidden = 48;
  int horizon = 20;
  int replan = 10;
  double position_scale = 0.05;  // m per unit head output
  double rotation_scale = 0.1;   // quaternion units per unit head output
  double learning_rate = 3e-3;
  int epochs = 60;
  int batch_size = 64;
  int stride = 2;  // use every stride-th tick of each demonstration
  LossKind loss = LossKind::kL1;
};

struct RolloutConfig {
  int max_steps = 1200;
  double success_tolerance = 0.003;  // m, ends the episode
  int stall_ticks = 90;
  double stall_motion = 0.0002;  // m over the stall window
};

struct EvalConfig {
  int episodes = 10;
  std::uint64_t first_seed = 1000;
  double success_threshold = 0.005;  // m, final needle tip error
};

struct AblationConfig {
  std::vector<double> weights{0.1, 0.5, 1.0, 2.0, 10.0};
  /// "II" sweeps the Phase-II probe weight, "IV" the Phase-IV needle weight.
  std::string phase = "II";
  int trials = 10;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 47800;
  double duration = 0.0;  // s; 0 runs until the client disconnects
};

struct RunConfig {
  std::string scene_file;        // empty: built-in reference scene
  std::string calibration_file;  // empty: synthesized from the scene
  bool calibrated = true;        // false runs the gate without calibration
  double control_rate_hz = 30.0;
  SmoothingLimits smoothing;
  ArmPair<WorkspaceLimits> workspace;
  double clearance = 0.02;
  PhaseTriggers triggers;
  MaskSchedule mask = MaskSchedule::interactive(1.0, 1.0);
  ExpertConfig expert;
  PolicyConfig policy;
  RolloutConfig rollout;
  EvalConfig eval;
  AblationConfig ablation;
  ServiceConfig service;
  int demos = 20;
  std::uint64_t seed = 1;

  double dt() const { return 1.0 / control_rate_hz; }
  /// Throws ConfigError for values outside their documented ranges.
  void validate() const;
};

Json default_config_json();
Json run_config_to_json(const RunConfig& c);
/// Merges `j` over the defaults, then parses and validates.
RunConfig run_config_from_json(const Json& j);

/// Applies one `dotted.key=value` override in place.
void apply_override(Json& doc, const std::string& assignment);

/// Loads an optional file, applies overrides and an optional seed, checks
/// that referenced files exist.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed);

Scene load_scene(const RunConfig& c);
/// Calibration from file, synthesized from the scene, or empty when the run
/// is configured uncalibrated.
std::optional<CalibrationSet> load_calibration(const RunConfig& c,
                                               const Scene& scene);

SafetyConfig safety_config(const RunConfig& c, const Scene& scene);

/// Resolved run configuration plus the resolved scene, for artifacts.
Json resolved_document(const RunConfig& c, const Scene& scene);

const char* loss_name(LossKind k);

}  // namespace twinarm
