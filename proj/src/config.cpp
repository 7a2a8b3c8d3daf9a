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

#include "twinarm/config.hpp"

#include <cmath>

#include "twinarm/errors.hpp"

namespace twinarm {

namespace {

RunConfig defaults() {
  RunConfig c;
  c.workspace.probe = {Vec3(0.30, -0.30, 0.05), Vec3(0.80, 0.30, 0.50)};
  c.workspace.needle = {Vec3(0.10, -0.40, 0.00), Vec3(0.80, 0.40, 0.50)};
  return c;
}

void merge_checked(Json& base, const Json& overlay, const std::string& path) {
  if (!overlay.is_object()) {
    throw ConfigError("config: '" + path + "' must be an object");
  }
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
    Json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

Json mask_to_json(const MaskSchedule& m) {
  Json j = Json::object();
  for (int i = 0; i < kNumPhases; ++i) {
    const Phase p = phase_from_index(i);
    if (!m.has(p)) continue;
    Json e;
    e["probe"] = m.at(p).probe;
    e["needle"] = m.at(p).needle;
    j[phase_label(p)] = e;
  }
  return j;
}

MaskSchedule mask_from_json(const Json& j) {
  MaskSchedule m;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto p = parse_phase(it.key());
    require(p.has_value(), "mask: unknown phase '" + it.key() + "'");
    m.set(*p, {it.value().at("probe").get<double>(),
               it.value().at("needle").get<double>()});
  }
  return m;
}

}  // namespace

const char* loss_name(LossKind k) { return k == LossKind::kL1 ? "l1" : "l2"; }

void RunConfig::validate() const {
  require(positive(control_rate_hz) && control_rate_hz <= 1000.0,
          "control_rate_hz must be in (0, 1000]");
  require(positive(smoothing.max_linear_speed), "smoothing.max_linear_speed > 0");
  require(positive(smoothing.max_angular_speed), "smoothing.max_angular_speed > 0");
  require(smoothing.queue_cap >= 1, "smoothing.queue_cap >= 1");
  for (Arm a : kArms) workspace[a].validate();
  require(std::isfinite(clearance) && clearance >= 0.0, "clearance >= 0");
  triggers.validate();
  for (int i = 0; i < kNumPhases; ++i) {
    require(mask.has(phase_from_index(i)),
            std::string("mask: missing phase ") + phase_label(phase_from_index(i)));
  }
  require(positive(expert.lookahead), "expert.lookahead > 0");
  require(positive(expert.probe_transit_speed) && positive(expert.probe_scan_speed) &&
              positive(expert.needle_transit_speed) &&
              positive(expert.needle_insert_speed),
          "expert speeds must be positive");
  require(positive(expert.probe_transit_angular) &&
              positive(expert.probe_scan_angular) &&
              positive(expert.needle_transit_angular),
          "expert angular speeds must be positive");
  require(positive(expert.probe_scan_gain) && expert.probe_scan_gain <= 1.0,
          "expert.probe_scan_gain in (0, 1]");
  require(expert.leader_noise >= 0.0, "expert.leader_noise >= 0");
  require(expert.hold_after_success >= 0.0, "expert.hold_after_success >= 0");
  require(expert.needle_execution_noise >= 0.0, "expert.needle_execution_noise >= 0");
  require(policy.encoder_hidden >= 1 && policy.embed_dim >= 1 &&
              policy.ffn_hidden >= 1,
          "policy widths >= 1");
  require(policy.horizon >= 1, "policy.horizon >= 1");
  require(policy.replan >= 1 && policy.replan <= policy.horizon,
          "policy.replan in [1, horizon]");
  require(positive(policy.position_scale) && positive(policy.rotation_scale),
          "policy output scales > 0");
  require(positive(policy.learning_rate), "policy.learning_rate > 0");
  require(policy.epochs >= 0, "policy.epochs >= 0");
  require(policy.batch_size >= 1, "policy.batch_size >= 1");
  require(policy.stride >= 1, "policy.stride >= 1");
  require(rollout.max_steps >= 1, "rollout.max_steps >= 1");
  require(positive(rollout.success_tolerance), "rollout.success_tolerance > 0");
  require(rollout.stall_ticks >= 1, "rollout.stall_ticks >= 1");
  require(rollout.stall_motion >= 0.0, "rollout.stall_motion >= 0");
  require(eval.episodes >= 1, "eval.episodes >= 1");
  require(positive(eval.success_threshold), "eval.success_threshold > 0");
  require(!ablation.weights.empty(), "ablation.weights must not be empty");
  for (double w : ablation.weights) require(positive(w), "ablation weights > 0");
  require(ablation.phase == "II" || ablation.phase == "IV",
          "ablation.phase must be II or IV");
  require(ablation.trials >= 1, "ablation.trials >= 1");
  require(service.port >= 0 && service.port <= 65535, "service.port in [0, 65535]");
  require(service.duration >= 0.0, "service.duration >= 0");
  require(demos >= 1, "demos >= 1");
}

Json run_config_to_json(const RunConfig& c) {
  Json j;
  j["scene_file"] = c.scene_file;
  j["calibration_file"] = c.calibration_file;
  j["calibrated"] = c.calibrated;
  j["control_rate_hz"] = c.control_rate_hz;
  j["smoothing"] = {{"max_linear_speed", c.smoothing.max_linear_speed},
                    {"max_angular_speed", c.smoothing.max_angular_speed},
                    {"queue_cap", c.smoothing.queue_cap}};
  j["workspace"] = {{"probe", workspace_to_json(c.workspace.probe)},
                    {"needle", workspace_to_json(c.workspace.needle)}};
  j["clearance"] = c.clearance;
  j["triggers"] = {{"contact_quality_min", c.triggers.contact_quality_min},
                   {"plane_quality_min", c.triggers.plane_quality_min},
                   {"plane_hold_steps", c.triggers.plane_hold_steps},
                   {"alignment_distance_max", c.triggers.alignment_distance_max}};
  j["mask"] = mask_to_json(c.mask);
  const ExpertConfig& e = c.expert;
  j["expert"] = {{"lookahead", e.lookahead},
                 {"probe_transit_speed", e.probe_transit_speed},
                 {"probe_transit_angular", e.probe_transit_angular},
                 {"probe_scan_speed", e.probe_scan_speed},
                 {"probe_scan_angular", e.probe_scan_angular},
                 {"probe_scan_gain", e.probe_scan_gain},
                 {"needle_transit_speed", e.needle_transit_speed},
                 {"needle_transit_angular", e.needle_transit_angular},
                 {"needle_insert_speed", e.needle_insert_speed},
                 {"leader_noise", e.leader_noise},
                 {"hold_after_success", e.hold_after_success},
                 {"needle_execution_noise", e.needle_execution_noise}};
  const PolicyConfig& p = c.policy;
  j["policy"] = {{"encoder_hidden", p.encoder_hidden},
                 {"embed_dim", p.embed_dim},
                 {"ffn_hidden", p.ffn_hidden},
                 {"horizon", p.horizon},
                 {"replan", p.replan},
                 {"position_scale", p.position_scale},
                 {"rotation_scale", p.rotation_scale},
                 {"learning_rate", p.learning_rate},
                 {"epochs", p.epochs},
                 {"batch_size", p.batch_size},
                 {"stride", p.stride},
                 {"loss", loss_name(p.loss)}};
  j["rollout"] = {{"max_steps", c.rollout.max_steps},
                  {"success_tolerance", c.rollout.success_tolerance},
                  {"stall_ticks", c.rollout.stall_ticks},
                  {"stall_motion", c.rollout.stall_motion}};
  j["eval"] = {{"episodes", c.eval.episodes},
               {"first_seed", c.eval.first_seed},
               {"success_threshold", c.eval.success_threshold}};
  j["ablation"] = {{"weights", c.ablation.weights},
                   {"phase", c.ablation.phase},
                   {"trials", c.ablation.trials}};
  j["service"] = {{"host", c.service.host},
                  {"port", c.service.port},
                  {"duration", c.service.duration}};
  j["demos"] = c.demos;
  j["seed"] = c.seed;
  return j;
}

Json default_config_json() { return run_config_to_json(defaults()); }

RunConfig run_config_from_json(const Json& overlay) {
  Json j = default_config_json();
  merge_checked(j, overlay, "");
  RunConfig c;
  try {
    c.scene_file = j.at("scene_file").get<std::string>();
    c.calibration_file = j.at("calibration_file").get<std::string>();
    c.calibrated = j.at("calibrated").get<bool>();
    c.control_rate_hz = j.at("control_rate_hz").get<double>();
    const Json& s = j.at("smoothing");
    c.smoothing.max_linear_speed = s.at("max_linear_speed").get<double>();
    c.smoothing.max_angular_speed = s.at("max_angular_speed").get<double>();
    const auto cap = s.at("queue_cap").get<long long>();
    require(cap >= 1, "smoothing.queue_cap >= 1");
    c.smoothing.queue_cap = static_cast<std::size_t>(cap);
    c.workspace.probe = workspace_from_json(j.at("workspace").at("probe"));
    c.workspace.needle = workspace_from_json(j.at("workspace").at("needle"));
    c.clearance = j.at("clearance").get<double>();
    const Json& t = j.at("triggers");
    c.triggers.contact_quality_min = t.at("contact_quality_min").get<double>();
    c.triggers.plane_quality_min = t.at("plane_quality_min").get<double>();
    c.triggers.plane_hold_steps = t.at("plane_hold_steps").get<int>();
    c.triggers.alignment_distance_max = t.at("alignment_distance_max").get<double>();
    c.mask = mask_from_json(j.at("mask"));
    const Json& e = j.at("expert");
    c.expert.lookahead = e.at("lookahead").get<double>();
    c.expert.probe_transit_speed = e.at("probe_transit_speed").get<double>();
    c.expert.probe_transit_angular = e.at("probe_transit_angular").get<double>();
    c.expert.probe_scan_speed = e.at("probe_scan_speed").get<double>();
    c.expert.probe_scan_angular = e.at("probe_scan_angular").get<double>();
    c.expert.probe_scan_gain = e.at("probe_scan_gain").get<double>();
    c.expert.needle_transit_speed = e.at("needle_transit_speed").get<double>();
    c.expert.needle_transit_angular = e.at("needle_transit_angular").get<double>();
    c.expert.needle_insert_speed = e.at("needle_insert_speed").get<double>();
    c.expert.leader_noise = e.at("leader_noise").get<double>();
    c.expert.hold_after_success = e.at("hold_after_success").get<double>();
    c.expert.needle_execution_noise = e.at("needle_execution_noise").get<double>();
    const Json& p = j.at("policy");
    c.policy.encoder_hidden = p.at("encoder_hidden").get<int>();
    c.policy.embed_dim = p.at("embed_dim").get<int>();
    c.policy.ffn_hidden = p.at("ffn_hidden").get<int>();
    c.policy.horizon = p.at("horizon").get<int>();
    c.policy.replan = p.at("replan").get<int>();
    c.policy.position_scale = p.at("position_scale").get<double>();
    c.policy.rotation_scale = p.at("rotation_scale").get<double>();
    c.policy.learning_rate = p.at("learning_rate").get<double>();
    c.policy.epochs = p.at("epochs").get<int>();
    c.policy.batch_size = p.at("batch_size").get<int>();
    c.policy.stride = p.at("stride").get<int>();
    const std::string loss = p.at("loss").get<std::string>();
    require(loss == "l1" || loss == "l2", "policy.loss must be l1 or l2");
    c.policy.loss = loss == "l1" ? LossKind::kL1 : LossKind::kL2;
    const Json& r = j.at("rollout");
    c.rollout.max_steps = r.at("max_steps").get<int>();
    c.rollout.success_tolerance = r.at("success_tolerance").get<double>();
    c.rollout.stall_ticks = r.at("stall_ticks").get<int>();
    c.rollout.stall_motion = r.at("stall_motion").get<double>();
    const Json& ev = j.at("eval");
    c.eval.episodes = ev.at("episodes").get<int>();
    c.eval.first_seed = ev.at("first_seed").get<std::uint64_t>();
    c.eval.success_threshold = ev.at("success_threshold").get<double>();
    const Json& ab = j.at("ablation");
    c.ablation.weights = ab.at("weights").get<std::vector<double>>();
    c.ablation.phase = ab.at("phase").get<std::string>();
    c.ablation.trials = ab.at("trials").get<int>();
    const Json& sv = j.at("service");
    c.service.host = sv.at("host").get<std::string>();
    c.service.port = sv.at("port").get<int>();
    c.service.duration = sv.at("duration").get<double>();
    c.demos = j.at("demos").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const Json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("override '" + key + "' has an empty segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    Json& child = (*node)[part];
    if (child.is_null()) child = Json::object();
    if (!child.is_object()) {
      throw ConfigError("override '" + key + "' descends into a non-object");
    }
    node = &child;
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed) {
  Json doc = Json::object();
  if (file) doc = read_json_file(*file);
  for (const auto& o : overrides) apply_override(doc, o);
  if (seed) doc["seed"] = *seed;
  RunConfig c = run_config_from_json(doc);
  // Relative paths inside a config file resolve against the file's directory.
  const auto resolve = [&](std::string& p) {
    if (p.empty()) return;
    std::filesystem::path path(p);
    if (file && path.is_relative()) path = file->parent_path() / path;
    if (!std::filesystem::exists(path)) {
      throw ConfigError("config: referenced file does not exist: " + path.string());
    }
    p = path.string();
  };
  resolve(c.scene_file);
  resolve(c.calibration_file);
  return c;
}

Scene load_scene(const RunConfig& c) {
  if (c.scene_file.empty()) return reference_scene();
  const Json j = read_json_file(c.scene_file);
  if (j.value("format", "") != "twinarm-scene") {
    throw ConfigError(c.scene_file + ": not a scene file");
  }
  return scene_from_json(j);
}

std::optional<CalibrationSet> load_calibration(const RunConfig& c,
                                               const Scene& scene) {
  if (!c.calibrated) return std::nullopt;
  if (c.calibration_file.empty()) return synthesize_calibration(scene);
  const Json j = read_json_file(c.calibration_file);
  if (j.value("format", "") != "twinarm-calibration") {
    throw ConfigError(c.calibration_file + ": not a calibration file");
  }
  return calibration_from_json(j);
}

SafetyConfig safety_config(const RunConfig& c, const Scene& scene) {
  SafetyConfig s;
  s.workspace = c.workspace;
  s.tools = scene.tools;
  s.clearance = c.clearance;
  return s;
}

Json resolved_document(const RunConfig& c, const Scene& scene) {
  Json j = run_config_to_json(c);
  j["resolved_scene"] = scene_to_json(scene);
  return j;
}

}  // namespace twinarm
