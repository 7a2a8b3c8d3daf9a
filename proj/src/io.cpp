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

#include "twinarm/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "twinarm/errors.hpp"

namespace twinarm {

Json vec_to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const Json& j) {
  if (!j.is_array()) throw ConfigError("expected a numeric array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Json vec3_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Json quat_to_json(const Quat& q) {
  return Json::array({q.w(), q.x(), q.y(), q.z()});
}

Quat quat_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw ConfigError("expected [w, x, y, z]");
  try {
    return Quat(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                j[3].get<double>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

Json pose_to_json(const Pose& p) {
  Json j;
  j["position"] = vec3_to_json(p.position);
  j["quaternion"] = quat_to_json(p.orientation);
  return j;
}

Pose pose_from_json(const Json& j) {
  return {vec3_from_json(j.at("position")), quat_from_json(j.at("quaternion"))};
}

Json pose_to_array(const Pose& p) {
  return Json::array({p.position.x(), p.position.y(), p.position.z(),
                      p.orientation.w(), p.orientation.x(), p.orientation.y(),
                      p.orientation.z()});
}

Pose pose_from_array(const Json& j) {
  if (!j.is_array() || j.size() != 7) {
    throw ConfigError("expected a 7-element pose array");
  }
  return {Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>()),
          Quat(j[3].get<double>(), j[4].get<double>(), j[5].get<double>(),
               j[6].get<double>())};
}

Json transform_to_json(const Transform& t) {
  Json j;
  j["translation"] = vec3_to_json(t.translation);
  j["quaternion"] = quat_to_json(t.rotation);
  return j;
}

Transform transform_from_json(const Json& j) {
  return {quat_from_json(j.at("quaternion")), vec3_from_json(j.at("translation"))};
}

Json tool_to_json(const ToolSpec& t) {
  Json j;
  j["length"] = t.length;
  j["radius"] = t.radius;
  j["local_axis"] = vec3_to_json(t.local_axis);
  return j;
}

ToolSpec tool_from_json(const Json& j) {
  ToolSpec t;
  t.length = j.at("length").get<double>();
  t.radius = j.at("radius").get<double>();
  if (j.contains("local_axis")) t.local_axis = vec3_from_json(j["local_axis"]);
  return t;
}

Json calibration_to_json(const CalibrationSet& c) {
  Json j;
  j["format"] = "twinarm-calibration";
  j["version"] = 1;
  for (Arm a : kArms) {
    Json arm;
    arm["base_to_ee"] = transform_to_json(c.base_to_ee[a]);
    arm["ee_to_cam"] = transform_to_json(c.ee_to_cam[a]);
    arm["cam_to_marker"] = transform_to_json(c.cam_to_marker[a]);
    j[arm_name(a)] = arm;
  }
  return j;
}

CalibrationSet calibration_from_json(const Json& j) {
  CalibrationSet c;
  try {
    for (Arm a : kArms) {
      const Json& arm = j.at(arm_name(a));
      c.base_to_ee[a] = transform_from_json(arm.at("base_to_ee"));
      c.ee_to_cam[a] = transform_from_json(arm.at("ee_to_cam"));
      c.cam_to_marker[a] = transform_from_json(arm.at("cam_to_marker"));
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("calibration: ") + e.what());
  }
  return c;
}

Json workspace_to_json(const WorkspaceLimits& w) {
  Json j;
  j["min"] = vec3_to_json(w.min);
  j["max"] = vec3_to_json(w.max);
  return j;
}

WorkspaceLimits workspace_from_json(const Json& j) {
  WorkspaceLimits w{vec3_from_json(j.at("min")), vec3_from_json(j.at("max"))};
  w.validate();
  return w;
}

Json scene_to_json(const Scene& s) {
  Json j;
  j["format"] = "twinarm-scene";
  j["version"] = 1;
  Json ph;
  ph["surface_height"] = s.phantom.surface_height;
  ph["target_plane"] = pose_to_json(s.phantom.target_plane);
  ph["lesion_point"] = vec3_to_json(s.phantom.lesion_point);
  ph["insertion_direction"] = vec3_to_json(s.phantom.insertion_direction);
  ph["prealign_standoff"] = s.phantom.prealign_standoff;
  j["phantom"] = ph;
  Json us;
  us["sigma_position"] = s.ultrasound.sigma_position;
  us["sigma_angle"] = s.ultrasound.sigma_angle;
  us["contact_tolerance"] = s.ultrasound.contact_tolerance;
  us["noise_std"] = s.ultrasound.noise_std;
  j["ultrasound"] = us;
  for (Arm a : kArms) {
    Json arm;
    arm["tool"] = tool_to_json(s.tools[a]);
    arm["tau"] = s.tau[a];
    arm["initial_pose"] = pose_to_json(s.initial_pose[a]);
    j["arms"][arm_name(a)] = arm;
  }
  j["probe_T_needle"] = transform_to_json(s.probe_T_needle);
  j["external_noise_std"] = s.external_noise_std;
  j["noise_seed"] = s.noise_seed;
  Json jit;
  jit["phantom_offset"] = s.jitter.phantom_offset;
  jit["start_offset"] = s.jitter.start_offset;
  jit["start_angle"] = s.jitter.start_angle;
  j["jitter"] = jit;
  return j;
}

Scene scene_from_json(const Json& j) {
  Scene s = reference_scene();
  try {
    if (j.contains("phantom")) {
      const Json& ph = j["phantom"];
      s.phantom.surface_height =
          ph.value("surface_height", s.phantom.surface_height);
      if (ph.contains("target_plane")) {
        s.phantom.target_plane = pose_from_json(ph["target_plane"]);
      }
      if (ph.contains("lesion_point")) {
        s.phantom.lesion_point = vec3_from_json(ph["lesion_point"]);
      }
      if (ph.contains("insertion_direction")) {
        s.phantom.insertion_direction =
            vec3_from_json(ph["insertion_direction"]).normalized();
      }
      s.phantom.prealign_standoff =
          ph.value("prealign_standoff", s.phantom.prealign_standoff);
    }
    if (j.contains("ultrasound")) {
      const Json& us = j["ultrasound"];
      s.ultrasound.sigma_position =
          us.value("sigma_position", s.ultrasound.sigma_position);
      s.ultrasound.sigma_angle = us.value("sigma_angle", s.ultrasound.sigma_angle);
      s.ultrasound.contact_tolerance =
          us.value("contact_tolerance", s.ultrasound.contact_tolerance);
      s.ultrasound.noise_std = us.value("noise_std", s.ultrasound.noise_std);
    }
    if (j.contains("arms")) {
      for (Arm a : kArms) {
        if (!j["arms"].contains(arm_name(a))) continue;
        const Json& arm = j["arms"][arm_name(a)];
        if (arm.contains("tool")) s.tools[a] = tool_from_json(arm["tool"]);
        s.tau[a] = arm.value("tau", s.tau[a]);
        if (arm.contains("initial_pose")) {
          s.initial_pose[a] = pose_from_json(arm["initial_pose"]);
        }
      }
    }
    if (j.contains("probe_T_needle")) {
      s.probe_T_needle = transform_from_json(j["probe_T_needle"]);
    }
    s.external_noise_std = j.value("external_noise_std", s.external_noise_std);
    s.noise_seed = j.value("noise_seed", s.noise_seed);
    if (j.contains("jitter")) {
      const Json& jit = j["jitter"];
      s.jitter.phantom_offset = jit.value("phantom_offset", s.jitter.phantom_offset);
      s.jitter.start_offset = jit.value("start_offset", s.jitter.start_offset);
      s.jitter.start_angle = jit.value("start_angle", s.jitter.start_angle);
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("scene: ") + e.what());
  }
  s.phantom.validate();
  return s;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::string json_hash(const Json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace twinarm
