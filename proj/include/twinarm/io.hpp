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

// JSON conversions for the geometric and scene types, plus small file
// helpers. Poses and transforms are written as
//   {"position": [x, y, z], "quaternion": [w, x, y, z]}.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "twinarm/geo.hpp"
#include "twinarm/safety.hpp"
#include "twinarm/sim.hpp"

namespace twinarm {

using Json = nlohmann::ordered_json;

Json vec_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vec_from_json(const Json& j);
Json vec3_to_json(const Vec3& v);
Vec3 vec3_from_json(const Json& j);

Json quat_to_json(const Quat& q);
Quat quat_from_json(const Json& j);

Json pose_to_json(const Pose& p);
Pose pose_from_json(const Json& j);

/// Compact 7-array [px, py, pz, qw, qx, qy, qz] used in episode records.
Json pose_to_array(const Pose& p);
Pose pose_from_array(const Json& j);

Json transform_to_json(const Transform& t);
Transform transform_from_json(const Json& j);

Json tool_to_json(const ToolSpec& t);
ToolSpec tool_from_json(const Json& j);

Json calibration_to_json(const CalibrationSet& c);
CalibrationSet calibration_from_json(const Json& j);

Json scene_to_json(const Scene& s);
/// Missing keys keep the reference-scene values.
Scene scene_from_json(const Json& j);

Json workspace_to_json(const WorkspaceLimits& w);
WorkspaceLimits workspace_from_json(const Json& j);

/// Throws IoError / ConfigError (malformed JSON).
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

/// FNV-1a 64-bit hash of the compact dump, as 16 hex digits.
std::string json_hash(const Json& j);

}  // namespace twinarm
