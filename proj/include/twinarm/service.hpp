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

// Teleoperation service: one TCP client, newline-delimited JSON both ways.
//
// Inbound (client -> service):
//   {"type":"engage","arm":"probe","position":[x,y,z],"quaternion":[w,x,y,z]}
//   {"type":"leader_pose","arm":"needle","position":[..],"quaternion":[..]}
//   {"type":"start_recording","path":"optional/file.jsonl"}
//   {"type":"stop_recording"}
//
// Outbound (service -> client), once per tick:
//   {"type":"state","tick":n,"setpoint":{"probe":{position,quaternion},
//    "needle":{..}},"follower":{..},"d_min":..,"verdict":"Allowed",
//    "phase":"II","plane_quality":..,"recording":false,"recorded":0}
// plus {"type":"error","message":..} for rejected messages and a final
// {"type":"summary","ticks":n,"deadline_misses":m,...} when the session ends.
//
// Engaging freezes the arm's zero reference at the given leader pose and the
// follower pose of the last tick; leader poses sent before engaging are
// ignored.

#pragma once

#include <cstdint>
#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "twinarm/config.hpp"
#include "twinarm/io.hpp"
#include "twinarm/sim.hpp"

namespace twinarm {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 0;           // 0 picks a free port
  double duration = 0.0;  // s; 0 runs until the client disconnects
  /// Records the whole session here when set (the record subcommand).
  std::optional<std::filesystem::path> record_path;
  /// Where start_recording without a path writes session_NNN.jsonl.
  std::filesystem::path recording_dir = ".";
  /// Written into the header of every recording.
  Json config_doc = Json::object();
  /// Called with the bound port once the socket listens.
  std::function<void(int)> on_listening;
};

struct ServiceReport {
  std::int64_t ticks = 0;
  std::int64_t deadline_misses = 0;
  double max_tick_seconds = 0.0;
  std::int64_t rejected_messages = 0;
  std::vector<std::filesystem::path> recordings;
};

Json service_report_to_json(const ServiceReport& r);

/// Binds, waits for one client, then runs the fixed-rate control loop until
/// the duration elapses or the client disconnects. A tick whose processing
/// ends after the next tick was due counts as a deadline miss.
ServiceReport run_service(const RunConfig& config, const Scene& scene,
                          const std::optional<CalibrationSet>& calibration,
                          const ServiceOptions& options);

/// Minimal blocking client for the protocol above.
class ServiceClient {
 public:
  /// Retries until `timeout` while the service is starting up.
  ServiceClient(const std::string& host, int port,
                std::chrono::milliseconds timeout = std::chrono::seconds(5));
  ServiceClient(const ServiceClient&) = delete;
  ServiceClient& operator=(const ServiceClient&) = delete;
  ~ServiceClient();

  void send(const Json& message);
  /// Next message, or nullopt on timeout or end of stream.
  std::optional<Json> receive(std::chrono::milliseconds timeout);
  void close();

 private:
  int fd_ = -1;
  std::string buffer_;
};

Json leader_pose_message(Arm arm, const Pose& pose);
Json engage_message(Arm arm, const Pose& pose);

struct ScriptedClientReport {
  std::int64_t states = 0;
  std::optional<Json> summary;
};

/// Engages both arms at the dock poses and streams a slow figure-eight on
/// each leader at `rate_hz` for `duration` seconds, reading broadcasts as
/// they arrive. Waits for the summary after closing its side.
ScriptedClientReport run_scripted_client(const std::string& host, int port,
                                         double duration, double rate_hz);

}  // namespace twinarm
