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

#include "twinarm/service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <mutex>
#include <numbers>
#include <thread>

#include "twinarm/data.hpp"
#include "twinarm/errors.hpp"
#include "twinarm/expert.hpp"
#include "twinarm/pipeline.hpp"

namespace twinarm {

namespace {

using Clock = std::chrono::steady_clock;

class Fd {
 public:
  explicit Fd(int fd = -1) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }
  int get() const { return fd_; }
  void reset(int fd = -1) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
  }

 private:
  int fd_;
};

std::string errno_text(const std::string& what) {
  return what + ": " + std::strerror(errno);
}

sockaddr_in make_address(const std::string& host, int port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw ConfigError("service.host must be an IPv4 address, got \"" + host + "\"");
  }
  return addr;
}

bool send_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

Arm parse_arm(const Json& m) {
  const std::string name = m.at("arm").get<std::string>();
  if (name == "probe") return Arm::kProbe;
  if (name == "needle") return Arm::kNeedle;
  throw ConfigError("unknown arm \"" + name + "\"");
}

Json arm_poses_json(const ArmPair<Pose>& p) {
  return {{"probe", pose_to_json(p.probe)}, {"needle", pose_to_json(p.needle)}};
}

/// State shared between the ingestion thread and the control loop.
struct Inbox {
  std::mutex mutex;
  std::vector<std::string> errors;
  std::optional<std::optional<std::string>> start_recording;  // inner: path
  bool stop_recording = false;
  std::atomic<bool> disconnected{false};
  std::atomic<std::int64_t> rejected{0};
};

void ingest(int fd, TeleopPipeline& pipe, Inbox& inbox) {
  std::string buffer;
  char chunk[4096];
  for (;;) {
    const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t eol;
    while ((eol = buffer.find('\n')) != std::string::npos) {
      const std::string line = buffer.substr(0, eol);
      buffer.erase(0, eol + 1);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const Json m = Json::parse(line);
        const std::string type = m.at("type").get<std::string>();
        if (type == "leader_pose") {
          pipe.submit_leader(parse_arm(m), pose_from_json(m));
        } else if (type == "engage") {
          pipe.engage(parse_arm(m), pose_from_json(m));
        } else if (type == "start_recording") {
          std::lock_guard<std::mutex> lock(inbox.mutex);
          inbox.start_recording.emplace(
              m.contains("path") ? std::optional<std::string>(m["path"].get<std::string>())
                                 : std::nullopt);
        } else if (type == "stop_recording") {
          std::lock_guard<std::mutex> lock(inbox.mutex);
          inbox.stop_recording = true;
        } else {
          throw ConfigError("unknown message type \"" + type + "\"");
        }
      } catch (const std::exception& e) {
        ++inbox.rejected;
        std::lock_guard<std::mutex> lock(inbox.mutex);
        inbox.errors.push_back(e.what());
      }
    }
  }
  inbox.disconnected = true;
}

}  // namespace

Json service_report_to_json(const ServiceReport& r) {
  Json j;
  j["ticks"] = r.ticks;
  j["deadline_misses"] = r.deadline_misses;
  j["max_tick_ms"] = r.max_tick_seconds * 1e3;
  j["rejected_messages"] = r.rejected_messages;
  Json paths = Json::array();
  for (const auto& p : r.recordings) paths.push_back(p.string());
  j["recordings"] = paths;
  return j;
}

ServiceReport run_service(const RunConfig& config, const Scene& scene,
                          const std::optional<CalibrationSet>& calibration,
                          const ServiceOptions& options) {
  Fd listener(::socket(AF_INET, SOCK_STREAM, 0));
  if (listener.get() < 0) throw IoError(errno_text("socket"));
  const int yes = 1;
  ::setsockopt(listener.get(), SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  sockaddr_in addr = make_address(options.host, options.port);
  if (::bind(listener.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw IoError(errno_text("bind " + options.host + ":" + std::to_string(options.port)));
  }
  if (::listen(listener.get(), 1) != 0) throw IoError(errno_text("listen"));
  socklen_t len = sizeof(addr);
  ::getsockname(listener.get(), reinterpret_cast<sockaddr*>(&addr), &len);
  if (options.on_listening) options.on_listening(ntohs(addr.sin_port));

  Fd client(::accept(listener.get(), nullptr, nullptr));
  if (client.get() < 0) throw IoError(errno_text("accept"));
  ::setsockopt(client.get(), IPPROTO_TCP, TCP_NODELAY, &yes, sizeof(yes));

  TeleopPipeline pipe(scene, pipeline_settings(config, scene), calibration, config.seed);
  Inbox inbox;
  std::thread reader([&] { ingest(client.get(), pipe, inbox); });

  ServiceReport report;
  std::unique_ptr<EpisodeWriter> writer;
  int session_index = 0;
  const std::string hash = json_hash(options.config_doc);
  auto open_recording = [&](const std::filesystem::path& path) {
    writer = std::make_unique<EpisodeWriter>(path, config.seed, hash, options.config_doc);
    report.recordings.push_back(path);
  };
  auto close_recording = [&] {
    if (!writer) return;
    writer->close();
    writer.reset();
  };
  if (options.record_path) open_recording(*options.record_path);

  const auto period = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(config.dt()));
  const std::int64_t max_ticks =
      options.duration > 0.0
          ? static_cast<std::int64_t>(std::llround(options.duration * config.control_rate_hz))
          : -1;
  bool connected = true;
  auto due = Clock::now();
  try {
    while (connected && !inbox.disconnected && (max_ticks < 0 || report.ticks < max_ticks)) {
      const auto start = Clock::now();
      std::vector<std::string> errors;
      std::optional<std::optional<std::string>> start_request;
      bool stop_request = false;
      {
        std::lock_guard<std::mutex> lock(inbox.mutex);
        errors.swap(inbox.errors);
        start_request.swap(inbox.start_recording);
        stop_request = std::exchange(inbox.stop_recording, false);
      }
      if (stop_request) close_recording();
      if (start_request) {
        close_recording();
        std::filesystem::path path;
        if (*start_request) {
          path = **start_request;
        } else {
          char name[32];
          std::snprintf(name, sizeof(name), "session_%03d.jsonl", session_index++);
          path = options.recording_dir / name;
        }
        try {
          open_recording(path);
        } catch (const IoError& e) {
          errors.push_back(e.what());
        }
      }

      const DemonstrationRecord r = pipe.advance();
      if (writer) writer->append(r);

      Json state;
      state["type"] = "state";
      state["tick"] = r.t;
      state["setpoint"] = arm_poses_json(r.executed);
      state["follower"] = arm_poses_json(r.follower);
      state["d_min"] = r.d_min;
      state["verdict"] = verdict_name(r.verdict);
      state["phase"] = phase_label(r.phase.phase);
      state["plane_quality"] = r.observation.plane_quality;
      state["recording"] = writer != nullptr;
      state["recorded"] = writer ? writer->count() : 0;
      std::string out = state.dump() + '\n';
      for (const std::string& e : errors) {
        out += Json{{"type", "error"}, {"message", e}}.dump() + '\n';
      }
      connected = send_all(client.get(), out);
      ++report.ticks;

      const auto end = Clock::now();
      report.max_tick_seconds =
          std::max(report.max_tick_seconds, std::chrono::duration<double>(end - start).count());
      due += period;
      if (end > due) {
        ++report.deadline_misses;
        due = end;  // re-anchor instead of bursting to catch up
      }
      std::this_thread::sleep_until(due);
    }
  } catch (...) {
    ::shutdown(client.get(), SHUT_RDWR);
    reader.join();
    throw;
  }
  close_recording();
  report.rejected_messages = inbox.rejected;
  Json summary = service_report_to_json(report);
  summary["type"] = "summary";
  if (connected) send_all(client.get(), summary.dump() + '\n');
  ::shutdown(client.get(), SHUT_RDWR);
  reader.join();
  return report;
}

ServiceClient::ServiceClient(const std::string& host, int port,
                             std::chrono::milliseconds timeout) {
  const sockaddr_in addr = make_address(host, port);
  const auto give_up = Clock::now() + timeout;
  for (;;) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw IoError(errno_text("socket"));
    if (::connect(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) break;
    ::close(fd_);
    fd_ = -1;
    if (Clock::now() > give_up) {
      throw IoError(errno_text("connect " + host + ":" + std::to_string(port)));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  const int yes = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &yes, sizeof(yes));
}

ServiceClient::~ServiceClient() {
  if (fd_ >= 0) ::close(fd_);
}

void ServiceClient::send(const Json& message) {
  if (fd_ < 0 || !send_all(fd_, message.dump() + '\n')) {
    throw IoError("service connection lost");
  }
}

std::optional<Json> ServiceClient::receive(std::chrono::milliseconds timeout) {
  const auto give_up = Clock::now() + timeout;
  for (;;) {
    const std::size_t eol = buffer_.find('\n');
    if (eol != std::string::npos) {
      const std::string line = buffer_.substr(0, eol);
      buffer_.erase(0, eol + 1);
      try {
        return Json::parse(line);
      } catch (const Json::parse_error& e) {
        throw ParseError(0, std::string("service sent malformed JSON: ") + e.what());
      }
    }
    if (fd_ < 0) return std::nullopt;
    const auto left = std::max<std::int64_t>(
        0, std::chrono::duration_cast<std::chrono::milliseconds>(give_up - Clock::now()).count());
    pollfd p{fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, static_cast<int>(left));
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) return std::nullopt;
    char chunk[4096];
    const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      ::close(fd_);
      fd_ = -1;
      continue;  // drain what is buffered
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void ServiceClient::close() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

Json leader_pose_message(Arm arm, const Pose& pose) {
  Json m = pose_to_json(pose);
  m["type"] = "leader_pose";
  m["arm"] = arm_name(arm);
  return m;
}

Json engage_message(Arm arm, const Pose& pose) {
  Json m = pose_to_json(pose);
  m["type"] = "engage";
  m["arm"] = arm_name(arm);
  return m;
}

ScriptedClientReport run_scripted_client(const std::string& host, int port,
                                         double duration, double rate_hz) {
  ServiceClient client(host, port);
  const ArmPair<Pose> dock = leader_dock_poses();
  for (Arm a : kArms) client.send(engage_message(a, dock[a]));

  ScriptedClientReport report;
  // Reads until the summary arrives or nothing is left before the deadline.
  auto drain = [&](std::chrono::milliseconds wait) {
    const auto deadline = Clock::now() + wait;
    for (;;) {
      const auto left = std::max(std::chrono::milliseconds(0),
                                 std::chrono::duration_cast<std::chrono::milliseconds>(
                                     deadline - Clock::now()));
      const auto m = client.receive(left);
      if (!m) return;
      if (m->value("type", "") == "state") ++report.states;
      if (m->value("type", "") == "summary") {
        report.summary = *m;
        return;
      }
    }
  };
  const auto period = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(1.0 / rate_hz));
  const auto t0 = Clock::now();
  const auto steps = static_cast<std::int64_t>(std::llround(duration * rate_hz));
  for (std::int64_t k = 0; k < steps && !report.summary; ++k) {
    const double t = static_cast<double>(k) / rate_hz;
    // 2 cm figure-eight, 10 s period, opposite phase on the two leaders.
    for (Arm a : kArms) {
      const double s = a == Arm::kProbe ? 1.0 : -1.0;
      const double w = 2.0 * std::numbers::pi / 10.0;
      Pose p = dock[a];
      p.position += Vec3(0.02 * std::sin(w * t), s * 0.01 * std::sin(2.0 * w * t), 0.0);
      try {
        client.send(leader_pose_message(a, p));
      } catch (const IoError&) {
        // The service ended its session first; its summary may be in flight.
        drain(std::chrono::seconds(5));
        return report;
      }
    }
    drain(std::chrono::milliseconds(0));
    std::this_thread::sleep_until(t0 + (k + 1) * period);
  }
  client.close();
  if (!report.summary) drain(std::chrono::seconds(5));
  return report;
}

}  // namespace twinarm
