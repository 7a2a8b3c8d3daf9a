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

// Demonstration records, episode files, and tracking / workflow metrics.
//
// Episode file format (one JSON object per line, keys in the order below):
//
//   line 0      {"kind":"header","format":"twinarm-episode","version":1,
//                "seed":..,"config_hash":"..","config":{..}}
//   line 1..N   {"kind":"record","t":..,"dt":..,"leader":{probe,needle},
//                "commanded":{..},"executed":{..},"follower":{..},
//                "us":{"features":[..],"quality":..,"contact":..},
//                "external":[..],"phase":{"phase":"II","entered_at":..,
//                "stability":..},"verdict":"Allowed","d_min":..}
//   line N+1    {"kind":"footer","records":N,"transitions":[{phase,tick}..],
//                "summary":{..}}
//
// Poses inside records are 7-arrays [px, py, pz, qw, qx, qy, qz].

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "twinarm/geo.hpp"
#include "twinarm/io.hpp"
#include "twinarm/phase.hpp"
#include "twinarm/safety.hpp"
#include "twinarm/sim.hpp"

namespace twinarm {

inline constexpr int kEpisodeFormatVersion = 1;

struct DemonstrationRecord {
  std::int64_t t = 0;
  double dt = 0.0;
  ArmPair<Pose> leader;
  ArmPair<Pose> commanded;  // post-mapping
  ArmPair<Pose> executed;   // post-smoothing, post-gate
  ArmPair<Pose> follower;   // post-dynamics
  UltrasoundObservation observation;
  Eigen::VectorXd external;  // camera-feature stand-in; may be empty
  PhaseState phase;
  VerdictKind verdict = VerdictKind::kAllowed;
  double d_min = 0.0;
};

struct PhaseTransition {
  Phase phase = Phase::kProbeGrossPositioning;
  std::int64_t tick = 0;

  friend bool operator==(const PhaseTransition&, const PhaseTransition&) = default;
};

struct EpisodeLog {
  std::vector<DemonstrationRecord> records;
  std::string config_hash;
  std::uint64_t seed = 0;
  Json config = Json::object();
  std::vector<PhaseTransition> transitions;
  Json summary = Json::object();
};

/// Phase entry ticks derived from per-record phases.
std::vector<PhaseTransition> transition_table(
    const std::vector<DemonstrationRecord>& records);

/// Sets log.transitions from the records.
void finalize_transitions(EpisodeLog& log);

/// Number of ticks times dt.
double episode_duration(const EpisodeLog& log);

/// Time spent in each phase, from its entry tick to the next entry (or the
/// end of the episode). Phases never entered are empty, not zero.
std::array<std::optional<double>, kNumPhases> phase_durations(
    const EpisodeLog& log);

struct SettleCriteria {
  double eps_position = 0.002;  // m
  double eps_angle = 0.0035;    // rad
  double hold = 0.5;            // s
};

struct LatencyResult {
  bool settled = false;
  double latency = 0.0;       // s
  double arrival_time = 0.0;  // s, last leader change
  double settle_time = 0.0;   // s
  /// Error to the commanded target at the end of the log, for reporting the
  /// unsettled case.
  PoseError residual;
};

/// Delay from the leader's arrival (its last pose change) to the follower
/// first entering and then staying within the criteria of the final
/// commanded target for `hold` seconds.
LatencyResult endpoint_latency(const EpisodeLog& log, Arm arm,
                               const SettleCriteria& criteria);

struct SteadyStateError {
  bool settled = false;
  PoseError error;  // position m, angle rad
};

/// Error between the final commanded target and the mean follower pose over
/// the settled segment.
SteadyStateError steady_state_error(const EpisodeLog& log, Arm arm,
                                    const SettleCriteria& criteria);

Json record_to_json(const DemonstrationRecord& r);
DemonstrationRecord record_from_json(const Json& j);

/// Streams an episode to disk one line per record.
class EpisodeWriter {
 public:
  EpisodeWriter(const std::filesystem::path& path, std::uint64_t seed,
                const std::string& config_hash, const Json& config);
  void append(const DemonstrationRecord& r);
  /// Writes the footer (transitions derived from the appended records).
  void close(const Json& summary = Json::object());
  std::size_t count() const { return count_; }
  ~EpisodeWriter();

 private:
  std::ofstream out_;
  std::filesystem::path path_;
  std::vector<PhaseTransition> transitions_;
  std::optional<Phase> last_phase_;
  std::size_t count_ = 0;
  bool closed_ = false;
};

void write_episode(const std::filesystem::path& path, const EpisodeLog& log);

struct LoadedEpisode {
  EpisodeLog log;
  /// True when the file's config hash differs from the expected one.
  bool config_hash_mismatch = false;
};

/// Throws ParseError (with line index) on malformed, truncated or
/// version-mismatched files, IoError if the file cannot be opened.
LoadedEpisode read_episode(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_hash = {});

/// Summary document: duration, phase durations, latency and steady-state
/// error per arm (degrees in the "_deg" fields).
Json summarize_episode(const EpisodeLog& log, const SettleCriteria& criteria);

}  // namespace twinarm
