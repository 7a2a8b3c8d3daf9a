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

#include "twinarm/data.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "twinarm/errors.hpp"

namespace twinarm {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

Json arm_pair_to_json(const ArmPair<Pose>& p) {
  Json j;
  j["probe"] = pose_to_array(p.probe);
  j["needle"] = pose_to_array(p.needle);
  return j;
}

ArmPair<Pose> arm_pair_from_json(const Json& j) {
  return {pose_from_array(j.at("probe")), pose_from_array(j.at("needle"))};
}

Json number_or_null(double v) {
  return std::isfinite(v) ? Json(v) : Json(nullptr);
}

double number_from(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

bool within(const Pose& a, const Pose& b, const SettleCriteria& c) {
  const PoseError e = pose_error(a, b);
  return e.position <= c.eps_position && e.angle <= c.eps_angle;
}

/// First index j >= from such that records j..j+hold_ticks are all within
/// the criteria of `target`; empty if none.
std::optional<std::size_t> settle_index(const EpisodeLog& log, Arm arm,
                                        std::size_t from, const Pose& target,
                                        const SettleCriteria& criteria) {
  const auto& r = log.records;
  const double dt = r.front().dt;
  const auto hold_ticks =
      static_cast<std::size_t>(std::ceil(criteria.hold / dt - 1e-9));
  // run[i]: number of consecutive within-tolerance records starting at i.
  std::vector<std::size_t> run(r.size() + 1, 0);
  for (std::size_t i = r.size(); i-- > from;) {
    run[i] = within(r[i].follower[arm], target, criteria) ? run[i + 1] + 1 : 0;
  }
  for (std::size_t j = from; j < r.size(); ++j) {
    if (run[j] >= hold_ticks + 1) return j;
  }
  return std::nullopt;
}

std::size_t arrival_index(const EpisodeLog& log, Arm arm) {
  const auto& r = log.records;
  for (std::size_t i = r.size(); i-- > 1;) {
    if (!(r[i].leader[arm] == r[i - 1].leader[arm])) return i;
  }
  return 0;
}

}  // namespace

std::vector<PhaseTransition> transition_table(
    const std::vector<DemonstrationRecord>& records) {
  std::vector<PhaseTransition> out;
  for (const auto& r : records) {
    if (out.empty() || out.back().phase != r.phase.phase) {
      out.push_back({r.phase.phase, r.t});
    }
  }
  return out;
}

void finalize_transitions(EpisodeLog& log) {
  log.transitions = transition_table(log.records);
}

double episode_duration(const EpisodeLog& log) {
  if (log.records.empty()) return 0.0;
  const auto& r = log.records;
  return static_cast<double>(r.back().t - r.front().t + 1) * r.front().dt;
}

std::array<std::optional<double>, kNumPhases> phase_durations(
    const EpisodeLog& log) {
  std::array<std::optional<double>, kNumPhases> out;
  if (log.records.empty()) return out;
  const std::vector<PhaseTransition> table =
      log.transitions.empty() ? transition_table(log.records) : log.transitions;
  const double dt = log.records.front().dt;
  const std::int64_t end = log.records.back().t + 1;
  for (std::size_t k = 0; k < table.size(); ++k) {
    const std::int64_t exit = k + 1 < table.size() ? table[k + 1].tick : end;
    const double d = static_cast<double>(exit - table[k].tick) * dt;
    auto& slot = out[phase_index(table[k].phase)];
    slot = slot.value_or(0.0) + d;
  }
  return out;
}

LatencyResult endpoint_latency(const EpisodeLog& log, Arm arm,
                               const SettleCriteria& criteria) {
  LatencyResult res;
  if (log.records.empty()) return res;
  const auto& r = log.records;
  const Pose target = r.back().commanded[arm];
  res.residual = pose_error(r.back().follower[arm], target);
  const std::size_t k = arrival_index(log, arm);
  const double dt = r.front().dt;
  res.arrival_time = static_cast<double>(r[k].t) * dt;
  const auto j = settle_index(log, arm, k, target, criteria);
  if (!j) return res;
  res.settled = true;
  res.settle_time = static_cast<double>(r[*j].t) * dt;
  res.latency = res.settle_time - res.arrival_time;
  return res;
}

SteadyStateError steady_state_error(const EpisodeLog& log, Arm arm,
                                    const SettleCriteria& criteria) {
  SteadyStateError res;
  if (log.records.empty()) return res;
  const auto& r = log.records;
  const Pose target = r.back().commanded[arm];
  const auto j = settle_index(log, arm, arrival_index(log, arm), target, criteria);
  if (!j) return res;
  Vec3 mean_p = Vec3::Zero();
  Eigen::Vector4d mean_q = Eigen::Vector4d::Zero();
  const Quat ref = r[*j].follower[arm].orientation;
  for (std::size_t i = *j; i < r.size(); ++i) {
    mean_p += r[i].follower[arm].position;
    mean_q += hemisphere_align(ref, r[i].follower[arm].orientation).coeffs_wxyz();
  }
  mean_p /= static_cast<double>(r.size() - *j);
  const Pose mean{mean_p, Quat(mean_q[0], mean_q[1], mean_q[2], mean_q[3])};
  res.settled = true;
  res.error = pose_error(mean, target);
  return res;
}

Json record_to_json(const DemonstrationRecord& r) {
  Json j;
  j["kind"] = "record";
  j["t"] = r.t;
  j["dt"] = r.dt;
  j["leader"] = arm_pair_to_json(r.leader);
  j["commanded"] = arm_pair_to_json(r.commanded);
  j["executed"] = arm_pair_to_json(r.executed);
  j["follower"] = arm_pair_to_json(r.follower);
  Json us;
  us["features"] = vec_to_json(r.observation.features);
  us["quality"] = r.observation.plane_quality;
  us["contact"] = r.observation.contact;
  j["us"] = us;
  j["external"] = vec_to_json(r.external);
  Json ph;
  ph["phase"] = phase_label(r.phase.phase);
  ph["entered_at"] = r.phase.entered_at;
  ph["stability"] = r.phase.stability_counter;
  j["phase"] = ph;
  j["verdict"] = verdict_name(r.verdict);
  j["d_min"] = number_or_null(r.d_min);
  return j;
}

DemonstrationRecord record_from_json(const Json& j) {
  if (j.value("kind", "") != "record") throw ConfigError("not a record line");
  DemonstrationRecord r;
  r.t = j.at("t").get<std::int64_t>();
  r.dt = j.at("dt").get<double>();
  r.leader = arm_pair_from_json(j.at("leader"));
  r.commanded = arm_pair_from_json(j.at("commanded"));
  r.executed = arm_pair_from_json(j.at("executed"));
  r.follower = arm_pair_from_json(j.at("follower"));
  const Json& us = j.at("us");
  r.observation.features = vec_from_json(us.at("features"));
  r.observation.plane_quality = us.at("quality").get<double>();
  r.observation.contact = us.at("contact").get<bool>();
  r.external = vec_from_json(j.at("external"));
  const Json& ph = j.at("phase");
  const auto phase = parse_phase(ph.at("phase").get<std::string>());
  if (!phase) throw ConfigError("unknown phase label");
  r.phase = {*phase, ph.at("entered_at").get<std::int64_t>(),
             ph.at("stability").get<int>()};
  const auto verdict = parse_verdict(j.at("verdict").get<std::string>());
  if (!verdict) throw ConfigError("unknown verdict");
  r.verdict = *verdict;
  r.d_min = number_from(j.at("d_min"));
  return r;
}

namespace {

Json header_json(std::uint64_t seed, const std::string& hash, const Json& config) {
  Json h;
  h["kind"] = "header";
  h["format"] = "twinarm-episode";
  h["version"] = kEpisodeFormatVersion;
  h["seed"] = seed;
  h["config_hash"] = hash;
  h["config"] = config;
  return h;
}

Json footer_json(std::size_t count, const std::vector<PhaseTransition>& table,
                 const Json& summary) {
  Json f;
  f["kind"] = "footer";
  f["records"] = count;
  Json t = Json::array();
  for (const auto& tr : table) {
    Json e;
    e["phase"] = phase_label(tr.phase);
    e["tick"] = tr.tick;
    t.push_back(e);
  }
  f["transitions"] = t;
  f["summary"] = summary;
  return f;
}

}  // namespace

EpisodeWriter::EpisodeWriter(const std::filesystem::path& path,
                             std::uint64_t seed, const std::string& config_hash,
                             const Json& config)
    : out_(path), path_(path) {
  if (!out_) throw IoError("cannot write " + path.string());
  out_ << header_json(seed, config_hash, config).dump() << '\n';
  out_.flush();
}

void EpisodeWriter::append(const DemonstrationRecord& r) {
  if (closed_) throw IoError("append to closed episode " + path_.string());
  if (!last_phase_ || *last_phase_ != r.phase.phase) {
    transitions_.push_back({r.phase.phase, r.t});
    last_phase_ = r.phase.phase;
  }
  out_ << record_to_json(r).dump() << '\n';
  out_.flush();
  if (!out_) throw IoError("write failed for " + path_.string());
  ++count_;
}

void EpisodeWriter::close(const Json& summary) {
  if (closed_) return;
  out_ << footer_json(count_, transitions_, summary).dump() << '\n';
  out_.flush();
  closed_ = true;
  if (!out_) throw IoError("write failed for " + path_.string());
}

EpisodeWriter::~EpisodeWriter() {
  try {
    close();
  } catch (...) {
  }
}

void write_episode(const std::filesystem::path& path, const EpisodeLog& log) {
  EpisodeWriter w(path, log.seed, log.config_hash, log.config);
  for (const auto& r : log.records) w.append(r);
  w.close(log.summary);
}

LoadedEpisode read_episode(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_hash) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  LoadedEpisode out;
  EpisodeLog& log = out.log;
  std::string line;
  std::size_t index = 0;
  bool have_footer = false;
  while (std::getline(in, line)) {
    if (have_footer) {
      if (line.empty()) continue;
      throw ParseError(index, "content after footer");
    }
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(index, std::string("malformed line: ") + e.what());
    }
    try {
      const std::string kind = j.value("kind", "");
      if (index == 0) {
        if (kind != "header" || j.value("format", "") != "twinarm-episode") {
          throw ParseError(0, "missing episode header");
        }
        const int version = j.at("version").get<int>();
        if (version != kEpisodeFormatVersion) {
          throw ParseError(0, "unsupported version " + std::to_string(version));
        }
        log.seed = j.at("seed").get<std::uint64_t>();
        log.config_hash = j.at("config_hash").get<std::string>();
        log.config = j.at("config");
      } else if (kind == "record") {
        DemonstrationRecord r = record_from_json(j);
        if (!log.records.empty() && r.t <= log.records.back().t) {
          throw ParseError(index, "timestep not increasing");
        }
        log.records.push_back(std::move(r));
      } else if (kind == "footer") {
        if (j.at("records").get<std::size_t>() != log.records.size()) {
          throw ParseError(index, "footer record count mismatch");
        }
        for (const Json& e : j.at("transitions")) {
          const auto p = parse_phase(e.at("phase").get<std::string>());
          if (!p) throw ParseError(index, "unknown phase in transitions");
          log.transitions.push_back({*p, e.at("tick").get<std::int64_t>()});
        }
        if (log.transitions != transition_table(log.records)) {
          throw ParseError(index, "transition table disagrees with records");
        }
        log.summary = j.at("summary");
        have_footer = true;
      } else {
        throw ParseError(index, "unexpected line kind '" + kind + "'");
      }
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(index, e.what());
    }
    ++index;
  }
  if (index == 0) throw ParseError(0, "empty file");
  if (!have_footer) throw ParseError(index, "missing footer (truncated file)");
  if (expected_hash && *expected_hash != log.config_hash) {
    out.config_hash_mismatch = true;
  }
  return out;
}

Json summarize_episode(const EpisodeLog& log, const SettleCriteria& criteria) {
  Json s;
  s["ticks"] = log.records.size();
  s["duration_s"] = episode_duration(log);
  Json phases;
  const auto durations = phase_durations(log);
  for (int i = 0; i < kNumPhases; ++i) {
    phases[phase_label(phase_from_index(i))] =
        durations[i] ? Json(*durations[i]) : Json(nullptr);
  }
  s["phase_durations_s"] = phases;
  Json arms;
  for (Arm a : kArms) {
    Json arm;
    const LatencyResult lat = endpoint_latency(log, a, criteria);
    arm["settled"] = lat.settled;
    arm["latency_s"] = lat.settled ? Json(lat.latency) : Json(nullptr);
    arm["residual_position_m"] = lat.residual.position;
    arm["residual_angle_deg"] = lat.residual.angle * kRadToDeg;
    const SteadyStateError sse = steady_state_error(log, a, criteria);
    arm["steady_position_m"] = sse.settled ? Json(sse.error.position) : Json(nullptr);
    arm["steady_angle_deg"] =
        sse.settled ? Json(sse.error.angle * kRadToDeg) : Json(nullptr);
    arms[arm_name(a)] = arm;
  }
  s["arms"] = arms;
  return s;
}

}  // namespace twinarm
