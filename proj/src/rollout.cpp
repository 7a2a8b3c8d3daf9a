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

#include "twinarm/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "twinarm/errors.hpp"
#include "twinarm/expert.hpp"
#include "twinarm/pipeline.hpp"

namespace twinarm {

namespace {

Json optional_number(const std::optional<double>& v) {
  return v ? Json(*v) : Json(nullptr);
}

Json stat_to_json(const Stat& s) {
  return {{"n", s.n}, {"mean", s.mean}, {"std", s.std}};
}

}  // namespace

ChunkPolicy policy_from_params(PolicyParams params) {
  return [p = std::move(params)](const PolicyObservation& obs) { return forward(p, obs); };
}

const char* rollout_end_name(RolloutEnd e) {
  switch (e) {
    case RolloutEnd::kSuccess: return "success";
    case RolloutEnd::kMaxSteps: return "max_steps";
    case RolloutEnd::kStall: return "stall";
  }
  return "unknown";
}

RolloutResult rollout(const ChunkPolicy& policy, const RunConfig& config,
                      const Scene& scene,
                      const std::optional<CalibrationSet>& calibration,
                      std::uint64_t seed) {
  const int replan = config.policy.replan;
  const RolloutConfig& rc = config.rollout;
  TeleopPipeline pipe(scene, pipeline_settings(config, scene), calibration, seed);
  RolloutResult out;
  ActionChunk chunk;
  std::deque<ArmPair<Vec3>> window;
  for (int i = 0; i < rc.max_steps; ++i) {
    const int k = i % replan;
    if (k == 0) {
      PolicyObservation obs;
      obs.ultrasound = pipe.observation().features;
      obs.external = pipe.external();
      obs.proprio = pipe.follower();
      obs.phase = pipe.phase().phase;
      chunk = policy(obs);
      if (chunk.horizon() < replan) {
        throw ConfigError("rollout: chunk horizon shorter than the replan interval");
      }
    }
    ArmPair<Pose> targets;
    for (Arm a : kArms) {
      if (!chunk[a].row(k).allFinite() || chunk[a].row(k).tail<4>().norm() == 0.0) {
        throw NumericalError("rollout: policy emitted a non-finite target at tick " +
                             std::to_string(i));
      }
      // Pose construction normalizes the quaternion.
      targets[a] = chunk.pose(a, k);
    }
    out.log.records.push_back(pipe.step_targets(targets));
    out.final_tip_error = pipe.simulator().needle_tip_error();

    if (pipe.phase().phase == Phase::kFineInsertion &&
        out.final_tip_error <= rc.success_tolerance) {
      out.end = RolloutEnd::kSuccess;
      break;
    }
    const ArmPair<Pose>& f = out.log.records.back().follower;
    window.push_back({f.probe.position, f.needle.position});
    if (static_cast<int>(window.size()) > rc.stall_ticks) {
      window.pop_front();
      bool moving = false;
      for (Arm a : kArms) {
        for (const auto& w : window) {
          moving = moving || (w[a] - window.back()[a]).norm() >= rc.stall_motion;
        }
      }
      if (!moving) {
        out.end = RolloutEnd::kStall;
        break;
      }
    }
  }
  finalize_transitions(out.log);
  out.log.seed = seed;
  return out;
}

std::optional<double> fine_stage_error(const EpisodeLog& log, const Scene& scene) {
  const Vec3 a = scene.phantom.prealign_tip();
  const Vec3 ab = scene.phantom.lesion_point - a;
  double sum = 0.0;
  int count = 0;
  for (const DemonstrationRecord& r : log.records) {
    if (r.phase.phase != Phase::kFineInsertion) continue;
    const Vec3 tip = tool_tip(transform_pose(scene.probe_T_needle, r.follower.needle),
                              scene.tools.needle);
    const double u = std::clamp((tip - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    sum += (tip - (a + u * ab)).norm();
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

Stat stat_of(const std::vector<double>& values) {
  Stat s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= s.n;
  if (s.n > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / (s.n - 1));
  }
  return s;
}

EvalSummary evaluate(const ChunkPolicy& policy, const RunConfig& config,
                     const Scene& base,
                     const std::optional<CalibrationSet>& calibration,
                     int episodes) {
  EvalSummary out;
  std::array<std::vector<double>, kNumPhases> durations;
  std::vector<double> fine;
  std::vector<double> tips;
  int successes = 0;
  for (int i = 0; i < episodes; ++i) {
    const Scene scene = episode_scene(base, config.eval.first_seed, i);
    const std::uint64_t seed = config.eval.first_seed + static_cast<std::uint64_t>(i);
    const RolloutResult r = rollout(policy, config, scene, calibration, seed);
    EpisodeMetrics m;
    m.seed = seed;
    m.end = r.end;
    m.final_tip_error = r.final_tip_error;
    m.success = r.final_tip_error <= config.eval.success_threshold;
    m.durations = phase_durations(r.log);
    m.fine_error = fine_stage_error(r.log, scene);
    for (int p = 0; p < kNumPhases; ++p) {
      if (m.durations[p]) durations[p].push_back(*m.durations[p]);
    }
    if (m.fine_error) fine.push_back(*m.fine_error);
    tips.push_back(m.final_tip_error);
    successes += m.success ? 1 : 0;
    out.episodes.push_back(m);
  }
  out.success_rate = episodes > 0 ? static_cast<double>(successes) / episodes : 0.0;
  for (int p = 0; p < kNumPhases; ++p) out.durations[p] = stat_of(durations[p]);
  out.fine_error = stat_of(fine);
  out.final_tip_error = stat_of(tips);
  return out;
}

Json episode_metrics_to_json(const EpisodeMetrics& m) {
  Json j;
  j["seed"] = m.seed;
  j["success"] = m.success;
  j["end"] = rollout_end_name(m.end);
  j["final_tip_error_mm"] = m.final_tip_error * 1e3;
  Json d;
  for (int p = 0; p < kNumPhases; ++p) {
    d[phase_label(phase_from_index(p))] = optional_number(m.durations[p]);
  }
  j["phase_durations_s"] = d;
  j["fine_stage_error_mm"] =
      m.fine_error ? Json(*m.fine_error * 1e3) : Json(nullptr);
  return j;
}

Json eval_summary_to_json(const EvalSummary& s) {
  Json j;
  j["episodes"] = static_cast<int>(s.episodes.size());
  j["success_rate"] = s.success_rate;
  Json d;
  for (int p = 0; p < kNumPhases; ++p) {
    d[phase_label(phase_from_index(p))] = stat_to_json(s.durations[p]);
  }
  j["phase_durations_s"] = d;
  Stat fine = s.fine_error;
  fine.mean *= 1e3;
  fine.std *= 1e3;
  j["fine_stage_error_mm"] = stat_to_json(fine);
  Stat tip = s.final_tip_error;
  tip.mean *= 1e3;
  tip.std *= 1e3;
  j["final_tip_error_mm"] = stat_to_json(tip);
  Json eps = Json::array();
  for (const EpisodeMetrics& m : s.episodes) eps.push_back(episode_metrics_to_json(m));
  j["per_episode"] = eps;
  return j;
}

MaskSchedule ablation_schedule(const std::string& phase, double weight) {
  if (phase == "II") return MaskSchedule::interactive(weight, 1.0);
  if (phase == "IV") return MaskSchedule::interactive(1.0, weight);
  throw ConfigError("ablation.phase must be \"II\" or \"IV\", got \"" + phase + "\"");
}

std::vector<AblationRow> ablate(const Dataset& data, const RunConfig& config,
                                const Scene& base,
                                const std::optional<CalibrationSet>& calibration,
                                const AblationOptions& options) {
  std::vector<AblationRow> rows;
  for (double w : config.ablation.weights) {
    AblationRow row;
    row.weight = w;
    TrainOptions t;
    t.policy = config.policy;
    t.schedule = ablation_schedule(config.ablation.phase, w);
    t.seed = config.seed;
    if (options.on_epoch) {
      t.on_epoch = [&options, w](const EpochLog& e) { options.on_epoch(w, e); };
    }
    try {
      const TrainResult trained = train(data, t);
      row.eval = evaluate(policy_from_params(trained.params), config, base, calibration,
                          config.ablation.trials);
    } catch (const NumericalError& e) {
      row.failed = true;
      row.error = e.what();
    }
    if (options.on_row) options.on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

Json ablation_row_to_json(const AblationRow& r) {
  Json j;
  j["weight"] = r.weight;
  j["status"] = r.failed ? "failed" : "ok";
  if (r.failed) {
    j["error"] = r.error;
    return j;
  }
  const Stat& d2 = r.eval.durations[phase_index(Phase::kAnatomicalScanning)];
  j["phase_II_duration_s"] = stat_to_json(d2);
  Stat fine = r.eval.fine_error;
  fine.mean *= 1e3;
  fine.std *= 1e3;
  j["phase_IV_fine_error_mm"] = stat_to_json(fine);
  j["success_rate"] = r.eval.success_rate;
  j["eval"] = eval_summary_to_json(r.eval);
  return j;
}

}  // namespace twinarm
