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

// Closed-loop policy execution, evaluation over seeded scenes, and the
// mask-weight sweep.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "twinarm/config.hpp"
#include "twinarm/data.hpp"
#include "twinarm/policy.hpp"
#include "twinarm/sim.hpp"

namespace twinarm {

/// Anything that maps an observation to an action chunk.
using ChunkPolicy = std::function<ActionChunk(const PolicyObservation&)>;

ChunkPolicy policy_from_params(PolicyParams params);

enum class RolloutEnd { kSuccess, kMaxSteps, kStall };

const char* rollout_end_name(RolloutEnd e);

struct RolloutResult {
  EpisodeLog log;
  RolloutEnd end = RolloutEnd::kMaxSteps;
  double final_tip_error = 0.0;  // m
};

/// Receding-horizon execution: every `policy.replan` ticks a new chunk is
/// requested and its rows are submitted as targets, one per tick, through
/// smoothing, the safety gate, the simulator and the phase machine.
RolloutResult rollout(const ChunkPolicy& policy, const RunConfig& config,
                      const Scene& scene,
                      const std::optional<CalibrationSet>& calibration,
                      std::uint64_t seed);

/// Mean distance of the needle tip from the planned insertion segment
/// (pre-alignment tip position to lesion) over the Phase-IV records. Empty if
/// Phase IV was never entered.
std::optional<double> fine_stage_error(const EpisodeLog& log, const Scene& scene);

struct EpisodeMetrics {
  std::uint64_t seed = 0;
  bool success = false;
  RolloutEnd end = RolloutEnd::kMaxSteps;
  double final_tip_error = 0.0;
  std::array<std::optional<double>, kNumPhases> durations;
  std::optional<double> fine_error;
};

struct Stat {
  int n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for n < 2
};

Stat stat_of(const std::vector<double>& values);

struct EvalSummary {
  std::vector<EpisodeMetrics> episodes;
  double success_rate = 0.0;
  std::array<Stat, kNumPhases> durations;
  Stat fine_error;
  Stat final_tip_error;
};

/// Rolls out `episodes` scenes episode_scene(base, first_seed, i) with sim
/// seed first_seed + i.
EvalSummary evaluate(const ChunkPolicy& policy, const RunConfig& config,
                     const Scene& base,
                     const std::optional<CalibrationSet>& calibration,
                     int episodes);

Json episode_metrics_to_json(const EpisodeMetrics& m);
Json eval_summary_to_json(const EvalSummary& s);

/// Mask schedule of an ablation row: the swept phase gets `weight` on its
/// active arm, the other interactive phase stays at 1.
MaskSchedule ablation_schedule(const std::string& phase, double weight);

struct AblationRow {
  double weight = 0.0;
  bool failed = false;
  std::string error;
  EvalSummary eval;
};

struct AblationOptions {
  std::function<void(const AblationRow&)> on_row;
  std::function<void(double weight, const EpochLog&)> on_epoch;
};

/// One training run and one evaluation per weight. A training run that
/// fails numerically marks its row failed and the sweep continues.
std::vector<AblationRow> ablate(const Dataset& data, const RunConfig& config,
                                const Scene& base,
                                const std::optional<CalibrationSet>& calibration,
                                const AblationOptions& options = {});

Json ablation_row_to_json(const AblationRow& r);

}  // namespace twinarm
