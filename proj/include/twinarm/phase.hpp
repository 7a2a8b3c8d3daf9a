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

// Four-phase procedural state machine and the per-phase loss-weight schedule.
//
//   I   probe gross positioning   -> II  once the probe is in contact with a
//                                        usable image (quality >= contact min)
//   II  anatomical scanning       -> III once quality >= plane min has held for
//                                        plane_hold_steps consecutive ticks
//   III needle pre-alignment      -> IV  once the needle axis is within
//                                        alignment_distance_max of the plan
//   IV  fine insertion            (terminal)

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "twinarm/geo.hpp"

namespace twinarm {

enum class Phase : int {
  kProbeGrossPositioning = 0,
  kAnatomicalScanning = 1,
  kNeedlePrealignment = 2,
  kFineInsertion = 3,
};

inline constexpr int kNumPhases = 4;

inline int phase_index(Phase p) { return static_cast<int>(p); }
inline Phase phase_from_index(int i) { return static_cast<Phase>(i); }

/// "I".."IV".
const char* phase_label(Phase p);
std::optional<Phase> parse_phase(const std::string& label);

struct PhaseState {
  Phase phase = Phase::kProbeGrossPositioning;
  std::int64_t entered_at = 0;
  int stability_counter = 0;

  friend bool operator==(const PhaseState&, const PhaseState&) = default;
};

struct PhaseTriggers {
  double contact_quality_min = 0.2;
  double plane_quality_min = 0.8;
  int plane_hold_steps = 15;
  double alignment_distance_max = 0.005;  // m

  /// Throws ConfigError for non-positive thresholds.
  void validate() const;
};

/// Per-tick signals the machine consumes.
struct PhaseSignals {
  bool contact = false;
  double plane_quality = 0.0;
  /// Needle axis distance to the planned insertion line (m).
  double alignment_distance = 1e9;
};

/// Pure transition: advances at most one phase per call. Entering II starts
/// the hold counter at zero; only ticks spent in II count towards the hold.
PhaseState transition(const PhaseState& state, const PhaseSignals& signals,
                      const PhaseTriggers& triggers, std::int64_t tick);

/// Loss weights per (phase, arm). A missing phase is a configuration error
/// when its weights are requested.
class MaskSchedule {
 public:
  MaskSchedule() = default;

  /// Transit phases and idle arms weigh 1; the active arm of Phase II (probe)
  /// and Phase IV (needle) gets the given weights.
  static MaskSchedule interactive(double phase2_weight, double phase4_weight);

  void set(Phase phase, const ArmPair<double>& weights);
  void erase(Phase phase) { entries_[phase_index(phase)].reset(); }
  bool has(Phase phase) const { return entries_[phase_index(phase)].has_value(); }
  /// Throws ConfigError if the phase is missing.
  const ArmPair<double>& at(Phase phase) const;
  MaskSchedule scaled(double k) const;

 private:
  std::array<std::optional<ArmPair<double>>, kNumPhases> entries_;
};

/// horizon x 2 weights (column 0 probe, column 1 needle), constant over the
/// horizon and selected by the current phase.
Eigen::MatrixX2d mask_weights(const PhaseState& state,
                              const MaskSchedule& schedule, int horizon);

}  // namespace twinarm
