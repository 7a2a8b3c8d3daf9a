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

#include "twinarm/phase.hpp"

#include "twinarm/errors.hpp"

namespace twinarm {

const char* phase_label(Phase p) {
  switch (p) {
    case Phase::kProbeGrossPositioning:
      return "I";
    case Phase::kAnatomicalScanning:
      return "II";
    case Phase::kNeedlePrealignment:
      return "III";
    case Phase::kFineInsertion:
      return "IV";
  }
  return "?";
}

std::optional<Phase> parse_phase(const std::string& label) {
  for (int i = 0; i < kNumPhases; ++i) {
    if (label == phase_label(phase_from_index(i))) return phase_from_index(i);
  }
  return std::nullopt;
}

void PhaseTriggers::validate() const {
  if (!(contact_quality_min > 0.0) || !(plane_quality_min > 0.0) ||
      !(alignment_distance_max > 0.0)) {
    throw ConfigError("phase triggers: thresholds must be positive");
  }
  if (plane_hold_steps < 1) {
    throw ConfigError("phase triggers: plane_hold_steps must be >= 1");
  }
}

PhaseState transition(const PhaseState& state, const PhaseSignals& signals,
                      const PhaseTriggers& triggers, std::int64_t tick) {
  PhaseState next = state;
  switch (state.phase) {
    case Phase::kProbeGrossPositioning:
      if (signals.contact &&
          signals.plane_quality >= triggers.contact_quality_min) {
        next = {Phase::kAnatomicalScanning, tick, 0};
      }
      break;
    case Phase::kAnatomicalScanning:
      if (signals.plane_quality >= triggers.plane_quality_min) {
        next.stability_counter = state.stability_counter + 1;
        if (next.stability_counter >= triggers.plane_hold_steps) {
          next = {Phase::kNeedlePrealignment, tick, 0};
        }
      } else {
        next.stability_counter = 0;
      }
      break;
    case Phase::kNeedlePrealignment:
      if (signals.alignment_distance <= triggers.alignment_distance_max) {
        next = {Phase::kFineInsertion, tick, 0};
      }
      break;
    case Phase::kFineInsertion:
      break;
  }
  return next;
}

MaskSchedule MaskSchedule::interactive(double phase2_weight,
                                       double phase4_weight) {
  MaskSchedule s;
  s.set(Phase::kProbeGrossPositioning, {1.0, 1.0});
  s.set(Phase::kAnatomicalScanning, {phase2_weight, 1.0});
  s.set(Phase::kNeedlePrealignment, {1.0, 1.0});
  s.set(Phase::kFineInsertion, {1.0, phase4_weight});
  return s;
}

void MaskSchedule::set(Phase phase, const ArmPair<double>& weights) {
  if (!(weights.probe > 0.0) || !(weights.needle > 0.0)) {
    throw ConfigError(std::string("mask schedule: weights must be positive in ") +
                      "phase " + phase_label(phase));
  }
  entries_[phase_index(phase)] = weights;
}

const ArmPair<double>& MaskSchedule::at(Phase phase) const {
  const auto& e = entries_[phase_index(phase)];
  if (!e) {
    throw ConfigError(std::string("mask schedule: no weights for phase ") +
                      phase_label(phase));
  }
  return *e;
}

MaskSchedule MaskSchedule::scaled(double k) const {
  MaskSchedule out;
  for (int i = 0; i < kNumPhases; ++i) {
    if (entries_[i]) {
      out.set(phase_from_index(i), {entries_[i]->probe * k, entries_[i]->needle * k});
    }
  }
  return out;
}

Eigen::MatrixX2d mask_weights(const PhaseState& state,
                              const MaskSchedule& schedule, int horizon) {
  const ArmPair<double>& w = schedule.at(state.phase);
  Eigen::MatrixX2d m(horizon, 2);
  m.col(0).setConstant(w.probe);
  m.col(1).setConstant(w.needle);
  return m;
}

}  // namespace twinarm
