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

// Phase-aware action-chunking policy at toy scale.
//
// Row-vector conventions throughout (x is 1 x n, layers compute x W + b).
//
//   e_m = tanh(norm(x_m) W1_m + b1_m) W2_m + b2_m     m in {us, ext, proprio}
//   f   = e_us + e_ext + e_proprio + E[phase]          E: 4 x D
//   T   = 1 f + P                                      P: H x D positions
//   U   = T + softmax(T Wq (T Wk)^T / sqrt(D)) T Wv Wo
//   Y   = U + tanh(U F1 + b1) F2 + b2
//   R_a = Y W_a + b_a                                  a in {probe, needle}
//
// Each row of R_a is a residual on the arm's current pose: position
// p + s_p R[0:3], orientation normalize(q + s_q R[3:7]).

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "twinarm/config.hpp"
#include "twinarm/data.hpp"
#include "twinarm/geo.hpp"
#include "twinarm/phase.hpp"
#include "twinarm/sim.hpp"

namespace twinarm {

inline constexpr int kProprioDim = 14;
inline constexpr int kActionDim = 7;
inline constexpr int kPolicyFormatVersion = 1;

struct PolicyObservation {
  Eigen::VectorXd ultrasound = Eigen::VectorXd::Zero(kUltrasoundFeatureDim);
  Eigen::VectorXd external = Eigen::VectorXd::Zero(kExternalFeatureDim);
  ArmPair<Pose> proprio;
  Phase phase = Phase::kProbeGrossPositioning;
};

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// H x 7 rows of [px, py, pz, qw, qx, qy, qz] per arm.
template <class Scalar>
struct ActionChunkT {
  MatrixX<Scalar> probe;
  MatrixX<Scalar> needle;

  int horizon() const { return static_cast<int>(probe.rows()); }
  MatrixX<Scalar>& operator[](Arm a) { return a == Arm::kProbe ? probe : needle; }
  const MatrixX<Scalar>& operator[](Arm a) const {
    return a == Arm::kProbe ? probe : needle;
  }
  Pose pose(Arm a, int k) const {
    const auto& m = (*this)[a];
    auto d = [&m, k](int j) { return static_cast<double>(m(k, j)); };
    return {Vec3(d(0), d(1), d(2)), Quat(d(3), d(4), d(5), d(6))};
  }
};

using ActionChunk = ActionChunkT<double>;

struct PolicyDims {
  int encoder_hidden = 32;
  int embed_dim = 24;
  int ffn_hidden = 48;
  int horizon = 20;
};

/// Fixed input standardization, estimated from the training set.
struct InputNormalization {
  Eigen::VectorXd us_mean = Eigen::VectorXd::Zero(kUltrasoundFeatureDim);
  Eigen::VectorXd us_std = Eigen::VectorXd::Ones(kUltrasoundFeatureDim);
  Eigen::VectorXd ext_mean = Eigen::VectorXd::Zero(kExternalFeatureDim);
  Eigen::VectorXd ext_std = Eigen::VectorXd::Ones(kExternalFeatureDim);
  Eigen::VectorXd pro_mean = Eigen::VectorXd::Zero(kProprioDim);
  Eigen::VectorXd pro_std = Eigen::VectorXd::Ones(kProprioDim);
  /// Proprio quaternions are sign-aligned to these before standardizing.
  ArmPair<Quat> reference_orientation;
};

template <class Scalar>
struct EncoderT {
  MatrixX<Scalar> w1, b1, w2, b2;
};

/// Trainable tensors plus the fixed normalization and output scales. Scalar
/// is double for training; the finite-difference oracle evaluates the loss
/// in long double.
template <class Scalar>
struct PolicyParamsT {
  PolicyDims dims;
  double position_scale = 0.05;
  double rotation_scale = 0.1;
  InputNormalization norm;

  EncoderT<Scalar> us, ext, pro;
  MatrixX<Scalar> phase_embedding;  // 4 x D
  MatrixX<Scalar> positional;       // H x D
  MatrixX<Scalar> wq, wk, wv, wo;   // D x D
  MatrixX<Scalar> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  MatrixX<Scalar> probe_w, probe_b, needle_w, needle_b;  // D x 7, 1 x 7

  /// Visits trainable tensors in a fixed order.
  template <class F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  template <class T>
  PolicyParamsT<T> cast() const {
    PolicyParamsT<T> out;
    out.dims = dims;
    out.position_scale = position_scale;
    out.rotation_scale = rotation_scale;
    out.norm = norm;
    std::vector<const MatrixX<Scalar>*> src;
    for_each_tensor([&src](const std::string&, const MatrixX<Scalar>& t) {
      src.push_back(&t);
    });
    std::size_t i = 0;
    out.for_each_tensor([&](const std::string&, MatrixX<T>& t) {
      t = src[i++]->template cast<T>();
    });
    return out;
  }

  /// Same shapes, all zeros (gradient or optimizer moments).
  PolicyParamsT zeros_like() const {
    PolicyParamsT z = *this;
    z.for_each_tensor([](const std::string&, MatrixX<Scalar>& t) { t.setZero(); });
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&n](const std::string&, const MatrixX<Scalar>& t) {
      n += static_cast<std::size_t>(t.size());
    });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&ok](const std::string&, const MatrixX<Scalar>& t) {
      ok = ok && t.allFinite();
    });
    return ok;
  }

 private:
  template <class Self, class F>
  static void visit(Self& s, F& f) {
    auto enc = [&f](const std::string& p, auto& e) {
      f(p + ".w1", e.w1);
      f(p + ".b1", e.b1);
      f(p + ".w2", e.w2);
      f(p + ".b2", e.b2);
    };
    enc("encoder.us", s.us);
    enc("encoder.ext", s.ext);
    enc("encoder.proprio", s.pro);
    f(std::string("phase_embedding"), s.phase_embedding);
    f(std::string("trunk.positional"), s.positional);
    f(std::string("trunk.wq"), s.wq);
    f(std::string("trunk.wk"), s.wk);
    f(std::string("trunk.wv"), s.wv);
    f(std::string("trunk.wo"), s.wo);
    f(std::string("trunk.ffn_w1"), s.ffn_w1);
    f(std::string("trunk.ffn_b1"), s.ffn_b1);
    f(std::string("trunk.ffn_w2"), s.ffn_w2);
    f(std::string("trunk.ffn_b2"), s.ffn_b2);
    f(std::string("head.probe.w"), s.probe_w);
    f(std::string("head.probe.b"), s.probe_b);
    f(std::string("head.needle.w"), s.needle_w);
    f(std::string("head.needle.b"), s.needle_b);
  }
};

using Encoder = EncoderT<double>;
using PolicyParams = PolicyParamsT<double>;

PolicyParams init_params(const PolicyDims& dims, double position_scale,
                         double rotation_scale, std::uint64_t seed);
PolicyDims policy_dims(const PolicyConfig& c);

/// Proprio vector [p_probe, q_probe, p_needle, q_needle] with quaternions
/// sign-aligned to the references.
Eigen::VectorXd proprio_vector(const ArmPair<Pose>& poses,
                               const ArmPair<Quat>& reference);

/// Instantiated for double and long double.
template <class Scalar>
ActionChunkT<Scalar> forward(const PolicyParamsT<Scalar>& params,
                             const PolicyObservation& obs);

/// Unnormalized sum over (timestep, arm) of weight times the per-element
/// error (L1: |e|, L2: e^2) between pred and target; target quaternions are
/// sign-aligned to pred first. `grad`, if given, receives d(sum)/d(pred).
template <class Scalar>
Scalar weighted_error_sum(const ActionChunkT<Scalar>& pred, const ActionChunk& target,
                          const Eigen::MatrixX2d& weights, LossKind kind,
                          ActionChunkT<Scalar>* grad = nullptr);

/// weighted_error_sum normalized by the total weight mass.
template <class Scalar>
Scalar masked_loss(const ActionChunkT<Scalar>& pred, const ActionChunk& target,
                   const Eigen::MatrixX2d& weights, LossKind kind = LossKind::kL1);

struct Sample {
  PolicyObservation obs;
  ActionChunk target;
};

/// Batch loss sum_i S_i / sum_i W_i with S_i = weighted_error_sum and W_i the
/// weight mass; gradient accumulated into `grad` (zeros_like shape) if given.
template <class Scalar>
Scalar batch_loss(const PolicyParamsT<Scalar>& params,
                  const std::vector<const Sample*>& batch,
                  const MaskSchedule& schedule, LossKind kind,
                  PolicyParamsT<Scalar>* grad = nullptr);

struct Dataset {
  std::vector<Sample> samples;
  int horizon = 0;
};

/// One sample per `stride` ticks. The observation comes from the record
/// before tick t (what the operator saw), the target chunk from the
/// commanded poses of ticks t..t+H-1, padded with the last command.
Dataset build_dataset(const std::vector<EpisodeLog>& episodes, int horizon,
                      int stride);

InputNormalization fit_normalization(const Dataset& data);

struct PhaseError {
  std::array<double, kNumPhases> loss{};    // unweighted, both arms
  std::array<double, kNumPhases> probe{};   // per-arm mean per-step L1
  std::array<double, kNumPhases> needle{};
  std::array<int, kNumPhases> count{};
};

struct EpochLog {
  int epoch = 0;
  double weighted_loss = 0.0;
  PhaseError phase;
};

Json epoch_log_to_json(const EpochLog& e);

struct TrainOptions {
  PolicyConfig policy;
  MaskSchedule schedule = MaskSchedule::interactive(1.0, 1.0);
  std::uint64_t seed = 1;
  /// Where to write parameters and batch state if the loss turns non-finite.
  std::optional<std::filesystem::path> dump_path;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  PolicyParams params;
  std::vector<EpochLog> log;
  PhaseError final_error;  // on the full dataset after training
};

/// Minibatch Adam on masked_loss. Throws NumericalError (after dumping) on a
/// non-finite loss or parameter.
TrainResult train(const Dataset& data, const TrainOptions& options);

PhaseError evaluate_phase_error(const PolicyParams& params, const Dataset& data);

Json params_to_json(const PolicyParams& params);
PolicyParams params_from_json(const Json& j);

struct Checkpoint {
  PolicyParams params;
  std::uint64_t seed = 0;
  std::string config_hash;
  Json config = Json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
/// Throws ParseError / IoError / ConfigError on malformed or mismatched files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace twinarm
