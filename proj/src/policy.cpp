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

#include "twinarm/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <type_traits>

#include "twinarm/errors.hpp"

namespace twinarm {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace {

template <class S>
using RowVectorX = Eigen::Matrix<S, 1, Eigen::Dynamic>;
template <class S>
using Vector4 = Eigen::Matrix<S, 4, 1>;
template <class S>
using ActionRow = Eigen::Matrix<S, 1, kActionDim>;

template <class S>
struct EncoderCache {
  MatrixX<S> x;   // 1 x n, standardized input
  MatrixX<S> h1;  // 1 x E
};

template <class S>
struct ForwardCache {
  EncoderCache<S> us, ext, pro;
  int phase = 0;
  MatrixX<S> t, q, k, v, a, z, u, g, y;
  ArmPair<MatrixX<S>> qraw;  // H x 4 before normalization
};

template <class S>
MatrixX<S> standardize(const VectorXd& x, const VectorXd& mean, const VectorXd& sd) {
  return ((x - mean).array() / sd.array()).matrix().transpose().cast<S>();
}

template <class S>
MatrixX<S> encode(const EncoderT<S>& e, const MatrixX<S>& x, EncoderCache<S>& c) {
  c.x = x;
  c.h1 = (x * e.w1 + e.b1).array().tanh().matrix();
  return c.h1 * e.w2 + e.b2;
}

template <class S>
void encode_backward(const EncoderT<S>& e, const EncoderCache<S>& c,
                     const MatrixX<S>& de, EncoderT<S>& g) {
  g.w2.noalias() += c.h1.transpose() * de;
  g.b2 += de;
  const MatrixX<S> da =
      ((de * e.w2.transpose()).array() * (S(1) - c.h1.array().square())).matrix();
  g.w1.noalias() += c.x.transpose() * da;
  g.b1 += da;
}

template <class S>
MatrixX<S> softmax_rows(const MatrixX<S>& s) {
  MatrixX<S> out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const S m = s.row(i).maxCoeff();
    const RowVectorX<S> ex = (s.row(i).array() - m).exp().matrix();
    out.row(i) = ex / ex.sum();
  }
  return out;
}

template <class S>
ActionChunkT<S> forward_cached(const PolicyParamsT<S>& p, const PolicyObservation& obs,
                               ForwardCache<S>& c) {
  const InputNormalization& n = p.norm;
  const int h = p.dims.horizon;
  const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(p.dims.embed_dim));
  const S s_p = static_cast<S>(p.position_scale);
  const S s_q = static_cast<S>(p.rotation_scale);

  const VectorXd pro = proprio_vector(obs.proprio, n.reference_orientation);
  MatrixX<S> f = encode(p.us, standardize<S>(obs.ultrasound, n.us_mean, n.us_std), c.us);
  f += encode(p.ext, standardize<S>(obs.external, n.ext_mean, n.ext_std), c.ext);
  f += encode(p.pro, standardize<S>(pro, n.pro_mean, n.pro_std), c.pro);
  c.phase = phase_index(obs.phase);
  f += p.phase_embedding.row(c.phase);

  c.t = p.positional.rowwise() + f.row(0);
  c.q = c.t * p.wq;
  c.k = c.t * p.wk;
  c.v = c.t * p.wv;
  c.a = softmax_rows<S>(c.q * c.k.transpose() * inv_sqrt_d);
  c.z = c.a * c.v;
  c.u = c.t + c.z * p.wo;
  c.g = ((c.u * p.ffn_w1).rowwise() + p.ffn_b1.row(0)).array().tanh().matrix();
  c.y = c.u + ((c.g * p.ffn_w2).rowwise() + p.ffn_b2.row(0));

  ActionChunkT<S> out;
  for (Arm a : kArms) {
    const MatrixX<S>& w = a == Arm::kProbe ? p.probe_w : p.needle_w;
    const MatrixX<S>& b = a == Arm::kProbe ? p.probe_b : p.needle_b;
    const MatrixX<S> r = (c.y * w).rowwise() + b.row(0);
    const Eigen::Matrix<S, 3, 1> base_p = pro.segment<3>(a == Arm::kProbe ? 0 : 7).cast<S>();
    const Vector4<S> base_q = pro.segment<4>(a == Arm::kProbe ? 3 : 10).cast<S>();
    MatrixX<S> chunk(h, kActionDim);
    c.qraw[a].resize(h, 4);
    for (int i = 0; i < h; ++i) {
      chunk.row(i).template head<3>() =
          (base_p + s_p * r.row(i).template head<3>().transpose()).transpose();
      const Vector4<S> qr = base_q + s_q * r.row(i).template tail<4>().transpose();
      c.qraw[a].row(i) = qr.transpose();
      chunk.row(i).template tail<4>() = (qr / qr.norm()).transpose();
    }
    out[a] = std::move(chunk);
  }
  return out;
}

template <class S>
void backward(const PolicyParamsT<S>& p, const ForwardCache<S>& c,
              const ActionChunkT<S>& out, const ActionChunkT<S>& dout,
              PolicyParamsT<S>& g) {
  const int h = p.dims.horizon;
  const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(p.dims.embed_dim));
  const S s_p = static_cast<S>(p.position_scale);
  const S s_q = static_cast<S>(p.rotation_scale);

  MatrixX<S> dy = MatrixX<S>::Zero(h, p.dims.embed_dim);
  for (Arm a : kArms) {
    MatrixX<S> dr(h, kActionDim);
    for (int i = 0; i < h; ++i) {
      dr.row(i).template head<3>() = s_p * dout[a].row(i).template head<3>();
      const Vector4<S> qn = out[a].row(i).template tail<4>().transpose();
      const Vector4<S> dq = dout[a].row(i).template tail<4>().transpose();
      const S norm = c.qraw[a].row(i).norm();
      dr.row(i).template tail<4>() = (s_q * (dq - qn * qn.dot(dq)) / norm).transpose();
    }
    MatrixX<S>& gw = a == Arm::kProbe ? g.probe_w : g.needle_w;
    MatrixX<S>& gb = a == Arm::kProbe ? g.probe_b : g.needle_b;
    const MatrixX<S>& w = a == Arm::kProbe ? p.probe_w : p.needle_w;
    gw.noalias() += c.y.transpose() * dr;
    gb += dr.colwise().sum();
    dy.noalias() += dr * w.transpose();
  }

  g.ffn_w2.noalias() += c.g.transpose() * dy;
  g.ffn_b2 += dy.colwise().sum();
  const MatrixX<S> dpre =
      ((dy * p.ffn_w2.transpose()).array() * (S(1) - c.g.array().square())).matrix();
  g.ffn_w1.noalias() += c.u.transpose() * dpre;
  g.ffn_b1 += dpre.colwise().sum();
  const MatrixX<S> du = dy + dpre * p.ffn_w1.transpose();

  g.wo.noalias() += c.z.transpose() * du;
  const MatrixX<S> dz = du * p.wo.transpose();
  const MatrixX<S> da = dz * c.v.transpose();
  const MatrixX<S> dv = c.a.transpose() * dz;
  MatrixX<S> ds(h, h);
  for (int i = 0; i < h; ++i) {
    const S dot = da.row(i).dot(c.a.row(i));
    ds.row(i) = (c.a.row(i).array() * (da.row(i).array() - dot)).matrix();
  }
  ds *= inv_sqrt_d;
  const MatrixX<S> dq = ds * c.k;
  const MatrixX<S> dk = ds.transpose() * c.q;

  g.wq.noalias() += c.t.transpose() * dq;
  g.wk.noalias() += c.t.transpose() * dk;
  g.wv.noalias() += c.t.transpose() * dv;
  MatrixX<S> dt = du;
  dt.noalias() += dq * p.wq.transpose();
  dt.noalias() += dk * p.wk.transpose();
  dt.noalias() += dv * p.wv.transpose();

  g.positional += dt;
  const MatrixX<S> df = dt.colwise().sum();
  g.phase_embedding.row(c.phase) += df.row(0);
  encode_backward(p.us, c.us, df, g.us);
  encode_backward(p.ext, c.ext, df, g.ext);
  encode_backward(p.pro, c.pro, df, g.pro);
}

/// Mean per-step L1 of each arm, unweighted.
ArmPair<double> arm_errors(const ActionChunk& pred, const ActionChunk& target) {
  ArmPair<double> e;
  for (Arm a : kArms) {
    double s = 0.0;
    for (int i = 0; i < pred.horizon(); ++i) {
      ActionRow<double> t = target[a].row(i);
      if (pred[a].row(i).tail<4>().dot(t.tail<4>()) < 0.0) t.tail<4>() *= -1.0;
      s += (pred[a].row(i) - t).cwiseAbs().sum();
    }
    e[a] = s / pred.horizon();
  }
  return e;
}

void accumulate(PhaseError& acc, Phase phase, const ArmPair<double>& e) {
  const int i = phase_index(phase);
  acc.probe[i] += e.probe;
  acc.needle[i] += e.needle;
  acc.loss[i] += 0.5 * (e.probe + e.needle);
  acc.count[i] += 1;
}

void finish(PhaseError& acc) {
  for (int i = 0; i < kNumPhases; ++i) {
    if (acc.count[i] == 0) continue;
    acc.loss[i] /= acc.count[i];
    acc.probe[i] /= acc.count[i];
    acc.needle[i] /= acc.count[i];
  }
}

template <class S>
S batch_step(const PolicyParamsT<S>& params, const std::vector<const Sample*>& batch,
             const MaskSchedule& schedule, LossKind kind, PolicyParamsT<S>* grad,
             PhaseError* acc) {
  const int h = params.dims.horizon;
  std::vector<ForwardCache<S>> caches(batch.size());
  std::vector<ActionChunkT<S>> preds(batch.size());
  std::vector<ActionChunkT<S>> grads(batch.size());
  S sum = 0;
  double mass = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& s = *batch[i];
    preds[i] = forward_cached(params, s.obs, caches[i]);
    const Eigen::MatrixX2d w = mask_weights({s.obs.phase, 0, 0}, schedule, h);
    sum += weighted_error_sum(preds[i], s.target, w, kind, grad ? &grads[i] : nullptr);
    mass += w.sum();
    if constexpr (std::is_same_v<S, double>) {
      if (acc) accumulate(*acc, s.obs.phase, arm_errors(preds[i], s.target));
    }
  }
  if (grad) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      grads[i].probe /= static_cast<S>(mass);
      grads[i].needle /= static_cast<S>(mass);
      backward(params, caches[i], preds[i], grads[i], *grad);
    }
  }
  return sum / static_cast<S>(mass);
}

Json matrix_to_json(const MatrixXd& m) {
  Json data = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return data;
}

std::vector<MatrixXd*> tensor_list(PolicyParams& p) {
  std::vector<MatrixXd*> out;
  p.for_each_tensor([&out](const std::string&, MatrixXd& t) { out.push_back(&t); });
  return out;
}

void dump_state(const std::optional<std::filesystem::path>& path,
                const PolicyParams& params, const std::string& reason, int epoch,
                std::size_t batch, double loss) {
  if (!path) return;
  Json j;
  j["reason"] = reason;
  j["epoch"] = epoch;
  j["batch"] = batch;
  j["loss"] = std::isfinite(loss) ? Json(loss) : Json(nullptr);
  j["params"] = params_to_json(params);
  try {
    write_json_file(*path, j);
  } catch (const IoError&) {
    // The numerical error is the one worth reporting.
  }
}

}  // namespace

PolicyDims policy_dims(const PolicyConfig& c) {
  return {c.encoder_hidden, c.embed_dim, c.ffn_hidden, c.horizon};
}

PolicyParams init_params(const PolicyDims& dims, double position_scale,
                         double rotation_scale, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto randn = [&](int rows, int cols, double sd) {
    MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) m(r, c) = sd * normal(rng);
    }
    return m;
  };
  auto dense = [&](int in, int out) { return randn(in, out, 1.0 / std::sqrt(in)); };
  const int e = dims.encoder_hidden;
  const int d = dims.embed_dim;
  auto encoder = [&](int in) {
    return Encoder{dense(in, e), MatrixXd::Zero(1, e), dense(e, d), MatrixXd::Zero(1, d)};
  };

  PolicyParams p;
  p.dims = dims;
  p.position_scale = position_scale;
  p.rotation_scale = rotation_scale;
  p.us = encoder(kUltrasoundFeatureDim);
  p.ext = encoder(kExternalFeatureDim);
  p.pro = encoder(kProprioDim);
  p.phase_embedding = randn(kNumPhases, d, 0.5);
  p.positional = randn(dims.horizon, d, 0.5);
  p.wq = dense(d, d);
  p.wk = dense(d, d);
  p.wv = dense(d, d);
  p.wo = dense(d, d) * 0.5;
  p.ffn_w1 = dense(d, dims.ffn_hidden);
  p.ffn_b1 = MatrixXd::Zero(1, dims.ffn_hidden);
  p.ffn_w2 = dense(dims.ffn_hidden, d) * 0.5;
  p.ffn_b2 = MatrixXd::Zero(1, d);
  p.probe_w = randn(d, kActionDim, 0.1 / std::sqrt(d));
  p.probe_b = MatrixXd::Zero(1, kActionDim);
  p.needle_w = randn(d, kActionDim, 0.1 / std::sqrt(d));
  p.needle_b = MatrixXd::Zero(1, kActionDim);
  p.norm.reference_orientation = {Quat(), Quat()};
  return p;
}

VectorXd proprio_vector(const ArmPair<Pose>& poses, const ArmPair<Quat>& reference) {
  VectorXd v(kProprioDim);
  for (Arm a : kArms) {
    const int o = a == Arm::kProbe ? 0 : 7;
    v.segment<3>(o) = poses[a].position;
    v.segment<4>(o + 3) =
        hemisphere_align(reference[a], poses[a].orientation).coeffs_wxyz();
  }
  return v;
}

template <class Scalar>
ActionChunkT<Scalar> forward(const PolicyParamsT<Scalar>& params,
                             const PolicyObservation& obs) {
  ForwardCache<Scalar> c;
  return forward_cached(params, obs, c);
}

template <class Scalar>
Scalar weighted_error_sum(const ActionChunkT<Scalar>& pred, const ActionChunk& target,
                          const Eigen::MatrixX2d& weights, LossKind kind,
                          ActionChunkT<Scalar>* grad) {
  const int h = pred.horizon();
  if (target.horizon() != h || weights.rows() != h) {
    throw ConfigError("masked loss: horizon mismatch");
  }
  if (grad) {
    grad->probe = MatrixX<Scalar>::Zero(h, kActionDim);
    grad->needle = MatrixX<Scalar>::Zero(h, kActionDim);
  }
  Scalar sum = 0;
  for (Arm a : kArms) {
    const int col = a == Arm::kProbe ? 0 : 1;
    for (int i = 0; i < h; ++i) {
      ActionRow<Scalar> t = target[a].row(i).cast<Scalar>();
      if (pred[a].row(i).template tail<4>().dot(t.template tail<4>()) < 0) {
        t.template tail<4>() *= Scalar(-1);
      }
      const ActionRow<Scalar> e = pred[a].row(i) - t;
      const Scalar w = static_cast<Scalar>(weights(i, col));
      if (kind == LossKind::kL1) {
        sum += w * e.cwiseAbs().sum();
        if (grad) (*grad)[a].row(i) = w * e.array().sign().matrix();
      } else {
        sum += w * e.squaredNorm();
        if (grad) (*grad)[a].row(i) = Scalar(2) * w * e;
      }
    }
  }
  return sum;
}

template <class Scalar>
Scalar masked_loss(const ActionChunkT<Scalar>& pred, const ActionChunk& target,
                   const Eigen::MatrixX2d& weights, LossKind kind) {
  return weighted_error_sum<Scalar>(pred, target, weights, kind) /
         static_cast<Scalar>(weights.sum());
}

template <class Scalar>
Scalar batch_loss(const PolicyParamsT<Scalar>& params,
                  const std::vector<const Sample*>& batch,
                  const MaskSchedule& schedule, LossKind kind,
                  PolicyParamsT<Scalar>* grad) {
  return batch_step(params, batch, schedule, kind, grad, nullptr);
}

#define TWINARM_INSTANTIATE(S)                                                    \
  template ActionChunkT<S> forward<S>(const PolicyParamsT<S>&,                    \
                                      const PolicyObservation&);                  \
  template S weighted_error_sum<S>(const ActionChunkT<S>&, const ActionChunk&,    \
                                   const Eigen::MatrixX2d&, LossKind,             \
                                   ActionChunkT<S>*);                             \
  template S masked_loss<S>(const ActionChunkT<S>&, const ActionChunk&,           \
                            const Eigen::MatrixX2d&, LossKind);                   \
  template S batch_loss<S>(const PolicyParamsT<S>&, const std::vector<const Sample*>&, \
                           const MaskSchedule&, LossKind, PolicyParamsT<S>*);
TWINARM_INSTANTIATE(double)
TWINARM_INSTANTIATE(long double)
#undef TWINARM_INSTANTIATE

Dataset build_dataset(const std::vector<EpisodeLog>& episodes, int horizon,
                      int stride) {
  if (horizon < 1 || stride < 1) throw ConfigError("dataset: horizon, stride >= 1");
  Dataset data;
  data.horizon = horizon;
  for (const EpisodeLog& ep : episodes) {
    const auto& r = ep.records;
    const int n = static_cast<int>(r.size());
    for (int t = 1; t < n; t += stride) {
      Sample s;
      const DemonstrationRecord& seen = r[t - 1];
      s.obs.ultrasound = seen.observation.features;
      s.obs.external = seen.external;
      s.obs.proprio = seen.follower;
      s.obs.phase = seen.phase.phase;
      if (s.obs.ultrasound.size() != kUltrasoundFeatureDim ||
          s.obs.external.size() != kExternalFeatureDim) {
        throw ConfigError("dataset: record " + std::to_string(t - 1) +
                          " has unexpected feature sizes");
      }
      for (Arm a : kArms) {
        MatrixXd m(horizon, kActionDim);
        for (int k = 0; k < horizon; ++k) {
          const Pose& c = r[std::min(t + k, n - 1)].commanded[a];
          m.row(k).head<3>() = c.position.transpose();
          m.row(k).tail<4>() = c.orientation.coeffs_wxyz().transpose();
        }
        s.target[a] = std::move(m);
      }
      data.samples.push_back(std::move(s));
    }
  }
  return data;
}

InputNormalization fit_normalization(const Dataset& data) {
  InputNormalization n;
  if (data.samples.empty()) return n;
  n.reference_orientation = {data.samples.front().obs.proprio.probe.orientation,
                             data.samples.front().obs.proprio.needle.orientation};
  auto fit = [&](auto get, int dim, double floor, VectorXd& mean, VectorXd& sd) {
    mean = VectorXd::Zero(dim);
    VectorXd sq = VectorXd::Zero(dim);
    for (const Sample& s : data.samples) {
      const VectorXd x = get(s);
      mean += x;
      sq += x.cwiseProduct(x);
    }
    const double count = static_cast<double>(data.samples.size());
    mean /= count;
    sd = (sq / count - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
    sd = sd.cwiseMax(floor);
  };
  fit([](const Sample& s) { return s.obs.ultrasound; }, kUltrasoundFeatureDim, 0.05,
      n.us_mean, n.us_std);
  fit([](const Sample& s) { return s.obs.external; }, kExternalFeatureDim, 0.05,
      n.ext_mean, n.ext_std);
  const ArmPair<Quat> ref = n.reference_orientation;
  fit([&ref](const Sample& s) { return proprio_vector(s.obs.proprio, ref); },
      kProprioDim, 0.01, n.pro_mean, n.pro_std);
  return n;
}

Json epoch_log_to_json(const EpochLog& e) {
  Json j;
  j["epoch"] = e.epoch;
  j["weighted_loss"] = e.weighted_loss;
  Json phases;
  for (int i = 0; i < kNumPhases; ++i) {
    Json p;
    p["samples"] = e.phase.count[i];
    p["loss"] = e.phase.loss[i];
    p["probe"] = e.phase.probe[i];
    p["needle"] = e.phase.needle[i];
    phases[phase_label(phase_from_index(i))] = p;
  }
  j["phases"] = phases;
  return j;
}

PhaseError evaluate_phase_error(const PolicyParams& params, const Dataset& data) {
  PhaseError acc;
  for (const Sample& s : data.samples) {
    accumulate(acc, s.obs.phase, arm_errors(forward(params, s.obs), s.target));
  }
  finish(acc);
  return acc;
}

TrainResult train(const Dataset& data, const TrainOptions& options) {
  if (data.samples.empty()) throw ConfigError("train: dataset is empty");
  const PolicyConfig& pc = options.policy;
  if (data.horizon != pc.horizon) throw ConfigError("train: horizon mismatch");
  for (int i = 0; i < kNumPhases; ++i) options.schedule.at(phase_from_index(i));

  TrainResult res;
  res.params = init_params(policy_dims(pc), pc.position_scale, pc.rotation_scale,
                           options.seed);
  res.params.norm = fit_normalization(data);
  PolicyParams m = res.params.zeros_like();
  PolicyParams v = res.params.zeros_like();
  PolicyParams g = res.params.zeros_like();
  const std::vector<MatrixXd*> pt = tensor_list(res.params);
  const std::vector<MatrixXd*> mt = tensor_list(m);
  const std::vector<MatrixXd*> vt = tensor_list(v);
  const std::vector<MatrixXd*> gt = tensor_list(g);

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  Rng rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(pc.batch_size);
  long step = 0;

  for (int epoch = 0; epoch < pc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    // Cosine decay to a tenth of the base rate.
    const double progress = pc.epochs > 1 ? static_cast<double>(epoch) / (pc.epochs - 1) : 1.0;
    const double lr = pc.learning_rate *
                      (0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * progress)));
    EpochLog log;
    log.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<const Sample*> batch;
      for (std::size_t i = start; i < std::min(start + bs, order.size()); ++i) {
        batch.push_back(&data.samples[order[i]]);
      }
      for (MatrixXd* t : gt) t->setZero();
      const double loss =
          batch_step(res.params, batch, options.schedule, pc.loss, &g, &log.phase);
      if (!std::isfinite(loss)) {
        dump_state(options.dump_path, res.params, "non-finite loss", epoch, batches, loss);
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batches));
      }
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t i = 0; i < pt.size(); ++i) {
        *mt[i] = kBeta1 * *mt[i] + (1.0 - kBeta1) * *gt[i];
        *vt[i] = kBeta2 * *vt[i] + (1.0 - kBeta2) * gt[i]->cwiseProduct(*gt[i]);
        pt[i]->array() -= lr * (mt[i]->array() / c1) /
                          ((vt[i]->array() / c2).sqrt() + kEps);
      }
      if (!res.params.all_finite()) {
        dump_state(options.dump_path, res.params, "non-finite parameters", epoch,
                   batches, loss);
        throw NumericalError("train: non-finite parameters at epoch " +
                             std::to_string(epoch));
      }
      loss_sum += loss;
      ++batches;
    }
    finish(log.phase);
    log.weighted_loss = loss_sum / static_cast<double>(batches);
    if (options.on_epoch) options.on_epoch(log);
    res.log.push_back(log);
  }
  res.final_error = evaluate_phase_error(res.params, data);
  return res;
}

Json params_to_json(const PolicyParams& p) {
  Json j;
  j["dims"] = {{"encoder_hidden", p.dims.encoder_hidden},
               {"embed_dim", p.dims.embed_dim},
               {"ffn_hidden", p.dims.ffn_hidden},
               {"horizon", p.dims.horizon}};
  j["position_scale"] = p.position_scale;
  j["rotation_scale"] = p.rotation_scale;
  const InputNormalization& n = p.norm;
  j["normalization"] = {{"us_mean", vec_to_json(n.us_mean)},
                        {"us_std", vec_to_json(n.us_std)},
                        {"ext_mean", vec_to_json(n.ext_mean)},
                        {"ext_std", vec_to_json(n.ext_std)},
                        {"proprio_mean", vec_to_json(n.pro_mean)},
                        {"proprio_std", vec_to_json(n.pro_std)},
                        {"reference_probe", quat_to_json(n.reference_orientation.probe)},
                        {"reference_needle", quat_to_json(n.reference_orientation.needle)}};
  Json tensors = Json::array();
  p.for_each_tensor([&tensors](const std::string& name, const MatrixXd& t) {
    Json e;
    e["name"] = name;
    e["shape"] = {t.rows(), t.cols()};
    e["data"] = matrix_to_json(t);
    tensors.push_back(e);
  });
  j["tensors"] = tensors;
  return j;
}

PolicyParams params_from_json(const Json& j) {
  PolicyParams p;
  try {
    const Json& d = j.at("dims");
    p.dims = {d.at("encoder_hidden").get<int>(), d.at("embed_dim").get<int>(),
              d.at("ffn_hidden").get<int>(), d.at("horizon").get<int>()};
    p = init_params(p.dims, j.at("position_scale").get<double>(),
                    j.at("rotation_scale").get<double>(), 0);
    const Json& n = j.at("normalization");
    p.norm.us_mean = vec_from_json(n.at("us_mean"));
    p.norm.us_std = vec_from_json(n.at("us_std"));
    p.norm.ext_mean = vec_from_json(n.at("ext_mean"));
    p.norm.ext_std = vec_from_json(n.at("ext_std"));
    p.norm.pro_mean = vec_from_json(n.at("proprio_mean"));
    p.norm.pro_std = vec_from_json(n.at("proprio_std"));
    p.norm.reference_orientation = {quat_from_json(n.at("reference_probe")),
                                    quat_from_json(n.at("reference_needle"))};
  } catch (const Json::exception& e) {
    throw ParseError(0, std::string("policy header: ") + e.what());
  }
  const Json& tensors = j.at("tensors");
  std::size_t index = 0;
  p.for_each_tensor([&](const std::string& name, MatrixXd& t) {
    if (index >= tensors.size()) throw ParseError(index + 1, "missing tensor " + name);
    const Json& e = tensors[index];
    try {
      if (e.at("name").get<std::string>() != name) {
        throw ParseError(index + 1, "expected tensor " + name);
      }
      const auto shape = e.at("shape").get<std::vector<long>>();
      if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols()) {
        throw ParseError(index + 1, "shape mismatch for " + name);
      }
      const Json& data = e.at("data");
      if (data.size() != static_cast<std::size_t>(t.size())) {
        throw ParseError(index + 1, "data size mismatch for " + name);
      }
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < t.rows(); ++r) {
        for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = data[k++].get<double>();
      }
    } catch (const Json::exception& ex) {
      throw ParseError(index + 1, name + ": " + ex.what());
    }
    ++index;
  });
  if (index != tensors.size()) throw ParseError(index + 1, "unexpected extra tensors");
  if (!p.all_finite()) throw NumericalError("policy parameters contain NaN/Inf");
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  Json j;
  j["format"] = "twinarm-policy";
  j["version"] = kPolicyFormatVersion;
  j["seed"] = c.seed;
  j["config_hash"] = c.config_hash;
  j["config"] = c.config;
  j["params"] = params_to_json(c.params);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(0, std::string("malformed checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "twinarm-policy") throw ParseError(0, "not a policy checkpoint");
  if (j.value("version", -1) != kPolicyFormatVersion) {
    throw ParseError(0, "unsupported checkpoint version");
  }
  Checkpoint c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.config_hash = j.at("config_hash").get<std::string>();
    c.config = j.at("config");
  } catch (const Json::exception& e) {
    throw ParseError(0, e.what());
  }
  c.params = params_from_json(j.at("params"));
  return c;
}

}  // namespace twinarm
