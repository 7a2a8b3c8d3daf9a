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

#include <cmath>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "oracle.hpp"
#include "twinarm/errors.hpp"
#include "twinarm/expert.hpp"
#include "twinarm/policy.hpp"

using namespace twinarm;
using twinarm::testing::random_pose;
using twinarm::testing::ScratchDir;

namespace {

PolicyDims tiny_dims() { return {6, 5, 7, 4}; }

PolicyObservation random_obs(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  PolicyObservation o;
  for (int i = 0; i < o.ultrasound.size(); ++i) o.ultrasound[i] = n(rng);
  for (int i = 0; i < o.external.size(); ++i) o.external[i] = n(rng);
  o.proprio = {random_pose(rng, 0.3), random_pose(rng, 0.3)};
  o.phase = phase_from_index(static_cast<int>(rng() % kNumPhases));
  return o;
}

ActionChunk constant_chunk(const ArmPair<Pose>& poses, int h) {
  ActionChunk c;
  for (Arm a : kArms) {
    c[a].resize(h, kActionDim);
    for (int k = 0; k < h; ++k) {
      c[a].row(k).head<3>() = poses[a].position.transpose();
      c[a].row(k).tail<4>() = poses[a].orientation.coeffs_wxyz().transpose();
    }
  }
  return c;
}

// A short demonstration set from the scripted expert.
const Dataset& small_dataset() {
  static const Dataset data = [] {
    RunConfig c = run_config_from_json(Json::object());
    const Scene base = reference_scene();
    std::vector<EpisodeLog> logs;
    for (int i = 0; i < 2; ++i) {
      const Scene s = episode_scene(base, 5, i);
      logs.push_back(run_expert_episode(c, s, synthesize_calibration(s), 5 + i).log);
    }
    return build_dataset(logs, tiny_dims().horizon, 4);
  }();
  return data;
}

PolicyConfig tiny_policy(int epochs) {
  PolicyConfig p;
  const PolicyDims d = tiny_dims();
  p.encoder_hidden = d.encoder_hidden;
  p.embed_dim = d.embed_dim;
  p.ffn_hidden = d.ffn_hidden;
  p.horizon = d.horizon;
  p.replan = 2;
  p.epochs = epochs;
  p.batch_size = 16;
  return p;
}

}  // namespace

TEST_SUITE("policy") {
  TEST_CASE("forward shapes and unit quaternions") {
    Rng rng(51);
    const PolicyParams p = init_params(tiny_dims(), 0.05, 0.1, 3);
    for (int i = 0; i < 20; ++i) {
      const ActionChunk c = forward(p, random_obs(rng));
      CHECK(c.horizon() == 4);
      for (Arm a : kArms) {
        CHECK(c[a].cols() == kActionDim);
        for (int k = 0; k < 4; ++k) {
          CHECK(std::abs(c[a].row(k).tail<4>().norm() - 1.0) <= 1e-12);
        }
      }
    }
  }

  TEST_CASE("zero heads reproduce the current pose") {
    Rng rng(52);
    PolicyParams p = init_params(tiny_dims(), 0.05, 0.1, 4);
    p.probe_w.setZero();
    p.needle_w.setZero();
    const PolicyObservation o = random_obs(rng);
    const ActionChunk c = forward(p, o);
    for (Arm a : kArms) {
      for (int k = 0; k < 4; ++k) {
        const Pose got = c.pose(a, k);
        CHECK((got.position - o.proprio[a].position).norm() <= 1e-15);
        CHECK(geodesic_distance(got.orientation, o.proprio[a].orientation) <= 1e-12);
      }
    }
  }

  TEST_CASE("forward agrees between double and long double") {
    Rng rng(53);
    const PolicyParams p = init_params(tiny_dims(), 0.05, 0.1, 5);
    const PolicyParamsT<long double> pl = p.cast<long double>();
    const PolicyObservation o = random_obs(rng);
    const ActionChunk a = forward(p, o);
    const auto b = forward(pl, o);
    CHECK((a.probe - b.probe.cast<double>()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((a.needle - b.needle.cast<double>()).cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("masked loss weights and normalization") {
    const ArmPair<Pose> poses{Pose{Vec3(0.1, 0, 0), Quat()}, Pose{Vec3(0, 0.2, 0), Quat()}};
    const ActionChunk target = constant_chunk(poses, 3);
    ActionChunk pred = target;
    Eigen::MatrixX2d w(3, 2);
    w << 1, 2, 1, 2, 1, 2;
    CHECK(masked_loss(pred, target, w) == 0.0);

    pred.needle(1, 0) += 0.01;
    CHECK(weighted_error_sum(pred, target, w, LossKind::kL1) == doctest::Approx(0.02));
    CHECK(masked_loss(pred, target, w) == doctest::Approx(0.02 / 9.0));
    CHECK(weighted_error_sum(pred, target, w, LossKind::kL2) == doctest::Approx(2e-4));

    // Scaling every weight by k leaves the normalized loss unchanged.
    CHECK(masked_loss(pred, target, Eigen::MatrixX2d(w * 7.0)) ==
          doctest::Approx(masked_loss(pred, target, w)).epsilon(1e-14));

    // Target quaternions are sign-aligned first.
    ActionChunk flipped = target;
    flipped.probe.rightCols<4>() *= -1.0;
    CHECK(masked_loss(target, flipped, w) == 0.0);

    CHECK_THROWS_AS(masked_loss(pred, target, Eigen::MatrixX2d::Ones(2, 2)), ConfigError);
  }

  TEST_CASE("loss gradient with respect to the prediction") {
    Rng rng(54);
    const ActionChunk target = constant_chunk({random_pose(rng), random_pose(rng)}, 4);
    ActionChunk pred = constant_chunk({random_pose(rng), random_pose(rng)}, 4);
    const Eigen::MatrixX2d w = Eigen::MatrixX2d::Constant(4, 2, 1.5);
    ActionChunk g;
    weighted_error_sum(pred, target, w, LossKind::kL2, &g);
    const double h = 1e-6;
    for (int j = 0; j < kActionDim; ++j) {
      ActionChunk up = pred, dn = pred;
      up.needle(2, j) += h;
      dn.needle(2, j) -= h;
      const double fd = (weighted_error_sum(up, target, w, LossKind::kL2) -
                         weighted_error_sum(dn, target, w, LossKind::kL2)) /
                        (up.needle(2, j) - dn.needle(2, j));
      CHECK(g.needle(2, j) == doctest::Approx(fd).epsilon(1e-6));
    }
  }

  TEST_CASE("parameter gradient matches finite differences at small scale") {
    const Dataset& data = small_dataset();
    PolicyParams p = init_params(tiny_dims(), 0.05, 0.1, 6);
    p.norm = fit_normalization(data);
    std::vector<const Sample*> batch;
    for (std::size_t i = 0; i < 6; ++i) batch.push_back(&data.samples[i * 7]);
    const MaskSchedule sched = MaskSchedule::interactive(3.0, 5.0);
    const auto pl = p.cast<long double>();
    auto grad = pl.zeros_like();
    batch_loss(pl, batch, sched, LossKind::kL2, &grad);

    // One head tensor and one trunk tensor, a few coordinates each.
    using VecL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
    for (const std::string name : {"head.needle.b", "trunk.wv"}) {
      const MatrixX<long double>* g = nullptr;
      grad.for_each_tensor([&](const std::string& n, const MatrixX<long double>& t) {
        if (n == name) g = &t;
      });
      REQUIRE(g != nullptr);
      auto eval = [&](const VecL& x) {
        auto q = pl;
        q.for_each_tensor([&](const std::string& n, MatrixX<long double>& t) {
          if (n == name) t = Eigen::Map<const MatrixX<long double>>(x.data(), t.rows(), t.cols());
        });
        return batch_loss(q, batch, sched, LossKind::kL2);
      };
      VecL x;
      pl.for_each_tensor([&](const std::string& n, const MatrixX<long double>& t) {
        if (n == name) x = Eigen::Map<const VecL>(t.data(), t.size());
      });
      const std::vector<Eigen::Index> coords{0, 1, x.size() - 1};
      const auto fd = oracle::fd_gradient(eval, x, 1e-5L, coords);
      for (std::size_t k = 0; k < coords.size(); ++k) {
        const long double an = (*g)(coords[k]);
        const long double scale = std::max(std::abs(an), std::abs(fd[k]));
        CHECK(static_cast<double>(std::abs(an - fd[k])) <=
              static_cast<double>(1e-6L * scale + 1e-12L));
      }
    }
  }

  TEST_CASE("dataset construction") {
    EpisodeLog log;
    for (int t = 0; t < 6; ++t) {
      DemonstrationRecord r;
      r.t = t;
      r.dt = 0.1;
      r.external = Eigen::VectorXd::Constant(kExternalFeatureDim, t);
      r.observation.features.setConstant(t);
      r.commanded = {Pose{Vec3(0.01 * t, 0, 0), Quat()}, Pose{Vec3(0, 0.01 * t, 0), Quat()}};
      r.follower = r.commanded;
      log.records.push_back(r);
    }
    const Dataset d = build_dataset({log}, 3, 2);
    REQUIRE(d.samples.size() == 3);  // t = 1, 3, 5
    const Sample& last = d.samples[2];
    CHECK(last.obs.external[0] == 4.0);  // what the operator saw at t - 1
    CHECK(last.target.probe(0, 0) == doctest::Approx(0.05));
    CHECK(last.target.probe(2, 0) == doctest::Approx(0.05));  // padded
    CHECK(d.samples[0].target.needle(1, 1) == doctest::Approx(0.02));

    log.records[2].external.resize(3);
    CHECK_THROWS_AS(build_dataset({log}, 3, 2), ConfigError);
    CHECK_THROWS_AS(build_dataset({}, 0, 1), ConfigError);
  }

  TEST_CASE("training is deterministic and reduces the loss") {
    const Dataset& data = small_dataset();
    TrainOptions opt;
    opt.policy = tiny_policy(4);
    opt.seed = 3;
    const TrainResult a = train(data, opt);
    const TrainResult b = train(data, opt);
    REQUIRE(a.log.size() == 4);
    CHECK(a.log.back().weighted_loss == b.log.back().weighted_loss);
    CHECK(params_to_json(a.params) == params_to_json(b.params));
    CHECK(a.log.back().weighted_loss < a.log.front().weighted_loss);
    opt.seed = 4;
    CHECK(params_to_json(train(data, opt).params) != params_to_json(a.params));
  }

  TEST_CASE("non-finite training state raises a numerical error and dumps") {
    ScratchDir dir("policy_nan");
    const Dataset& data = small_dataset();
    TrainOptions opt;
    opt.policy = tiny_policy(2);
    opt.policy.learning_rate = std::numeric_limits<double>::infinity();
    opt.dump_path = dir.path() / "dump.json";
    CHECK_THROWS_AS(train(data, opt), NumericalError);
    CHECK(std::filesystem::exists(*opt.dump_path));
  }

  TEST_CASE("checkpoint round trip and validation") {
    ScratchDir dir("policy_ckpt");
    Checkpoint c;
    c.params = init_params(tiny_dims(), 0.05, 0.1, 8);
    c.seed = 8;
    c.config_hash = "0123456789abcdef";
    c.config = Json{{"k", 1}};
    const auto path = dir.path() / "p.json";
    save_checkpoint(path, c);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.seed == 8);
    CHECK(back.config_hash == c.config_hash);
    CHECK(params_to_json(back.params) == params_to_json(c.params));
    Rng rng(55);
    const PolicyObservation o = random_obs(rng);
    CHECK(forward(back.params, o).probe == forward(c.params, o).probe);

    Json j = read_json_file(path);
    j["params"]["tensors"][3]["shape"] = Json::array({1, 1});
    write_json_file(dir.path() / "shape.json", j);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "shape.json"), ParseError);

    j = read_json_file(path);
    j["format"] = "other";
    write_json_file(dir.path() / "fmt.json", j);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "fmt.json"), ParseError);

    {
      std::ofstream out(dir.path() / "cut.json");
      out << "{\"format\": \"twinarm-policy\", ";
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "cut.json"), ParseError);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "none.json"), IoError);
  }
}
