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

// Self-checks of the reference implementations on cases with known answers.

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "doctest.h"
#include "oracle.hpp"

using namespace twinarm::oracle;
using VecL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

TEST_SUITE("oracle") {
  TEST_CASE("finite differences are exact on quadratics and linear maps") {
    VecL x(3);
    x << 0.3L, -1.2L, 2.0L;
    const auto quad = [](const VecL& v) { return v.squaredNorm(); };
    const auto g = fd_gradient(quad, x, 1e-5L, {0, 1, 2});
    for (int i = 0; i < 3; ++i) CHECK(std::abs(static_cast<double>(g[i] - 2 * x[i])) <= 1e-12);

    const auto lin = [](const VecL& v) { return 3.0L * v[0] - 0.5L * v[2]; };
    const auto gl = fd_gradient(lin, x, 1e-4L, {0, 1, 2});
    CHECK(std::abs(static_cast<double>(gl[0] - 3.0L)) <= 1e-12);
    CHECK(std::abs(static_cast<double>(gl[1])) <= 1e-12);
    CHECK(std::abs(static_cast<double>(gl[2] + 0.5L)) <= 1e-12);

    CHECK_THROWS_AS(fd_gradient(quad, x, 1e-3L, {0}), std::invalid_argument);
    CHECK_THROWS_AS(fd_gradient(quad, x, 1e-8L, {0}), std::invalid_argument);
  }

  TEST_CASE("segment search on closed-form cases") {
    const Segment a{Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), 1.0};
    const Segment par{Eigen::Vector3d(0.3, 0, 0), Eigen::Vector3d::UnitZ(), 1.0};
    CHECK(brute_segment_distance(a, par) == doctest::Approx(0.3).epsilon(1e-12));
    const Segment cross{Eigen::Vector3d(-0.5, 0, 0.5), Eigen::Vector3d::UnitX(), 1.0};
    CHECK(brute_segment_distance(a, cross) <= 1e-12);
    const Segment beyond{Eigen::Vector3d(0, 0, 1.5), Eigen::Vector3d::UnitZ(), 1.0};
    CHECK(brute_segment_distance(a, beyond) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS_AS(brute_segment_distance(a, par, 50), std::invalid_argument);
  }

  TEST_CASE("quaternion helpers") {
    const Quat4 id(1, 0, 0, 0);
    const double h = std::numbers::pi / 8;
    const Quat4 rz(std::cos(h), 0, 0, std::sin(h));  // 45 degrees about z
    CHECK((hamilton(id, rz) - rz).norm() <= 1e-15);
    CHECK((hamilton(rz, conjugate(rz)) - id).norm() <= 1e-15);
    CHECK((quat_exp(quat_log(rz)) - rz).norm() <= 1e-15);
    CHECK(rotation_angle(id, rz) == doctest::Approx(std::numbers::pi / 4).epsilon(1e-12));
    CHECK(rotation_angle(rz, -rz) <= 1e-12);
    const Quat4 half = expmap_slerp(id, rz, 0.5);
    CHECK(rotation_angle(id, half) == doctest::Approx(std::numbers::pi / 8).epsilon(1e-12));
  }

  TEST_CASE("foil accumulates rounding but is exact on a still leader") {
    const FoilPose zero{Eigen::Vector3d(0.1, 0.2, 0.3), Quat4(1, 0, 0, 0)};
    const std::vector<FoilPose> still(100, zero);
    const FoilPose out = drift_foil(zero, zero, still);
    CHECK(out.position == zero.position);
    CHECK(out.orientation == zero.orientation);
  }

  TEST_CASE("first-order settle time: forward Euler approaches the closed form") {
    const double analytic = analytic_settle_time(0.1, 0.05);
    CHECK(analytic == doctest::Approx(0.1 * std::log(20.0)));
    for (double h : {1e-3, 1e-4}) {
      const double t = integrated_settle_time(0.1, 0.05, h);
      CHECK(std::abs(t - analytic) <= 0.05 * analytic);
    }
    CHECK(std::abs(integrated_settle_time(0.1, 0.05, 1e-4) - analytic) <
          std::abs(integrated_settle_time(0.1, 0.05, 1e-2) - analytic) + 1e-12);
  }
}
