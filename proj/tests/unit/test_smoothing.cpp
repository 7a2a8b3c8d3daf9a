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

#include <atomic>
#include <cmath>
#include <numbers>
#include <thread>

#include "doctest.h"
#include "helpers.hpp"
#include "twinarm/smoothing.hpp"

using namespace twinarm;
using twinarm::testing::random_pose;
using twinarm::testing::random_quat;

TEST_SUITE("smoothing") {
  TEST_CASE("empty queue holds the setpoint") {
    const Pose start{Vec3(0.1, 0.2, 0.3), Quat::from_axis_angle(Vec3::UnitY(), 0.4)};
    TargetQueue q(start, SmoothingLimits{});
    CHECK(q.step(0.01) == start);
    CHECK(q.step(0.5) == start);
  }

  TEST_CASE("linear speed limit: 0.1 m away at 0.5 m/s advances 5 mm in 10 ms") {
    TargetQueue q(Pose{}, SmoothingLimits{0.5, 1.5, 8});
    q.enqueue(Pose{Vec3(0.1, 0, 0), Quat()});
    const Pose s = q.step(0.01);
    CHECK(s.position.x() == doctest::Approx(0.005).epsilon(1e-12));
    CHECK(std::abs(s.position.y()) + std::abs(s.position.z()) == 0.0);
    CHECK(q.alpha() == doctest::Approx(0.05).epsilon(1e-12));
  }

  TEST_CASE("enqueueing the current setpoint is a fixed point") {
    const Pose start{Vec3(0.4, 0.0, 0.2), Quat::from_axis_angle(Vec3(1, 1, 0), 0.3)};
    TargetQueue q(start, SmoothingLimits{});
    q.enqueue(start);
    CHECK(q.step(0.02) == start);
    CHECK(q.depth() == 0);
  }

  TEST_CASE("queue cap keeps the most recent targets") {
    TargetQueue q(Pose{}, SmoothingLimits{0.5, 1.5, 3});
    for (int i = 1; i <= 7; ++i) q.enqueue(Pose{Vec3(0.01 * i, 0, 0), Quat()});
    CHECK(q.depth() == 3);
    // Enough time to reach every pending target: ends on the newest.
    CHECK(q.step(10.0).position.x() == doctest::Approx(0.07));
    CHECK(q.depth() == 0);
  }

  TEST_CASE("constant angular velocity towards a 60 degree target") {
    const Quat goal = Quat::from_axis_angle(Vec3(0.3, -0.2, 1.0), std::numbers::pi / 3);
    TargetQueue q(Pose{}, SmoothingLimits{0.5, 1.5, 8});
    q.enqueue(Pose{Vec3::Zero(), goal});
    Pose prev = q.current_setpoint();
    std::vector<double> inc;
    for (int k = 0; k < 20; ++k) {
      const Pose s = q.step(0.02);
      inc.push_back(geodesic_distance(prev.orientation, s.orientation));
      prev = s;
    }
    // 60 degrees at 1.5 rad/s takes ~0.698 s, so all 20 steps are interior.
    for (double d : inc) CHECK(d == doctest::Approx(0.03).epsilon(1e-7));
    for (double d : inc) CHECK(std::abs(d - inc[0]) <= 1e-9);
  }

  TEST_CASE("position and orientation arrive together") {
    TargetQueue q(Pose{}, SmoothingLimits{0.5, 1.5, 8});
    const Pose goal{Vec3(0.05, 0, 0), Quat::from_axis_angle(Vec3::UnitZ(), 0.9)};
    q.enqueue(goal);
    // Rotation dominates: 0.9 rad at 1.5 rad/s = 0.6 s versus 0.1 s.
    const Pose half = q.step(0.3);
    CHECK(half.position.x() == doctest::Approx(0.025).epsilon(1e-9));
    CHECK(geodesic_distance(Quat(), half.orientation) == doctest::Approx(0.45).epsilon(1e-9));
  }

  TEST_CASE("continuity and convergence under random targets") {
    Rng rng(21);
    const SmoothingLimits lim{0.5, 1.5, 8};
    TargetQueue q(Pose{}, lim);
    Pose prev = q.current_setpoint();
    const double dt = 1.0 / 30.0;
    for (int k = 0; k < 2000; ++k) {
      if (k % 7 == 0) q.enqueue(random_pose(rng, 0.2));
      const Pose s = q.step(dt);
      CHECK((s.position - prev.position).norm() <= lim.max_linear_speed * dt + 1e-12);
      CHECK(geodesic_distance(prev.orientation, s.orientation) <=
            lim.max_angular_speed * dt + 1e-9);
      prev = s;
    }
    const Pose goal = random_pose(rng, 0.2);
    q.enqueue(goal);
    // Up to eight pending targets with large rotations ahead of it.
    for (int k = 0; k < 1500; ++k) q.step(dt);
    const Pose settled = q.current_setpoint();
    CHECK(settled.position == goal.position);
    CHECK(geodesic_distance(settled.orientation, goal.orientation) <= 1e-12);
    CHECK(q.step(dt) == settled);
  }

  TEST_CASE("antipodal target takes the short way round") {
    const Quat goal = Quat::from_axis_angle(Vec3::UnitX(), 0.3);
    TargetQueue q(Pose{}, SmoothingLimits{0.5, 1.5, 8});
    q.enqueue(Pose{Vec3::Zero(), -goal});
    double travelled = 0.0;
    Pose prev = q.current_setpoint();
    for (int k = 0; k < 30; ++k) {
      const Pose s = q.step(0.01);
      travelled += geodesic_distance(prev.orientation, s.orientation);
      prev = s;
    }
    CHECK(travelled == doctest::Approx(0.3).epsilon(1e-9));
  }

  TEST_CASE("one producer and one consumer thread") {
    TargetQueue q(Pose{}, SmoothingLimits{0.5, 1.5, 8});
    std::atomic<bool> done{false};
    std::thread producer([&] {
      Rng rng(22);
      for (int i = 0; i < 5000; ++i) q.enqueue(random_pose(rng, 0.1));
      done = true;
    });
    Pose prev = q.current_setpoint();
    int steps = 0;
    while (!done || q.depth() > 0) {
      const Pose s = q.step(0.001);
      CHECK((s.position - prev.position).norm() <= 0.5 * 0.001 + 1e-12);
      prev = s;
      if (++steps > 2000000) break;
    }
    producer.join();
    CHECK(std::abs(prev.orientation.coeffs_wxyz().norm() - 1.0) <= 1e-9);
  }

  TEST_CASE("invalid limits and steps are rejected") {
    CHECK_THROWS(TargetQueue(Pose{}, SmoothingLimits{0.0, 1.0, 8}));
    CHECK_THROWS(TargetQueue(Pose{}, SmoothingLimits{1.0, 1.0, 0}));
    TargetQueue q(Pose{}, SmoothingLimits{});
    CHECK_THROWS(q.step(0.0));
  }
}
