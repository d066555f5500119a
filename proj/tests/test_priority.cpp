// Copyright 2026 The Distr Authors
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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "distr/priority.hpp"

namespace {

// Hand-built linear policy implementing the proportional controller for a
// task: mean = sign * (kp (goal - p) - kd v), tiny fixed sigma.
distr::GaussianPolicy controller_policy(const distr::TaskSpec& task) {
  const int od = distr::kStateDim + task.num_tasks;
  distr::NetParams net;
  net.layer_sizes = {od, 4};
  net.activation = distr::Activation::kIdentity;
  distr::Matrix w = distr::Matrix::Zero(od, 4);
  const double kp = 4.0, kd = 2.0;
  w(0, 0) = -kp * task.action_sign;  // x -> mean_x
  w(2, 0) = -kd * task.action_sign;  // vx -> mean_x
  w(1, 1) = -kp * task.action_sign;
  w(3, 1) = -kd * task.action_sign;
  distr::Matrix b = distr::Matrix::Zero(1, 4);
  b(0, 0) = kp * task.action_sign * task.goal(0);
  b(0, 1) = kp * task.action_sign * task.goal(1);
  b(0, 2) = -4.0;  // log_std heads: sigma ~ 0.018
  b(0, 3) = -4.0;
  net.weights = {w};
  net.biases = {b};
  return distr::GaussianPolicy{net};
}

std::vector<distr::TaskPriorityRecord> make_records(
    const std::vector<double>& priorities_in) {
  std::vector<distr::TaskPriorityRecord> r;
  for (std::size_t i = 0; i < priorities_in.size(); ++i) {
    distr::TaskPriorityRecord rec;
    rec.task_id = static_cast<int>(i);
    rec.priority = priorities_in[i];
    r.push_back(rec);
  }
  return r;
}

}  // namespace

TEST_CASE("priority formula matches hand values", "[priority]") {
  REQUIRE(distr::priority_value(0.4, 0.2) == Catch::Approx(0.6).margin(1e-12));
  REQUIRE(distr::priority_value(0.0, 1.0) == 0.0);
  REQUIRE(distr::priority_value(1.0, 0.0) == 1.0);
}

TEST_CASE("priorities normalize to a probability vector", "[priority]") {
  SECTION("hand normalization") {
    const auto p = distr::priorities(make_records({0.6, 0.2}));
    REQUIRE(p[0] == Catch::Approx(0.75).margin(1e-12));
    REQUIRE(p[1] == Catch::Approx(0.25).margin(1e-12));
  }
  SECTION("all zero falls back to uniform") {
    const auto p = distr::priorities(make_records({0.0, 0.0, 0.0}));
    for (double v : p) REQUIRE(v == Catch::Approx(1.0 / 3).margin(1e-12));
  }
  SECTION("all equal is uniform") {
    const auto p = distr::priorities(make_records({0.4, 0.4, 0.4, 0.4}));
    for (double v : p) REQUIRE(v == Catch::Approx(0.25).margin(1e-12));
  }
  SECTION("sums to one and is non-negative") {
    distr::Rng rng = distr::stream(0, "prio_prop");
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> raw;
      const int n = 1 + static_cast<int>(rng.randint(6));
      for (int i = 0; i < n; ++i) raw.push_back(rng.uniform());
      const auto p = distr::priorities(make_records(raw));
      double total = 0.0;
      for (double v : p) {
        REQUIRE(v >= 0.0);
        total += v;
      }
      REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
    }
  }
  SECTION("empty records rejected") {
    REQUIRE_THROWS_AS(distr::priorities({}), std::invalid_argument);
  }
}

TEST_CASE("priority monotonicity", "[priority]") {
  // Raising s_v (or lowering s_s) of one task never lowers its replay
  // probability while other records stay fixed.
  distr::Rng rng = distr::stream(1, "prio_mono");
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.randint(5));
    std::vector<distr::TaskPriorityRecord> recs;
    for (int i = 0; i < n; ++i) {
      distr::TaskPriorityRecord r;
      r.task_id = i;
      r.s_v = rng.uniform();
      r.s_s = rng.uniform();
      r.priority = distr::priority_value(r.s_v, r.s_s);
      recs.push_back(r);
    }
    const int k = static_cast<int>(rng.randint(n));
    const auto before = distr::priorities(recs);

    auto bumped = recs;
    bumped[k].s_v = std::min(1.0, bumped[k].s_v + rng.uniform(0.0, 0.5));
    bumped[k].priority = distr::priority_value(bumped[k].s_v, bumped[k].s_s);
    REQUIRE(distr::priorities(bumped)[k] >= before[k] - 1e-12);

    auto lowered = recs;
    lowered[k].s_s = std::max(0.0, lowered[k].s_s - rng.uniform(0.0, 0.5));
    lowered[k].priority = distr::priority_value(lowered[k].s_v, lowered[k].s_s);
    REQUIRE(distr::priorities(lowered)[k] >= before[k] - 1e-12);
  }
}

TEST_CASE("replay sampling honors the budget and the distribution",
          "[priority]") {
  SECTION("pool within budget returns everything") {
    distr::Rng rng = distr::stream(2, "replay");
    const auto all = distr::sample_replay_tasks({0.7, 0.3}, 5, rng);
    REQUIRE(all == std::vector<int>{0, 1});
  }
  SECTION("zero budget returns nothing") {
    distr::Rng rng = distr::stream(3, "replay");
    REQUIRE(distr::sample_replay_tasks({0.7, 0.3}, 0, rng).empty());
  }
  SECTION("degenerate distribution always picks the unit mass") {
    distr::Rng rng = distr::stream(4, "replay");
    for (int i = 0; i < 100; ++i) {
      const auto picked = distr::sample_replay_tasks({1.0, 0.0}, 1, rng);
      REQUIRE(picked == std::vector<int>{0});
    }
  }
  SECTION("draws are distinct and seeded") {
    distr::Rng a = distr::stream(5, "replay");
    distr::Rng b = distr::stream(5, "replay");
    const std::vector<double> probs{0.4, 0.3, 0.2, 0.1};
    for (int i = 0; i < 20; ++i) {
      const auto pa = distr::sample_replay_tasks(probs, 2, a);
      const auto pb = distr::sample_replay_tasks(probs, 2, b);
      REQUIRE(pa == pb);
      REQUIRE(pa.size() == 2);
      REQUIRE(pa[0] != pa[1]);
    }
  }
  SECTION("empirical frequencies match the probabilities within 1%") {
    const std::vector<double> probs{0.5, 0.3, 0.2};
    distr::Rng rng = distr::stream(6, "replay_freq");
    const int draws = 100000;
    std::vector<int> counts(3, 0);
    for (int i = 0; i < draws; ++i)
      counts[distr::sample_replay_tasks(probs, 1, rng)[0]]++;
    for (int k = 0; k < 3; ++k)
      REQUIRE(std::abs(static_cast<double>(counts[k]) / draws - probs[k]) < 0.01);
  }
}

TEST_CASE("vulnerability measures the clean-vs-perturbed gap", "[priority]") {
  distr::SuiteConfig cfg;
  cfg.num_tasks = 3;
  const distr::TaskSpec task = distr::make_task(0, cfg);
  const distr::GaussianPolicy expert = controller_policy(task);

  SECTION("zero noise leaves the success rate unchanged") {
    const auto r = distr::vulnerability(expert, task, 0.0, 10, 3, 42);
    REQUIRE(r.s_k == 1.0);
    REQUIRE(r.s_hat_k == r.s_k);
    REQUIRE(r.s_v == 0.0);
  }

  SECTION("strong noise cannot push vulnerability outside [0, 1]") {
    const auto r = distr::vulnerability(expert, task, 2.5, 10, 3, 42);
    REQUIRE(r.s_v >= 0.0);
    REQUIRE(r.s_v <= 1.0);
    REQUIRE(r.s_v == Catch::Approx(std::clamp(r.s_k - r.s_hat_k, 0.0, 1.0)));
  }

  SECTION("invalid arguments are rejected") {
    REQUIRE_THROWS_AS(distr::vulnerability(expert, task, -0.1, 10, 3, 0),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(distr::vulnerability(expert, task, 0.1, 0, 3, 0),
                      std::invalid_argument);
  }
}

TEST_CASE("specificity probe is the plain initial success rate", "[priority]") {
  distr::SuiteConfig cfg;
  cfg.num_tasks = 3;
  const distr::TaskSpec t0 = distr::make_task(0, cfg);
  const distr::TaskSpec t1 = distr::make_task(1, cfg);

  // A freshly zeroed policy cannot reach any unit-circle goal.
  distr::GaussianPolicy fresh = controller_policy(t0);
  for (auto& w : fresh.trunk.weights) w.setZero();
  for (auto& b : fresh.trunk.biases) b.setZero();
  REQUIRE(distr::specificity_probe(fresh, t0, 10, 7) == 0.0);

  // An expert for task 0 probes high on task 0 and low on the
  // conflicting task 1.
  const distr::GaussianPolicy expert = controller_policy(t0);
  REQUIRE(distr::specificity_probe(expert, t0, 10, 7) == 1.0);
  REQUIRE(distr::specificity_probe(expert, t1, 10, 7) < 1.0);
}
