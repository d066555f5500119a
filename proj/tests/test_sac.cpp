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

#include "distr/sac.hpp"

namespace {

using distr::Activation;
using distr::GaussianPolicy;
using Matrix = distr::Matrix;

// Trunk with all weights zero: mean = 0, log_std = 0 (sigma = 1).
GaussianPolicy zeroed_policy(int obs_dim, int action_dim) {
  GaussianPolicy p = distr::make_policy(obs_dim, action_dim, {8},
                                        Activation::kTanh, 0);
  for (auto& w : p.trunk.weights) w.setZero();
  for (auto& b : p.trunk.biases) b.setZero();
  return p;
}

distr::SacConfig small_cfg() {
  distr::SacConfig cfg;
  cfg.hidden = {32, 32};
  cfg.batch_size = 16;
  cfg.buffer_capacity = 1000;
  cfg.warmup_steps = 32;
  return cfg;
}

std::vector<distr::Transition> random_batch(int n, int obs_dim, int action_dim,
                                            distr::Rng& rng, bool done) {
  std::vector<distr::Transition> batch;
  for (int i = 0; i < n; ++i) {
    distr::Transition t;
    t.obs = rng.normal_matrix(obs_dim, 1);
    t.action = rng.uniform_matrix(action_dim, 1, -0.9, 0.9);
    t.reward = rng.uniform(-1, 1);
    t.next_obs = rng.normal_matrix(obs_dim, 1);
    t.done = done;
    batch.push_back(std::move(t));
  }
  return batch;
}

bool nets_equal(const distr::NetParams& a, const distr::NetParams& b) {
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l] != b.weights[l]) return false;
    if (a.biases[l] != b.biases[l]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("sample_action squashes and reports the corrected density", "[sac]") {
  GaussianPolicy p = zeroed_policy(3, 2);
  distr::Rng rng = distr::stream(0, "sample");
  const Eigen::VectorXd obs = Eigen::VectorXd::Ones(3);

  SECTION("deterministic zero mean gives the zero action") {
    const distr::ActionSample s = distr::sample_action(p, obs, true, rng);
    REQUIRE(s.action(0) == 0.0);
    REQUIRE(s.action(1) == 0.0);
    // u = 0, sigma = 1: per-dim log prob = -0.5 ln(2 pi) - ln(1 + 1e-6).
    const double per_dim = -0.91893853320467274 - std::log(1.0 + 1e-6);
    REQUIRE(s.log_prob == Catch::Approx(2 * per_dim).margin(1e-12));
  }

  SECTION("tiny sigma collapses onto tanh(mean)") {
    GaussianPolicy q = p;
    // mean head pushed to 0.7, log_std head far below the clamp floor.
    q.trunk.biases.back()(0, 0) = 0.7;
    q.trunk.biases.back()(0, 1) = 0.7;
    q.trunk.biases.back()(0, 2) = -30.0;
    q.trunk.biases.back()(0, 3) = -30.0;
    for (int i = 0; i < 20; ++i) {
      const distr::ActionSample s = distr::sample_action(q, obs, false, rng);
      REQUIRE(std::abs(s.action(0) - std::tanh(0.7)) < 0.05);
      REQUIRE(std::abs(s.action(1) - std::tanh(0.7)) < 0.05);
    }
  }

  SECTION("actions always stay strictly inside (-1, 1)") {
    for (int i = 0; i < 50; ++i) {
      const distr::ActionSample s = distr::sample_action(p, obs, false, rng);
      REQUIRE(std::abs(s.action(0)) < 1.0);
      REQUIRE(std::abs(s.action(1)) < 1.0);
    }
  }

  SECTION("width mismatch raises") {
    REQUIRE_THROWS_AS(
        distr::sample_action(p, Eigen::VectorXd::Zero(5), true, rng),
        std::invalid_argument);
  }
}

TEST_CASE("critic targets reduce to the reward on terminal transitions",
          "[sac]") {
  const int od = 4, ad = 2;
  distr::SacState s =
      distr::make_sac(od, ad, small_cfg(), zeroed_policy(od, ad), 7);
  distr::Rng rng = distr::stream(1, "targets");
  const auto batch = random_batch(8, od, ad, rng, /*done=*/true);
  distr::Rng trng = distr::stream(2, "targets2");
  const Eigen::VectorXd y = distr::critic_targets(s, batch, trng);
  for (int i = 0; i < 8; ++i) REQUIRE(y(i) == batch[i].reward);
}

TEST_CASE("target entropy follows the action-dimension convention", "[sac]") {
  distr::SacState s =
      distr::make_sac(4, 2, small_cfg(), zeroed_policy(4, 2), 0);
  REQUIRE(s.target_entropy == -2.0);
  REQUIRE(s.alpha() > 0.0);
}

TEST_CASE("target critics move only by Polyak averaging", "[sac]") {
  const int od = 4, ad = 2;
  distr::Rng rng = distr::stream(3, "polyak");
  const auto batch = random_batch(16, od, ad, rng, false);

  SECTION("tau = 1 copies the critics") {
    distr::SacConfig cfg = small_cfg();
    cfg.tau_polyak = 1.0;
    distr::SacState s = distr::make_sac(od, ad, cfg, zeroed_policy(od, ad), 1);
    distr::Rng urng = distr::stream(4, "upd");
    distr::sac_update(s, batch, urng);
    REQUIRE(nets_equal(s.q1_target, s.q1));
    REQUIRE(nets_equal(s.q2_target, s.q2));
  }

  SECTION("tau = 0 leaves the targets untouched by an update") {
    distr::SacConfig cfg = small_cfg();
    cfg.tau_polyak = 0.0;
    distr::SacState s = distr::make_sac(od, ad, cfg, zeroed_policy(od, ad), 1);
    const distr::NetParams t1 = s.q1_target;
    const distr::NetParams t2 = s.q2_target;
    distr::Rng urng = distr::stream(4, "upd");
    distr::sac_update(s, batch, urng);
    REQUIRE(nets_equal(s.q1_target, t1));
    REQUIRE(nets_equal(s.q2_target, t2));
    REQUIRE_FALSE(nets_equal(s.q1, t1));  // critics themselves did move
  }
}

TEST_CASE("sac_update is deterministic given state, batch and stream", "[sac]") {
  const int od = 4, ad = 2;
  distr::SacState a = distr::make_sac(od, ad, small_cfg(),
                                      zeroed_policy(od, ad), 11);
  distr::SacState b = a;
  distr::Rng rng = distr::stream(5, "det_batch");
  const auto batch = random_batch(16, od, ad, rng, false);
  distr::Rng ra = distr::stream(6, "det_upd");
  distr::Rng rb = ra;
  const distr::SacLosses la = distr::sac_update(a, batch, ra);
  const distr::SacLosses lb = distr::sac_update(b, batch, rb);
  REQUIRE(la.critic == lb.critic);
  REQUIRE(la.actor == lb.actor);
  REQUIRE(nets_equal(a.policy.trunk, b.policy.trunk));
  REQUIRE(nets_equal(a.q1, b.q1));
  REQUIRE(a.log_alpha == b.log_alpha);

  REQUIRE_THROWS_AS(distr::sac_update(a, {}, ra), std::invalid_argument);
}

TEST_CASE("temperature stays positive through updates", "[sac]") {
  const int od = 4, ad = 2;
  distr::SacState s = distr::make_sac(od, ad, small_cfg(),
                                      zeroed_policy(od, ad), 13);
  distr::Rng rng = distr::stream(7, "alpha");
  for (int i = 0; i < 50; ++i) {
    const auto batch = random_batch(16, od, ad, rng, false);
    distr::sac_update(s, batch, rng);
    REQUIRE(s.alpha() > 0.0);
    REQUIRE(std::isfinite(s.alpha()));
  }
}

TEST_CASE("budget below warmup leaves the policy parameters untouched",
          "[sac]") {
  distr::SuiteConfig suite;
  suite.num_tasks = 2;
  const distr::TaskSpec task = distr::make_task(0, suite);
  distr::SacConfig cfg = small_cfg();
  cfg.warmup_steps = 1000;
  cfg.gamma = suite.gamma;
  const GaussianPolicy init = distr::make_policy(
      distr::observation_dim(suite), distr::kActionDim, cfg.hidden,
      cfg.activation, 3);
  const distr::TrainResult r =
      distr::train_policy_sac(task, cfg, init, std::nullopt, 200, 99, 0);
  REQUIRE(nets_equal(r.policy.trunk, init.trunk));
  REQUIRE_FALSE(r.episodes.empty());
}

TEST_CASE("training runs are reproducible", "[sac]") {
  distr::SuiteConfig suite;
  suite.num_tasks = 2;
  const distr::TaskSpec task = distr::make_task(0, suite);
  distr::SacConfig cfg = small_cfg();
  cfg.warmup_steps = 60;
  cfg.gamma = suite.gamma;
  const GaussianPolicy init = distr::make_policy(
      distr::observation_dim(suite), distr::kActionDim, cfg.hidden,
      cfg.activation, 3);
  const distr::TrainResult a =
      distr::train_policy_sac(task, cfg, init, std::nullopt, 400, 42, 1);
  const distr::TrainResult b =
      distr::train_policy_sac(task, cfg, init, std::nullopt, 400, 42, 1);
  REQUIRE(a.episodes.size() == b.episodes.size());
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    REQUIRE(a.episodes[i].episode_return == b.episodes[i].episode_return);
    REQUIRE(a.episodes[i].steps == b.episodes[i].steps);
    REQUIRE(a.episodes[i].trajectory.states == b.episodes[i].trajectory.states);
  }
  REQUIRE(nets_equal(a.policy.trunk, b.policy.trunk));
}

TEST_CASE("sac learns the single default task", "[sac][slow][oracle]") {
  // Pilot-calibrated fast configuration: all seeds reach a perfect
  // deterministic success rate by 8k steps, well inside the 60k envelope.
  distr::SuiteConfig suite;
  suite.num_tasks = 3;
  const distr::TaskSpec task = distr::make_task(0, suite);
  distr::SacConfig cfg;
  cfg.hidden = {64, 64};
  cfg.batch_size = 64;
  cfg.warmup_steps = 500;
  cfg.lr = 1e-3;
  cfg.gamma = suite.gamma;

  int improved = 0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const GaussianPolicy init = distr::make_policy(
        distr::observation_dim(suite), distr::kActionDim, cfg.hidden,
        cfg.activation, distr::derive_seed(seed, "policy_init"));
    const distr::TrainResult r =
        distr::train_policy_sac(task, cfg, init, std::nullopt, 8000, seed, 0);
    const double sr = distr::success_rate(task, distr::policy_fn(r.policy), 20,
                                          distr::derive_seed(seed, "eval"));
    REQUIRE(sr >= 0.9);

    // Learning signal: mean return over the last tenth of episodes beats
    // the first tenth.
    const int n = static_cast<int>(r.episodes.size());
    const int tenth = std::max(1, n / 10);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < tenth; ++i) first += r.episodes[i].episode_return;
    for (int i = n - tenth; i < n; ++i) last += r.episodes[i].episode_return;
    if (last / tenth > first / tenth) ++improved;
  }
  REQUIRE(improved == 3);
}
