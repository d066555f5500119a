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

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "distr/io.hpp"
#include "distr/rng.hpp"

namespace distr {

inline constexpr int kStateDim = 4;   // x, y, vx, vy
inline constexpr int kActionDim = 2;  // ax, ay

// A sequence of goal-reaching tasks on a shared 2D point-mass plant.
// Goals sit on the unit circle; on even-indexed tasks the action axis is
// optionally inverted so that consecutive tasks genuinely conflict.
struct SuiteConfig {
  int num_tasks = 5;
  double dt = 0.1;
  double accel_gain = 2.0;
  double vmax = 1.0;
  double gamma = 0.99;
  int horizon = 64;
  double success_radius = 0.15;
  bool flip_even_tasks = true;
};

struct TaskSpec {
  int task_id = 0;
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
  double action_sign = 1.0;
  int horizon = 64;
  double success_radius = 0.15;
  // Plant constants shared across the suite.
  double dt = 0.1;
  double accel_gain = 2.0;
  double vmax = 1.0;
  int num_tasks = 1;  // one-hot width for observations
};

using State = Eigen::Vector4d;

struct Observation {
  State state = State::Zero();
  int task_id = 0;
  int num_tasks = 1;

  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(kStateDim + num_tasks);
    v.head<kStateDim>() = state;
    v(kStateDim + task_id) = 1.0;
    return v;
  }
};

inline int observation_dim(const SuiteConfig& cfg) {
  return kStateDim + cfg.num_tasks;
}

struct StepResult {
  State next_state = State::Zero();
  double reward = 0.0;
  bool done = false;
  bool success = false;
};

// Fixed-shape trajectory; rows at index >= true_length repeat the
// terminal state with zero action and zero reward.
struct Trajectory {
  Eigen::MatrixXd states;   // H x 4
  Eigen::MatrixXd actions;  // H x 2
  Eigen::VectorXd rewards;  // H
  int true_length = 0;
  bool success = false;
  int task_id = 0;

  double total_return() const { return rewards.sum(); }
};

inline TaskSpec make_task(int k, const SuiteConfig& cfg) {
  if (k < 0 || k >= cfg.num_tasks)
    throw std::invalid_argument("make_task: task index " + std::to_string(k) +
                                " out of range [0, " +
                                std::to_string(cfg.num_tasks) + ")");
  TaskSpec t;
  t.task_id = k;
  const double angle = 2.0 * M_PI * k / cfg.num_tasks + M_PI / cfg.num_tasks;
  t.goal = Eigen::Vector2d(std::cos(angle), std::sin(angle));
  t.action_sign = (cfg.flip_even_tasks && k % 2 == 0) ? -1.0 : 1.0;
  t.horizon = cfg.horizon;
  t.success_radius = cfg.success_radius;
  t.dt = cfg.dt;
  t.accel_gain = cfg.accel_gain;
  t.vmax = cfg.vmax;
  t.num_tasks = cfg.num_tasks;
  return t;
}

inline std::vector<TaskSpec> suite_tasks(const SuiteConfig& cfg) {
  std::vector<TaskSpec> tasks;
  for (int k = 0; k < cfg.num_tasks; ++k) tasks.push_back(make_task(k, cfg));
  return tasks;
}

// Start near the origin at rest.
inline State reset(const TaskSpec& task, std::uint64_t seed) {
  (void)task;
  Rng rng = stream(seed, "reset");
  State s = State::Zero();
  s(0) = rng.uniform(-0.05, 0.05);
  s(1) = rng.uniform(-0.05, 0.05);
  return s;
}

inline StepResult step(const TaskSpec& task, const State& state,
                       const Eigen::Vector2d& action) {
  if (std::abs(action(0)) > 1.0 || std::abs(action(1)) > 1.0)
    throw std::invalid_argument("step: action outside [-1, 1]");
  StepResult r;
  const Eigen::Vector2d v =
      (state.tail<2>() + task.action_sign * task.accel_gain * task.dt * action)
          .cwiseMax(-task.vmax)
          .cwiseMin(task.vmax);
  const Eigen::Vector2d p = state.head<2>() + task.dt * v;
  r.next_state << p, v;
  const double dist = (p - task.goal).norm();
  r.success = dist < task.success_radius;
  r.reward = -dist * task.dt + (r.success ? 1.0 : 0.0);
  r.done = r.success;
  return r;
}

// A policy maps an observation to an action in [-1, 1]^2; stochastic
// policies draw from the given stream.
using PolicyFn =
    std::function<Eigen::Vector2d(const Observation&, bool deterministic, Rng&)>;

inline Trajectory rollout(const TaskSpec& task, const PolicyFn& policy,
                          std::uint64_t seed, bool deterministic) {
  const int H = task.horizon;
  Trajectory traj;
  traj.states = Eigen::MatrixXd::Zero(H, kStateDim);
  traj.actions = Eigen::MatrixXd::Zero(H, kActionDim);
  traj.rewards = Eigen::VectorXd::Zero(H);
  traj.task_id = task.task_id;

  State s = reset(task, seed);
  Rng action_rng = stream(seed, "action");
  int t = 0;
  for (; t < H; ++t) {
    Observation obs{s, task.task_id, task.num_tasks};
    const Eigen::Vector2d a = policy(obs, deterministic, action_rng);
    const StepResult sr = step(task, s, a);
    traj.states.row(t) = s;
    traj.actions.row(t) = a;
    traj.rewards(t) = sr.reward;
    s = sr.next_state;
    if (sr.done) {
      traj.success = true;
      ++t;
      break;
    }
  }
  traj.true_length = t;
  for (int i = t; i < H; ++i) traj.states.row(i) = s;  // pad: hold terminal state
  return traj;
}

// Fraction of successful deterministic rollouts over per-episode streams.
inline double success_rate(const TaskSpec& task, const PolicyFn& policy,
                           int n_episodes, std::uint64_t seed) {
  if (n_episodes < 1)
    throw std::invalid_argument("success_rate: n_episodes must be >= 1");
  int hits = 0;
  for (int e = 0; e < n_episodes; ++e) {
    if (rollout(task, policy, derive_seed(seed, "episode", e), true).success)
      ++hits;
  }
  return static_cast<double>(hits) / n_episodes;
}

// Hand-written controller used as a sanity oracle for the suite: steer
// toward a fixed goal assuming a fixed action sign. Running it on a task
// with a different sign or goal makes it fail, which is exactly the
// conflict the suite is meant to induce.
struct ProportionalController {
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
  double action_sign = 1.0;
  double kp = 4.0;
  double kd = 2.0;

  static ProportionalController for_task(const TaskSpec& t) {
    return ProportionalController{t.goal, t.action_sign, 4.0, 2.0};
  }

  Eigen::Vector2d operator()(const Observation& obs, bool, Rng&) const {
    const Eigen::Vector2d p = obs.state.head<2>();
    const Eigen::Vector2d v = obs.state.tail<2>();
    const Eigen::Vector2d raw = kp * (goal - p) - kd * v;
    return action_sign * raw.cwiseMax(-1.0).cwiseMin(1.0);
  }
};

// CSV export: one row per step (padded rows included). When source_tag is
// set, an extra trailing `source` column is written.
inline std::string trajectories_to_csv(
    const std::vector<Trajectory>& trajs,
    const std::optional<std::string>& source_tag = std::nullopt) {
  std::ostringstream out;
  out << "task_id,traj,step,x,y,vx,vy,ax,ay,reward";
  if (source_tag) out << ",source";
  out << "\n";
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const Trajectory& tr = trajs[i];
    for (Eigen::Index t = 0; t < tr.states.rows(); ++t) {
      out << tr.task_id << "," << i << "," << t;
      for (int c = 0; c < kStateDim; ++c) out << "," << format_g17(tr.states(t, c));
      for (int c = 0; c < kActionDim; ++c) out << "," << format_g17(tr.actions(t, c));
      out << "," << format_g17(tr.rewards(t));
      if (source_tag) out << "," << *source_tag;
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace distr
