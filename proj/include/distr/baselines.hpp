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

#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "distr/agent.hpp"

namespace distr {

// Snapshot of the actor after one task plus the diagonal Fisher estimate
// weighting how much each parameter mattered there.
struct EwcAnchor {
  NetParams params;
  NetGrads fisher;
};

struct EwcConfig {
  double lambda = 100.0;
  int fisher_samples = 1000;
  // Added to every Fisher entry when the penalty is applied during
  // training. Parameters the anchor task never exercised (for one, the
  // first-layer weights of other tasks' one-hot inputs) have exactly zero
  // Fisher and would drift freely at any lambda without it.
  double damping = 1e-2;
};

// Diagonal Fisher from explicit (observation, action) pairs: the
// elementwise mean of squared gradients of log pi(a|s).
inline NetGrads fisher_from_pairs(const GaussianPolicy& policy,
                                  const std::vector<Eigen::VectorXd>& obs,
                                  const std::vector<Eigen::Vector2d>& actions) {
  if (obs.empty() || obs.size() != actions.size())
    throw std::invalid_argument("fisher_from_pairs: bad pair set");
  NetGrads fisher = zeros_like(policy.trunk);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    ad::Tape tape;
    TapeNet tn = insert_net(tape, policy.trunk, true);
    // The squared gradient of -log pi equals that of log pi.
    int nll = bc_loss_node(tape, tn, obs[i].transpose(),
                           actions[i].transpose());
    tape.backward(nll);
    const NetGrads g = grads_of(tape, tn);
    for (std::size_t l = 0; l < fisher.weights.size(); ++l) {
      fisher.weights[l] += g.weights[l].cwiseProduct(g.weights[l]);
      fisher.biases[l] += g.biases[l].cwiseProduct(g.biases[l]);
    }
  }
  const double inv = 1.0 / static_cast<double>(obs.size());
  for (std::size_t l = 0; l < fisher.weights.size(); ++l) {
    fisher.weights[l] *= inv;
    fisher.biases[l] *= inv;
  }
  return fisher;
}

// On-policy Fisher: roll the trained policy stochastically and square the
// log-density gradients at the sampled actions.
inline NetGrads fisher_estimate(const GaussianPolicy& policy,
                                const TaskSpec& task, int n_samples,
                                std::uint64_t seed) {
  if (n_samples < 1)
    throw std::invalid_argument("fisher_estimate: n_samples must be >= 1");
  std::vector<Eigen::VectorXd> obs;
  std::vector<Eigen::Vector2d> actions;
  for (int episode = 0; static_cast<int>(obs.size()) < n_samples; ++episode) {
    Rng rng = stream(seed, "fisher_episode", episode);
    State st = reset(task, rng.next_u64());
    for (int t = 0; t < task.horizon && static_cast<int>(obs.size()) < n_samples;
         ++t) {
      const Observation o{st, task.task_id, task.num_tasks};
      const Eigen::VectorXd ov = o.to_vector();
      const ActionSample as = sample_action(policy, ov, false, rng);
      obs.push_back(ov);
      actions.push_back(Eigen::Vector2d(as.action(0), as.action(1)));
      const StepResult sr = step(task, st, {as.action(0), as.action(1)});
      st = sr.next_state;
      if (sr.done) break;
    }
  }
  return fisher_from_pairs(policy, obs, actions);
}

// (lambda/2) sum over anchors of sum (F + damping) (theta - theta*)^2.
inline double ewc_penalty(const NetParams& params,
                          const std::vector<EwcAnchor>& anchors, double lambda,
                          double damping = 0.0) {
  double acc = 0.0;
  for (const EwcAnchor& a : anchors) {
    if (a.params.weights.size() != params.weights.size())
      throw std::invalid_argument("ewc_penalty: anchor layout mismatch");
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
      if (a.params.weights[l].rows() != params.weights[l].rows() ||
          a.params.weights[l].cols() != params.weights[l].cols())
        throw std::invalid_argument("ewc_penalty: anchor shape mismatch");
      acc += ((a.fisher.weights[l].array() + damping) *
              (params.weights[l] - a.params.weights[l]).array().square())
                 .sum();
      acc += ((a.fisher.biases[l].array() + damping) *
              (params.biases[l] - a.params.biases[l]).array().square())
                 .sum();
    }
  }
  return 0.5 * lambda * acc;
}

// In-place gradient of the penalty: g += lambda (F + damping)(theta - theta*).
inline void add_ewc_penalty_gradient(const NetParams& params,
                                     const std::vector<EwcAnchor>& anchors,
                                     double lambda, double damping,
                                     NetGrads& grads) {
  for (const EwcAnchor& a : anchors) {
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
      grads.weights[l].array() +=
          lambda * (a.fisher.weights[l].array() + damping) *
          (params.weights[l] - a.params.weights[l]).array();
      grads.biases[l].array() +=
          lambda * (a.fisher.biases[l].array() + damping) *
          (params.biases[l] - a.params.biases[l]).array();
    }
  }
}

// Sequential SAC with no mitigation: the bottom line every method is
// measured against.
inline void finetune_learn_task(DistrState& s, int k, int sac_budget,
                                RunSink& sink = null_sink()) {
  if (k != s.tasks_done)
    throw std::invalid_argument("finetune_learn_task: tasks must arrive in order");
  const TaskSpec task = make_task(k, s.suite);

  detail::run_stage(s, k, "probe_specificity", [&] {
    const double v = specificity_probe(s.general_policy, task, s.cfg.n_eval,
                                       derive_seed(s.root_seed, "probe", k));
    s.success_matrix.record_probe(k, v);
    return v;
  });

  TrainResult tr = detail::run_stage(s, k, "train_policy", [&] {
    return train_policy_sac(task, s.sac, s.general_policy, s.carry, sac_budget,
                            s.root_seed, static_cast<std::uint64_t>(k));
  });
  s.general_policy = tr.policy;
  s.carry = CriticsCarry{tr.q1, tr.q2, tr.q1_target, tr.q2_target, tr.log_alpha};

  detail::run_stage(s, k, "evaluate", [&] {
    detail::evaluate_row(s, k);
    return 0;
  });

  detail::save_checkpoints(s, k, sink, /*with_denoiser=*/false);
  s.tasks_done = k + 1;
}

struct EwcState {
  DistrState core;
  EwcConfig cfg;
  std::vector<EwcAnchor> anchors;
};

// Finetune plus a quadratic pull toward each past-task anchor, weighted
// by the diagonal Fisher; applied to the actor only.
inline void ewc_learn_task(EwcState& s, int k, int sac_budget,
                           RunSink& sink = null_sink()) {
  if (k != s.core.tasks_done)
    throw std::invalid_argument("ewc_learn_task: tasks must arrive in order");
  const TaskSpec task = make_task(k, s.core.suite);

  detail::run_stage(s.core, k, "probe_specificity", [&] {
    const double v =
        specificity_probe(s.core.general_policy, task, s.core.cfg.n_eval,
                          derive_seed(s.core.root_seed, "probe", k));
    s.core.success_matrix.record_probe(k, v);
    return v;
  });

  TrainResult tr = detail::run_stage(s.core, k, "train_policy", [&] {
    SacUpdateHooks hooks;
    if (!s.anchors.empty()) {
      const EwcConfig cfg = s.cfg;
      const std::vector<EwcAnchor>* anchors = &s.anchors;
      hooks.adjust_policy_grads = [cfg, anchors](const GaussianPolicy& p,
                                                 NetGrads& g) {
        add_ewc_penalty_gradient(p.trunk, *anchors, cfg.lambda, cfg.damping, g);
      };
    }
    return train_policy_sac(task, s.core.sac, s.core.general_policy,
                            s.core.carry, sac_budget, s.core.root_seed,
                            static_cast<std::uint64_t>(k), hooks);
  });
  s.core.general_policy = tr.policy;
  s.core.carry =
      CriticsCarry{tr.q1, tr.q2, tr.q1_target, tr.q2_target, tr.log_alpha};

  detail::run_stage(s.core, k, "estimate_fisher", [&] {
    NetGrads fisher =
        fisher_estimate(s.core.general_policy, task, s.cfg.fisher_samples,
                        derive_seed(s.core.root_seed, "fisher", k));
    s.anchors.push_back(EwcAnchor{s.core.general_policy.trunk, std::move(fisher)});
    return 0;
  });

  detail::run_stage(s.core, k, "evaluate", [&] {
    detail::evaluate_row(s.core, k);
    return 0;
  });

  detail::save_checkpoints(s.core, k, sink, /*with_denoiser=*/false);
  s.core.tasks_done = k + 1;
}

struct PerfectReplayState {
  DistrState core;
  std::vector<SkilledSet> stored;  // real skilled sets, deliberately kept
};

// Oracle upper bound: the decoupled pipeline with stored real skilled
// sets instead of generated ones, every past task replayed, no diffusion
// model in the loop.
inline void perfect_replay_learn_task(PerfectReplayState& s, int k,
                                      int sac_budget,
                                      RunSink& sink = null_sink()) {
  if (k != s.core.tasks_done)
    throw std::invalid_argument(
        "perfect_replay_learn_task: tasks must arrive in order");
  const TaskSpec task = make_task(k, s.core.suite);

  detail::run_stage(s.core, k, "probe_specificity", [&] {
    const double v =
        specificity_probe(s.core.general_policy, task, s.core.cfg.n_eval,
                          derive_seed(s.core.root_seed, "probe", k));
    s.core.success_matrix.record_probe(k, v);
    return v;
  });

  GaussianPolicy immediate = s.core.general_policy;
  TrainResult tr = detail::run_stage(s.core, k, "train_immediate", [&] {
    return train_policy_sac(task, s.core.sac, immediate, std::nullopt,
                            sac_budget, s.core.root_seed,
                            static_cast<std::uint64_t>(k));
  });

  SkilledSet real = detail::run_stage(s.core, k, "select_skilled", [&] {
    SkilledSet set =
        select_skilled(tr.episodes, s.core.cfg.n_traj, s.core.cfg.window);
    sink.save_skilled(k, SkillSource::kReal, set.trajectories);
    return set;
  });

  detail::run_stage(s.core, k, "distill_general", [&] {
    std::vector<SkilledSet> datasets;
    datasets.push_back(real);
    for (const SkilledSet& past : s.stored) datasets.push_back(past);
    DistillResult dr = distill_general(
        s.core.general_policy, datasets, s.core.suite.num_tasks,
        s.core.cfg.bc_epochs, s.core.cfg.bc_batch, s.core.cfg.bc_lr,
        derive_seed(s.core.root_seed, "distill", k));
    s.core.general_policy = std::move(dr.policy);
    return 0;
  });
  s.stored.push_back(std::move(real));

  detail::run_stage(s.core, k, "evaluate", [&] {
    detail::evaluate_row(s.core, k);
    return 0;
  });

  detail::save_checkpoints(s.core, k, sink, /*with_denoiser=*/false);
  s.core.tasks_done = k + 1;
}

}  // namespace distr
