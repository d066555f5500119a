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

#include <algorithm>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "distr/metrics.hpp"
#include "distr/priority.hpp"
#include "distr/sac.hpp"
#include "distr/trajdiff.hpp"

namespace distr {

enum class SkillSource { kReal, kGenerated };

inline std::string to_string(SkillSource s) {
  return s == SkillSource::kReal ? "real" : "generated";
}

// The per-task retained dataset: top-return trajectories of one task.
struct SkilledSet {
  int task_id = 0;
  std::vector<Trajectory> trajectories;
  SkillSource source = SkillSource::kReal;
};

// Top n_traj episodes by return among the last `window` completed ones;
// ties go to the later episode. Returns fewer only when the log is short.
inline SkilledSet select_skilled(const std::vector<EpisodeRecord>& episode_log,
                                 int n_traj, int window) {
  if (episode_log.empty())
    throw std::invalid_argument("select_skilled: empty episode log");
  const int n = static_cast<int>(episode_log.size());
  const int begin = std::max(0, n - window);
  std::vector<int> idx;
  for (int i = begin; i < n; ++i) idx.push_back(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (episode_log[a].episode_return != episode_log[b].episode_return)
      return episode_log[a].episode_return > episode_log[b].episode_return;
    return a > b;  // later episode wins the tie
  });
  SkilledSet set;
  set.task_id = episode_log[begin].trajectory.task_id;
  set.source = SkillSource::kReal;
  const int take = std::min<int>(n_traj, static_cast<int>(idx.size()));
  for (int i = 0; i < take; ++i)
    set.trajectories.push_back(episode_log[idx[i]].trajectory);
  return set;
}

// Negative log likelihood of given actions under the squashed-Gaussian
// policy, built on a tape so distillation and the coupled objective share
// it. Actions are clamped to +-(1 - 1e-6) before the atanh.
inline int bc_loss_node(ad::Tape& tape, const TapeNet& policy_tn,
                        const Eigen::MatrixXd& obs,
                        const Eigen::MatrixXd& actions) {
  const Eigen::Index m = obs.rows();
  const Eigen::Index d = actions.cols();
  Eigen::MatrixXd clamped =
      actions.cwiseMax(-(1.0 - 1e-6)).cwiseMin(1.0 - 1e-6);
  Eigen::MatrixXd u(m, d);
  Eigen::MatrixXd jac(m, d);
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index c = 0; c < d; ++c) {
      u(r, c) = std::atanh(clamped(r, c));
      jac(r, c) = kHalfLog2Pi +
                  std::log(1.0 - clamped(r, c) * clamped(r, c) +
                           kTanhJacobianEps);
    }
  int heads = forward_on_tape(tape, policy_tn, tape.constant(obs));
  int mu = tape.slice_cols(heads, 0, d);
  int log_std =
      tape.clamp(tape.slice_cols(heads, d, d), kLogStdMin, kLogStdMax);
  int z = tape.mul(tape.sub(tape.constant(u), mu), tape.exp(tape.neg(log_std)));
  int per_elem = tape.add(tape.add(log_std, tape.scale(tape.square(z), 0.5)),
                          tape.constant(jac));
  return tape.mean(tape.row_sum(per_elem));
}

// Value-level BC loss.
inline double bc_loss(const GaussianPolicy& policy, const Eigen::MatrixXd& obs,
                      const Eigen::MatrixXd& actions) {
  if (obs.rows() != actions.rows())
    throw std::invalid_argument("bc_loss: batch size mismatch");
  if (obs.rows() == 0) throw std::invalid_argument("bc_loss: empty batch");
  ad::Tape tape;
  TapeNet tn = insert_net(tape, policy.trunk, false);
  const double v = tape.value(bc_loss_node(tape, tn, obs, actions))(0, 0);
  if (!std::isfinite(v)) throw std::runtime_error("bc_loss: non-finite loss");
  return v;
}

// Flattened (observation, action) pairs of a skilled set, pad steps
// included; observations carry the set's task one-hot.
inline void expand_pairs(const SkilledSet& set, int num_tasks,
                         std::vector<Eigen::VectorXd>& obs,
                         std::vector<Eigen::Vector2d>& act) {
  for (const Trajectory& tr : set.trajectories) {
    for (Eigen::Index h = 0; h < tr.states.rows(); ++h) {
      Observation o{tr.states.row(h).transpose(), set.task_id, num_tasks};
      obs.push_back(o.to_vector());
      act.push_back(tr.actions.row(h).transpose());
    }
  }
}

struct DistillResult {
  GaussianPolicy policy;
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
};

// Behavior cloning over the union of all (obs, action) pairs with uniform
// minibatches; warm-starts from the given policy. Zero epochs is a no-op.
inline DistillResult distill_general(const GaussianPolicy& init,
                                     const std::vector<SkilledSet>& datasets,
                                     int num_tasks, int epochs, int batch_size,
                                     double lr, std::uint64_t seed) {
  if (datasets.empty())
    throw std::invalid_argument("distill_general: no datasets");
  std::vector<Eigen::VectorXd> obs_rows;
  std::vector<Eigen::Vector2d> act_rows;
  for (const SkilledSet& set : datasets)
    expand_pairs(set, num_tasks, obs_rows, act_rows);
  const int n = static_cast<int>(obs_rows.size());
  if (n == 0) throw std::invalid_argument("distill_general: no pairs");

  DistillResult result;
  result.policy = init;
  if (epochs == 0) return result;

  AdamState opt = make_adam(result.policy.trunk, {lr});
  Rng rng = stream(seed, "distill");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const int batches = (n + batch_size - 1) / batch_size;
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (int b = 0; b < batches; ++b) {
      const int lo = b * batch_size;
      const int hi = std::min(n, lo + batch_size);
      Eigen::MatrixXd obs(hi - lo, obs_rows[0].size());
      Eigen::MatrixXd act(hi - lo, 2);
      for (int i = lo; i < hi; ++i) {
        obs.row(i - lo) = obs_rows[order[i]];
        act.row(i - lo) = act_rows[order[i]];
      }
      ad::Tape tape;
      TapeNet tn = insert_net(tape, result.policy.trunk, true);
      int loss = bc_loss_node(tape, tn, obs, act);
      const double v = tape.value(loss)(0, 0);
      if (!std::isfinite(v))
        throw std::runtime_error("distill_general: non-finite BC loss");
      epoch_loss += v * (hi - lo);
      tape.backward(loss);
      NetGrads g = grads_of(tape, tn);
      adam_step(result.policy.trunk, g, opt);
    }
    epoch_loss /= n;
    if (e == 0) result.first_epoch_loss = epoch_loss;
    result.last_epoch_loss = epoch_loss;
  }
  return result;
}

struct AgentConfig {
  int n_traj = 20;
  int window = 100;
  int replay_budget = 3;
  double noise_sigma = 0.3;
  int n_repeats = 5;
  int n_eval = 20;
  int bc_epochs = 60;
  int bc_batch = 128;
  double bc_lr = 1e-3;
  double lambda_bc = 1.0;  // coupled-mode BC weight
};

struct DiffusionConfig {
  int steps = kDefaultDiffusionSteps;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  std::vector<int> hidden = {256, 256};
  double lr = 1e-3;
  int batch = 32;
  int epochs = 4000;
};

// Output hooks for pipeline artifacts; the experiment runner writes them
// to the run directory, tests usually pass the no-op default.
struct RunSink {
  virtual void save_policy(const std::string& name, const GaussianPolicy&) {}
  virtual void save_denoiser(const std::string& name, const Denoiser&) {}
  virtual void save_skilled(int task, SkillSource source,
                            const std::vector<Trajectory>&) {}
  virtual ~RunSink() = default;
};

inline RunSink& null_sink() {
  static RunSink sink;
  return sink;
}

// Lifelong learner state. Past tasks survive only inside the denoiser and
// the general policy; real trajectories of finished tasks are never kept.
struct DistrState {
  SuiteConfig suite;
  AgentConfig cfg;
  SacConfig sac;
  DiffusionConfig diff;
  GaussianPolicy general_policy;
  Denoiser denoiser;
  NoiseSchedule schedule;
  NormBounds bounds;
  SuccessMatrix success_matrix;
  std::vector<TaskPriorityRecord> priority_records;
  std::vector<std::string> stage_trace;
  std::uint64_t root_seed = 0;
  int tasks_done = 0;
  // Critic/temperature carry for learners that continue one SAC run
  // across tasks (coupled mode and the baselines).
  std::optional<CriticsCarry> carry;
  std::string failure;
};

inline DistrState make_distr_state(const SuiteConfig& suite,
                                   const AgentConfig& cfg, const SacConfig& sac,
                                   const DiffusionConfig& diff,
                                   std::uint64_t root_seed) {
  DistrState s;
  s.suite = suite;
  s.cfg = cfg;
  s.sac = sac;
  s.sac.gamma = suite.gamma;
  s.diff = diff;
  s.general_policy =
      make_policy(observation_dim(suite), kActionDim, sac.hidden,
                  sac.activation, derive_seed(root_seed, "policy_init"));
  s.denoiser = make_denoiser(suite.horizon, suite.num_tasks, diff.hidden,
                             derive_seed(root_seed, "denoiser_init"));
  s.schedule = make_schedule(diff.steps, diff.beta_start, diff.beta_end);
  s.bounds = NormBounds::for_suite(suite);
  s.root_seed = root_seed;
  return s;
}

namespace detail {

inline void trace(DistrState& s, int task, const std::string& stage) {
  s.stage_trace.push_back("task" + std::to_string(task) + ":" + stage);
}

template <typename Fn>
auto run_stage(DistrState& s, int task, const std::string& stage, Fn&& fn) {
  trace(s, task, stage);
  try {
    return fn();
  } catch (const std::exception& e) {
    s.failure = "task " + std::to_string(task) + " stage " + stage + ": " + e.what();
    throw std::runtime_error(s.failure);
  }
}

inline std::vector<Trajectory> tensors_to_trajectories(
    const std::vector<TrajTensor>& tensors, const NormBounds& bounds) {
  std::vector<Trajectory> out;
  out.reserve(tensors.size());
  for (const TrajTensor& t : tensors)
    out.push_back(denormalize_trajectory(t, bounds));
  return out;
}

inline std::vector<TrajTensor> set_to_tensors(const SkilledSet& set,
                                              const NormBounds& bounds) {
  std::vector<TrajTensor> out;
  out.reserve(set.trajectories.size());
  for (const Trajectory& tr : set.trajectories)
    out.push_back(normalize_trajectory(tr, bounds));
  return out;
}

// Replay selection + generation from the current denoiser, shared by the
// decoupled and coupled pipelines. Returns generated sets for tasks < k.
inline std::vector<SkilledSet> generate_replay_sets(DistrState& s, int k,
                                                    RunSink& sink) {
  std::vector<SkilledSet> generated;
  if (k == 0) return generated;
  const std::vector<TaskPriorityRecord> past(s.priority_records.begin(),
                                             s.priority_records.begin() + k);
  const std::vector<double> probs = priorities(past);
  Rng choice_rng = stream(s.root_seed, "replay_choice", k);
  const std::vector<int> chosen =
      sample_replay_tasks(probs, s.cfg.replay_budget, choice_rng);
  for (int task : chosen) {
    const std::vector<TrajTensor> tensors =
        sample_trajectories(s.denoiser, task, s.cfg.n_traj, s.schedule,
                            derive_seed(s.root_seed, "generate", k, task));
    SkilledSet set;
    set.task_id = task;
    set.source = SkillSource::kGenerated;
    set.trajectories = tensors_to_trajectories(tensors, s.bounds);
    sink.save_skilled(task, SkillSource::kGenerated, set.trajectories);
    generated.push_back(std::move(set));
  }
  return generated;
}

inline void evaluate_row(DistrState& s, int k) {
  std::vector<double> row;
  for (int j = 0; j <= k; ++j) {
    const TaskSpec task = make_task(j, s.suite);
    row.push_back(success_rate(task, policy_fn(s.general_policy), s.cfg.n_eval,
                               derive_seed(s.root_seed, "eval", k, j)));
  }
  s.success_matrix.append_row(std::move(row));
}

inline void save_checkpoints(DistrState& s, int k, RunSink& sink,
                             bool with_denoiser) {
  sink.save_policy("policy_after_task_" + std::to_string(k), s.general_policy);
  if (with_denoiser)
    sink.save_denoiser("denoiser_after_task_" + std::to_string(k), s.denoiser);
}

}  // namespace detail

// One task of the decoupled pipeline: probe, train the immediate policy
// with pure RL, select skilled trajectories, measure vulnerability,
// generate prioritized replay from the pre-update denoiser, self-clone
// the denoiser, distill the general policy, evaluate.
inline void distr_learn_task(DistrState& s, int k, int sac_budget,
                             RunSink& sink = null_sink()) {
  if (k != s.tasks_done)
    throw std::invalid_argument("distr_learn_task: tasks must arrive in order");
  const TaskSpec task = make_task(k, s.suite);

  const double s_s = detail::run_stage(s, k, "probe_specificity", [&] {
    const double v = specificity_probe(s.general_policy, task, s.cfg.n_eval,
                                       derive_seed(s.root_seed, "probe", k));
    s.success_matrix.record_probe(k, v);
    return v;
  });

  GaussianPolicy immediate = detail::run_stage(
      s, k, "inherit_immediate", [&] { return s.general_policy; });

  TrainResult tr = detail::run_stage(s, k, "train_immediate", [&] {
    return train_policy_sac(task, s.sac, immediate, std::nullopt, sac_budget,
                            s.root_seed, static_cast<std::uint64_t>(k));
  });

  SkilledSet real = detail::run_stage(s, k, "select_skilled", [&] {
    SkilledSet set = select_skilled(tr.episodes, s.cfg.n_traj, s.cfg.window);
    sink.save_skilled(k, SkillSource::kReal, set.trajectories);
    return set;
  });

  detail::run_stage(s, k, "measure_vulnerability", [&] {
    const VulnerabilityResult v =
        vulnerability(tr.policy, task, s.cfg.noise_sigma, s.cfg.n_eval,
                      s.cfg.n_repeats, derive_seed(s.root_seed, "vuln", k));
    s.priority_records.push_back(TaskPriorityRecord{
        k, v.s_k, v.s_hat_k, v.s_v, s_s, priority_value(v.s_v, s_s)});
    return 0;
  });

  const std::vector<SkilledSet> generated = detail::run_stage(
      s, k, "generate_replay",
      [&] { return detail::generate_replay_sets(s, k, sink); });

  detail::run_stage(s, k, "fit_denoiser", [&] {
    std::vector<std::vector<TrajTensor>> replayed;
    for (const SkilledSet& set : generated)
      replayed.push_back(detail::set_to_tensors(set, s.bounds));
    continual_fit(s.denoiser, detail::set_to_tensors(real, s.bounds), replayed,
                  s.diff.epochs, s.schedule, s.diff.lr, s.diff.batch,
                  derive_seed(s.root_seed, "fit_denoiser", k));
    return 0;
  });

  detail::run_stage(s, k, "distill_general", [&] {
    std::vector<SkilledSet> datasets;
    datasets.push_back(real);
    for (const SkilledSet& g : generated) datasets.push_back(g);
    DistillResult dr = distill_general(
        s.general_policy, datasets, s.suite.num_tasks, s.cfg.bc_epochs,
        s.cfg.bc_batch, s.cfg.bc_lr, derive_seed(s.root_seed, "distill", k));
    s.general_policy = std::move(dr.policy);
    return 0;
  });

  detail::run_stage(s, k, "evaluate", [&] {
    detail::evaluate_row(s, k);
    return 0;
  });

  detail::save_checkpoints(s, k, sink, /*with_denoiser=*/true);
  s.tasks_done = k + 1;
}

// Coupled-objective ablation: one policy carries across tasks and each
// actor update adds lambda_bc * sum of BC losses over generated past-task
// sets. With lambda_bc = 0 (or on the first task) the update stream is
// exactly sequential SAC.
inline void coupled_learn_task(DistrState& s, int k, int sac_budget,
                               double lambda_bc, RunSink& sink = null_sink()) {
  if (k != s.tasks_done)
    throw std::invalid_argument("coupled_learn_task: tasks must arrive in order");
  const TaskSpec task = make_task(k, s.suite);

  const double s_s = detail::run_stage(s, k, "probe_specificity", [&] {
    const double v = specificity_probe(s.general_policy, task, s.cfg.n_eval,
                                       derive_seed(s.root_seed, "probe", k));
    s.success_matrix.record_probe(k, v);
    return v;
  });

  std::vector<SkilledSet> generated;
  if (lambda_bc != 0.0) {
    generated = detail::run_stage(s, k, "generate_replay", [&] {
      return detail::generate_replay_sets(s, k, sink);
    });
  }

  TrainResult tr = detail::run_stage(s, k, "train_policy", [&] {
    SacUpdateHooks hooks;
    if (!generated.empty()) {
      // Per-task pair pools for the auxiliary cloning term.
      auto pools = std::make_shared<std::vector<
          std::pair<Eigen::MatrixXd, Eigen::MatrixXd>>>();
      for (const SkilledSet& set : generated) {
        std::vector<Eigen::VectorXd> obs_rows;
        std::vector<Eigen::Vector2d> act_rows;
        expand_pairs(set, s.suite.num_tasks, obs_rows, act_rows);
        Eigen::MatrixXd obs(obs_rows.size(), obs_rows[0].size());
        Eigen::MatrixXd act(act_rows.size(), 2);
        for (std::size_t i = 0; i < obs_rows.size(); ++i) {
          obs.row(i) = obs_rows[i];
          act.row(i) = act_rows[i];
        }
        pools->emplace_back(std::move(obs), std::move(act));
      }
      auto bc_rng = std::make_shared<Rng>(
          derive_seed(s.root_seed, "coupled_bc", k));
      const int batch = s.cfg.bc_batch;
      hooks.extra_actor_loss = [pools, bc_rng, batch, lambda_bc](
                                   ad::Tape& tape, const TapeNet& pol) {
        int total = -1;
        for (const auto& [obs_all, act_all] : *pools) {
          const int n = static_cast<int>(obs_all.rows());
          const int m = std::min(batch, n);
          Eigen::MatrixXd obs(m, obs_all.cols());
          Eigen::MatrixXd act(m, act_all.cols());
          for (int i = 0; i < m; ++i) {
            const auto idx = bc_rng->randint(n);
            obs.row(i) = obs_all.row(static_cast<Eigen::Index>(idx));
            act.row(i) = act_all.row(static_cast<Eigen::Index>(idx));
          }
          int node = bc_loss_node(tape, pol, obs, act);
          total = total < 0 ? node : tape.add(total, node);
        }
        return total < 0 ? -1 : tape.scale(total, lambda_bc);
      };
    }
    return train_policy_sac(task, s.sac, s.general_policy, s.carry, sac_budget,
                            s.root_seed, static_cast<std::uint64_t>(k), hooks);
  });
  s.general_policy = tr.policy;
  s.carry = CriticsCarry{tr.q1, tr.q2, tr.q1_target, tr.q2_target, tr.log_alpha};

  SkilledSet real = detail::run_stage(s, k, "select_skilled", [&] {
    SkilledSet set = select_skilled(tr.episodes, s.cfg.n_traj, s.cfg.window);
    sink.save_skilled(k, SkillSource::kReal, set.trajectories);
    return set;
  });

  detail::run_stage(s, k, "measure_vulnerability", [&] {
    const VulnerabilityResult v =
        vulnerability(tr.policy, task, s.cfg.noise_sigma, s.cfg.n_eval,
                      s.cfg.n_repeats, derive_seed(s.root_seed, "vuln", k));
    s.priority_records.push_back(TaskPriorityRecord{
        k, v.s_k, v.s_hat_k, v.s_v, s_s, priority_value(v.s_v, s_s)});
    return 0;
  });

  detail::run_stage(s, k, "fit_denoiser", [&] {
    std::vector<std::vector<TrajTensor>> replayed;
    for (const SkilledSet& set : generated)
      replayed.push_back(detail::set_to_tensors(set, s.bounds));
    continual_fit(s.denoiser, detail::set_to_tensors(real, s.bounds), replayed,
                  s.diff.epochs, s.schedule, s.diff.lr, s.diff.batch,
                  derive_seed(s.root_seed, "fit_denoiser", k));
    return 0;
  });

  detail::run_stage(s, k, "evaluate", [&] {
    detail::evaluate_row(s, k);
    return 0;
  });

  detail::save_checkpoints(s, k, sink, /*with_denoiser=*/true);
  s.tasks_done = k + 1;
}

}  // namespace distr
