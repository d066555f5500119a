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
#include <stdexcept>
#include <vector>

#include "distr/net.hpp"
#include "distr/tasksuite.hpp"

namespace distr {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kTanhJacobianEps = 1e-6;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5*ln(2*pi)

// Squashed-Gaussian policy: the trunk maps an observation to per-dim
// (mean, log_std); actions are tanh(mean + std * xi).
struct GaussianPolicy {
  NetParams trunk;

  int obs_dim() const { return trunk.input_dim(); }
  int action_dim() const { return trunk.output_dim() / 2; }
};

inline GaussianPolicy make_policy(int obs_dim, int action_dim,
                                  const std::vector<int>& hidden,
                                  Activation activation, std::uint64_t seed) {
  std::vector<int> sizes;
  sizes.push_back(obs_dim);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2 * action_dim);
  return GaussianPolicy{net_init(sizes, activation, seed)};
}

struct ActionSample {
  Eigen::VectorXd action;
  double log_prob = 0.0;
};

// Batched head evaluation: returns mean and clamped log_std.
inline void policy_heads(const GaussianPolicy& p, const Eigen::MatrixXd& obs,
                         Eigen::MatrixXd& mean, Eigen::MatrixXd& log_std) {
  const Eigen::MatrixXd out = forward(p.trunk, obs);
  const int d = p.action_dim();
  mean = out.leftCols(d);
  log_std = out.rightCols(d).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

// Log density of the squashed action with the tanh Jacobian correction:
// log N(u; mean, std) - sum log(1 - tanh(u)^2 + eps).
inline double squashed_log_prob(const Eigen::RowVectorXd& xi,
                                const Eigen::RowVectorXd& log_std,
                                const Eigen::RowVectorXd& action) {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < xi.size(); ++i) {
    lp += -kHalfLog2Pi - log_std(i) - 0.5 * xi(i) * xi(i);
    lp -= std::log(1.0 - action(i) * action(i) + kTanhJacobianEps);
  }
  return lp;
}

// Stochastic mode: a = tanh(mean + std*xi); deterministic: a = tanh(mean)
// with no draw from the stream.
inline ActionSample sample_action(const GaussianPolicy& p,
                                  const Eigen::VectorXd& obs,
                                  bool deterministic, Rng& rng) {
  if (obs.size() != p.obs_dim())
    throw std::invalid_argument("sample_action: observation width mismatch");
  Eigen::MatrixXd mean, log_std;
  policy_heads(p, obs.transpose(), mean, log_std);
  const int d = p.action_dim();
  Eigen::RowVectorXd xi = Eigen::RowVectorXd::Zero(d);
  if (!deterministic)
    for (int i = 0; i < d; ++i) xi(i) = rng.normal();
  const Eigen::RowVectorXd u =
      mean.row(0) + log_std.row(0).array().exp().matrix().cwiseProduct(xi);
  ActionSample s;
  s.action = u.array().tanh().transpose();
  s.log_prob = squashed_log_prob(xi, log_std.row(0), s.action.transpose());
  return s;
}

// Batched stochastic sampling used for critic targets.
inline void sample_actions_batch(const GaussianPolicy& p,
                                 const Eigen::MatrixXd& obs, Rng& rng,
                                 Eigen::MatrixXd& actions,
                                 Eigen::VectorXd& log_probs) {
  Eigen::MatrixXd mean, log_std;
  policy_heads(p, obs, mean, log_std);
  const Eigen::Index m = obs.rows();
  const int d = p.action_dim();
  actions.resize(m, d);
  log_probs.resize(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    Eigen::RowVectorXd xi(d);
    for (int i = 0; i < d; ++i) xi(i) = rng.normal();
    const Eigen::RowVectorXd u =
        mean.row(r) + log_std.row(r).array().exp().matrix().cwiseProduct(xi);
    actions.row(r) = u.array().tanh();
    log_probs(r) = squashed_log_prob(xi, log_std.row(r), actions.row(r));
  }
}

// Adapter to the suite's policy interface.
inline PolicyFn policy_fn(const GaussianPolicy& p) {
  return [p](const Observation& obs, bool deterministic, Rng& rng) {
    const ActionSample s = sample_action(p, obs.to_vector(), deterministic, rng);
    return Eigen::Vector2d(s.action(0), s.action(1));
  };
}

// Deterministic policy with Gaussian noise added to the pre-squash mean,
// then re-squashed; used by the vulnerability probe.
inline PolicyFn noisy_policy_fn(const GaussianPolicy& p, double noise_sigma) {
  return [p, noise_sigma](const Observation& obs, bool, Rng& rng) {
    Eigen::MatrixXd mean, log_std;
    policy_heads(p, obs.to_vector().transpose(), mean, log_std);
    Eigen::RowVectorXd u = mean.row(0);
    for (Eigen::Index i = 0; i < u.size(); ++i)
      u(i) += rng.normal(0.0, noise_sigma);
    const Eigen::RowVectorXd a = u.array().tanh();
    return Eigen::Vector2d(a(0), a(1));
  };
}

struct Transition {
  Eigen::VectorXd obs;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_obs;
  bool done = false;
};

// Fixed-capacity ring buffer.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[next_] = std::move(t);
      next_ = (next_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return data_.size(); }
  const Transition& operator[](std::size_t i) const { return data_[i]; }

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> data_;
};

struct SacConfig {
  std::vector<int> hidden = {128, 128};
  Activation activation = Activation::kRelu;
  double lr = 3e-4;
  int batch_size = 256;
  int buffer_capacity = 100000;
  int warmup_steps = 1000;
  double tau_polyak = 0.005;
  double gamma = 0.99;
  double init_alpha = 0.2;
};

// Everything one SAC run owns. Target critics move only by Polyak
// averaging; the temperature stays positive through its exp
// parameterization.
struct SacState {
  SacConfig cfg;
  GaussianPolicy policy;
  NetParams q1, q2;
  NetParams q1_target, q2_target;
  double log_alpha = 0.0;
  double target_entropy = 0.0;
  ReplayBuffer buffer;
  AdamState opt_policy, opt_q1, opt_q2;
  ScalarAdam opt_alpha;

  double alpha() const { return std::exp(log_alpha); }
};

inline NetParams make_critic(int obs_dim, int action_dim,
                             const SacConfig& cfg, std::uint64_t seed) {
  std::vector<int> sizes;
  sizes.push_back(obs_dim + action_dim);
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(1);
  return net_init(sizes, cfg.activation, seed);
}

inline SacState make_sac(int obs_dim, int action_dim, const SacConfig& cfg,
                         const GaussianPolicy& init_policy,
                         std::uint64_t seed) {
  SacState s{.cfg = cfg,
             .policy = init_policy,
             .buffer = ReplayBuffer(static_cast<std::size_t>(cfg.buffer_capacity))};
  s.q1 = make_critic(obs_dim, action_dim, cfg, derive_seed(seed, "q1"));
  s.q2 = make_critic(obs_dim, action_dim, cfg, derive_seed(seed, "q2"));
  s.q1_target = s.q1;
  s.q2_target = s.q2;
  s.log_alpha = std::log(cfg.init_alpha);
  s.target_entropy = -static_cast<double>(action_dim);
  s.opt_policy = make_adam(s.policy.trunk, {cfg.lr});
  s.opt_q1 = make_adam(s.q1, {cfg.lr});
  s.opt_q2 = make_adam(s.q2, {cfg.lr});
  s.opt_alpha.cfg = {cfg.lr};
  return s;
}

struct SacLosses {
  double critic = 0.0;
  double actor = 0.0;
  double alpha = 0.0;
  double mean_log_prob = 0.0;
};

// Soft targets y = r + gamma (1-done)(min targetQ(s',a') - alpha log pi(a'|s'))
// with a' drawn fresh from the current policy. Computed outside any tape,
// so no gradient can reach target networks or the sampled actions.
inline Eigen::VectorXd critic_targets(const SacState& s,
                                      const std::vector<Transition>& batch,
                                      Rng& rng) {
  const Eigen::Index m = static_cast<Eigen::Index>(batch.size());
  const int od = s.policy.obs_dim();
  Eigen::MatrixXd next_obs(m, od);
  Eigen::VectorXd rewards(m), not_done(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    next_obs.row(i) = batch[i].next_obs;
    rewards(i) = batch[i].reward;
    not_done(i) = batch[i].done ? 0.0 : 1.0;
  }
  Eigen::MatrixXd next_actions;
  Eigen::VectorXd next_logp;
  sample_actions_batch(s.policy, next_obs, rng, next_actions, next_logp);
  Eigen::MatrixXd qin(m, od + s.policy.action_dim());
  qin << next_obs, next_actions;
  const Eigen::VectorXd tq1 = forward(s.q1_target, qin);
  const Eigen::VectorXd tq2 = forward(s.q2_target, qin);
  const Eigen::VectorXd soft_value =
      tq1.cwiseMin(tq2) - s.alpha() * next_logp;
  return rewards + s.cfg.gamma * not_done.cwiseProduct(soft_value);
}

// Optional extensions to the actor objective, used by the baseline
// learners (regularization penalties, auxiliary cloning terms).
struct SacUpdateHooks {
  // Returns an extra scalar loss node built on the actor tape, or -1.
  std::function<int(ad::Tape&, const TapeNet& policy_tn)> extra_actor_loss;
  // Adjusts policy gradients in place before the optimizer step.
  std::function<void(const GaussianPolicy&, NetGrads&)> adjust_policy_grads;
};

inline SacLosses sac_update(SacState& s, const std::vector<Transition>& batch,
                            Rng& rng, const SacUpdateHooks& hooks = {}) {
  if (batch.empty()) throw std::invalid_argument("sac_update: empty batch");
  const Eigen::Index m = static_cast<Eigen::Index>(batch.size());
  const int od = s.policy.obs_dim();
  const int ad_ = s.policy.action_dim();
  SacLosses losses;

  Eigen::MatrixXd obs(m, od), actions(m, ad_);
  for (Eigen::Index i = 0; i < m; ++i) {
    obs.row(i) = batch[i].obs;
    actions.row(i) = batch[i].action;
  }
  const Eigen::VectorXd y = critic_targets(s, batch, rng);

  // Critic regression.
  {
    ad::Tape tape;
    TapeNet q1n = insert_net(tape, s.q1, true);
    TapeNet q2n = insert_net(tape, s.q2, true);
    Eigen::MatrixXd qin(m, od + ad_);
    qin << obs, actions;
    int input = tape.constant(qin);
    int target = tape.constant(y);
    int l1 = tape.mean(tape.square(tape.sub(forward_on_tape(tape, q1n, input), target)));
    int l2 = tape.mean(tape.square(tape.sub(forward_on_tape(tape, q2n, input), target)));
    int loss = tape.add(l1, l2);
    losses.critic = tape.value(loss)(0, 0);
    tape.backward(loss);
    NetGrads g1 = grads_of(tape, q1n);
    NetGrads g2 = grads_of(tape, q2n);
    adam_step(s.q1, g1, s.opt_q1);
    adam_step(s.q2, g2, s.opt_q2);
  }

  // Actor: minimize alpha*log pi - min Q over reparameterized actions.
  double mean_logp = 0.0;
  {
    Eigen::MatrixXd xi(m, ad_);
    for (Eigen::Index r = 0; r < m; ++r)
      for (int c = 0; c < ad_; ++c) xi(r, c) = rng.normal();

    ad::Tape tape;
    TapeNet pol = insert_net(tape, s.policy.trunk, true);
    TapeNet q1n = insert_net(tape, s.q1, false);
    TapeNet q2n = insert_net(tape, s.q2, false);
    int obs_node = tape.constant(obs);
    int heads = forward_on_tape(tape, pol, obs_node);
    int mu = tape.slice_cols(heads, 0, ad_);
    int log_std = tape.clamp(tape.slice_cols(heads, ad_, ad_), kLogStdMin, kLogStdMax);
    int u = tape.add(mu, tape.mul(tape.exp(log_std), tape.constant(xi)));
    int a = tape.tanh(u);
    // log N(u; mu, std) reduces to -0.5 ln 2pi - log_std - xi^2/2 under the
    // reparameterization (the location terms cancel exactly).
    Eigen::MatrixXd gauss_const =
        (-kHalfLog2Pi - 0.5 * xi.array().square()).matrix();
    int gauss = tape.sub(tape.constant(gauss_const), log_std);
    int jac = tape.log(tape.add_scalar(tape.neg(tape.square(a)),
                                       1.0 + kTanhJacobianEps));
    int logp_rows = tape.row_sum(tape.sub(gauss, jac));
    int qin = tape.concat_cols(obs_node, a);
    int qmin = tape.minimum(forward_on_tape(tape, q1n, qin),
                            forward_on_tape(tape, q2n, qin));
    int actor_loss =
        tape.mean(tape.sub(tape.scale(logp_rows, s.alpha()), qmin));
    int total = actor_loss;
    if (hooks.extra_actor_loss) {
      const int extra = hooks.extra_actor_loss(tape, pol);
      if (extra >= 0) total = tape.add(total, extra);
    }
    losses.actor = tape.value(actor_loss)(0, 0);
    mean_logp = tape.value(logp_rows).mean();
    tape.backward(total);
    NetGrads g = grads_of(tape, pol);
    if (hooks.adjust_policy_grads) hooks.adjust_policy_grads(s.policy, g);
    adam_step(s.policy.trunk, g, s.opt_policy);
  }

  // Temperature: minimize -alpha * (log pi + target entropy), detached.
  {
    const double c = mean_logp + s.target_entropy;
    losses.alpha = -s.alpha() * c;
    const double grad_log_alpha = -s.alpha() * c;
    s.opt_alpha.update(s.log_alpha, grad_log_alpha);
  }

  // Polyak-averaged target critics.
  {
    const double tau = s.cfg.tau_polyak;
    for (std::size_t i = 0; i < s.q1.weights.size(); ++i) {
      s.q1_target.weights[i] = (1 - tau) * s.q1_target.weights[i] + tau * s.q1.weights[i];
      s.q1_target.biases[i] = (1 - tau) * s.q1_target.biases[i] + tau * s.q1.biases[i];
      s.q2_target.weights[i] = (1 - tau) * s.q2_target.weights[i] + tau * s.q2.weights[i];
      s.q2_target.biases[i] = (1 - tau) * s.q2_target.biases[i] + tau * s.q2.biases[i];
    }
  }

  losses.mean_log_prob = mean_logp;
  return losses;
}

struct EpisodeRecord {
  int episode = 0;
  int steps = 0;
  double episode_return = 0.0;
  bool success = false;
  Trajectory trajectory;
};

struct TrainResult {
  GaussianPolicy policy;
  std::vector<EpisodeRecord> episodes;
  // Carried state for learners that continue training across tasks.
  NetParams q1, q2, q1_target, q2_target;
  double log_alpha = 0.0;
};

// Optional warm start for critics/temperature (sequential learners carry
// them across tasks; the per-task immediate policy starts them fresh).
struct CriticsCarry {
  NetParams q1, q2, q1_target, q2_target;
  double log_alpha = 0.0;
};

// Environment interaction with stochastic actions and one gradient update
// per environment step once past warmup. Episodes always run to
// completion, so the last one may overshoot the step budget.
inline TrainResult train_policy_sac(const TaskSpec& task, const SacConfig& cfg,
                                    const GaussianPolicy& init_policy,
                                    const std::optional<CriticsCarry>& carry,
                                    int budget_steps, std::uint64_t root_seed,
                                    std::uint64_t task_tag,
                                    const SacUpdateHooks& hooks = {}) {
  if (budget_steps < 0)
    throw std::invalid_argument("train_policy_sac: negative budget");
  const int od = init_policy.obs_dim();
  const int ad_ = init_policy.action_dim();
  SacState s = make_sac(od, ad_, cfg, init_policy,
                        derive_seed(root_seed, "sac_init", task_tag));
  if (carry) {
    s.q1 = carry->q1;
    s.q2 = carry->q2;
    s.q1_target = carry->q1_target;
    s.q2_target = carry->q2_target;
    s.log_alpha = carry->log_alpha;
  }
  Rng update_rng = stream(root_seed, "sac_update", task_tag);

  TrainResult result;
  int total_steps = 0;
  const int H = task.horizon;
  for (int episode = 0; total_steps < budget_steps; ++episode) {
    Rng env_rng = stream(root_seed, "sac_episode", task_tag, episode);
    State st = reset(task, env_rng.next_u64());
    Trajectory traj;
    traj.states = Eigen::MatrixXd::Zero(H, kStateDim);
    traj.actions = Eigen::MatrixXd::Zero(H, kActionDim);
    traj.rewards = Eigen::VectorXd::Zero(H);
    traj.task_id = task.task_id;
    bool succeeded = false;
    int t = 0;
    for (; t < H; ++t) {
      const Observation obs{st, task.task_id, task.num_tasks};
      const Eigen::VectorXd obs_vec = obs.to_vector();
      const ActionSample as = sample_action(s.policy, obs_vec, false, env_rng);
      const Eigen::Vector2d act(as.action(0), as.action(1));
      const StepResult sr = step(task, st, act);
      traj.states.row(t) = st;
      traj.actions.row(t) = act;
      traj.rewards(t) = sr.reward;

      Observation next_obs{sr.next_state, task.task_id, task.num_tasks};
      s.buffer.push(Transition{obs_vec, as.action, sr.reward,
                               next_obs.to_vector(), sr.done});
      st = sr.next_state;
      ++total_steps;

      if (total_steps > cfg.warmup_steps &&
          s.buffer.size() >= static_cast<std::size_t>(cfg.batch_size)) {
        std::vector<Transition> batch;
        batch.reserve(cfg.batch_size);
        for (int b = 0; b < cfg.batch_size; ++b)
          batch.push_back(s.buffer[update_rng.randint(s.buffer.size())]);
        sac_update(s, batch, update_rng, hooks);
      }
      if (sr.done) {
        succeeded = true;
        ++t;
        break;
      }
    }
    traj.true_length = t;
    traj.success = succeeded;
    for (int i = t; i < H; ++i) traj.states.row(i) = st;

    EpisodeRecord rec;
    rec.episode = episode;
    rec.steps = t;
    rec.episode_return = traj.rewards.sum();
    rec.success = traj.success;
    rec.trajectory = std::move(traj);
    result.episodes.push_back(std::move(rec));
  }
  result.policy = s.policy;
  result.q1 = s.q1;
  result.q2 = s.q2;
  result.q1_target = s.q1_target;
  result.q2_target = s.q2_target;
  result.log_alpha = s.log_alpha;
  return result;
}

}  // namespace distr
