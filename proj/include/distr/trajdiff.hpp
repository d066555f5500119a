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
#include <stdexcept>
#include <vector>

#include "distr/net.hpp"
#include "distr/tasksuite.hpp"

namespace distr {

// Forward-process schedule. Arrays are indexed by step-1 for steps
// t = 1..T. alpha_bar must decay low enough that x_T is effectively
// pure noise.
struct NoiseSchedule {
  int num_steps = 0;
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  Eigen::VectorXd alpha_bar;
  Eigen::VectorXd sigma;  // posterior noise scale, sqrt(beta)
};

// Default schedule: a short chain with wide beta keeps the per-step
// correction gains (1/sqrt(1-alpha_bar_t)) small enough for an MLP
// denoiser to fit, while alpha_bar_T ~ 0.007 stays below the 0.01 decay
// requirement.
inline constexpr int kDefaultDiffusionSteps = 25;
inline constexpr double kDefaultBetaStart = 0.05;
inline constexpr double kDefaultBetaEnd = 0.3;

inline NoiseSchedule make_schedule(int num_steps, double beta_start,
                                   double beta_end) {
  if (num_steps < 1)
    throw std::invalid_argument("make_schedule: need at least one step");
  if (!(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument(
        "make_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.num_steps = num_steps;
  s.beta.resize(num_steps);
  s.alpha.resize(num_steps);
  s.alpha_bar.resize(num_steps);
  s.sigma.resize(num_steps);
  double prod = 1.0;
  for (int i = 0; i < num_steps; ++i) {
    const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i) / (num_steps - 1);
    s.beta(i) = beta_start + (beta_end - beta_start) * frac;
    s.alpha(i) = 1.0 - s.beta(i);
    prod *= s.alpha(i);
    s.alpha_bar(i) = prod;
    s.sigma(i) = std::sqrt(s.beta(i));
  }
  return s;
}

// A whole trajectory as one sample: H x D with D = state + action dims,
// normalized to [-1, 1] by fixed per-dimension bounds.
struct TrajTensor {
  Eigen::MatrixXd data;
  int task_id = 0;
};

// Fixed normalization bounds derived from suite constants, never from
// data, so they cannot drift across tasks. Position and velocity bounds
// default to powers of two, which keeps the round-trip exact.
struct NormBounds {
  Eigen::VectorXd half_range;

  static NormBounds for_suite(const SuiteConfig& cfg) {
    NormBounds b;
    b.half_range.resize(kStateDim + kActionDim);
    b.half_range << 2.0, 2.0, cfg.vmax, cfg.vmax, 1.0, 1.0;
    return b;
  }
};

inline TrajTensor normalize_trajectory(const Trajectory& tr,
                                       const NormBounds& bounds) {
  const int H = static_cast<int>(tr.states.rows());
  TrajTensor t;
  t.task_id = tr.task_id;
  t.data.resize(H, kStateDim + kActionDim);
  t.data << tr.states, tr.actions;
  for (int c = 0; c < t.data.cols(); ++c) t.data.col(c) /= bounds.half_range(c);
  // Real data is expected in bounds; anything past them clips to the edge.
  t.data = t.data.cwiseMax(-1.0).cwiseMin(1.0);
  return t;
}

inline Trajectory denormalize_trajectory(const TrajTensor& t,
                                         const NormBounds& bounds) {
  const int H = static_cast<int>(t.data.rows());
  Eigen::MatrixXd scaled = t.data;
  for (int c = 0; c < scaled.cols(); ++c) scaled.col(c) *= bounds.half_range(c);
  Trajectory tr;
  tr.states = scaled.leftCols(kStateDim);
  tr.actions = scaled.rightCols(kActionDim);
  tr.rewards = Eigen::VectorXd::Zero(H);
  tr.true_length = H;
  tr.success = false;
  tr.task_id = t.task_id;
  return tr;
}

// Closed-form forward noising: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
inline Eigen::MatrixXd q_sample(const Eigen::MatrixXd& x0, int t,
                                const Eigen::MatrixXd& eps,
                                const NoiseSchedule& s) {
  if (t < 1 || t > s.num_steps)
    throw std::invalid_argument("q_sample: step out of range");
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols())
    throw std::invalid_argument("q_sample: eps shape mismatch");
  const double ab = s.alpha_bar(t - 1);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

// Noise-prediction net over whole trajectories, conditioned on the
// diffusion step (sinusoidal embedding) and the task id (one-hot).
struct Denoiser {
  NetParams net;
  int horizon = 0;
  int num_tasks = 0;
  int t_embed_dim = 32;

  int traj_dim() const { return horizon * (kStateDim + kActionDim); }
  int input_dim() const { return traj_dim() + t_embed_dim + num_tasks; }
};

inline Denoiser make_denoiser(int horizon, int num_tasks,
                              const std::vector<int>& hidden,
                              std::uint64_t seed, int t_embed_dim = 32) {
  Denoiser d;
  d.horizon = horizon;
  d.num_tasks = num_tasks;
  d.t_embed_dim = t_embed_dim;
  std::vector<int> sizes;
  sizes.push_back(d.input_dim());
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(d.traj_dim());
  d.net = net_init(sizes, Activation::kRelu, seed);
  return d;
}

inline Eigen::RowVectorXd step_embedding(int t, int dim) {
  Eigen::RowVectorXd e(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    e(2 * i) = std::sin(t * freq);
    e(2 * i + 1) = std::cos(t * freq);
  }
  return e;
}

// Row-major (step-major) flattening of an H x D trajectory.
inline Eigen::RowVectorXd flatten_traj(const Eigen::MatrixXd& m) {
  Eigen::RowVectorXd v(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    v.segment(r * m.cols(), m.cols()) = m.row(r);
  return v;
}

inline Eigen::MatrixXd unflatten_traj(const Eigen::RowVectorXd& v, int horizon) {
  const int d = static_cast<int>(v.size()) / horizon;
  Eigen::MatrixXd m(horizon, d);
  for (int r = 0; r < horizon; ++r) m.row(r) = v.segment(r * d, d);
  return m;
}

// Conditioning block [t_embed | task_onehot] for one row.
inline Eigen::RowVectorXd denoiser_condition(const Denoiser& d, int t,
                                             int task_id) {
  if (task_id < 0 || task_id >= d.num_tasks)
    throw std::invalid_argument("denoiser: task id out of range");
  Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(d.t_embed_dim + d.num_tasks);
  c.head(d.t_embed_dim) = step_embedding(t, d.t_embed_dim);
  c(d.t_embed_dim + task_id) = 1.0;
  return c;
}

// Predict noise for a batch of flattened trajectories; ts and task_ids
// are per row.
inline Eigen::MatrixXd predict_noise(const Denoiser& d,
                                     const Eigen::MatrixXd& x_flat,
                                     const std::vector<int>& ts,
                                     const std::vector<int>& task_ids) {
  const Eigen::Index n = x_flat.rows();
  Eigen::MatrixXd input(n, d.input_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    input.row(i).head(d.traj_dim()) = x_flat.row(i);
    input.row(i).tail(d.t_embed_dim + d.num_tasks) =
        denoiser_condition(d, ts[i], task_ids[i]);
  }
  return forward(d.net, input);
}

// One reverse transition: x_{t-1} = mu_theta(x_t, t) + sigma_t z, with no
// noise term on the final step. mu_theta follows the standard
// noise-prediction parameterization.
inline Eigen::MatrixXd denoise_step(const Denoiser& d,
                                    const Eigen::MatrixXd& x_t, int t,
                                    int task_id, const NoiseSchedule& s,
                                    const Eigen::MatrixXd& z) {
  if (t < 1 || t > s.num_steps)
    throw std::invalid_argument("denoise_step: step out of range");
  if (z.rows() != x_t.rows() || z.cols() != x_t.cols())
    throw std::invalid_argument("denoise_step: z shape mismatch");
  Eigen::MatrixXd flat(1, x_t.size());
  flat.row(0) = flatten_traj(x_t);
  const Eigen::MatrixXd eps = predict_noise(d, flat, {t}, {task_id});
  const double beta = s.beta(t - 1);
  const double alpha = s.alpha(t - 1);
  const double ab = s.alpha_bar(t - 1);
  Eigen::RowVectorXd mu =
      (flat.row(0) - (beta / std::sqrt(1.0 - ab)) * eps.row(0)) /
      std::sqrt(alpha);
  Eigen::MatrixXd out = unflatten_traj(mu, static_cast<int>(x_t.rows()));
  if (t > 1) out += s.sigma(t - 1) * z;
  return out;
}

// Elementwise mean absolute error; the training objective.
inline double l1_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("l1_loss: shape mismatch");
  return (pred - target).cwiseAbs().mean();
}

// One optimization step: per item, draw a uniform step t and fresh noise,
// noise the trajectory with the closed form and regress the noise under
// an L1 loss.
inline double train_step(Denoiser& d, const std::vector<TrajTensor>& batch,
                         const NoiseSchedule& s, AdamState& opt, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd input(n, d.input_dim());
  Eigen::MatrixXd target(n, d.traj_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const TrajTensor& item = batch[i];
    if (item.data.rows() != d.horizon ||
        item.data.cols() != kStateDim + kActionDim)
      throw std::invalid_argument("train_step: trajectory shape mismatch");
    const int t = 1 + static_cast<int>(rng.randint(s.num_steps));
    const Eigen::MatrixXd eps =
        rng.normal_matrix(item.data.rows(), item.data.cols());
    const Eigen::MatrixXd x_t = q_sample(item.data, t, eps, s);
    input.row(i).head(d.traj_dim()) = flatten_traj(x_t);
    input.row(i).tail(d.t_embed_dim + d.num_tasks) =
        denoiser_condition(d, t, item.task_id);
    target.row(i) = flatten_traj(eps);
  }

  ad::Tape tape;
  TapeNet tn = insert_net(tape, d.net, /*trainable=*/true);
  int out = forward_on_tape(tape, tn, tape.constant(input));
  int loss = tape.mean(tape.abs(tape.sub(out, tape.constant(target))));
  const double loss_value = tape.value(loss)(0, 0);
  if (!std::isfinite(loss_value))
    throw std::runtime_error("train_step: non-finite diffusion loss");
  tape.backward(loss);
  NetGrads g = grads_of(tape, tn);
  adam_step(d.net, g, opt);
  return loss_value;
}

// Full reverse chain from pure noise, batched over n samples. The final
// output clamps to [-1, 1] so downstream consumers always see valid
// normalized values.
inline std::vector<TrajTensor> sample_trajectories(const Denoiser& d,
                                                   int task_id, int n,
                                                   const NoiseSchedule& s,
                                                   std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_trajectories: n must be >= 1");
  Rng rng = stream(seed, "diffusion_sample");
  const int dim = d.traj_dim();
  Eigen::MatrixXd x = rng.normal_matrix(n, dim);
  std::vector<int> ts(n);
  std::vector<int> ids(n, task_id);
  for (int t = s.num_steps; t >= 1; --t) {
    std::fill(ts.begin(), ts.end(), t);
    const Eigen::MatrixXd eps = predict_noise(d, x, ts, ids);
    const double beta = s.beta(t - 1);
    const double alpha = s.alpha(t - 1);
    const double ab = s.alpha_bar(t - 1);
    x = (x - (beta / std::sqrt(1.0 - ab)) * eps) / std::sqrt(alpha);
    if (t > 1) x += s.sigma(t - 1) * rng.normal_matrix(n, dim);
  }
  x = x.cwiseMax(-1.0).cwiseMin(1.0);
  std::vector<TrajTensor> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i)
    out.push_back(TrajTensor{unflatten_traj(x.row(i), d.horizon), task_id});
  return out;
}

// Continual fit on the union of the current task's real set and
// previously generated sets. Callers must generate the replayed sets from
// the pre-update denoiser before calling; training then covers the union
// with shuffled minibatches, ceil(n / batch) per epoch. The learning rate
// decays linearly to zero: the L1 objective has sign-magnitude gradients,
// so a constant rate under Adam leaves a noise floor proportional to it.
inline void continual_fit(Denoiser& d, const std::vector<TrajTensor>& real_set,
                          const std::vector<std::vector<TrajTensor>>& replayed_sets,
                          int epochs, const NoiseSchedule& s, double lr,
                          int batch_size, std::uint64_t seed) {
  if (real_set.empty())
    throw std::invalid_argument("continual_fit: real set must be non-empty");
  std::vector<const TrajTensor*> pool;
  for (const TrajTensor& t : real_set) pool.push_back(&t);
  for (const auto& set : replayed_sets)
    for (const TrajTensor& t : set) pool.push_back(&t);

  AdamState opt = make_adam(d.net, {lr});
  Rng rng = stream(seed, "diffusion_fit");
  const int n = static_cast<int>(pool.size());
  const int batches = (n + batch_size - 1) / batch_size;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int e = 0; e < epochs; ++e) {
    opt.cfg.lr = lr * (1.0 - static_cast<double>(e) / epochs);
    rng.shuffle(order);
    for (int b = 0; b < batches; ++b) {
      std::vector<TrajTensor> batch;
      for (int i = b * batch_size; i < std::min(n, (b + 1) * batch_size); ++i)
        batch.push_back(*pool[order[i]]);
      train_step(d, batch, s, opt, rng);
    }
  }
}

inline nlohmann::json denoiser_to_json(const Denoiser& d) {
  nlohmann::json j;
  j["horizon"] = d.horizon;
  j["num_tasks"] = d.num_tasks;
  j["t_embed_dim"] = d.t_embed_dim;
  j["net"] = net_to_json(d.net);
  return j;
}

inline Denoiser denoiser_from_json(const nlohmann::json& j) {
  Denoiser d;
  d.horizon = j.at("horizon").get<int>();
  d.num_tasks = j.at("num_tasks").get<int>();
  d.t_embed_dim = j.at("t_embed_dim").get<int>();
  d.net = net_from_json(j.at("net"));
  return d;
}

}  // namespace distr
