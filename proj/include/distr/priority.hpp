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
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "distr/sac.hpp"
#include "distr/tasksuite.hpp"

namespace distr {

// Replay priority of one completed task: vulnerable tasks (performance
// collapses under output perturbation) and specific tasks (a transferred
// policy starts from nothing) get replayed more.
struct TaskPriorityRecord {
  int task_id = 0;
  double s_k = 0.0;      // success rate right after learning the task
  double s_hat_k = 0.0;  // success rate under perturbed outputs
  double s_v = 0.0;      // vulnerability, clamp(s_k - s_hat_k, 0, 1)
  double s_s = 0.0;      // specificity probe, initial success on arrival
  double priority = 0.0;
};

inline double priority_value(double s_v, double s_s) {
  return (s_v + 1.0 - s_s) / 2.0;
}

struct VulnerabilityResult {
  double s_k = 0.0;
  double s_hat_k = 0.0;
  double s_v = 0.0;
};

// Clean deterministic success rate versus the mean over n_repeats of
// rerunning with N(0, sigma^2) noise on the pre-squash action mean.
inline VulnerabilityResult vulnerability(const GaussianPolicy& policy,
                                         const TaskSpec& task,
                                         double noise_sigma, int n_eval,
                                         int n_repeats, std::uint64_t seed) {
  if (noise_sigma < 0.0)
    throw std::invalid_argument("vulnerability: noise_sigma must be >= 0");
  if (n_eval < 1 || n_repeats < 1)
    throw std::invalid_argument("vulnerability: n_eval and n_repeats must be >= 1");
  VulnerabilityResult r;
  r.s_k = success_rate(task, policy_fn(policy), n_eval,
                       derive_seed(seed, "vuln_clean"));
  double acc = 0.0;
  const PolicyFn noisy = noisy_policy_fn(policy, noise_sigma);
  for (int rep = 0; rep < n_repeats; ++rep)
    acc += success_rate(task, noisy, n_eval, derive_seed(seed, "vuln_noisy", rep));
  r.s_hat_k = acc / n_repeats;
  r.s_v = std::clamp(r.s_k - r.s_hat_k, 0.0, 1.0);
  return r;
}

// Initial success rate of the general policy on a task it has never been
// trained on; callers must probe before any update for the task.
inline double specificity_probe(const GaussianPolicy& policy,
                                const TaskSpec& task, int n_eval,
                                std::uint64_t seed) {
  return success_rate(task, policy_fn(policy), n_eval,
                      derive_seed(seed, "specificity"));
}

// Normalized replay probabilities; an all-zero priority vector falls back
// to uniform.
inline std::vector<double> priorities(const std::vector<TaskPriorityRecord>& records) {
  if (records.empty())
    throw std::invalid_argument("priorities: no records");
  std::vector<double> p(records.size());
  double total = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    p[i] = records[i].priority;
    total += p[i];
  }
  if (total <= 0.0) {
    std::fill(p.begin(), p.end(), 1.0 / records.size());
    return p;
  }
  for (double& v : p) v /= total;
  return p;
}

// Draw up to budget distinct task indices by successive proportional
// draws without replacement; a pool no bigger than the budget is returned
// whole. Indices come back sorted.
inline std::vector<int> sample_replay_tasks(const std::vector<double>& probs,
                                            int budget, Rng& rng) {
  if (budget < 0) throw std::invalid_argument("sample_replay_tasks: budget < 0");
  const int n = static_cast<int>(probs.size());
  std::vector<int> chosen;
  if (n <= budget) {
    for (int i = 0; i < n; ++i) chosen.push_back(i);
    return chosen;
  }
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = i;
  std::vector<double> weight = probs;
  for (int draw = 0; draw < budget; ++draw) {
    double total = 0.0;
    for (int i : pool) total += weight[i];
    std::size_t pick_pos = pool.size() - 1;
    if (total <= 0.0) {
      // Remaining mass exhausted: uniform over what is left.
      pick_pos = static_cast<std::size_t>(rng.randint(pool.size()));
    } else {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t p = 0; p < pool.size(); ++p) {
        acc += weight[pool[p]];
        if (u < acc) {
          pick_pos = p;
          break;
        }
      }
    }
    chosen.push_back(pool[pick_pos]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick_pos));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace distr
