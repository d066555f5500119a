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

#include "distr/sac.hpp"

namespace distr_test {

// Linear GaussianPolicy implementing the proportional controller for one
// task: mean = sign * (kp (goal - p) - kd v), log_std pinned low. Behaves
// like a trained expert without any training.
inline distr::GaussianPolicy controller_policy(const distr::TaskSpec& task,
                                               double log_std_bias = -4.0) {
  const int od = distr::kStateDim + task.num_tasks;
  distr::NetParams net;
  net.layer_sizes = {od, 4};
  net.activation = distr::Activation::kIdentity;
  distr::Matrix w = distr::Matrix::Zero(od, 4);
  const double kp = 4.0, kd = 2.0;
  w(0, 0) = -kp * task.action_sign;
  w(2, 0) = -kd * task.action_sign;
  w(1, 1) = -kp * task.action_sign;
  w(3, 1) = -kd * task.action_sign;
  distr::Matrix b = distr::Matrix::Zero(1, 4);
  b(0, 0) = kp * task.action_sign * task.goal(0);
  b(0, 1) = kp * task.action_sign * task.goal(1);
  b(0, 2) = log_std_bias;
  b(0, 3) = log_std_bias;
  net.weights = {w};
  net.biases = {b};
  return distr::GaussianPolicy{net};
}

inline bool nets_equal(const distr::NetParams& a, const distr::NetParams& b) {
  if (a.layer_sizes != b.layer_sizes) return false;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l] != b.weights[l]) return false;
    if (a.biases[l] != b.biases[l]) return false;
  }
  return true;
}

inline double max_param_delta(const distr::NetParams& a,
                              const distr::NetParams& b) {
  double worst = 0.0;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    worst = std::max(worst,
                     (a.weights[l] - b.weights[l]).cwiseAbs().maxCoeff());
    worst = std::max(worst, (a.biases[l] - b.biases[l]).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace distr_test
