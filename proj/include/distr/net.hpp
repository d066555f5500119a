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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distr/autodiff.hpp"
#include "distr/rng.hpp"

namespace distr {

using Matrix = Eigen::MatrixXd;

enum class Activation { kTanh, kRelu, kIdentity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  throw std::logic_error("bad activation");
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation: " + s);
}

// Fully connected net. weights[l] is (in x out); biases[l] is (1 x out).
// The activation applies to every hidden layer; the output layer is linear.
struct NetParams {
  std::vector<int> layer_sizes;
  Activation activation = Activation::kTanh;
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(weights.size()); }

  bool all_finite() const {
    for (const Matrix& w : weights)
      if (!w.allFinite()) return false;
    for (const Matrix& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }
};

// Gradients (or any other same-shaped per-parameter quantity, e.g. Adam
// moments or Fisher estimates).
struct NetGrads {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;

  bool all_finite() const {
    for (const Matrix& w : weights)
      if (!w.allFinite()) return false;
    for (const Matrix& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }
};

inline NetGrads zeros_like(const NetParams& p) {
  NetGrads g;
  for (const Matrix& w : p.weights) g.weights.push_back(Matrix::Zero(w.rows(), w.cols()));
  for (const Matrix& b : p.biases) g.biases.push_back(Matrix::Zero(b.rows(), b.cols()));
  return g;
}

// Scaled-uniform init: W ~ U(-s, s) with s = sqrt(1/fan_in), biases zero.
inline NetParams net_init(const std::vector<int>& layer_sizes,
                          Activation activation, std::uint64_t seed) {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("net_init: need at least 2 layer sizes");
  for (int s : layer_sizes)
    if (s < 1) throw std::invalid_argument("net_init: layer sizes must be >= 1");
  NetParams p;
  p.layer_sizes = layer_sizes;
  p.activation = activation;
  Rng rng = stream(seed, "net_init");
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    const double s = std::sqrt(1.0 / fan_in);
    p.weights.push_back(rng.uniform_matrix(fan_in, fan_out, -s, s));
    p.biases.push_back(Matrix::Zero(1, fan_out));
  }
  return p;
}

// Inference path; input rows are batch items.
inline Matrix forward(const NetParams& p, const Matrix& input) {
  if (input.cols() != p.input_dim())
    throw std::invalid_argument(
        "forward: input width " + std::to_string(input.cols()) +
        " != first layer size " + std::to_string(p.input_dim()));
  Matrix h = input;
  for (int l = 0; l < p.num_layers(); ++l) {
    Matrix z = h * p.weights[l];
    z.rowwise() += p.biases[l].row(0);
    if (l + 1 < p.num_layers()) {
      switch (p.activation) {
        case Activation::kTanh: h = z.array().tanh(); break;
        case Activation::kRelu: h = z.cwiseMax(0.0); break;
        case Activation::kIdentity: h = std::move(z); break;
      }
    } else {
      h = std::move(z);
    }
  }
  return h;
}

// Node ids of one net's parameters on a tape.
struct TapeNet {
  std::vector<int> weights;
  std::vector<int> biases;
  Activation activation = Activation::kTanh;
};

inline TapeNet insert_net(ad::Tape& tape, const NetParams& p, bool trainable) {
  TapeNet tn;
  tn.activation = p.activation;
  for (const Matrix& w : p.weights) tn.weights.push_back(tape.input(w, trainable));
  for (const Matrix& b : p.biases) tn.biases.push_back(tape.input(b, trainable));
  return tn;
}

inline int forward_on_tape(ad::Tape& tape, const TapeNet& tn, int input) {
  int h = input;
  const int L = static_cast<int>(tn.weights.size());
  for (int l = 0; l < L; ++l) {
    int z = tape.add_bias(tape.matmul(h, tn.weights[l]), tn.biases[l]);
    if (l + 1 < L) {
      switch (tn.activation) {
        case Activation::kTanh: h = tape.tanh(z); break;
        case Activation::kRelu: h = tape.relu(z); break;
        case Activation::kIdentity: h = z; break;
      }
    } else {
      h = z;
    }
  }
  return h;
}

inline NetGrads grads_of(const ad::Tape& tape, const TapeNet& tn) {
  NetGrads g;
  for (int id : tn.weights) g.weights.push_back(tape.grad(id));
  for (int id : tn.biases) g.biases.push_back(tape.grad(id));
  return g;
}

// Exact reverse-mode gradients of a scalar loss built from the supported
// tape primitives.
inline NetGrads gradients(
    const NetParams& p,
    const std::function<int(ad::Tape&, const TapeNet&)>& build_loss) {
  ad::Tape tape;
  TapeNet tn = insert_net(tape, p, /*trainable=*/true);
  int loss = build_loss(tape, tn);
  tape.backward(loss);
  return grads_of(tape, tn);
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  long long step = 0;
  NetGrads m;
  NetGrads v;
};

inline AdamState make_adam(const NetParams& p, AdamConfig cfg) {
  AdamState s;
  s.cfg = cfg;
  s.m = zeros_like(p);
  s.v = zeros_like(p);
  return s;
}

namespace detail {
inline void adam_update_one(Matrix& theta, const Matrix& g, Matrix& m, Matrix& v,
                            const AdamConfig& c, double bc1, double bc2) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  const Matrix m_hat = m / bc1;
  const Matrix v_hat = v / bc2;
  theta.array() -= c.lr * m_hat.array() / (v_hat.array().sqrt() + c.eps);
}
}  // namespace detail

// Standard Adam with bias correction. Non-finite gradients abort the
// update before any state is touched.
inline void adam_step(NetParams& p, const NetGrads& g, AdamState& s) {
  if (g.weights.size() != p.weights.size() || g.biases.size() != p.biases.size())
    throw std::invalid_argument("adam_step: gradient/parameter layout mismatch");
  if (!g.all_finite())
    throw std::runtime_error("adam_step: non-finite gradient");
  s.step += 1;
  const double bc1 = 1.0 - std::pow(s.cfg.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.cfg.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    if (g.weights[i].rows() != p.weights[i].rows() ||
        g.weights[i].cols() != p.weights[i].cols())
      throw std::invalid_argument("adam_step: weight gradient shape mismatch");
    detail::adam_update_one(p.weights[i], g.weights[i], s.m.weights[i],
                            s.v.weights[i], s.cfg, bc1, bc2);
  }
  for (std::size_t i = 0; i < p.biases.size(); ++i) {
    if (g.biases[i].rows() != p.biases[i].rows() ||
        g.biases[i].cols() != p.biases[i].cols())
      throw std::invalid_argument("adam_step: bias gradient shape mismatch");
    detail::adam_update_one(p.biases[i], g.biases[i], s.m.biases[i],
                            s.v.biases[i], s.cfg, bc1, bc2);
  }
}

// Adam over a single scalar (used for the SAC entropy temperature).
struct ScalarAdam {
  AdamConfig cfg;
  long long step = 0;
  double m = 0.0;
  double v = 0.0;

  void update(double& theta, double g) {
    if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient");
    step += 1;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m / (1.0 - std::pow(cfg.beta1, static_cast<double>(step)));
    const double v_hat = v / (1.0 - std::pow(cfg.beta2, static_cast<double>(step)));
    theta -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
};

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  return m;
}

inline nlohmann::json net_to_json(const NetParams& p) {
  nlohmann::json j;
  j["layer_sizes"] = p.layer_sizes;
  j["activation"] = to_string(p.activation);
  nlohmann::json ws = nlohmann::json::array();
  for (const Matrix& w : p.weights) ws.push_back(matrix_to_json(w));
  j["weights"] = std::move(ws);
  nlohmann::json bs = nlohmann::json::array();
  for (const Matrix& b : p.biases) bs.push_back(matrix_to_json(b));
  j["biases"] = std::move(bs);
  return j;
}

inline NetParams net_from_json(const nlohmann::json& j) {
  NetParams p;
  p.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  p.activation = activation_from_string(j.at("activation").get<std::string>());
  for (const auto& w : j.at("weights")) p.weights.push_back(matrix_from_json(w));
  for (const auto& b : j.at("biases")) p.biases.push_back(matrix_from_json(b));
  if (p.weights.size() + 1 != p.layer_sizes.size() ||
      p.biases.size() != p.weights.size())
    throw std::invalid_argument("net_from_json: inconsistent checkpoint");
  return p;
}

}  // namespace distr
