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

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace distr::ad {

using Matrix = Eigen::MatrixXd;

// Reverse-mode tape over dense double matrices. Nodes are created in
// topological order; backward() walks them in reverse. Gradients only
// accumulate into nodes marked requires_grad (leafs and anything
// reachable from one), so constant subgraphs cost nothing on the way
// back.
class Tape {
 public:
  int input(Matrix value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int constant(Matrix value) { return input(std::move(value), false); }
  int leaf(Matrix value) { return input(std::move(value), true); }

  const Matrix& value(int id) const { return nodes_.at(id).value; }

  // Gradient of the last backward() target w.r.t. node id; zeros if the
  // node never received one.
  Matrix grad(int id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  int matmul(int a, int b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.cols() != bv.rows()) shape_error("matmul", a, b);
    int id = make(av * bv, {a, b});
    nodes_[id].back = [a, b](Tape& t, const Matrix& g) {
      t.accum(a, g * t.value(b).transpose());
      t.accum(b, t.value(a).transpose() * g);
    };
    return id;
  }

  int add(int a, int b) {
    check_same_shape("add", a, b);
    int id = make(value(a) + value(b), {a, b});
    nodes_[id].back = [a, b](Tape& t, const Matrix& g) {
      t.accum(a, g);
      t.accum(b, g);
    };
    return id;
  }

  // a is m x n, bias is 1 x n, broadcast over rows.
  int add_bias(int a, int bias) {
    const Matrix& av = value(a);
    const Matrix& bv = value(bias);
    if (bv.rows() != 1 || bv.cols() != av.cols()) shape_error("add_bias", a, bias);
    Matrix v = av.rowwise() + bv.row(0);
    int id = make(std::move(v), {a, bias});
    nodes_[id].back = [a, bias](Tape& t, const Matrix& g) {
      t.accum(a, g);
      t.accum(bias, g.colwise().sum());
    };
    return id;
  }

  int sub(int a, int b) {
    check_same_shape("sub", a, b);
    int id = make(value(a) - value(b), {a, b});
    nodes_[id].back = [a, b](Tape& t, const Matrix& g) {
      t.accum(a, g);
      t.accum(b, -g);
    };
    return id;
  }

  int mul(int a, int b) {
    check_same_shape("mul", a, b);
    int id = make(value(a).cwiseProduct(value(b)), {a, b});
    nodes_[id].back = [a, b](Tape& t, const Matrix& g) {
      t.accum(a, g.cwiseProduct(t.value(b)));
      t.accum(b, g.cwiseProduct(t.value(a)));
    };
    return id;
  }

  int scale(int a, double c) {
    int id = make(value(a) * c, {a});
    nodes_[id].back = [a, c](Tape& t, const Matrix& g) { t.accum(a, g * c); };
    return id;
  }

  int add_scalar(int a, double c) {
    int id = make(value(a).array() + c, {a});
    nodes_[id].back = [a](Tape& t, const Matrix& g) { t.accum(a, g); };
    return id;
  }

  int neg(int a) { return scale(a, -1.0); }

  int tanh(int a) {
    int id = make(value(a).array().tanh(), {a});
    nodes_[id].back = [a, id](Tape& t, const Matrix& g) {
      const Matrix& y = t.value(id);
      t.accum(a, (g.array() * (1.0 - y.array().square())).matrix());
    };
    return id;
  }

  int relu(int a) {
    int id = make(value(a).cwiseMax(0.0), {a});
    nodes_[id].back = [a, id](Tape& t, const Matrix& g) {
      const Matrix& x = t.value(a);
      t.accum(a, (g.array() * (x.array() > 0.0).cast<double>()).matrix());
    };
    return id;
  }

  int exp(int a) {
    int id = make(value(a).array().exp(), {a});
    nodes_[id].back = [a, id](Tape& t, const Matrix& g) {
      t.accum(a, g.cwiseProduct(t.value(id)));
    };
    return id;
  }

  int log(int a) {
    const Matrix& x = value(a);
    if ((x.array() <= 0.0).any())
      throw std::domain_error("autodiff: log of non-positive value");
    int id = make(x.array().log(), {a});
    nodes_[id].back = [a](Tape& t, const Matrix& g) {
      t.accum(a, g.cwiseQuotient(t.value(a)));
    };
    return id;
  }

  int square(int a) {
    int id = make(value(a).array().square(), {a});
    nodes_[id].back = [a](Tape& t, const Matrix& g) {
      t.accum(a, (g.array() * 2.0 * t.value(a).array()).matrix());
    };
    return id;
  }

  int abs(int a) {
    int id = make(value(a).array().abs(), {a});
    nodes_[id].back = [a](Tape& t, const Matrix& g) {
      const auto x = t.value(a).array();
      Matrix sign = ((x > 0.0).cast<double>() - (x < 0.0).cast<double>()).matrix();
      t.accum(a, g.cwiseProduct(sign));
    };
    return id;
  }

  // Gradient passes where lo <= x <= hi, zero outside.
  int clamp(int a, double lo, double hi) {
    int id = make(value(a).cwiseMax(lo).cwiseMin(hi), {a});
    nodes_[id].back = [a, lo, hi](Tape& t, const Matrix& g) {
      const auto x = t.value(a).array();
      Matrix mask = ((x >= lo) && (x <= hi)).cast<double>().matrix();
      t.accum(a, g.cwiseProduct(mask));
    };
    return id;
  }

  // Elementwise min; ties route the gradient to a.
  int minimum(int a, int b) {
    check_same_shape("minimum", a, b);
    int id = make(value(a).cwiseMin(value(b)), {a, b});
    nodes_[id].back = [a, b](Tape& t, const Matrix& g) {
      Matrix mask =
          (t.value(a).array() <= t.value(b).array()).cast<double>().matrix();
      t.accum(a, g.cwiseProduct(mask));
      t.accum(b, g.cwiseProduct((1.0 - mask.array()).matrix()));
    };
    return id;
  }

  int sum(int a) {
    Matrix v(1, 1);
    v(0, 0) = value(a).sum();
    int id = make(std::move(v), {a});
    nodes_[id].back = [a](Tape& t, const Matrix& g) {
      const Matrix& x = t.value(a);
      t.accum(a, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
    };
    return id;
  }

  int mean(int a) {
    Matrix v(1, 1);
    v(0, 0) = value(a).mean();
    int id = make(std::move(v), {a});
    nodes_[id].back = [a](Tape& t, const Matrix& g) {
      const Matrix& x = t.value(a);
      const double s = g(0, 0) / static_cast<double>(x.size());
      t.accum(a, Matrix::Constant(x.rows(), x.cols(), s));
    };
    return id;
  }

  int row_sum(int a) {
    int id = make(value(a).rowwise().sum(), {a});
    nodes_[id].back = [a](Tape& t, const Matrix& g) {
      t.accum(a, g * Eigen::RowVectorXd::Ones(t.value(a).cols()));
    };
    return id;
  }

  int concat_cols(int a, int b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.rows() != bv.rows()) shape_error("concat_cols", a, b);
    Matrix v(av.rows(), av.cols() + bv.cols());
    v << av, bv;
    const Eigen::Index na = av.cols();  // before make(): nodes_ may reallocate
    int id = make(std::move(v), {a, b});
    nodes_[id].back = [a, b, na](Tape& t, const Matrix& g) {
      t.accum(a, g.leftCols(na));
      t.accum(b, g.rightCols(g.cols() - na));
    };
    return id;
  }

  int slice_cols(int a, Eigen::Index start, Eigen::Index n) {
    const Matrix& av = value(a);
    if (start < 0 || n < 0 || start + n > av.cols())
      throw std::invalid_argument("autodiff: slice_cols out of range");
    int id = make(av.middleCols(start, n), {a});
    nodes_[id].back = [a, start, n](Tape& t, const Matrix& g) {
      const Matrix& x = t.value(a);
      Matrix z = Matrix::Zero(x.rows(), x.cols());
      z.middleCols(start, n) = g;
      t.accum(a, z);
    };
    return id;
  }

  // Multiply all entries of a by a 1x1 node.
  int scale_by(int a, int s) {
    const Matrix& sv = value(s);
    if (sv.rows() != 1 || sv.cols() != 1)
      throw std::invalid_argument("autodiff: scale_by needs a 1x1 node");
    int id = make(value(a) * sv(0, 0), {a, s});
    nodes_[id].back = [a, s](Tape& t, const Matrix& g) {
      t.accum(a, g * t.value(s)(0, 0));
      Matrix gs(1, 1);
      gs(0, 0) = g.cwiseProduct(t.value(a)).sum();
      t.accum(s, gs);
    };
    return id;
  }

  // Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad node.
  void backward(int loss) {
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1)
      throw std::invalid_argument("autodiff: backward target must be scalar");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss].grad = Matrix::Constant(1, 1, 1.0);
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0 || !n.back) continue;
      n.back(*this, n.grad);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Matrix&)> back;
  };

  int make(Matrix value, std::initializer_list<int> parents) {
    Node n;
    n.value = std::move(value);
    for (int p : parents) n.requires_grad |= nodes_.at(p).requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void accum(int id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  void check_same_shape(const char* op, int a, int b) const {
    const Matrix& av = nodes_.at(a).value;
    const Matrix& bv = nodes_.at(b).value;
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error(op, a, b);
  }

  [[noreturn]] void shape_error(const char* op, int a, int b) const {
    const Matrix& av = nodes_.at(a).value;
    const Matrix& bv = nodes_.at(b).value;
    throw std::invalid_argument(
        std::string("autodiff: shape mismatch in ") + op + ": " +
        std::to_string(av.rows()) + "x" + std::to_string(av.cols()) + " vs " +
        std::to_string(bv.rows()) + "x" + std::to_string(bv.cols()));
  }

  std::vector<Node> nodes_;
};

}  // namespace distr::ad
