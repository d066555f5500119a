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
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "distr/io.hpp"

namespace distr {

// Success rates s_i(j): row i is recorded after training task i and holds
// entries for tasks j <= i, plus the pre-training probe of task i+1 once
// it arrives. Row -1 holds the probe of task 0 before any training.
class SuccessMatrix {
 public:
  SuccessMatrix() : rows_(1) {}

  // Probe of task k measured before any update for task k; extends the
  // previous row (or the pre-training row for k = 0).
  void record_probe(int task, double value) {
    if (task + 1 != static_cast<int>(rows_.size()))
      throw std::invalid_argument("record_probe: task out of order");
    if (static_cast<int>(rows_.back().size()) != task)
      throw std::logic_error("record_probe: probe already recorded");
    rows_.back().push_back(value);
  }

  // Evaluations on tasks 0..k after training task k.
  void append_row(std::vector<double> values) {
    const int k = static_cast<int>(rows_.size()) - 1;
    if (static_cast<int>(values.size()) != k + 1)
      throw std::invalid_argument("append_row: row " + std::to_string(k) +
                                  " needs " + std::to_string(k + 1) + " entries");
    rows_.push_back(std::move(values));
  }

  // Number of trained-task rows recorded so far.
  int num_rows() const { return static_cast<int>(rows_.size()) - 1; }

  bool has_entry(int i, int j) const {
    if (i < -1 || i + 1 >= static_cast<int>(rows_.size()) || j < 0) return false;
    return j < static_cast<int>(rows_[i + 1].size());
  }

  double entry(int i, int j) const {
    if (!has_entry(i, j))
      throw std::out_of_range("success matrix entry (" + std::to_string(i) +
                              ", " + std::to_string(j) + ") not recorded");
    return rows_[i + 1][j];
  }

  const std::vector<double>& last_row() const {
    if (num_rows() < 1) throw std::logic_error("success matrix has no rows");
    return rows_.back();
  }

  std::string to_csv(int num_tasks) const {
    std::ostringstream out;
    out << "row";
    for (int j = 0; j < num_tasks; ++j) out << ",task_" << j;
    out << "\n";
    for (int i = -1; i < static_cast<int>(rows_.size()) - 1; ++i) {
      out << i;
      for (int j = 0; j < num_tasks; ++j) {
        out << ",";
        if (has_entry(i, j)) out << format_g17(entry(i, j));
      }
      out << "\n";
    }
    return out.str();
  }

  static SuccessMatrix from_csv(const std::string& text) {
    SuccessMatrix m;
    m.rows_.clear();
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("empty matrix csv");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::istringstream ls(line);
      std::string cell;
      std::getline(ls, cell, ',');  // row label
      while (std::getline(ls, cell, ','))
        if (!cell.empty()) row.push_back(std::stod(cell));
      m.rows_.push_back(std::move(row));
    }
    if (m.rows_.empty()) throw std::invalid_argument("matrix csv has no rows");
    return m;
  }

 private:
  std::vector<std::vector<double>> rows_;
};

// Single-task reference success rates used by forward transfer.
struct ReferenceScores {
  std::vector<double> scores;
};

// Mean of the final row across all N+1 tasks.
inline double average_performance(const SuccessMatrix& m) {
  const int n = m.num_rows();
  if (n < 1) throw std::invalid_argument("average_performance: no rows");
  const std::vector<double>& last = m.last_row();
  if (static_cast<int>(last.size()) != n)
    throw std::invalid_argument("average_performance: incomplete final row");
  double acc = 0.0;
  for (double v : last) acc += v;
  return acc / n;
}

struct ForwardTransferResult {
  double mean = 0.0;
  std::vector<double> per_task;  // NaN where excluded
  int excluded = 0;
};

// FT_i = (S_i - S_ref_i) / (1 - S_ref_i) with S_i the mean of the task's
// diagonal entry and its pre-training probe, and S_ref_i = ref_i / 2.
// Tasks with S_ref_i = 1 are excluded with a warning count (the formula
// divides by zero there).
inline ForwardTransferResult forward_transfer(const SuccessMatrix& m,
                                              const ReferenceScores& refs) {
  const int n = m.num_rows();
  if (n < 1) throw std::invalid_argument("forward_transfer: no rows");
  if (static_cast<int>(refs.scores.size()) < n)
    throw std::invalid_argument("forward_transfer: missing reference scores");
  ForwardTransferResult r;
  double acc = 0.0;
  int counted = 0;
  for (int i = 0; i < n; ++i) {
    if (!m.has_entry(i - 1, i))
      throw std::invalid_argument("forward_transfer: probe entry s_{i-1}(i) missing");
    const double s_i = (m.entry(i, i) + m.entry(i - 1, i)) / 2.0;
    const double s_ref = refs.scores[i] / 2.0;
    const double denom = 1.0 - s_ref;
    if (denom == 0.0) {
      r.per_task.push_back(std::numeric_limits<double>::quiet_NaN());
      ++r.excluded;
      continue;
    }
    const double ft = (s_i - s_ref) / denom;
    r.per_task.push_back(ft);
    acc += ft;
    ++counted;
  }
  if (counted == 0)
    throw std::invalid_argument("forward_transfer: every task excluded");
  r.mean = acc / counted;
  return r;
}

struct ForgettingResult {
  double mean = 0.0;
  std::vector<double> per_task;
};

// F_i = s_i(i) - s_N(i); negative values mean backward transfer.
inline ForgettingResult forgetting(const SuccessMatrix& m) {
  const int n = m.num_rows();
  if (n < 1) throw std::invalid_argument("forgetting: no rows");
  const std::vector<double>& last = m.last_row();
  if (static_cast<int>(last.size()) != n)
    throw std::invalid_argument("forgetting: incomplete final row");
  ForgettingResult r;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = m.entry(i, i) - last[i];
    r.per_task.push_back(f);
    acc += f;
  }
  r.mean = acc / n;
  return r;
}

inline double median_pairwise_distance(const Eigen::MatrixXd& pooled) {
  std::vector<double> dists;
  const Eigen::Index n = pooled.rows();
  dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      dists.push_back((pooled.row(i) - pooled.row(j)).norm());
  if (dists.empty()) return 1.0;
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + mid, dists.end());
  return dists[mid];
}

// Unbiased squared MMD with a Gaussian kernel exp(-|u-v|^2 / (2 h^2)).
// bandwidth <= 0 selects the median pairwise distance of the pooled
// sample. For equally sized samples the estimator excludes matched-index
// cross pairs, so feeding the same points twice gives (numerically) zero.
inline double mmd(const Eigen::MatrixXd& sample_a, const Eigen::MatrixXd& sample_b,
                  double bandwidth = 0.0) {
  const Eigen::Index m = sample_a.rows();
  const Eigen::Index n = sample_b.rows();
  if (m < 2 || n < 2)
    throw std::invalid_argument("mmd: need at least two points per sample");
  if (sample_a.cols() != sample_b.cols())
    throw std::invalid_argument("mmd: dimension mismatch");
  double h = bandwidth;
  if (h <= 0.0) {
    Eigen::MatrixXd pooled(m + n, sample_a.cols());
    pooled << sample_a, sample_b;
    h = median_pairwise_distance(pooled);
    if (h <= 0.0) h = 1.0;
  }
  const double inv = 1.0 / (2.0 * h * h);
  auto kernel = [inv](const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& v) {
    return std::exp(-(u - v).squaredNorm() * inv);
  };

  double within_a = 0.0, within_b = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (i != j) within_a += kernel(sample_a.row(i), sample_a.row(j));
  within_a /= static_cast<double>(m) * (m - 1);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) within_b += kernel(sample_b.row(i), sample_b.row(j));
  within_b /= static_cast<double>(n) * (n - 1);

  double cross = 0.0;
  if (m == n) {
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) cross += kernel(sample_a.row(i), sample_b.row(j));
    cross *= 2.0 / (static_cast<double>(m) * (m - 1));
  } else {
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        cross += kernel(sample_a.row(i), sample_b.row(j));
    cross *= 2.0 / (static_cast<double>(m) * n);
  }
  return within_a + within_b - cross;
}

}  // namespace distr
