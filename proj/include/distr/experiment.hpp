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
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distr/config.hpp"

namespace distr {

namespace fs = std::filesystem;

// Writes pipeline artifacts into one seed's run directory.
class FileRunSink : public RunSink {
 public:
  explicit FileRunSink(fs::path dir) : dir_(std::move(dir)) {}

  void save_policy(const std::string& name, const GaussianPolicy& p) override {
    atomic_write_text(dir_ / "checkpoints" / (name + ".json"),
                      net_to_json(p.trunk).dump(2) + "\n");
  }

  void save_denoiser(const std::string& name, const Denoiser& d) override {
    atomic_write_text(dir_ / "checkpoints" / (name + ".json"),
                      denoiser_to_json(d).dump(2) + "\n");
  }

  void save_skilled(int task, SkillSource source,
                    const std::vector<Trajectory>& trajs) override {
    const std::string file =
        std::to_string(task) + "_" + to_string(source) + ".csv";
    atomic_write_text(dir_ / "skilled" / file,
                      trajectories_to_csv(trajs, to_string(source)));
  }

 private:
  fs::path dir_;
};

// Fingerprint of everything a reference score depends on.
inline std::string refs_fingerprint(const ExperimentConfig& c,
                                    std::uint64_t seed) {
  std::ostringstream s;
  s << c.suite.num_tasks << "|" << format_g17(c.suite.dt) << "|"
    << format_g17(c.suite.accel_gain) << "|" << format_g17(c.suite.vmax) << "|"
    << format_g17(c.suite.gamma) << "|" << c.suite.horizon << "|"
    << format_g17(c.suite.success_radius) << "|" << c.suite.flip_even_tasks
    << "|sac:";
  for (int h : c.sac.hidden) s << h << ",";
  s << "|" << format_g17(c.sac.lr) << "|" << c.sac.batch_size << "|"
    << c.sac.buffer_capacity << "|" << c.sac.warmup_steps << "|"
    << format_g17(c.sac.tau_polyak) << "|" << format_g17(c.sac.init_alpha)
    << "|budget:" << c.sac_budget << "|n_eval:" << c.agent.n_eval
    << "|seed:" << seed;
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash_name(s.str())));
  return buf;
}

// Single-task reference scores: a fresh policy trained per task with the
// same budget; cached to a shared file when refs_cache is configured.
inline ReferenceScores reference_scores(const ExperimentConfig& c,
                                        std::uint64_t seed) {
  const std::string key = refs_fingerprint(c, seed);
  if (!c.refs_cache.empty() && fs::exists(c.refs_cache)) {
    const nlohmann::json cache =
        nlohmann::json::parse(read_text_file(c.refs_cache));
    if (cache.contains(key))
      return ReferenceScores{cache.at(key).get<std::vector<double>>()};
  }
  ReferenceScores refs;
  const std::uint64_t root = derive_seed(seed, "reference_runs");
  for (int k = 0; k < c.suite.num_tasks; ++k) {
    const TaskSpec task = make_task(k, c.suite);
    SacConfig sac = c.sac;
    sac.gamma = c.suite.gamma;
    const GaussianPolicy init = make_policy(
        observation_dim(c.suite), kActionDim, sac.hidden, sac.activation,
        derive_seed(root, "ref_policy_init", k));
    const TrainResult tr =
        train_policy_sac(task, sac, init, std::nullopt, c.sac_budget, root,
                         static_cast<std::uint64_t>(k));
    refs.scores.push_back(success_rate(task, policy_fn(tr.policy),
                                       c.agent.n_eval,
                                       derive_seed(root, "ref_eval", k)));
  }
  if (!c.refs_cache.empty()) {
    nlohmann::json cache = nlohmann::json::object();
    if (fs::exists(c.refs_cache))
      cache = nlohmann::json::parse(read_text_file(c.refs_cache));
    cache[key] = refs.scores;
    atomic_write_text(c.refs_cache, cache.dump(2) + "\n");
  }
  return refs;
}

struct SeedMetrics {
  double average_performance = 0.0;
  double forward_transfer = 0.0;
  double forgetting = 0.0;
  std::vector<double> per_task_ft;
  std::vector<double> per_task_f;
};

struct SeedResult {
  SuccessMatrix matrix;
  std::vector<TaskPriorityRecord> records;
  SeedMetrics metrics;
};

inline std::string priority_records_csv(
    const std::vector<TaskPriorityRecord>& records) {
  std::ostringstream out;
  out << "task,s_v,s_s,priority\n";
  for (const TaskPriorityRecord& r : records)
    out << r.task_id << "," << format_g17(r.s_v) << "," << format_g17(r.s_s)
        << "," << format_g17(r.priority) << "\n";
  return out.str();
}

inline nlohmann::json metrics_to_json(const SeedMetrics& m,
                                      const std::string& method) {
  nlohmann::json j;
  j["method"] = method;
  j["average_performance"] = m.average_performance;
  j["forward_transfer"] = m.forward_transfer;
  j["forgetting"] = m.forgetting;
  j["per_task_FT"] = m.per_task_ft;
  j["per_task_F"] = m.per_task_f;
  return j;
}

// One seed of one method, writing the full per-seed layout.
inline SeedResult run_seed(const ExperimentConfig& c, std::uint64_t seed,
                           const fs::path& seed_dir) {
  fs::create_directories(seed_dir);
  FileRunSink sink(seed_dir);
  const int num_tasks = c.suite.num_tasks;

  DistrState* core = nullptr;
  DistrState distr_state;
  EwcState ewc_state;
  PerfectReplayState pr_state;
  if (c.method == "ewc") {
    ewc_state.core = make_distr_state(c.suite, c.agent, c.sac, c.diffusion, seed);
    ewc_state.cfg = c.ewc;
    core = &ewc_state.core;
  } else if (c.method == "perfect_replay") {
    pr_state.core = make_distr_state(c.suite, c.agent, c.sac, c.diffusion, seed);
    core = &pr_state.core;
  } else {
    distr_state = make_distr_state(c.suite, c.agent, c.sac, c.diffusion, seed);
    core = &distr_state;
  }

  for (int k = 0; k < num_tasks; ++k) {
    if (c.method == "distr") {
      distr_learn_task(distr_state, k, c.sac_budget, sink);
    } else if (c.method == "distr_coupled") {
      coupled_learn_task(distr_state, k, c.sac_budget, c.agent.lambda_bc, sink);
    } else if (c.method == "finetune") {
      finetune_learn_task(distr_state, k, c.sac_budget, sink);
    } else if (c.method == "ewc") {
      ewc_learn_task(ewc_state, k, c.sac_budget, sink);
    } else if (c.method == "perfect_replay") {
      perfect_replay_learn_task(pr_state, k, c.sac_budget, sink);
    } else {
      throw ConfigError("config error: unknown method '" + c.method + "'");
    }
  }

  SeedResult result;
  result.matrix = core->success_matrix;
  result.records = core->priority_records;

  const ReferenceScores refs = reference_scores(c, seed);
  result.metrics.average_performance = average_performance(result.matrix);
  const ForwardTransferResult ft = forward_transfer(result.matrix, refs);
  result.metrics.forward_transfer = ft.mean;
  result.metrics.per_task_ft = ft.per_task;
  const ForgettingResult fg = forgetting(result.matrix);
  result.metrics.forgetting = fg.mean;
  result.metrics.per_task_f = fg.per_task;

  atomic_write_text(seed_dir / "success_matrix.csv",
                    result.matrix.to_csv(num_tasks));
  atomic_write_text(seed_dir / "priority_records.csv",
                    priority_records_csv(result.records));
  {
    nlohmann::json refs_json;
    refs_json["scores"] = refs.scores;
    atomic_write_text(seed_dir / "reference_scores.json",
                      refs_json.dump(2) + "\n");
  }
  atomic_write_text(seed_dir / "metrics.json",
                    metrics_to_json(result.metrics, c.method).dump(2) + "\n");
  return result;
}

inline nlohmann::json mean_std(const std::vector<double>& values) {
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= values.size();
  double var = 0.0;
  if (values.size() > 1) {
    for (double v : values) var += (v - mean) * (v - mean);
    var /= (values.size() - 1);
  }
  nlohmann::json j;
  j["mean"] = mean;
  j["std"] = std::sqrt(var);
  return j;
}

// Full experiment: every seed sequentially, then the aggregate summary.
inline fs::path run_experiment(const ExperimentConfig& c) {
  validate(c);
  const fs::path run_dir(c.output_dir);
  fs::create_directories(run_dir);
  atomic_write_text(run_dir / "config.resolved", serialize_config(c));

  std::vector<double> avg, ft, fg;
  for (std::int64_t seed : c.seeds) {
    const fs::path seed_dir = run_dir / ("seed_" + std::to_string(seed));
    const SeedResult r = run_seed(c, static_cast<std::uint64_t>(seed), seed_dir);
    avg.push_back(r.metrics.average_performance);
    ft.push_back(r.metrics.forward_transfer);
    fg.push_back(r.metrics.forgetting);
  }

  nlohmann::json summary;
  summary["method"] = c.method;
  summary["seeds"] = c.seeds;
  summary["average_performance"] = mean_std(avg);
  summary["forward_transfer"] = mean_std(ft);
  summary["forgetting"] = mean_std(fg);
  atomic_write_text(run_dir / "summary.json", summary.dump(2) + "\n");
  return run_dir;
}

inline ExperimentConfig load_run_config(const fs::path& run_dir) {
  const fs::path resolved = run_dir / "config.resolved";
  if (!fs::exists(resolved))
    throw std::runtime_error("not a completed run directory (missing config.resolved): " +
                             run_dir.string());
  return load_config(resolved.string());
}

inline SuccessMatrix load_seed_matrix(const fs::path& run_dir,
                                      std::int64_t seed) {
  const fs::path file =
      run_dir / ("seed_" + std::to_string(seed)) / "success_matrix.csv";
  if (!fs::exists(file))
    throw std::runtime_error("missing success matrix: " + file.string());
  return SuccessMatrix::from_csv(read_text_file(file));
}

// Average success over seen tasks and over the whole suite (unseen tasks
// count as zero), per boundary, averaged across seeds.
struct CurvePoint {
  int after_task = 0;
  double over_seen = 0.0;
  double over_all = 0.0;
};

inline std::vector<CurvePoint> learning_curve(const ExperimentConfig& c,
                                              const fs::path& run_dir) {
  std::vector<CurvePoint> curve;
  const int n = c.suite.num_tasks;
  for (int i = 0; i < n; ++i)
    curve.push_back(CurvePoint{i, 0.0, 0.0});
  for (std::int64_t seed : c.seeds) {
    const SuccessMatrix m = load_seed_matrix(run_dir, seed);
    if (m.num_rows() < n)
      throw std::runtime_error("run incomplete: seed " + std::to_string(seed) +
                               " has " + std::to_string(m.num_rows()) +
                               " rows, expected " + std::to_string(n));
    for (int i = 0; i < n; ++i) {
      double sum = 0.0;
      for (int j = 0; j <= i; ++j) sum += m.entry(i, j);
      curve[i].over_seen += sum / (i + 1);
      curve[i].over_all += sum / n;
    }
  }
  for (CurvePoint& p : curve) {
    p.over_seen /= c.seeds.size();
    p.over_all /= c.seeds.size();
  }
  return curve;
}

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream out;
  out << "after_task,avg_success_over_seen_tasks,avg_success_over_all_tasks\n";
  for (const CurvePoint& p : curve)
    out << p.after_task << "," << format_g17(p.over_seen) << ","
        << format_g17(p.over_all) << "\n";
  return out.str();
}

// Dependency-free line plot of the curve; text SVG keeps diffs readable.
inline std::string curve_svg(const std::vector<CurvePoint>& curve,
                             const std::string& title) {
  const int width = 640, height = 400;
  const double left = 60, right = 610, top = 40, bottom = 360;
  const int n = static_cast<int>(curve.size());
  auto x_of = [&](int i) {
    return n == 1 ? (left + right) / 2
                  : left + (right - left) * i / static_cast<double>(n - 1);
  };
  auto y_of = [&](double v) { return bottom - (bottom - top) * v; };
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };
  auto polyline = [&](const std::string& color, bool seen) {
    std::ostringstream p;
    p << "  <polyline fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2\" points=\"";
    for (int i = 0; i < n; ++i) {
      const double v = seen ? curve[i].over_seen : curve[i].over_all;
      p << fmt(x_of(i)) << "," << fmt(y_of(v)) << " ";
    }
    p << "\"/>\n";
    return p.str();
  };
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  out << "  <rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  out << "  <text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">" << title << "</text>\n";
  out << "  <line x1=\"60\" y1=\"360\" x2=\"610\" y2=\"360\" stroke=\"black\"/>\n";
  out << "  <line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"360\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick / 4.0;
    out << "  <text x=\"52\" y=\"" << fmt(y_of(v) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << fmt(v) << "</text>\n";
  }
  for (int i = 0; i < n; ++i)
    out << "  <text x=\"" << fmt(x_of(i))
        << "\" y=\"378\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">" << i << "</text>\n";
  out << "  <text x=\"335\" y=\"396\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">tasks trained</text>\n";
  out << polyline("#1f77b4", true);
  out << polyline("#d62728", false);
  out << "  <text x=\"470\" y=\"56\" font-family=\"sans-serif\" font-size=\"11\" "
         "fill=\"#1f77b4\">over seen tasks</text>\n";
  out << "  <text x=\"470\" y=\"72\" font-family=\"sans-serif\" font-size=\"11\" "
         "fill=\"#d62728\">over all tasks</text>\n";
  out << "</svg>\n";
  return out.str();
}

inline void write_curves(const fs::path& run_dir) {
  const ExperimentConfig c = load_run_config(run_dir);
  const std::vector<CurvePoint> curve = learning_curve(c, run_dir);
  atomic_write_text(run_dir / "curve.csv", curve_csv(curve));
  atomic_write_text(run_dir / "curve.svg",
                    curve_svg(curve, c.method + " average success"));
}

// Per-step state-action rows of a trajectory CSV (with or without the
// trailing source column).
inline Eigen::MatrixXd trajectory_csv_points(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty trajectory csv");
  std::vector<std::array<double, 6>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::array<double, 6> row{};
    for (int col = 0; std::getline(ls, cell, ',') && col < 9; ++col)
      if (col >= 3) row[col - 3] = std::stod(cell);
    rows.push_back(row);
  }
  Eigen::MatrixXd m(rows.size(), 6);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < 6; ++j) m(static_cast<Eigen::Index>(i), j) = rows[i][j];
  return m;
}

// Merge the retained real and latest generated exports of one task into a
// single source-tagged CSV, and write the MMD^2 coverage statistic.
inline void export_replay(const fs::path& run_dir, int task) {
  const ExperimentConfig c = load_run_config(run_dir);
  const fs::path seed_dir =
      run_dir / ("seed_" + std::to_string(c.seeds.front()));
  const fs::path real_file =
      seed_dir / "skilled" / (std::to_string(task) + "_real.csv");
  const fs::path gen_file =
      seed_dir / "skilled" / (std::to_string(task) + "_generated.csv");
  if (!fs::exists(real_file))
    throw std::runtime_error("missing real export: " + real_file.string());
  if (!fs::exists(gen_file))
    throw std::runtime_error("missing generated export: " + gen_file.string());

  const std::string real_text = read_text_file(real_file);
  const std::string gen_text = read_text_file(gen_file);

  // Both files already carry the source column; concatenate under one header.
  std::ostringstream merged;
  merged << real_text;
  std::istringstream gen_in(gen_text);
  std::string line;
  std::getline(gen_in, line);  // skip header
  while (std::getline(gen_in, line))
    if (!line.empty()) merged << line << "\n";
  atomic_write_text(run_dir / ("replay_task_" + std::to_string(task) + ".csv"),
                    merged.str());

  const Eigen::MatrixXd real_pts = trajectory_csv_points(real_text);
  const Eigen::MatrixXd gen_pts = trajectory_csv_points(gen_text);
  const double mmd2 = mmd(real_pts, gen_pts);
  nlohmann::json cov;
  cov["task"] = task;
  cov["mmd2"] = mmd2;
  cov["bandwidth"] = "median";
  cov["n_real_rows"] = real_pts.rows();
  cov["n_generated_rows"] = gen_pts.rows();
  atomic_write_text(run_dir / "coverage.json", cov.dump(2) + "\n");
}

// Aggregate table over the per-seed metrics files.
inline std::string summarize_run(const fs::path& run_dir) {
  const ExperimentConfig c = load_run_config(run_dir);
  std::vector<double> avg, ft, fg;
  for (std::int64_t seed : c.seeds) {
    const fs::path file =
        run_dir / ("seed_" + std::to_string(seed)) / "metrics.json";
    if (!fs::exists(file))
      throw std::runtime_error("missing metrics: " + file.string());
    const nlohmann::json j = nlohmann::json::parse(read_text_file(file));
    avg.push_back(j.at("average_performance").get<double>());
    ft.push_back(j.at("forward_transfer").get<double>());
    fg.push_back(j.at("forgetting").get<double>());
  }
  auto line = [](const std::string& name, const nlohmann::json& ms) {
    std::ostringstream s;
    s << name << ": " << format_g17(ms.at("mean").get<double>()) << " +- "
      << format_g17(ms.at("std").get<double>()) << "\n";
    return s.str();
  };
  std::ostringstream out;
  out << "method: " << c.method << " (" << c.seeds.size() << " seeds)\n";
  out << line("average_performance", mean_std(avg));
  out << line("forward_transfer", mean_std(ft));
  out << line("forgetting", mean_std(fg));
  return out.str();
}

}  // namespace distr
