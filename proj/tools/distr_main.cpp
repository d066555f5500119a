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

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "distr/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

int cmd_run(const std::string& config_path) {
  const distr::ExperimentConfig cfg = distr::load_config(config_path);
  const auto run_dir = distr::run_experiment(cfg);
  std::cout << "run complete: " << run_dir.string() << "\n";
  std::cout << distr::summarize_run(run_dir);
  return kExitOk;
}

int cmd_curves(const std::string& run_dir) {
  distr::write_curves(run_dir);
  std::cout << "wrote " << run_dir << "/curve.csv and curve.svg\n";
  return kExitOk;
}

int cmd_export_replay(const std::string& run_dir, int task) {
  distr::export_replay(run_dir, task);
  std::cout << "wrote " << run_dir << "/replay_task_" << task
            << ".csv and coverage.json\n";
  return kExitOk;
}

int cmd_metrics(const std::string& run_dir) {
  std::cout << distr::summarize_run(run_dir);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual RL experiments with diffusion-based trajectory replay"};
  app.require_subcommand(1);

  std::string config_path;
  CLI::App* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("config", config_path, "Path to the experiment config")
      ->required();

  std::string curves_dir;
  CLI::App* curves =
      app.add_subcommand("curves", "Write learning-curve CSV and SVG for a run");
  curves->add_option("run_dir", curves_dir, "Completed run directory")->required();

  std::string export_dir;
  int export_task = 0;
  CLI::App* exp = app.add_subcommand(
      "export-replay", "Merge real and generated trajectories of one task");
  exp->add_option("run_dir", export_dir, "Completed run directory")->required();
  exp->add_option("--task", export_task, "Task id to export")->required();

  std::string metrics_dir;
  CLI::App* metrics =
      app.add_subcommand("metrics", "Print aggregate metrics for a run");
  metrics->add_option("run_dir", metrics_dir, "Completed run directory")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(config_path);
    if (curves->parsed()) return cmd_curves(curves_dir);
    if (exp->parsed()) return cmd_export_replay(export_dir, export_task);
    if (metrics->parsed()) return cmd_metrics(metrics_dir);
    std::cerr << "no subcommand\n";
    return kExitConfig;
  } catch (const distr::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
