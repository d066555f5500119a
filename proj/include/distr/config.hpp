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

#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "distr/agent.hpp"
#include "distr/baselines.hpp"
#include "distr/io.hpp"

namespace distr {

// Invalid configuration: the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Full experiment description. Every field has a default; unknown keys
// are rejected at parse time.
struct ExperimentConfig {
  std::string method = "distr";
  std::vector<std::int64_t> seeds = {0};
  std::string output_dir = "runs/out";
  int sac_budget = 8000;
  std::string refs_cache;  // path of the shared reference-score cache ("" = off)
  SuiteConfig suite;
  SacConfig sac;
  DiffusionConfig diffusion;
  AgentConfig agent;
  EwcConfig ewc;
};

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods{
      "distr", "distr_coupled", "finetune", "ewc", "perfect_replay"};
  return methods;
}

namespace config_detail {

struct Binding {
  enum class Type { kInt, kReal, kBool, kString, kIntList, kSeedList };
  Type type;
  void* ptr;
};

// One flat table "section.key" -> target field.
inline std::map<std::string, Binding> bindings(ExperimentConfig& c) {
  using T = Binding::Type;
  std::map<std::string, Binding> b;
  b["method"] = {T::kString, &c.method};
  b["seeds"] = {T::kSeedList, &c.seeds};
  b["output_dir"] = {T::kString, &c.output_dir};
  b["sac_budget"] = {T::kInt, &c.sac_budget};
  b["refs_cache"] = {T::kString, &c.refs_cache};

  b["suite.num_tasks"] = {T::kInt, &c.suite.num_tasks};
  b["suite.dt"] = {T::kReal, &c.suite.dt};
  b["suite.accel_gain"] = {T::kReal, &c.suite.accel_gain};
  b["suite.vmax"] = {T::kReal, &c.suite.vmax};
  b["suite.gamma"] = {T::kReal, &c.suite.gamma};
  b["suite.horizon"] = {T::kInt, &c.suite.horizon};
  b["suite.success_radius"] = {T::kReal, &c.suite.success_radius};
  b["suite.flip_even_tasks"] = {T::kBool, &c.suite.flip_even_tasks};

  b["sac.hidden"] = {T::kIntList, &c.sac.hidden};
  b["sac.lr"] = {T::kReal, &c.sac.lr};
  b["sac.batch_size"] = {T::kInt, &c.sac.batch_size};
  b["sac.buffer_capacity"] = {T::kInt, &c.sac.buffer_capacity};
  b["sac.warmup_steps"] = {T::kInt, &c.sac.warmup_steps};
  b["sac.tau_polyak"] = {T::kReal, &c.sac.tau_polyak};
  b["sac.init_alpha"] = {T::kReal, &c.sac.init_alpha};

  b["diffusion.steps"] = {T::kInt, &c.diffusion.steps};
  b["diffusion.beta_start"] = {T::kReal, &c.diffusion.beta_start};
  b["diffusion.beta_end"] = {T::kReal, &c.diffusion.beta_end};
  b["diffusion.hidden"] = {T::kIntList, &c.diffusion.hidden};
  b["diffusion.lr"] = {T::kReal, &c.diffusion.lr};
  b["diffusion.batch"] = {T::kInt, &c.diffusion.batch};
  b["diffusion.epochs"] = {T::kInt, &c.diffusion.epochs};

  b["agent.n_traj"] = {T::kInt, &c.agent.n_traj};
  b["agent.window"] = {T::kInt, &c.agent.window};
  b["agent.replay_budget"] = {T::kInt, &c.agent.replay_budget};
  b["agent.noise_sigma"] = {T::kReal, &c.agent.noise_sigma};
  b["agent.n_repeats"] = {T::kInt, &c.agent.n_repeats};
  b["agent.n_eval"] = {T::kInt, &c.agent.n_eval};
  b["agent.bc_epochs"] = {T::kInt, &c.agent.bc_epochs};
  b["agent.bc_batch"] = {T::kInt, &c.agent.bc_batch};
  b["agent.bc_lr"] = {T::kReal, &c.agent.bc_lr};
  b["agent.lambda_bc"] = {T::kReal, &c.agent.lambda_bc};

  b["ewc.lambda"] = {T::kReal, &c.ewc.lambda};
  b["ewc.fisher_samples"] = {T::kInt, &c.ewc.fisher_samples};
  b["ewc.damping"] = {T::kReal, &c.ewc.damping};
  return b;
}

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] inline void fail(const std::string& file, int line,
                              const std::string& msg) {
  throw ConfigError(file + ":" + std::to_string(line) + ": " + msg);
}

inline bool parse_int(const std::string& text, std::int64_t& out) {
  try {
    std::size_t used = 0;
    out = std::stoll(text, &used);
    return used == text.size();
  } catch (...) {
    return false;
  }
}

inline bool parse_real(const std::string& text, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(text, &used);
    return used == text.size();
  } catch (...) {
    return false;
  }
}

inline void assign(const Binding& b, const std::string& key,
                   const std::string& raw, const std::string& file, int line) {
  using T = Binding::Type;
  switch (b.type) {
    case T::kString: {
      if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"')
        fail(file, line, "key '" + key + "' expects a quoted string");
      *static_cast<std::string*>(b.ptr) = raw.substr(1, raw.size() - 2);
      return;
    }
    case T::kBool: {
      if (raw == "true") {
        *static_cast<bool*>(b.ptr) = true;
      } else if (raw == "false") {
        *static_cast<bool*>(b.ptr) = false;
      } else {
        fail(file, line, "key '" + key + "' expects true or false");
      }
      return;
    }
    case T::kInt: {
      std::int64_t v;
      if (!parse_int(raw, v))
        fail(file, line, "key '" + key + "' expects an integer");
      *static_cast<int*>(b.ptr) = static_cast<int>(v);
      return;
    }
    case T::kReal: {
      double v;
      if (!parse_real(raw, v))
        fail(file, line, "key '" + key + "' expects a number");
      *static_cast<double*>(b.ptr) = v;
      return;
    }
    case T::kIntList:
    case T::kSeedList: {
      if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']')
        fail(file, line, "key '" + key + "' expects a [list]");
      std::vector<std::int64_t> values;
      std::string body = raw.substr(1, raw.size() - 2);
      std::istringstream ss(body);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) fail(file, line, "key '" + key + "' has an empty list item");
        std::int64_t v;
        if (!parse_int(item, v))
          fail(file, line, "key '" + key + "' expects integers in the list");
        values.push_back(v);
      }
      if (b.type == T::kSeedList) {
        *static_cast<std::vector<std::int64_t>*>(b.ptr) = std::move(values);
      } else {
        std::vector<int> ints;
        for (std::int64_t v : values) ints.push_back(static_cast<int>(v));
        *static_cast<std::vector<int>*>(b.ptr) = std::move(ints);
      }
      return;
    }
  }
  fail(file, line, "internal: unhandled binding type");
}

}  // namespace config_detail

// Semantic checks beyond syntax; throws ConfigError naming the field.
inline void validate(const ExperimentConfig& c) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config error: " + msg);
  };
  bool method_ok = false;
  for (const std::string& m : known_methods()) method_ok |= (m == c.method);
  require(method_ok, "method '" + c.method + "' is not one of "
                     "distr|distr_coupled|finetune|ewc|perfect_replay");
  require(!c.seeds.empty(), "seeds must be non-empty");
  require(!c.output_dir.empty(), "output_dir must be non-empty");
  require(c.sac_budget >= 0, "sac_budget must be >= 0");
  require(c.suite.num_tasks >= 1, "suite.num_tasks must be >= 1");
  require(c.suite.dt > 0, "suite.dt must be > 0");
  require(c.suite.accel_gain > 0, "suite.accel_gain must be > 0");
  require(c.suite.vmax > 0, "suite.vmax must be > 0");
  require(c.suite.gamma > 0 && c.suite.gamma <= 1, "suite.gamma must be in (0, 1]");
  require(c.suite.horizon >= 1, "suite.horizon must be >= 1");
  require(c.suite.success_radius > 0, "suite.success_radius must be > 0");
  require(!c.sac.hidden.empty(), "sac.hidden must be non-empty");
  for (int h : c.sac.hidden) require(h >= 1, "sac.hidden entries must be >= 1");
  require(c.sac.lr > 0, "sac.lr must be > 0");
  require(c.sac.batch_size >= 1, "sac.batch_size must be >= 1");
  require(c.sac.buffer_capacity >= c.sac.batch_size,
          "sac.buffer_capacity must be >= sac.batch_size");
  require(c.sac.warmup_steps >= c.sac.batch_size,
          "sac.warmup_steps must be >= sac.batch_size");
  require(c.sac.tau_polyak >= 0 && c.sac.tau_polyak <= 1,
          "sac.tau_polyak must be in [0, 1]");
  require(c.sac.init_alpha > 0, "sac.init_alpha must be > 0");
  require(c.diffusion.steps >= 1, "diffusion.steps must be >= 1");
  require(c.diffusion.beta_start > 0 &&
              c.diffusion.beta_start <= c.diffusion.beta_end &&
              c.diffusion.beta_end < 1,
          "diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
  require(!c.diffusion.hidden.empty(), "diffusion.hidden must be non-empty");
  require(c.diffusion.lr > 0, "diffusion.lr must be > 0");
  require(c.diffusion.batch >= 1, "diffusion.batch must be >= 1");
  require(c.diffusion.epochs >= 0, "diffusion.epochs must be >= 0");
  require(c.agent.n_traj >= 1, "agent.n_traj must be >= 1");
  require(c.agent.window >= 1, "agent.window must be >= 1");
  require(c.agent.replay_budget >= 0, "agent.replay_budget must be >= 0");
  require(c.agent.noise_sigma >= 0, "agent.noise_sigma must be >= 0");
  require(c.agent.n_repeats >= 1, "agent.n_repeats must be >= 1");
  require(c.agent.n_eval >= 1, "agent.n_eval must be >= 1");
  require(c.agent.bc_epochs >= 0, "agent.bc_epochs must be >= 0");
  require(c.agent.bc_batch >= 1, "agent.bc_batch must be >= 1");
  require(c.agent.bc_lr > 0, "agent.bc_lr must be > 0");
  require(c.ewc.lambda >= 0, "ewc.lambda must be >= 0");
  require(c.ewc.fisher_samples >= 1, "ewc.fisher_samples must be >= 1");
  require(c.ewc.damping >= 0, "ewc.damping must be >= 0");
}

// TOML-style subset: [section] headers, key = value lines, # comments.
// Values: quoted strings, booleans, numbers, [int, lists]. Unknown keys
// are errors with the offending line.
inline ExperimentConfig parse_config(const std::string& text,
                                     const std::string& file_label = "config") {
  ExperimentConfig cfg;
  auto table = config_detail::bindings(cfg);
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        config_detail::fail(file_label, line_no, "unterminated section header");
      section = config_detail::trim(line.substr(1, line.size() - 2));
      if (section.empty())
        config_detail::fail(file_label, line_no, "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      config_detail::fail(file_label, line_no, "expected key = value");
    const std::string key = config_detail::trim(line.substr(0, eq));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    if (key.empty()) config_detail::fail(file_label, line_no, "empty key");
    if (value.empty())
      config_detail::fail(file_label, line_no, "key '" + key + "' has no value");
    const std::string full = section.empty() ? key : section + "." + key;
    const auto it = table.find(full);
    if (it == table.end())
      config_detail::fail(file_label, line_no, "unknown key '" + full + "'");
    config_detail::assign(it->second, full, value, file_label, line_no);
  }
  validate(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  return parse_config(read_text_file(path), path);
}

// Canonical text form with every default expanded; parsing it reproduces
// the identical configuration.
inline std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  auto num = [](double v) { return format_g17(v); };
  auto list = [](const auto& values) {
    std::ostringstream s;
    s << "[";
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) s << ", ";
      s << values[i];
    }
    s << "]";
    return s.str();
  };
  out << "method = \"" << c.method << "\"\n";
  out << "seeds = " << list(c.seeds) << "\n";
  out << "output_dir = \"" << c.output_dir << "\"\n";
  out << "sac_budget = " << c.sac_budget << "\n";
  out << "refs_cache = \"" << c.refs_cache << "\"\n";
  out << "\n[suite]\n";
  out << "num_tasks = " << c.suite.num_tasks << "\n";
  out << "dt = " << num(c.suite.dt) << "\n";
  out << "accel_gain = " << num(c.suite.accel_gain) << "\n";
  out << "vmax = " << num(c.suite.vmax) << "\n";
  out << "gamma = " << num(c.suite.gamma) << "\n";
  out << "horizon = " << c.suite.horizon << "\n";
  out << "success_radius = " << num(c.suite.success_radius) << "\n";
  out << "flip_even_tasks = " << (c.suite.flip_even_tasks ? "true" : "false") << "\n";
  out << "\n[sac]\n";
  out << "hidden = " << list(c.sac.hidden) << "\n";
  out << "lr = " << num(c.sac.lr) << "\n";
  out << "batch_size = " << c.sac.batch_size << "\n";
  out << "buffer_capacity = " << c.sac.buffer_capacity << "\n";
  out << "warmup_steps = " << c.sac.warmup_steps << "\n";
  out << "tau_polyak = " << num(c.sac.tau_polyak) << "\n";
  out << "init_alpha = " << num(c.sac.init_alpha) << "\n";
  out << "\n[diffusion]\n";
  out << "steps = " << c.diffusion.steps << "\n";
  out << "beta_start = " << num(c.diffusion.beta_start) << "\n";
  out << "beta_end = " << num(c.diffusion.beta_end) << "\n";
  out << "hidden = " << list(c.diffusion.hidden) << "\n";
  out << "lr = " << num(c.diffusion.lr) << "\n";
  out << "batch = " << c.diffusion.batch << "\n";
  out << "epochs = " << c.diffusion.epochs << "\n";
  out << "\n[agent]\n";
  out << "n_traj = " << c.agent.n_traj << "\n";
  out << "window = " << c.agent.window << "\n";
  out << "replay_budget = " << c.agent.replay_budget << "\n";
  out << "noise_sigma = " << num(c.agent.noise_sigma) << "\n";
  out << "n_repeats = " << c.agent.n_repeats << "\n";
  out << "n_eval = " << c.agent.n_eval << "\n";
  out << "bc_epochs = " << c.agent.bc_epochs << "\n";
  out << "bc_batch = " << c.agent.bc_batch << "\n";
  out << "bc_lr = " << num(c.agent.bc_lr) << "\n";
  out << "lambda_bc = " << num(c.agent.lambda_bc) << "\n";
  out << "\n[ewc]\n";
  out << "lambda = " << num(c.ewc.lambda) << "\n";
  out << "fisher_samples = " << c.ewc.fisher_samples << "\n";
  out << "damping = " << num(c.ewc.damping) << "\n";
  return out.str();
}

}  // namespace distr
