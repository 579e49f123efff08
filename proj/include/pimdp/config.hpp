#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pimdp/dqn.hpp"
#include "pimdp/sac.hpp"

namespace pimdp {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat sectioned key-value text:
//   # comment
//   [section]
//   key = value
// Keys are addressed as "section.key". Unknown keys are an error.
inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
    const std::string full = section + "." + key;
    if (kv.count(full)) throw ConfigError("duplicate key: " + full);
    kv[full] = value;
  }
  return kv;
}

// Typed accessors that consume keys; leftovers are reported as unknown.
class KvReader {
 public:
  explicit KvReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::optional<std::string> take(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    std::string v = it->second;
    kv_.erase(it);
    return v;
  }

  std::string str(const std::string& key, const std::string& def) {
    return take(key).value_or(def);
  }
  long integer(const std::string& key, long def) {
    auto v = take(key);
    if (!v) return def;
    try {
      std::size_t pos = 0;
      const long r = std::stol(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("");
      return r;
    } catch (...) {
      throw ConfigError(key + ": not an integer: " + *v);
    }
  }
  double real(const std::string& key, double def) {
    auto v = take(key);
    if (!v) return def;
    try {
      std::size_t pos = 0;
      const double r = std::stod(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("");
      return r;
    } catch (...) {
      throw ConfigError(key + ": not a number: " + *v);
    }
  }
  bool boolean(const std::string& key, bool def) {
    auto v = take(key);
    if (!v) return def;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigError(key + ": not a boolean: " + *v);
  }
  std::vector<int> int_list(const std::string& key, std::vector<int> def) {
    auto v = take(key);
    if (!v) return def;
    std::vector<int> out;
    std::string item;
    std::istringstream is(*v);
    while (std::getline(is, item, ',')) {
      try {
        out.push_back(std::stoi(item));
      } catch (...) {
        throw ConfigError(key + ": not an integer list: " + *v);
      }
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
  }

  void reject_unknown() const {
    if (!kv_.empty()) throw ConfigError("unknown key: " + kv_.begin()->first);
  }

 private:
  std::map<std::string, std::string> kv_;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string kind = "grid_dqn";  // grid_dqn | pointmass_sac
  int seeds = 5;
  std::uint64_t seed_base = 1;
  std::string out_dir = "runs";

  // Environment (grid).
  int grid_size = 15;
  int n_obstacles = 0;
  std::uint64_t layout_seed = 7;
  std::string layout_path;  // overrides generated layout when set
  bool penalty_variant = false;
  bool slip = false;
  double slip_p = 0.65;
  int episode_cap = 200;

  DqnConfig dqn;
  SacConfig sac;
};

inline GateMode parse_gate_mode(const std::string& s) {
  if (s == "learned") return GateMode::learned;
  if (s == "fixed") return GateMode::fixed;
  if (s == "oracle") return GateMode::oracle;
  if (s == "wired0") return GateMode::wired0;
  if (s == "wired1") return GateMode::wired1;
  throw ConfigError("agent.gate_mode: unknown value: " + s);
}

inline SacConfig::Mode parse_sac_mode(const std::string& s) {
  if (s == "learned") return SacConfig::Mode::learned;
  if (s == "fixed") return SacConfig::Mode::fixed;
  if (s == "wired0") return SacConfig::Mode::wired0;
  if (s == "wired1") return SacConfig::Mode::wired1;
  throw ConfigError("agent.gate_mode: unknown value for sac: " + s);
}

inline ExperimentConfig config_from_kv(std::map<std::string, std::string> kv_map) {
  KvReader kv(std::move(kv_map));
  ExperimentConfig c;
  c.name = kv.str("experiment.name", c.name);
  c.kind = kv.str("experiment.kind", c.kind);
  if (c.kind != "grid_dqn" && c.kind != "pointmass_sac")
    throw ConfigError("experiment.kind: must be grid_dqn or pointmass_sac");
  c.seeds = static_cast<int>(kv.integer("experiment.seeds", c.seeds));
  if (c.seeds < 1 || c.seeds > 1000) throw ConfigError("experiment.seeds: out of range [1,1000]");
  c.seed_base = static_cast<std::uint64_t>(kv.integer("experiment.seed_base", 1));
  c.out_dir = kv.str("experiment.out_dir", c.out_dir);

  c.grid_size = static_cast<int>(kv.integer("env.size", c.grid_size));
  if (c.grid_size < 3 || c.grid_size > 101) throw ConfigError("env.size: out of range [3,101]");
  c.n_obstacles = static_cast<int>(kv.integer("env.n_obstacles", c.n_obstacles));
  if (c.n_obstacles < 0 || c.n_obstacles >= c.grid_size * c.grid_size - 1)
    throw ConfigError("env.n_obstacles: infeasible for board size");
  c.layout_seed = static_cast<std::uint64_t>(kv.integer("env.layout_seed", 7));
  c.layout_path = kv.str("env.layout_path", "");
  c.penalty_variant = kv.boolean("env.penalty_variant", false);
  c.slip = kv.boolean("env.slip", false);
  c.slip_p = kv.real("env.slip_p", 0.65);
  if (c.slip_p <= 0.0 || c.slip_p > 1.0) throw ConfigError("env.slip_p: out of range (0,1]");
  c.episode_cap = static_cast<int>(kv.integer("env.episode_cap", 200));
  if (c.episode_cap < 1) throw ConfigError("env.episode_cap: must be positive");

  // Agent block; defaults follow the reference hyperparameter tables.
  auto& d = c.dqn;
  auto& s = c.sac;
  const std::string gate_mode = kv.str("agent.gate_mode", "learned");
  const std::string actor_gate = kv.str("agent.actor_gate", "learned_state");
  if (actor_gate == "learned_state")
    d.actor_gate = ActorGate::learned_state;
  else if (actor_gate == "sampled_max")
    d.actor_gate = ActorGate::sampled_max;
  else
    throw ConfigError("agent.actor_gate: unknown value: " + actor_gate);

  const std::vector<int> hidden = kv.int_list("agent.hidden", {256, 256});
  for (int hwidth : hidden)
    if (hwidth < 1 || hwidth > 4096) throw ConfigError("agent.hidden: width out of range");
  const double lr = kv.real("agent.lr", 3e-4);
  const long batch = kv.integer("agent.batch", 256);
  const double gamma = kv.real("agent.gamma", 0.99);
  const double tau = kv.real("agent.tau", 0.005);
  const long buffer = kv.integer("agent.buffer", 100000);
  const double clip = kv.real("agent.clip", 1.0);
  const long update_every = kv.integer("agent.update_every", 1);
  const long learning_starts = kv.integer("agent.learning_starts", 1000);
  const double gate_lr = kv.real("agent.gate_lr", 1e-4);
  const long predictor_grad_steps = kv.integer("agent.predictor_grad_steps", 20);
  const double kappa = kv.real("agent.kappa", 1.5);
  const double beta = kv.real("agent.beta", 0.2);
  const long threshold_interval = kv.integer("agent.threshold_interval", 200);
  const bool quantile_mode = kv.boolean("agent.quantile_mode", false);
  const double quantile_alpha = kv.real("agent.quantile_alpha", 0.6);
  const long warm_steps = kv.integer("agent.warm_steps", c.kind == "pointmass_sac" ? 40000 : 20000);
  const double p_warm = kv.real("agent.p_warm", c.kind == "pointmass_sac" ? 0.7685 : 0.5);
  const double tau_lambda = kv.real("agent.tau_lambda", 0.005);
  const double tau_exp = kv.real("agent.tau_exp", 0.8);
  const double fixed_lambda = kv.real("agent.fixed_lambda", 0.5);
  const bool pipeline = kv.boolean("agent.pipeline", true);
  const bool reward_head = kv.boolean("agent.reward_head", false);
  const long m_candidates = kv.integer("agent.m_candidates", 4);
  const double eps_start = kv.real("agent.eps_start", 1.0);
  const double eps_end = kv.real("agent.eps_end", 0.05);
  const long eps_decay_steps = kv.integer("agent.eps_decay_steps", 50000);
  const double target_entropy = kv.real("agent.target_entropy", -1.0);

  if (lr <= 0 || lr > 1) throw ConfigError("agent.lr: out of range (0,1]");
  if (gate_lr <= 0 || gate_lr > 1) throw ConfigError("agent.gate_lr: out of range (0,1]");
  if (batch < 1 || batch > 65536) throw ConfigError("agent.batch: out of range");
  if (gamma <= 0 || gamma >= 1) throw ConfigError("agent.gamma: out of range (0,1)");
  if (tau <= 0 || tau > 1) throw ConfigError("agent.tau: out of range (0,1]");
  if (tau_lambda <= 0 || tau_lambda > 1) throw ConfigError("agent.tau_lambda: out of range (0,1]");
  if (tau_exp <= 0 || tau_exp >= 1) throw ConfigError("agent.tau_exp: out of range (0,1)");
  if (buffer < batch) throw ConfigError("agent.buffer: smaller than batch");
  if (update_every < 1) throw ConfigError("agent.update_every: must be positive");
  if (beta < 0 || beta >= 1) throw ConfigError("agent.beta: out of range [0,1)");
  if (threshold_interval < 1) throw ConfigError("agent.threshold_interval: must be positive");
  if (quantile_alpha < 0 || quantile_alpha > 1)
    throw ConfigError("agent.quantile_alpha: out of range [0,1]");
  if (p_warm < 0 || p_warm > 1) throw ConfigError("agent.p_warm: out of range [0,1]");
  if (fixed_lambda < 0 || fixed_lambda > 1)
    throw ConfigError("agent.fixed_lambda: out of range [0,1]");
  if (m_candidates < 1 || m_candidates > 64) throw ConfigError("agent.m_candidates: out of range");
  if (eps_start < 0 || eps_start > 1 || eps_end < 0 || eps_end > 1)
    throw ConfigError("agent.eps_start/eps_end: out of range [0,1]");
  if (eps_decay_steps < 1) throw ConfigError("agent.eps_decay_steps: must be positive");
  if (predictor_grad_steps < 0) throw ConfigError("agent.predictor_grad_steps: must be >= 0");
  if (warm_steps < 0) throw ConfigError("agent.warm_steps: must be >= 0");

  const long total_steps = kv.integer("run.total_steps", 100000);
  const long eval_every = kv.integer("run.eval_every", 1000);
  const long eval_episodes = kv.integer("run.eval_episodes", 20);
  const long metrics_every = kv.integer("run.metrics_every", 1000);
  if (total_steps < 1) throw ConfigError("run.total_steps: must be positive");
  if (eval_every < 1 || metrics_every < 1)
    throw ConfigError("run.eval_every/metrics_every: must be positive");
  if (eval_episodes < 1) throw ConfigError("run.eval_episodes: must be positive");

  kv.reject_unknown();

  if (gate_mode == "learned" && !pipeline)
    throw ConfigError("agent.gate_mode: learned requires agent.pipeline = true");

  d.gate_mode = parse_gate_mode(gate_mode);
  d.fixed_lambda = fixed_lambda;
  d.pipeline = pipeline;
  d.hidden = hidden;
  d.lr = lr;
  d.batch = static_cast<int>(batch);
  d.gamma = gamma;
  d.tau = tau;
  d.buffer = static_cast<std::size_t>(buffer);
  d.clip = clip;
  d.update_every = static_cast<int>(update_every);
  d.learning_starts = learning_starts;
  d.total_steps = total_steps;
  d.eps_start = eps_start;
  d.eps_end = eps_end;
  d.eps_decay_steps = eps_decay_steps;
  d.gate_lr = gate_lr;
  d.predictor_grad_steps = static_cast<int>(predictor_grad_steps);
  d.reward_head = reward_head;
  d.kappa = kappa;
  d.beta = beta;
  d.threshold_interval = static_cast<int>(threshold_interval);
  d.quantile_mode = quantile_mode;
  d.quantile_alpha = quantile_alpha;
  d.warm_steps = warm_steps;
  d.p_warm = p_warm;
  d.tau_lambda = tau_lambda;
  d.tau_exp = tau_exp;
  d.eval_every = eval_every;
  d.eval_episodes = static_cast<int>(eval_episodes);
  d.metrics_every = metrics_every;

  if (c.kind == "pointmass_sac") {
    s.gate_mode = parse_sac_mode(gate_mode);
    s.fixed_lambda = fixed_lambda;
    s.pipeline = pipeline;
    s.hidden = hidden;
    s.lr = lr;
    s.batch = static_cast<int>(batch);
    s.gamma = gamma;
    s.tau = tau;
    s.buffer = static_cast<std::size_t>(buffer);
    s.clip = clip;
    s.update_every = static_cast<int>(update_every);
    s.learning_starts = learning_starts;
    s.total_steps = total_steps;
    s.target_entropy = target_entropy;
    s.gate_lr = gate_lr;
    s.predictor_grad_steps = static_cast<int>(predictor_grad_steps);
    s.kappa = kappa;
    s.beta = beta;
    s.threshold_interval = static_cast<int>(threshold_interval);
    s.quantile_mode = quantile_mode;
    s.quantile_alpha = quantile_alpha;
    s.warm_steps = warm_steps;
    s.p_warm = p_warm;
    s.tau_lambda = tau_lambda;
    s.tau_exp = tau_exp;
    s.m_candidates = static_cast<int>(m_candidates);
    s.eval_every = eval_every;
    s.eval_episodes = static_cast<int>(eval_episodes);
    s.metrics_every = metrics_every;
  }
  return c;
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  return config_from_kv(parse_kv_text(text));
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return parse_experiment_config(os.str());
}

}  // namespace pimdp
