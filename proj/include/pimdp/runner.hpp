#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "pimdp/config.hpp"
#include "pimdp/dqn.hpp"
#include "pimdp/grid.hpp"
#include "pimdp/metrics.hpp"
#include "pimdp/sac.hpp"

namespace pimdp {

struct WatchdogError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline GridSpec grid_spec_from_config(const ExperimentConfig& cfg) {
  GridSpec spec;
  if (!cfg.layout_path.empty()) {
    std::ifstream is(cfg.layout_path, std::ios::binary);
    if (!is) throw ConfigError("cannot open layout: " + cfg.layout_path);
    std::ostringstream os;
    os << is.rdbuf();
    spec = layout_from_text(os.str());
  } else {
    spec = random_layout(cfg.grid_size, cfg.n_obstacles, cfg.layout_seed, cfg.penalty_variant);
  }
  if (cfg.slip) spec.slip = SlipModel{cfg.slip_p};
  spec.episode_cap = cfg.episode_cap;
  return spec;
}

// State-action oracle for the blending coefficient from the exact joint-mode
// discrepancies of a layout.
inline std::function<double(const Eigen::Vector4d&, int)> make_grid_oracle(
    const GridSpec& spec, double threshold = 1e-9) {
  auto disc = std::make_shared<JointDiscrepancies>(grid_joint_discrepancies(spec));
  const int n = spec.size;
  const double c = spec.centre();
  return [disc, n, c, threshold](const Eigen::Vector4d& obs, int a) {
    const int ax = static_cast<int>(std::lround(obs(0) + c));
    const int ay = static_cast<int>(std::lround(obs(1) + c));
    const int gx = static_cast<int>(std::lround(obs(2) + c));
    const int gy = static_cast<int>(std::lround(obs(3) + c));
    const Eigen::Index s =
        static_cast<Eigen::Index>(grid_cell_index(ax, ay, n)) * n * n + grid_cell_index(gx, gy, n);
    return disc->delta(s, a) > threshold ? 1.0 : 0.0;
  };
}

struct RunArtifact {
  std::string path;
  std::uint64_t content_hash = 0;
};

struct ExperimentSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<double> final_eval_means;
  std::vector<double> final_gate_rates;
  std::vector<double> final_success_rates;  // sac only
  std::vector<RunArtifact> artifacts;
};

inline std::uint64_t hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot hash missing file: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  const std::string s = os.str();
  return fnv1a64(std::string_view(s.data(), s.size()));
}

// Executes every seed of one configuration, writing one metrics CSV and one
// checkpoint per seed plus a manifest listing every artifact with its content
// hash. Seeds may run on parallel workers; each run owns its files.
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg, long seed_offset = 0,
                                        int workers = 1, const std::string& out_override = "") {
  namespace fs = std::filesystem;
  const std::string out_dir =
      (out_override.empty() ? cfg.out_dir : out_override) + "/" + cfg.name;
  fs::create_directories(out_dir);

  ExperimentSummary summary;
  summary.seeds.resize(cfg.seeds);
  summary.final_eval_means.assign(cfg.seeds, 0.0);
  summary.final_gate_rates.assign(cfg.seeds, std::nan(""));
  summary.final_success_rates.assign(cfg.seeds, std::nan(""));
  std::vector<RunArtifact> artifacts;
  std::mutex mu;
  std::exception_ptr first_error;

  GridSpec grid;
  std::function<double(const Eigen::Vector4d&, int)> oracle;
  PointMassSpec pm;
  if (cfg.kind == "grid_dqn") {
    grid = grid_spec_from_config(cfg);
    if (cfg.dqn.gate_mode == GateMode::oracle) oracle = make_grid_oracle(grid);
  }

  auto one_seed = [&](int k) {
    const std::uint64_t seed = cfg.seed_base + static_cast<std::uint64_t>(seed_offset) + k;
    const std::string stem = out_dir + "/seed" + std::to_string(seed);
    try {
      if (cfg.kind == "grid_dqn") {
        DqnConfig dc = cfg.dqn;
        dc.oracle_lambda = oracle;
        PeDqnAgent agent(dc, seed);
        const DqnRunResult res = run_dqn(grid, dc, seed, &agent);
        write_metrics_file(stem + ".csv", res.metrics);
        std::ofstream ck(stem + ".ckpt", std::ios::binary);
        write_mlp(ck, agent.qe().base);
        write_mlp(ck, agent.qn());
        std::lock_guard<std::mutex> lock(mu);
        summary.seeds[k] = seed;
        summary.final_eval_means[k] = res.final_eval_mean;
        summary.final_gate_rates[k] = res.final_gate_rate;
        artifacts.push_back({stem + ".csv", hash_file(stem + ".csv")});
        artifacts.push_back({stem + ".ckpt", hash_file(stem + ".ckpt")});
      } else {
        PeSacAgent agent(cfg.sac, seed);
        const SacRunResult res = run_sac(pm, cfg.sac, seed, &agent);
        write_metrics_file(stem + ".csv", res.metrics);
        std::ofstream ck(stem + ".ckpt", std::ios::binary);
        if (agent.head_e().equivariant) write_mlp(ck, agent.head_e().actor_e.base);
        write_mlp(ck, agent.head_n().actor_n);
        std::lock_guard<std::mutex> lock(mu);
        summary.seeds[k] = seed;
        summary.final_eval_means[k] = res.final_eval_mean;
        summary.final_gate_rates[k] = res.final_gate_rate;
        summary.final_success_rates[k] = res.final_success_rate;
        artifacts.push_back({stem + ".csv", hash_file(stem + ".csv")});
        artifacts.push_back({stem + ".ckpt", hash_file(stem + ".ckpt")});
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu);
      if (!first_error) first_error = std::current_exception();
    }
  };

  if (workers <= 1) {
    for (int k = 0; k < cfg.seeds; ++k) one_seed(k);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int k = next.fetch_add(1); k < cfg.seeds; k = next.fetch_add(1)) one_seed(k);
      });
    for (auto& t : pool) t.join();
  }
  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (const std::runtime_error& e) {
      throw WatchdogError(e.what());
    }
  }

  std::sort(artifacts.begin(), artifacts.end(),
            [](const RunArtifact& a, const RunArtifact& b) { return a.path < b.path; });
  summary.artifacts = artifacts;
  return summary;
}

// Manifest: one line per artifact, "hash  path", preceded by the config hash.
inline void write_manifest(const std::string& out_dir, const std::string& config_text,
                           const std::vector<RunArtifact>& artifacts) {
  std::ofstream os(out_dir + "/manifest.txt", std::ios::binary);
  if (!os) throw std::runtime_error("cannot write manifest in " + out_dir);
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_text)));
  os << "config " << buf << "\n";
  for (const auto& a : artifacts) {
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(a.content_hash));
    os << buf << "  " << a.path << "\n";
  }
}

// Sweep axis "section.key=v1,v2,...": one derived config per value.
struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

inline SweepAxis parse_sweep_axis(const std::string& spec) {
  SweepAxis axis;
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ConfigError("sweep axis: expected key=v1,v2,...");
  axis.key = spec.substr(0, eq);
  std::string item;
  std::istringstream is(spec.substr(eq + 1));
  while (std::getline(is, item, ',')) {
    for (const auto& v : axis.values)
      if (v == item) throw ConfigError("sweep axis: duplicate value " + item);
    axis.values.push_back(item);
  }
  return axis;
}

inline std::vector<ExperimentConfig> expand_sweep(const std::string& config_text,
                                                  const SweepAxis& axis) {
  std::vector<ExperimentConfig> out;
  auto base_kv = parse_kv_text(config_text);
  if (axis.values.empty()) {
    out.push_back(config_from_kv(base_kv));
    return out;
  }
  for (const auto& v : axis.values) {
    auto kv = base_kv;
    kv[axis.key] = v;
    ExperimentConfig c = config_from_kv(kv);  // validates the key
    std::string tag = axis.key.substr(axis.key.find('.') + 1) + "_" + v;
    for (auto& ch : tag)
      if (ch == '.' || ch == '-') ch = 'm';
    c.name += "_" + tag;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace pimdp
