#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "apv/behavior.hpp"
#include "apv/env.hpp"
#include "apv/stacked.hpp"

namespace apv {

// Everything a run needs, resolvable from a preset plus flat
// "key = value" overrides. Unknown keys are rejected.
struct HarnessConfig {
  std::string preset = "desk";
  std::string env = "shape-world";
  long episode_length = 100;
  long action_dim = 2;
  std::uint64_t seed = 0;

  AFConfig af;
  ACConfig ac;
  BehaviorConfig behavior;

  double lambda_int = 0.1;
  long pretrain_steps = 2000;
  long env_steps = 30000;
  long train_every = 5;
  long batch_B = 16;
  long batch_T = 25;
  long action_repeat = 1;
  long buffer_capacity = 100000;
  long eval_episodes = 10;
  double model_lr = 3e-4;
  double grad_clip = 100.0;
  long queue_capacity = 4096;
  long knn_k = 16;
  long bonus_tau = 5;
  long proj_dim = 64;
  long prefill_episodes = 2;
  long log_every = 100;
  long probe_episodes = 40;
  long probe_steps = 2000;

  ToyEnvSpec env_spec() const;
  void validate() const;
};

// Baseline configurations. "manipulation" and "locomotion" mirror the
// full-scale settings; "desk" is the CPU-sized preset used by the built-in
// experiments.
HarnessConfig preset_config(const std::string& name);

// Flat config-file round trip. Parsing starts from the file's preset (key
// "preset", default desk) and applies overrides in file order.
HarnessConfig parse_config_file(const std::filesystem::path& path);
HarnessConfig apply_overrides(HarnessConfig base,
                              const std::vector<std::pair<std::string, std::string>>& kv);
std::vector<std::pair<std::string, std::string>> config_to_pairs(const HarnessConfig& cfg);
HarnessConfig config_from_pairs(const std::vector<std::pair<std::string, std::string>>& kv);
void write_config(const HarnessConfig& cfg, const std::filesystem::path& path);

}  // namespace apv
