#pragma once

#include <filesystem>
#include <optional>

#include "apv/behavior.hpp"
#include "apv/config.hpp"
#include "apv/corpus.hpp"
#include "apv/metrics.hpp"

namespace apv {

// Trains the action-free model on a corpus manifest and writes
// checkpoint.apvc, metrics.csv and config.txt into out_dir.
struct PretrainResult {
  std::filesystem::path checkpoint;
  MetricLog log;
};
PretrainResult pretrain(const HarnessConfig& cfg, const std::filesystem::path& corpus_manifest,
                        const std::filesystem::path& out_dir);

// Fine-tunes the stacked world model plus behavior on the configured
// environment, optionally starting from a pre-trained checkpoint (SCRATCH
// semantics when absent). Writes checkpoint.apvc, metrics.csv, config.txt.
struct FinetuneResult {
  std::filesystem::path checkpoint;
  MetricLog log;
  long unique_cells = 0;  // grid-rooms coverage across the whole run
  StackedModel::TransferReport transfer_report;
};
// stop, when given, is polled after every completed episode and ends the run
// early once it returns true (used for threshold-crossing experiments).
using StopHook = std::function<bool(long env_steps_done, const MetricLog& log)>;
FinetuneResult finetune(const HarnessConfig& cfg,
                        const std::optional<std::filesystem::path>& ckpt_path,
                        const std::filesystem::path& out_dir, const StopHook& stop = nullptr);

// Eval-mode rollouts from a fine-tuned checkpoint.
struct EvalResult {
  std::vector<double> returns;
  std::vector<int> successes;
};
EvalResult evaluate(const std::filesystem::path& ckpt_path, const ToyEnvSpec& env_spec,
                    long episodes, std::uint64_t seed);

// Frozen-representation regression probe: learns a small regressor from
// action-free model states to the chosen target and logs held-out MSE.
enum class ProbeTarget { Reward, Proprio };
ProbeTarget parse_probe_target(const std::string& s);
MetricLog probe_regression(const std::optional<std::filesystem::path>& ckpt_path,
                           const HarnessConfig& cfg, ProbeTarget target, long steps,
                           std::uint64_t seed);

// Loads every parameter of a store from a checkpoint by exact name.
void load_all_params(ParamStore& params, const Checkpoint& ckpt);

}  // namespace apv
