#pragma once

#include <map>
#include <string>

#include "apv/action_free.hpp"
#include "apv/checkpoint.hpp"

namespace apv {

enum class TransferMode { FULL, ENC_DEC_ONLY, NAIVE, FROZEN_REP, SCRATCH };

TransferMode parse_transfer_mode(const std::string& s);
std::string transfer_mode_string(TransferMode m);

struct ACConfig {
  long deter_dim = 1024;
  long stoch_vars = 32;
  long stoch_classes = 32;
  long hidden_dim = 1024;
  real beta = 1.0;
  real beta_z_finetune = 0.0;
  bool concat_encoder_embed = false;
  long freeze_af_initial_steps = 0;
  TransferMode transfer_mode = TransferMode::SCRATCH;
  real kl_balance_alpha = 0.8;
  real free_nats = 1.0;

  long stoch_flat() const { return stoch_vars * stoch_classes; }
  long model_state_dim() const { return deter_dim + stoch_flat(); }

  void validate() const;
};

// Action-conditional latent prediction model stacked on the action-free one.
// NAIVE mode drops the action-free level and conditions the single RSSM on
// image embeddings directly (the baseline fine-tuning scheme); its action
// input weights are freshly initialized on load.
//
// Parameter groups: encoder, af_rssm (absent in NAIVE), decoder, ac_rssm,
// reward_head. The decoder consumes the action-conditional model state.
class StackedModel {
 public:
  StackedModel(AFConfig af_cfg, ACConfig ac_cfg, long action_dim, std::uint64_t seed);

  const AFConfig& af_config() const { return af_cfg_; }
  const ACConfig& ac_config() const { return ac_cfg_; }
  long action_dim() const { return action_dim_; }
  bool naive() const { return naive_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Width of the AC posterior conditioning input: the action-free model
  // state, optionally concatenated with the encoder embedding (or the raw
  // embedding in NAIVE mode).
  long af_input_dim() const;

  Var encode(Binder& bind, Var frames_scaled) const { return enc_.apply(bind, frames_scaled); }
  Var decode(Binder& bind, Var state) const { return dec_.apply(bind, state); }

  // Action-free level (UsageError in NAIVE mode).
  LatentVars af_initial(Tape& t, long batch) const;
  std::pair<LatentVars, LatentVars> af_observe(Binder& bind, const LatentVars& prev, Var embed,
                                               Var is_first_mask, Rng& rng) const;
  const RssmCore& af_rssm() const;

  LatentVars ac_initial(Tape& t, long batch) const { return ac_rssm_.initial(t, batch); }
  std::pair<LatentVars, LatentVars> ac_observe(Binder& bind, const LatentVars& prev, Var action,
                                               Var af_input, Var is_first_mask, Rng& rng) const {
    return ac_rssm_.observe(bind, prev, action, af_input, is_first_mask, rng);
  }
  LatentVars ac_imagine(Binder& bind, const LatentVars& prev, Var action, Rng& rng) const {
    return ac_rssm_.imagine(bind, prev, action, rng);
  }

  // Mean of the unit-variance Gaussian over the reward target.
  Var predict_reward(Binder& bind, Var state) const;

  struct LossResult {
    Var loss;
    std::map<std::string, real> metrics;
    std::vector<LatentVars> af_posteriors;  // empty in NAIVE mode
    std::vector<LatentVars> ac_posteriors;  // rows batch-major, one per step
  };
  // Computes a [B, T] normalized bonus array from the filtered level-one
  // posterior states of the current minibatch (time-major list, B rows each).
  using BonusHook = std::function<Tensor(Tape&, const std::vector<LatentVars>&)>;

  // bonuses, when present, is a [B, T] row-major array of normalized
  // intrinsic bonuses; the reward head regresses r + lambda_int * bonus.
  LossResult loss(Binder& bind, const SequenceBatch& batch, const Tensor* bonuses,
                  real lambda_int, Rng& rng, const BonusHook& bonus_hook = nullptr) const;

  enum class GroupFate { Loaded, Fresh, Frozen };
  using TransferReport = std::vector<std::pair<std::string, GroupFate>>;

  TransferReport load_pretrained(const Checkpoint& ckpt, TransferMode mode);

 private:
  AFConfig af_cfg_;
  ACConfig ac_cfg_;
  long action_dim_ = 0;
  bool naive_ = false;
  ParamStore params_;
  ConvEncoder enc_;
  ConvDecoder dec_;
  RssmCore af_rssm_;
  RssmCore ac_rssm_;
  Dense reward0_, reward1_, reward2_;
};

std::string group_fate_string(StackedModel::GroupFate f);

}  // namespace apv
