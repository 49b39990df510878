#pragma once

#include <map>

#include "apv/stacked.hpp"

namespace apv {

struct BehaviorConfig {
  long horizon = 15;
  real gamma = 0.99;
  real lambda_ret = 0.95;
  real eta = 1e-4;  // entropy regularization strength
  real actor_lr = 8e-5;
  real critic_lr = 8e-5;
  long target_update_every = 100;
  real min_std = 0.1;
  long imagine_starts = 0;  // cap on rollout start states; 0 keeps all

  void validate() const;
};

// lambda-return recursion over one trajectory: values has H+1 entries and
// bootstraps the tail.
std::vector<real> lambda_returns(std::span<const real> rewards, std::span<const real> values,
                                 real gamma, real lambda_ret);

// Value-level loss helpers mirroring the imagination objectives.
real critic_loss_value(std::span<const real> values, std::span<const real> returns);
real actor_loss_value(std::span<const real> returns, std::span<const real> entropies, real eta);

// Truncated normal on [-1, 1]: analytic entropy per dimension.
real trunc_normal_entropy(real mu, real sigma);
real trunc_normal_log_prob(real x, real mu, real sigma);

// Actor-critic learned purely in imagination rollouts of the
// action-conditional transition model. Parameter groups: actor, critic,
// critic_target.
class BehaviorLearner {
 public:
  BehaviorLearner(BehaviorConfig cfg, long state_dim, long action_dim, std::uint64_t seed);

  const BehaviorConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  long updates_taken() const { return updates_; }

  struct Policy {
    Var mu;     // [N, A] in (-1, 1)
    Var sigma;  // [N, A] >= min_std
  };
  Policy policy(Binder& bind, Var state) const;
  Var sample_action(Binder& bind, const Policy& p, Rng& rng) const;  // reparameterized
  Var entropy(Binder& bind, const Policy& p) const;                  // [N, 1], summed over dims
  Var critic_value(Binder& bind, Var state) const;                   // online critic
  Var target_value(Binder& bind, Var state) const;                   // slow copy

  // One imagination update from detached start states (h, z pairs).
  std::map<std::string, real> train(StackedModel& world, const std::vector<LatentState>& starts,
                                    Rng& rng);

  // Deterministic (eval) or sampled (explore) action for one state row.
  std::vector<double> act_from_state(const Tensor& model_state, bool explore, Rng& rng);

  void sync_target();

 private:
  BehaviorConfig cfg_;
  long state_dim_ = 0, action_dim_ = 0;
  ParamStore params_;
  Dense actor0_, actor1_, actor2_;
  Dense critic0_, critic1_, critic2_;
  Dense target0_, target1_, target2_;
  Adam actor_opt_;
  Adam critic_opt_;
  long updates_ = 0;
};

// Recurrent policy state threaded through an episode.
struct AgentCarry {
  LatentState af;
  LatentState ac;
  Tensor prev_action;
  bool first = true;
};

enum class ActMode { Explore, Eval };

// encode -> af_observe -> ac_observe -> actor; returns the clipped action and
// advances the carry.
std::vector<double> act(StackedModel& world, BehaviorLearner& behavior,
                        const std::uint8_t* frame, AgentCarry& carry, ActMode mode, Rng& rng);

}  // namespace apv
