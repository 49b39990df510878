#pragma once

#include <map>
#include <string>

#include "apv/nn.hpp"
#include "apv/replay.hpp"

namespace apv {

struct AFConfig {
  long image_size = 64;
  long conv_depth = 48;     // base channel count; doubles per encoder stage
  long deter_dim = 1024;
  long stoch_vars = 32;
  long stoch_classes = 32;
  long hidden_dim = 1024;
  real beta_z = 1.0;
  real kl_balance_alpha = 0.8;
  real free_nats = 1.0;

  long stoch_flat() const { return stoch_vars * stoch_classes; }
  long model_state_dim() const { return deter_dim + stoch_flat(); }
  long embed_dim() const {  // final spatial map is (image/16)^2 at 8x depth
    return (image_size / 16) * (image_size / 16) * 8 * conv_depth;
  }
  long pixel_dim() const { return 3 * image_size * image_size; }

  void validate() const;
};

// Latent state handles on a tape. Posterior and prior of the same step share
// the deterministic path (identical Var).
struct LatentVars {
  Var h;
  Var z_logits;
  Var z_sample;
  Var model_state;  // concat(h, z_sample)
};

// Value snapshot of a latent state, used for environment-stepping carries.
struct LatentState {
  Tensor h;
  Tensor z_logits;
  Tensor z_sample;
};

LatentState snapshot(Tape& t, const LatentVars& v);

// Inclusive log-density constant of a unit-variance diagonal Gaussian.
inline real gaussian_nll_const(long dims) {
  return real(0.5) * real(1.8378770664093454) * static_cast<real>(dims);  // 0.5*ln(2*pi)*D
}

// Scales uint8 HWC frames to [-0.5, 0.5] CHW rows.
Tensor scale_frames(const std::uint8_t* frames, long count, long image_size);

// Exact categorical KL over grouped logits, summed across groups, averaged
// over rows; value-level companion of the tape composite.
real categorical_kl_value(const Tensor& post_logits, const Tensor& prior_logits, long classes);

namespace graph {
Var categorical_kl(Tape& t, Var post_logits, Var prior_logits, long classes);
Var kl_balanced(Tape& t, Var post_logits, Var prior_logits, long classes, real alpha,
                real free_nats);
}  // namespace graph

// --- Reusable world-model building blocks -----------------------------------

struct ConvEncoder {
  ConvLayer layer[4];
  long depth = 0, image = 0;

  void build(ParamStore& ps, const std::string& prefix, long image_size, long conv_depth,
             std::uint64_t seed);
  Var apply(Binder& bind, Var frames_scaled) const;
};

struct ConvDecoder {
  Dense input;
  ConvLayer layer[4];
  long depth = 0, image = 0;

  void build(ParamStore& ps, const std::string& prefix, long state_dim, long image_size,
             long conv_depth, std::uint64_t seed);
  Var apply(Binder& bind, Var model_state) const;
};

// Recurrent state-space core with categorical latents. The recurrent input is
// [z_prev (, extra)] where `extra` carries actions in the conditional model;
// the posterior additionally sees `obs_input`.
struct RssmCore {
  Dense input;
  GruCell gru;
  Dense prior0, prior1, post0, post1;
  long deter = 0, hidden = 0, stoch_vars = 0, classes = 0, extra_dim = 0, obs_dim = 0;

  long stoch_flat() const { return stoch_vars * classes; }
  long state_dim() const { return deter + stoch_flat(); }

  void build(ParamStore& ps, const std::string& prefix, long deter_dim, long hidden_dim,
             long vars, long classes_, long extra_dim_, long obs_dim_, std::uint64_t seed);

  LatentVars initial(Tape& t, long batch) const;
  LatentVars sampled_state(Binder& bind, Var h, Var logits, Rng& rng) const;

  // Recurrent update shared by both branches; extra may be invalid when
  // extra_dim == 0, and is_first_mask (when valid) resets state and extra.
  Var advance(Binder& bind, const LatentVars& prev, Var extra, Var is_first_mask) const;
  Var prior_logits(Binder& bind, Var h) const;
  Var post_logits(Binder& bind, Var h, Var obs_input) const;

  // Prior sampled before posterior, so imagine() matches observe()'s prior
  // for equal rng states.
  std::pair<LatentVars, LatentVars> observe(Binder& bind, const LatentVars& prev, Var extra,
                                            Var obs_input, Var is_first_mask, Rng& rng) const;
  LatentVars imagine(Binder& bind, const LatentVars& prev, Var extra, Rng& rng) const;
};

// --- Action-free latent video prediction model -------------------------------

// Conv encoder, action-free RSSM, conv decoder. Parameters live in an
// externally owned store under groups {encoder, af_rssm, decoder}.
class ActionFreeModel {
 public:
  ActionFreeModel(AFConfig cfg, ParamStore& store, std::uint64_t seed, bool with_decoder = true);

  const AFConfig& config() const { return cfg_; }
  const RssmCore& rssm() const { return rssm_; }
  const ConvEncoder& encoder() const { return enc_; }

  Var encode(Binder& bind, Var frames_scaled) const;
  Var decode(Binder& bind, Var model_state) const;

  LatentVars initial_state(Tape& t, long batch) const { return rssm_.initial(t, batch); }
  std::pair<LatentVars, LatentVars> observe(Binder& bind, const LatentVars& prev, Var embed,
                                            Var is_first_mask, Rng& rng) const {
    return rssm_.observe(bind, prev, Var{}, embed, is_first_mask, rng);
  }
  LatentVars imagine(Binder& bind, const LatentVars& prev, Rng& rng) const {
    return rssm_.imagine(bind, prev, Var{}, rng);
  }

  struct LossResult {
    Var loss;
    std::map<std::string, real> metrics;
    std::vector<LatentVars> posteriors;  // one per time step, rows batch-major
    Var frames_target;                   // scaled pixels, [T*B, pixel_dim]
  };
  LossResult loss(Binder& bind, const SequenceBatch& batch, Rng& rng) const;

  // Filters the context then predicts `horizon` frames open loop; returns
  // decoded means in scaled pixel space, one [1, pixel_dim] tensor each.
  std::vector<Tensor> open_loop_predict(const std::vector<const std::uint8_t*>& context,
                                        long horizon, Rng& rng) const;

 private:
  AFConfig cfg_;
  bool with_decoder_;
  ConvEncoder enc_;
  ConvDecoder dec_;
  RssmCore rssm_;
};

}  // namespace apv
