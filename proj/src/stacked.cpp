#include "apv/stacked.hpp"

namespace apv {

namespace op = ops;

TransferMode parse_transfer_mode(const std::string& s) {
  if (s == "full") return TransferMode::FULL;
  if (s == "enc-dec-only") return TransferMode::ENC_DEC_ONLY;
  if (s == "naive") return TransferMode::NAIVE;
  if (s == "frozen-rep") return TransferMode::FROZEN_REP;
  if (s == "scratch") return TransferMode::SCRATCH;
  throw ConfigError("unknown transfer mode: " + s);
}

std::string transfer_mode_string(TransferMode m) {
  switch (m) {
    case TransferMode::FULL: return "full";
    case TransferMode::ENC_DEC_ONLY: return "enc-dec-only";
    case TransferMode::NAIVE: return "naive";
    case TransferMode::FROZEN_REP: return "frozen-rep";
    case TransferMode::SCRATCH: return "scratch";
  }
  return "?";
}

std::string group_fate_string(StackedModel::GroupFate f) {
  switch (f) {
    case StackedModel::GroupFate::Loaded: return "loaded";
    case StackedModel::GroupFate::Fresh: return "fresh";
    case StackedModel::GroupFate::Frozen: return "frozen";
  }
  return "?";
}

void ACConfig::validate() const {
  if (deter_dim < 1 || stoch_vars < 1 || stoch_classes < 1)
    throw ConfigError("latent dimensions must be >= 1");
  if (beta < 0 || beta_z_finetune < 0) throw ConfigError("beta weights must be >= 0");
  if (freeze_af_initial_steps < 0) throw ConfigError("freeze_af_initial_steps must be >= 0");
}

StackedModel::StackedModel(AFConfig af_cfg, ACConfig ac_cfg, long action_dim, std::uint64_t seed)
    : af_cfg_(af_cfg), ac_cfg_(ac_cfg), action_dim_(action_dim) {
  af_cfg_.validate();
  ac_cfg_.validate();
  if (action_dim_ < 1) throw ConfigError("action_dim must be >= 1");
  naive_ = ac_cfg_.transfer_mode == TransferMode::NAIVE;

  enc_.build(params_, "encoder", af_cfg_.image_size, af_cfg_.conv_depth, seed);
  if (!naive_)
    af_rssm_.build(params_, "af_rssm", af_cfg_.deter_dim, af_cfg_.hidden_dim, af_cfg_.stoch_vars,
                   af_cfg_.stoch_classes, 0, af_cfg_.embed_dim(), seed);
  dec_.build(params_, "decoder", ac_cfg_.model_state_dim(), af_cfg_.image_size, af_cfg_.conv_depth,
             seed);
  ac_rssm_.build(params_, "ac_rssm", ac_cfg_.deter_dim, ac_cfg_.hidden_dim, ac_cfg_.stoch_vars,
                 ac_cfg_.stoch_classes, action_dim_, af_input_dim(), seed);
  reward0_ = make_dense(params_, "reward_head/l0", ac_cfg_.model_state_dim(), ac_cfg_.hidden_dim,
                        seed);
  reward1_ = make_dense(params_, "reward_head/l1", ac_cfg_.hidden_dim, 1, seed);
}

long StackedModel::af_input_dim() const {
  if (naive_) return af_cfg_.embed_dim();
  return af_cfg_.model_state_dim() +
         (ac_cfg_.concat_encoder_embed ? af_cfg_.embed_dim() : 0);
}

LatentVars StackedModel::af_initial(Tape& t, long batch) const {
  if (naive_) throw UsageError("NAIVE model has no action-free level");
  return af_rssm_.initial(t, batch);
}

std::pair<LatentVars, LatentVars> StackedModel::af_observe(Binder& bind, const LatentVars& prev,
                                                           Var embed, Var is_first_mask,
                                                           Rng& rng) const {
  if (naive_) throw UsageError("NAIVE model has no action-free level");
  return af_rssm_.observe(bind, prev, Var{}, embed, is_first_mask, rng);
}

const RssmCore& StackedModel::af_rssm() const {
  if (naive_) throw UsageError("NAIVE model has no action-free level");
  return af_rssm_;
}

Var StackedModel::predict_reward(Binder& bind, Var state) const {
  Tape& t = bind.tape();
  return dense(bind, reward1_, op::elu_(t, dense(bind, reward0_, state)));
}

StackedModel::LossResult StackedModel::loss(Binder& bind, const SequenceBatch& batch,
                                            const Tensor* bonuses, real lambda_int, Rng& rng,
                                            const BonusHook& bonus_hook) const {
  Tape& t = bind.tape();
  const long B = batch.B, T = batch.T;
  if (!batch.has_actions || !batch.has_rewards)
    throw ValidationError("stacked loss requires action and reward payloads");
  if (batch.A != action_dim_) throw ShapeError("stacked loss: action width mismatch");
  if (bonuses && (bonuses->rows() != B || bonuses->cols() != T))
    throw ShapeError("stacked loss: bonus array must be [B, T]");

  Tensor frames({T * B, af_cfg_.pixel_dim()});
  for (long tt = 0; tt < T; ++tt)
    for (long b = 0; b < B; ++b) {
      Tensor one = scale_frames(batch.frame(b, tt), 1, af_cfg_.image_size);
      std::copy(one.data(), one.data() + one.size(),
                frames.data() + (tt * B + b) * af_cfg_.pixel_dim());
    }
  Var frames_v = t.constant(std::move(frames));
  Var embeds = enc_.apply(bind, frames_v);

  LatentVars af_state;
  LatentVars ac_state = ac_rssm_.initial(t, B);
  if (!naive_) af_state = af_rssm_.initial(t, B);

  std::vector<LatentVars> af_posts, ac_posts;
  ac_posts.reserve(T);
  Var af_kl_total, ac_kl_total;
  for (long tt = 0; tt < T; ++tt) {
    Tensor mask({B, 1});
    Tensor action({B, action_dim_});
    for (long b = 0; b < B; ++b) {
      mask.at(b) = batch.is_first[b * T + tt] ? real(1) : real(0);
      for (long a = 0; a < action_dim_; ++a)
        action(b, a) = static_cast<real>(batch.actions[(b * T + tt) * action_dim_ + a]);
    }
    Var mask_v = t.constant(std::move(mask));
    Var action_v = t.constant(std::move(action));
    Var embed_t = op::slice_rows(t, embeds, tt * B, B);

    Var af_input;
    if (naive_) {
      af_input = embed_t;
    } else {
      auto [af_post, af_prior] = af_rssm_.observe(bind, af_state, Var{}, embed_t, mask_v, rng);
      Var af_kl_t =
          graph::kl_balanced(t, af_post.z_logits, af_prior.z_logits, af_cfg_.stoch_classes,
                             af_cfg_.kl_balance_alpha, af_cfg_.free_nats);
      af_kl_total = tt == 0 ? af_kl_t : op::add(t, af_kl_total, af_kl_t);
      af_state = af_post;
      af_posts.push_back(af_post);
      af_input = ac_cfg_.concat_encoder_embed
                     ? op::concat_cols(t, {af_post.model_state, embed_t})
                     : af_post.model_state;
    }

    auto [ac_post, ac_prior] = ac_rssm_.observe(bind, ac_state, action_v, af_input, mask_v, rng);
    Var ac_kl_t = graph::kl_balanced(t, ac_post.z_logits, ac_prior.z_logits,
                                     ac_cfg_.stoch_classes, ac_cfg_.kl_balance_alpha,
                                     ac_cfg_.free_nats);
    ac_kl_total = tt == 0 ? ac_kl_t : op::add(t, ac_kl_total, ac_kl_t);
    ac_state = ac_post;
    ac_posts.push_back(ac_post);
  }

  Tensor hook_bonus;
  if (bonus_hook) {
    hook_bonus = bonus_hook(t, naive_ ? ac_posts : af_posts);
    if (hook_bonus.rows() != B || hook_bonus.cols() != T)
      throw ShapeError("bonus hook must return a [B, T] array");
    bonuses = &hook_bonus;
  }

  std::vector<Var> states;
  states.reserve(T);
  for (const LatentVars& p : ac_posts) states.push_back(p.model_state);
  Var all_states = op::concat_rows(t, states);

  Var recon = dec_.apply(bind, all_states);
  Var image_diff = op::sub(t, recon, frames_v);
  Var image_sq = op::sum_all(t, op::mul(t, image_diff, image_diff));
  Var image_nll = op::add_scalar(t, op::scale(t, image_sq, real(0.5) / static_cast<real>(B)),
                                 static_cast<real>(T) * gaussian_nll_const(af_cfg_.pixel_dim()));

  // Reward targets in time-major rows to match the state stacking.
  Tensor target({T * B, 1});
  for (long tt = 0; tt < T; ++tt)
    for (long b = 0; b < B; ++b) {
      real r = static_cast<real>(batch.rewards[b * T + tt]);
      if (bonuses) r += lambda_int * bonuses->at(b * T + tt);
      target.at(tt * B + b) = r;
    }
  Var reward_mean = predict_reward(bind, all_states);
  Var reward_diff = op::sub(t, reward_mean, t.constant(std::move(target)));
  Var reward_sq = op::sum_all(t, op::mul(t, reward_diff, reward_diff));
  Var reward_nll = op::add_scalar(t, op::scale(t, reward_sq, real(0.5) / static_cast<real>(B)),
                                  static_cast<real>(T) * gaussian_nll_const(1));

  Var loss = op::add(t, image_nll, reward_nll);
  if (!naive_ && ac_cfg_.beta_z_finetune != 0)
    loss = op::add(t, loss, op::scale(t, af_kl_total, ac_cfg_.beta_z_finetune));
  loss = op::add(t, loss, op::scale(t, ac_kl_total, ac_cfg_.beta));

  LossResult res;
  res.loss = loss;
  res.af_posteriors = std::move(af_posts);
  res.ac_posteriors = std::move(ac_posts);
  res.metrics["loss"] = t.val(loss).at(0);
  res.metrics["image_loss"] = t.val(image_nll).at(0);
  res.metrics["image_mse"] =
      t.val(image_sq).at(0) / static_cast<real>(B * T * af_cfg_.pixel_dim());
  res.metrics["reward_loss"] = t.val(reward_nll).at(0);
  res.metrics["af_kl"] = naive_ ? real(0) : t.val(af_kl_total).at(0);
  res.metrics["ac_kl"] = t.val(ac_kl_total).at(0);
  if (bonuses) {
    real bm = 0;
    for (long i = 0; i < bonuses->size(); ++i) bm += bonuses->at(i);
    res.metrics["bonus_norm_mean"] = bm / static_cast<real>(bonuses->size());
  }
  return res;
}

StackedModel::TransferReport StackedModel::load_pretrained(const Checkpoint& ckpt,
                                                           TransferMode mode) {
  if ((mode == TransferMode::NAIVE) != naive_)
    throw TransferError("model architecture does not match the requested transfer mode");

  std::vector<std::string> problems;
  auto load_param = [&](Param& p, const std::string& source_name) {
    const Checkpoint::Entry* e = ckpt.find(source_name);
    if (!e) {
      problems.push_back(source_name + " (missing from checkpoint)");
      return;
    }
    if (e->shape != p.value.shape()) {
      problems.push_back(source_name + " (shape mismatch)");
      return;
    }
    ckpt.copy_into(*e, p.value);
  };
  auto load_group = [&](const std::string& group) {
    for (Param* p : params_.group(group)) load_param(*p, p->name);
  };

  TransferReport report;
  auto mark = [&](const std::string& g, GroupFate f) { report.emplace_back(g, f); };

  switch (mode) {
    case TransferMode::SCRATCH: {
      mark("encoder", GroupFate::Fresh);
      if (!naive_) mark("af_rssm", GroupFate::Fresh);
      mark("decoder", GroupFate::Fresh);
      mark("ac_rssm", GroupFate::Fresh);
      mark("reward_head", GroupFate::Fresh);
      break;
    }
    case TransferMode::FULL:
    case TransferMode::FROZEN_REP: {
      load_group("encoder");
      load_group("af_rssm");
      load_group("decoder");
      const bool frozen = mode == TransferMode::FROZEN_REP;
      if (frozen)
        for (const std::string& g : {"encoder", "af_rssm", "decoder"})
          for (Param* p : params_.group(g)) p->frozen = true;
      const GroupFate fate = frozen ? GroupFate::Frozen : GroupFate::Loaded;
      mark("encoder", fate);
      mark("af_rssm", fate);
      mark("decoder", fate);
      mark("ac_rssm", GroupFate::Fresh);
      mark("reward_head", GroupFate::Fresh);
      break;
    }
    case TransferMode::ENC_DEC_ONLY: {
      load_group("encoder");
      load_group("decoder");
      mark("encoder", GroupFate::Loaded);
      mark("af_rssm", GroupFate::Fresh);
      mark("decoder", GroupFate::Loaded);
      mark("ac_rssm", GroupFate::Fresh);
      mark("reward_head", GroupFate::Fresh);
      break;
    }
    case TransferMode::NAIVE: {
      load_group("encoder");
      load_group("decoder");
      // Action-free weights slot into the single action-conditional RSSM;
      // only the rows that read the action inputs stay freshly initialized.
      for (Param* p : params_.group("ac_rssm")) {
        const std::string source = "af_rssm" + p->name.substr(std::string("ac_rssm").size());
        if (p->name == "ac_rssm/in/w") {
          const Checkpoint::Entry* e = ckpt.find(source);
          if (!e) {
            problems.push_back(source + " (missing from checkpoint)");
            continue;
          }
          const long stoch = ac_cfg_.stoch_flat();
          const long hidden = ac_cfg_.hidden_dim;
          if (e->shape != std::vector<long>{stoch, hidden} ||
              p->value.shape() != std::vector<long>{stoch + action_dim_, hidden}) {
            problems.push_back(source + " (shape mismatch)");
            continue;
          }
          for (long r = 0; r < stoch; ++r)
            for (long c = 0; c < hidden; ++c)
              p->value(r, c) =
                  static_cast<real>(ckpt.payload[e->offset + static_cast<std::size_t>(r * hidden + c)]);
        } else {
          load_param(*p, source);
        }
      }
      mark("encoder", GroupFate::Loaded);
      mark("decoder", GroupFate::Loaded);
      mark("ac_rssm", GroupFate::Loaded);
      mark("reward_head", GroupFate::Fresh);
      break;
    }
  }

  if (!problems.empty()) {
    std::string msg = "transfer failed for:";
    for (const auto& p : problems) msg += " " + p;
    throw TransferError(msg);
  }
  return report;
}

}  // namespace apv
