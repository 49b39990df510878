#include "apv/action_free.hpp"

#include <cmath>

namespace apv {

namespace op = ops;

void AFConfig::validate() const {
  if (deter_dim < 1 || stoch_vars < 1 || stoch_classes < 1)
    throw ConfigError("latent dimensions must be >= 1");
  if (image_size % 16 != 0) throw ConfigError("image_size must be divisible by 16");
  if (beta_z < 0 || free_nats < 0) throw ConfigError("beta_z and free_nats must be >= 0");
  if (kl_balance_alpha < 0 || kl_balance_alpha > 1)
    throw ConfigError("kl_balance_alpha must lie in [0,1]");
}

LatentState snapshot(Tape& t, const LatentVars& v) {
  return LatentState{t.val(v.h), t.val(v.z_logits), t.val(v.z_sample)};
}

Tensor scale_frames(const std::uint8_t* frames, long count, long image_size) {
  const long hw = image_size * image_size;
  Tensor out({count, 3 * hw});
  for (long n = 0; n < count; ++n) {
    const std::uint8_t* src = frames + n * hw * 3;
    real* dst = out.data() + n * 3 * hw;
    for (long p = 0; p < hw; ++p)
      for (long c = 0; c < 3; ++c)
        dst[c * hw + p] = static_cast<real>(src[p * 3 + c]) / real(255) - real(0.5);
  }
  return out;
}

real categorical_kl_value(const Tensor& post_logits, const Tensor& prior_logits, long classes) {
  if (!post_logits.same_shape(prior_logits)) throw ShapeError("categorical_kl: shape mismatch");
  const long n = post_logits.rows(), c = post_logits.cols();
  real total = 0;
  for (long r = 0; r < n; ++r) {
    for (long g0 = 0; g0 < c; g0 += classes) {
      const real* post = post_logits.data() + r * c + g0;
      const real* prior = prior_logits.data() + r * c + g0;
      real mp = post[0], mq = prior[0];
      for (long j = 1; j < classes; ++j) {
        mp = std::max(mp, post[j]);
        mq = std::max(mq, prior[j]);
      }
      real zp = 0, zq = 0;
      for (long j = 0; j < classes; ++j) {
        zp += std::exp(post[j] - mp);
        zq += std::exp(prior[j] - mq);
      }
      const real lzp = mp + std::log(zp), lzq = mq + std::log(zq);
      for (long j = 0; j < classes; ++j) {
        const real lpj = post[j] - lzp;
        total += std::exp(lpj) * (lpj - (prior[j] - lzq));
      }
    }
  }
  return total / static_cast<real>(n);
}

namespace graph {

Var categorical_kl(Tape& t, Var post_logits, Var prior_logits, long classes) {
  Var lp = op::log_softmax_groups(t, post_logits, classes);
  Var lq = op::log_softmax_groups(t, prior_logits, classes);
  Var p = op::softmax_groups(t, post_logits, classes);
  Var integrand = op::mul(t, p, op::sub(t, lp, lq));
  return op::mean_all(t, op::sum_rows(t, integrand));
}

Var kl_balanced(Tape& t, Var post_logits, Var prior_logits, long classes, real alpha,
                real free_nats) {
  Var prior_branch = categorical_kl(t, op::stop_grad(t, post_logits), prior_logits, classes);
  Var post_branch = categorical_kl(t, post_logits, op::stop_grad(t, prior_logits), classes);
  Var a = op::max_scalar(t, prior_branch, free_nats);
  Var b = op::max_scalar(t, post_branch, free_nats);
  return op::add(t, op::scale(t, a, alpha), op::scale(t, b, real(1) - alpha));
}

}  // namespace graph

// --- building blocks ---------------------------------------------------------

void ConvEncoder::build(ParamStore& ps, const std::string& prefix, long image_size,
                        long conv_depth, std::uint64_t seed) {
  depth = conv_depth;
  image = image_size;
  auto spec = [](long in_c, long h, long out_c) {
    ConvSpec s;
    s.in_c = in_c;
    s.in_h = h;
    s.in_w = h;
    s.out_c = out_c;
    return s;
  };
  const long d = conv_depth, s = image_size;
  layer[0] = make_conv(ps, prefix + "/conv0", spec(3, s, d), seed);
  layer[1] = make_conv(ps, prefix + "/conv1", spec(d, s / 2, 2 * d), seed);
  layer[2] = make_conv(ps, prefix + "/conv2", spec(2 * d, s / 4, 4 * d), seed);
  layer[3] = make_conv(ps, prefix + "/conv3", spec(4 * d, s / 8, 8 * d), seed);
}

Var ConvEncoder::apply(Binder& bind, Var frames_scaled) const {
  Tape& t = bind.tape();
  if (t.val(frames_scaled).cols() != 3 * image * image)
    throw ShapeError("encoder: expected 3*H*W pixel rows");
  Var x = frames_scaled;
  for (const ConvLayer& l : layer)
    x = op::elu_(t, op::conv2d(t, x, bind(*l.w), bind(*l.b), l.spec));
  return x;
}

void ConvDecoder::build(ParamStore& ps, const std::string& prefix, long state_dim,
                        long image_size, long conv_depth, std::uint64_t seed) {
  depth = conv_depth;
  image = image_size;
  auto spec = [](long in_c, long h, long out_c) {
    ConvSpec s;
    s.in_c = in_c;
    s.in_h = h;
    s.in_w = h;
    s.out_c = out_c;
    return s;
  };
  const long d = conv_depth, s0 = image_size / 16;
  input = make_dense(ps, prefix + "/in", state_dim, 8 * d * s0 * s0, seed);
  layer[0] = make_deconv(ps, prefix + "/deconv0", spec(8 * d, s0, 4 * d), seed);
  layer[1] = make_deconv(ps, prefix + "/deconv1", spec(4 * d, 2 * s0, 2 * d), seed);
  layer[2] = make_deconv(ps, prefix + "/deconv2", spec(2 * d, 4 * s0, d), seed);
  layer[3] = make_deconv(ps, prefix + "/deconv3", spec(d, 8 * s0, 3), seed);
}

Var ConvDecoder::apply(Binder& bind, Var model_state) const {
  Tape& t = bind.tape();
  if (t.val(model_state).cols() != input.in)
    throw ShapeError("decoder: model state width mismatch");
  Var x = dense(bind, input, model_state);
  for (int i = 0; i < 4; ++i) {
    x = op::conv2d_transpose(t, x, bind(*layer[i].w), bind(*layer[i].b), layer[i].spec);
    if (i < 3) x = op::elu_(t, x);
  }
  return x;  // mean of the unit-variance Gaussian over scaled pixels
}

void RssmCore::build(ParamStore& ps, const std::string& prefix, long deter_dim, long hidden_dim,
                     long vars, long classes_, long extra_dim_, long obs_dim_,
                     std::uint64_t seed) {
  deter = deter_dim;
  hidden = hidden_dim;
  stoch_vars = vars;
  classes = classes_;
  extra_dim = extra_dim_;
  obs_dim = obs_dim_;
  input = make_dense(ps, prefix + "/in", stoch_flat() + extra_dim, hidden, seed);
  gru = make_gru(ps, prefix + "/gru", hidden, deter, seed);
  prior0 = make_dense(ps, prefix + "/prior0", deter, hidden, seed);
  prior1 = make_dense(ps, prefix + "/prior1", hidden, stoch_flat(), seed);
  post0 = make_dense(ps, prefix + "/post0", deter + obs_dim, hidden, seed);
  post1 = make_dense(ps, prefix + "/post1", hidden, stoch_flat(), seed);
}

LatentVars RssmCore::initial(Tape& t, long batch) const {
  LatentVars s;
  s.h = t.constant(Tensor::zeros({batch, deter}));
  s.z_logits = t.constant(Tensor::zeros({batch, stoch_flat()}));
  s.z_sample = t.constant(Tensor::zeros({batch, stoch_flat()}));
  s.model_state = op::concat_cols(t, {s.h, s.z_sample});
  return s;
}

LatentVars RssmCore::sampled_state(Binder& bind, Var h, Var logits, Rng& rng) const {
  Tape& t = bind.tape();
  LatentVars s;
  s.h = h;
  s.z_logits = logits;
  s.z_sample = op::onehot_straight_through(t, logits, classes, rng);
  s.model_state = op::concat_cols(t, {h, s.z_sample});
  return s;
}

Var RssmCore::advance(Binder& bind, const LatentVars& prev, Var extra, Var is_first_mask) const {
  Tape& t = bind.tape();
  Var h_prev = prev.h;
  Var z_prev = prev.z_sample;
  if (is_first_mask.valid()) {
    Var keep = op::add_scalar(t, op::neg(t, is_first_mask), real(1));
    h_prev = op::row_broadcast_mul(t, h_prev, keep);
    z_prev = op::row_broadcast_mul(t, z_prev, keep);
    if (extra.valid()) extra = op::row_broadcast_mul(t, extra, keep);
  }
  Var in = extra.valid() ? op::concat_cols(t, {z_prev, extra}) : z_prev;
  Var x = op::elu_(t, dense(bind, input, in));
  return gru_step(bind, gru, x, h_prev);
}

Var RssmCore::prior_logits(Binder& bind, Var h) const {
  Tape& t = bind.tape();
  return dense(bind, prior1, op::elu_(t, dense(bind, prior0, h)));
}

Var RssmCore::post_logits(Binder& bind, Var h, Var obs_input) const {
  Tape& t = bind.tape();
  Var in = op::concat_cols(t, {h, obs_input});
  return dense(bind, post1, op::elu_(t, dense(bind, post0, in)));
}

std::pair<LatentVars, LatentVars> RssmCore::observe(Binder& bind, const LatentVars& prev,
                                                    Var extra, Var obs_input, Var is_first_mask,
                                                    Rng& rng) const {
  Var h = advance(bind, prev, extra, is_first_mask);
  LatentVars prior = sampled_state(bind, h, prior_logits(bind, h), rng);
  LatentVars post = sampled_state(bind, h, post_logits(bind, h, obs_input), rng);
  return {post, prior};
}

LatentVars RssmCore::imagine(Binder& bind, const LatentVars& prev, Var extra, Rng& rng) const {
  Var h = advance(bind, prev, extra, Var{});
  return sampled_state(bind, h, prior_logits(bind, h), rng);
}

// --- action-free model --------------------------------------------------------

ActionFreeModel::ActionFreeModel(AFConfig cfg, ParamStore& store, std::uint64_t seed,
                                 bool with_decoder)
    : cfg_(cfg), with_decoder_(with_decoder) {
  cfg_.validate();
  enc_.build(store, "encoder", cfg_.image_size, cfg_.conv_depth, seed);
  rssm_.build(store, "af_rssm", cfg_.deter_dim, cfg_.hidden_dim, cfg_.stoch_vars,
              cfg_.stoch_classes, 0, cfg_.embed_dim(), seed);
  if (with_decoder_)
    dec_.build(store, "decoder", cfg_.model_state_dim(), cfg_.image_size, cfg_.conv_depth, seed);
}

Var ActionFreeModel::encode(Binder& bind, Var frames_scaled) const {
  return enc_.apply(bind, frames_scaled);
}

Var ActionFreeModel::decode(Binder& bind, Var model_state) const {
  if (!with_decoder_) throw UsageError("this model was built without a decoder");
  return dec_.apply(bind, model_state);
}

ActionFreeModel::LossResult ActionFreeModel::loss(Binder& bind, const SequenceBatch& batch,
                                                  Rng& rng) const {
  Tape& t = bind.tape();
  const long B = batch.B, T = batch.T;
  if (batch.H != cfg_.image_size || batch.W != cfg_.image_size)
    throw ShapeError("af loss: frame size mismatch");

  // Time-major frame rows: row t*B + b.
  Tensor frames({T * B, cfg_.pixel_dim()});
  for (long tt = 0; tt < T; ++tt)
    for (long b = 0; b < B; ++b) {
      Tensor one = scale_frames(batch.frame(b, tt), 1, cfg_.image_size);
      std::copy(one.data(), one.data() + one.size(),
                frames.data() + (tt * B + b) * cfg_.pixel_dim());
    }
  Var frames_v = t.constant(std::move(frames));
  Var embeds = encode(bind, frames_v);

  LatentVars state = initial_state(t, B);
  std::vector<LatentVars> posts;
  posts.reserve(T);
  Var kl_total;
  Var kl_raw_total;
  for (long tt = 0; tt < T; ++tt) {
    Tensor mask({B, 1});
    for (long b = 0; b < B; ++b) mask.at(b) = batch.is_first[b * T + tt] ? real(1) : real(0);
    Var embed_t = op::slice_rows(t, embeds, tt * B, B);
    auto [post, prior] = observe(bind, state, embed_t, t.constant(std::move(mask)), rng);
    Var kl_t = graph::kl_balanced(t, post.z_logits, prior.z_logits, cfg_.stoch_classes,
                                  cfg_.kl_balance_alpha, cfg_.free_nats);
    Var kl_raw_t = graph::categorical_kl(t, op::stop_grad(t, post.z_logits),
                                         op::stop_grad(t, prior.z_logits), cfg_.stoch_classes);
    kl_total = tt == 0 ? kl_t : op::add(t, kl_total, kl_t);
    kl_raw_total = tt == 0 ? kl_raw_t : op::add(t, kl_raw_total, kl_raw_t);
    posts.push_back(post);
    state = post;
  }

  std::vector<Var> states;
  states.reserve(T);
  for (const LatentVars& p : posts) states.push_back(p.model_state);
  Var recon = decode(bind, op::concat_rows(t, states));
  Var diff = op::sub(t, recon, frames_v);
  Var sq_sum = op::sum_all(t, op::mul(t, diff, diff));
  // -ln p summed over (t, pixels), averaged over batch
  Var image_nll = op::add_scalar(t, op::scale(t, sq_sum, real(0.5) / static_cast<real>(B)),
                                 static_cast<real>(T) * gaussian_nll_const(cfg_.pixel_dim()));
  Var loss = op::add(t, image_nll, op::scale(t, kl_total, cfg_.beta_z));

  LossResult res;
  res.loss = loss;
  res.posteriors = std::move(posts);
  res.frames_target = frames_v;
  const real mse = t.val(sq_sum).at(0) / static_cast<real>(B * T * cfg_.pixel_dim());
  res.metrics["loss"] = t.val(loss).at(0);
  res.metrics["image_loss"] = t.val(image_nll).at(0);
  res.metrics["image_mse"] = mse;
  res.metrics["kl"] = t.val(kl_total).at(0);
  res.metrics["kl_raw"] = t.val(kl_raw_total).at(0);
  return res;
}

std::vector<Tensor> ActionFreeModel::open_loop_predict(
    const std::vector<const std::uint8_t*>& context, long horizon, Rng& rng) const {
  if (horizon < 0) throw ValidationError("open_loop_predict: negative horizon");
  if (context.empty()) throw ValidationError("open_loop_predict: empty context");
  Tape t;
  Binder bind(t, false);
  LatentVars state = initial_state(t, 1);
  for (std::size_t i = 0; i < context.size(); ++i) {
    Tensor frame = scale_frames(context[i], 1, cfg_.image_size);
    Var embed = encode(bind, t.constant(std::move(frame)));
    Tensor mask({1, 1});
    mask.at(0) = i == 0 ? real(1) : real(0);
    auto [post, prior] = observe(bind, state, embed, t.constant(std::move(mask)), rng);
    state = post;
  }
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(horizon));
  for (long i = 0; i < horizon; ++i) {
    state = imagine(bind, state, rng);
    Var mean = decode(bind, state.model_state);
    out.push_back(t.val(mean));
  }
  return out;
}

}  // namespace apv
