#include "apv/behavior.hpp"

#include <cmath>

namespace apv {

namespace op = ops;

namespace {
constexpr real kSqrt2 = 1.4142135623730951;
constexpr real kInvSqrt2Pi = 0.3989422804014327;
constexpr real kHalfLog2PiE = 1.4189385332046727;  // ln(sqrt(2*pi*e))
constexpr real kHalfLog2Pi = 0.9189385332046727;

real norm_pdf(real x) { return kInvSqrt2Pi * std::exp(real(-0.5) * x * x); }
real norm_cdf(real x) { return real(0.5) * (real(1) + std::erf(x / kSqrt2)); }
}  // namespace

void BehaviorConfig::validate() const {
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (gamma < 0 || gamma >= 1) throw ConfigError("gamma must lie in [0,1)");
  if (lambda_ret < 0 || lambda_ret > 1) throw ConfigError("lambda_ret must lie in [0,1]");
  if (eta < 0) throw ConfigError("eta must be >= 0");
  if (target_update_every < 1) throw ConfigError("target_update_every must be >= 1");
}

std::vector<real> lambda_returns(std::span<const real> rewards, std::span<const real> values,
                                 real gamma, real lambda_ret) {
  const long H = static_cast<long>(rewards.size());
  if (static_cast<long>(values.size()) != H + 1)
    throw ShapeError("lambda_returns: need H rewards and H+1 values");
  std::vector<real> v(static_cast<std::size_t>(H));
  v[static_cast<std::size_t>(H - 1)] =
      rewards[static_cast<std::size_t>(H - 1)] + gamma * values[static_cast<std::size_t>(H)];
  for (long t = H - 2; t >= 0; --t)
    v[static_cast<std::size_t>(t)] =
        rewards[static_cast<std::size_t>(t)] +
        gamma * ((1 - lambda_ret) * values[static_cast<std::size_t>(t + 1)] +
                 lambda_ret * v[static_cast<std::size_t>(t + 1)]);
  return v;
}

real critic_loss_value(std::span<const real> values, std::span<const real> returns) {
  if (values.size() != returns.size()) throw ShapeError("critic_loss: length mismatch");
  real acc = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const real d = values[i] - returns[i];
    acc += real(0.5) * d * d;
  }
  return acc / static_cast<real>(values.size());
}

real actor_loss_value(std::span<const real> returns, std::span<const real> entropies, real eta) {
  if (returns.size() != entropies.size()) throw ShapeError("actor_loss: length mismatch");
  real acc = 0;
  for (std::size_t i = 0; i < returns.size(); ++i) acc += -returns[i] - eta * entropies[i];
  return acc / static_cast<real>(returns.size());
}

real trunc_normal_entropy(real mu, real sigma) {
  const real a = (-1 - mu) / sigma, b = (1 - mu) / sigma;
  const real z = std::max(norm_cdf(b) - norm_cdf(a), real(1e-12));
  return std::log(sigma * z) + kHalfLog2PiE + (a * norm_pdf(a) - b * norm_pdf(b)) / (2 * z);
}

real trunc_normal_log_prob(real x, real mu, real sigma) {
  const real a = (-1 - mu) / sigma, b = (1 - mu) / sigma;
  const real z = std::max(norm_cdf(b) - norm_cdf(a), real(1e-12));
  const real xi = (x - mu) / sigma;
  return -std::log(sigma * z) - kHalfLog2Pi - real(0.5) * xi * xi;
}

BehaviorLearner::BehaviorLearner(BehaviorConfig cfg, long state_dim, long action_dim,
                                 std::uint64_t seed)
    : cfg_(cfg),
      state_dim_(state_dim),
      action_dim_(action_dim),
      actor_opt_(AdamConfig{.lr = cfg.actor_lr}),
      critic_opt_(AdamConfig{.lr = cfg.critic_lr}) {
  cfg_.validate();
  const long hidden = std::max<long>(state_dim / 2, 64);
  actor0_ = make_dense(params_, "actor/l0", state_dim, hidden, seed);
  actor1_ = make_dense(params_, "actor/l1", hidden, hidden, seed);
  actor2_ = make_dense(params_, "actor/l2", hidden, 2 * action_dim, seed);
  critic0_ = make_dense(params_, "critic/l0", state_dim, hidden, seed);
  critic1_ = make_dense(params_, "critic/l1", hidden, hidden, seed);
  critic2_ = make_dense(params_, "critic/l2", hidden, 1, seed);
  target0_ = make_dense(params_, "critic_target/l0", state_dim, hidden, seed);
  target1_ = make_dense(params_, "critic_target/l1", hidden, hidden, seed);
  target2_ = make_dense(params_, "critic_target/l2", hidden, 1, seed);
  for (Param* p : params_.group("critic_target")) p->frozen = true;
  sync_target();
}

void BehaviorLearner::sync_target() {
  static const char* names[] = {"l0/w", "l0/b", "l1/w", "l1/b", "l2/w", "l2/b"};
  for (const char* n : names)
    params_.get(std::string("critic_target/") + n).value =
        params_.get(std::string("critic/") + n).value;
}

BehaviorLearner::Policy BehaviorLearner::policy(Binder& bind, Var state) const {
  Tape& t = bind.tape();
  Var x = dense_elu(bind, actor0_, state);
  x = dense_elu(bind, actor1_, x);
  Var out = dense(bind, actor2_, x);
  Var mu_raw = op::slice_cols(t, out, 0, action_dim_);
  Var std_raw = op::slice_cols(t, out, action_dim_, action_dim_);
  Policy p;
  p.mu = op::tanh_(t, mu_raw);
  p.sigma = op::add_scalar(t, op::scale(t, op::sigmoid_(t, op::scale(t, std_raw, real(0.5))),
                                        real(2)),
                           cfg_.min_std);
  return p;
}

Var BehaviorLearner::sample_action(Binder& bind, const Policy& p, Rng& rng) const {
  Tape& t = bind.tape();
  const Tensor& mu = t.val(p.mu);
  Tensor u(mu.shape());
  for (long i = 0; i < u.size(); ++i) u.at(i) = rng.uniform();
  Var alpha = op::div(t, op::add_scalar(t, op::neg(t, p.mu), real(-1)), p.sigma);
  Var beta = op::div(t, op::add_scalar(t, op::neg(t, p.mu), real(1)), p.sigma);
  auto cdf = [&](Var x) {
    return op::scale(t, op::add_scalar(t, op::erf_(t, op::scale(t, x, real(1) / kSqrt2)), real(1)),
                     real(0.5));
  };
  Var lo = cdf(alpha);
  Var z = op::sub(t, cdf(beta), lo);
  Var prob = op::add(t, lo, op::mul(t, t.constant(std::move(u)), z));
  prob = op::max_scalar(t, op::min_scalar(t, prob, real(1) - real(1e-9)), real(1e-9));
  return op::add(t, p.mu, op::mul(t, p.sigma, op::norm_icdf_(t, prob)));
}

Var BehaviorLearner::entropy(Binder& bind, const Policy& p) const {
  Tape& t = bind.tape();
  Var alpha = op::div(t, op::add_scalar(t, op::neg(t, p.mu), real(-1)), p.sigma);
  Var beta = op::div(t, op::add_scalar(t, op::neg(t, p.mu), real(1)), p.sigma);
  auto cdf = [&](Var x) {
    return op::scale(t, op::add_scalar(t, op::erf_(t, op::scale(t, x, real(1) / kSqrt2)), real(1)),
                     real(0.5));
  };
  auto pdf = [&](Var x) {
    return op::scale(t, op::exp_(t, op::scale(t, op::mul(t, x, x), real(-0.5))), kInvSqrt2Pi);
  };
  Var z = op::max_scalar(t, op::sub(t, cdf(beta), cdf(alpha)), real(1e-12));
  Var log_term = op::add_scalar(t, op::log_(t, op::mul(t, p.sigma, z)), kHalfLog2PiE);
  Var tail = op::div(t, op::sub(t, op::mul(t, alpha, pdf(alpha)), op::mul(t, beta, pdf(beta))),
                     op::scale(t, z, real(2)));
  return op::sum_rows(t, op::add(t, log_term, tail));
}

Var BehaviorLearner::critic_value(Binder& bind, Var state) const {
  Var x = dense_elu(bind, critic0_, state);
  x = dense_elu(bind, critic1_, x);
  return dense(bind, critic2_, x);
}

Var BehaviorLearner::target_value(Binder& bind, Var state) const {
  Var x = dense_elu(bind, target0_, state);
  x = dense_elu(bind, target1_, x);
  return dense(bind, target2_, x);
}

std::map<std::string, real> BehaviorLearner::train(StackedModel& world,
                                                   const std::vector<LatentState>& starts,
                                                   Rng& rng) {
  const long M = static_cast<long>(starts.size());
  if (M < 1) throw ValidationError("behavior train needs at least one start state");
  const long H = cfg_.horizon;

  Tape t;
  Binder bind(t, true);

  Tensor h0({M, starts[0].h.cols()});
  Tensor z0({M, starts[0].z_sample.cols()});
  for (long m = 0; m < M; ++m) {
    std::copy(starts[m].h.data(), starts[m].h.data() + h0.cols(), h0.data() + m * h0.cols());
    std::copy(starts[m].z_sample.data(), starts[m].z_sample.data() + z0.cols(),
              z0.data() + m * z0.cols());
  }
  LatentVars cur;
  cur.h = t.constant(std::move(h0));
  cur.z_sample = t.constant(std::move(z0));
  cur.z_logits = Var{};
  cur.model_state = op::concat_cols(t, {cur.h, cur.z_sample});

  std::vector<Var> states{cur.model_state};
  std::vector<Var> rewards, entropies;
  for (long i = 0; i < H; ++i) {
    Policy p = policy(bind, cur.model_state);
    Var action = sample_action(bind, p, rng);
    entropies.push_back(entropy(bind, p));
    cur = world.ac_imagine(bind, cur, action, rng);
    states.push_back(cur.model_state);
    rewards.push_back(world.predict_reward(bind, cur.model_state));
  }
  std::vector<Var> values;
  values.reserve(states.size());
  for (Var s : states) values.push_back(target_value(bind, s));

  // lambda-return recursion, batched over M
  std::vector<Var> returns(static_cast<std::size_t>(H));
  returns[static_cast<std::size_t>(H - 1)] =
      op::add(t, rewards[static_cast<std::size_t>(H - 1)],
              op::scale(t, values[static_cast<std::size_t>(H)], cfg_.gamma));
  for (long i = H - 2; i >= 0; --i) {
    Var mix = op::add(t,
                      op::scale(t, values[static_cast<std::size_t>(i + 1)], 1 - cfg_.lambda_ret),
                      op::scale(t, returns[static_cast<std::size_t>(i + 1)], cfg_.lambda_ret));
    returns[static_cast<std::size_t>(i)] =
        op::add(t, rewards[static_cast<std::size_t>(i)], op::scale(t, mix, cfg_.gamma));
  }

  Var actor_acc, critic_acc;
  for (long i = 0; i < H; ++i) {
    Var term = op::mean_all(
        t, op::add(t, op::neg(t, returns[static_cast<std::size_t>(i)]),
                   op::scale(t, entropies[static_cast<std::size_t>(i)], -cfg_.eta)));
    actor_acc = i == 0 ? term : op::add(t, actor_acc, term);

    Var v = critic_value(bind, op::stop_grad(t, states[static_cast<std::size_t>(i)]));
    Var d = op::sub(t, v, op::stop_grad(t, returns[static_cast<std::size_t>(i)]));
    Var c = op::mean_all(t, op::scale(t, op::mul(t, d, d), real(0.5)));
    critic_acc = i == 0 ? c : op::add(t, critic_acc, c);
  }
  Var actor_loss = op::scale(t, actor_acc, real(1) / static_cast<real>(H));
  Var critic_loss = op::scale(t, critic_acc, real(1) / static_cast<real>(H));
  Var total = op::add(t, actor_loss, critic_loss);
  t.backward(total);

  actor_opt_.step(t, bind.bound(), {"actor"});
  critic_opt_.step(t, bind.bound(), {"critic"});
  ++updates_;
  if (updates_ % cfg_.target_update_every == 0) sync_target();

  std::map<std::string, real> metrics;
  metrics["actor_loss"] = t.val(actor_loss).at(0);
  metrics["critic_loss"] = t.val(critic_loss).at(0);
  real ret0 = 0, ent0 = 0;
  const Tensor& r0 = t.val(returns[0]);
  for (long m = 0; m < M; ++m) ret0 += r0.at(m);
  const Tensor& e0 = t.val(entropies[0]);
  for (long m = 0; m < M; ++m) ent0 += e0.at(m);
  metrics["imagined_return"] = ret0 / static_cast<real>(M);
  metrics["entropy"] = ent0 / static_cast<real>(M);
  return metrics;
}

std::vector<double> BehaviorLearner::act_from_state(const Tensor& model_state, bool explore,
                                                    Rng& rng) {
  Tape t;
  Binder bind(t, false);
  Var s = t.constant(model_state);
  Policy p = policy(bind, s);
  Tensor a;
  if (explore) {
    a = t.val(sample_action(bind, p, rng));
  } else {
    a = t.val(p.mu);  // mode of the truncated normal
  }
  std::vector<double> out(static_cast<std::size_t>(a.size()));
  for (long i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] =
      std::clamp(a.at(i), real(-1), real(1));
  return out;
}

std::vector<double> act(StackedModel& world, BehaviorLearner& behavior,
                        const std::uint8_t* frame, AgentCarry& carry, ActMode mode, Rng& rng) {
  Tape t;
  Binder bind(t, false);
  const AFConfig& afc = world.af_config();

  Var frame_v = t.constant(scale_frames(frame, 1, afc.image_size));
  Var embed = world.encode(bind, frame_v);
  Tensor mask({1, 1});
  mask.at(0) = carry.first ? real(1) : real(0);
  Var mask_v = t.constant(std::move(mask));

  if (carry.first) {
    if (!world.naive()) {
      carry.af.h = Tensor::zeros({1, afc.deter_dim});
      carry.af.z_sample = Tensor::zeros({1, afc.stoch_flat()});
    }
    carry.ac.h = Tensor::zeros({1, world.ac_config().deter_dim});
    carry.ac.z_sample = Tensor::zeros({1, world.ac_config().stoch_flat()});
    carry.prev_action = Tensor::zeros({1, world.action_dim()});
  }

  Var af_input;
  LatentState new_af = carry.af;
  if (world.naive()) {
    af_input = embed;
  } else {
    LatentVars prev;
    prev.h = t.constant(carry.af.h);
    prev.z_sample = t.constant(carry.af.z_sample);
    prev.z_logits = Var{};
    prev.model_state = op::concat_cols(t, {prev.h, prev.z_sample});
    auto [post, prior] = world.af_observe(bind, prev, embed, mask_v, rng);
    new_af = snapshot(t, post);
    af_input = world.ac_config().concat_encoder_embed
                   ? op::concat_cols(t, {post.model_state, embed})
                   : post.model_state;
  }

  LatentVars ac_prev;
  ac_prev.h = t.constant(carry.ac.h);
  ac_prev.z_sample = t.constant(carry.ac.z_sample);
  ac_prev.z_logits = Var{};
  ac_prev.model_state = op::concat_cols(t, {ac_prev.h, ac_prev.z_sample});
  auto [ac_post, ac_prior] =
      world.ac_observe(bind, ac_prev, t.constant(carry.prev_action), af_input, mask_v, rng);

  std::vector<double> action =
      behavior.act_from_state(t.val(ac_post.model_state), mode == ActMode::Explore, rng);

  carry.af = new_af;
  carry.ac = snapshot(t, ac_post);
  Tensor pa({1, world.action_dim()});
  for (long i = 0; i < pa.size(); ++i) pa.at(i) = action[static_cast<std::size_t>(i)];
  carry.prev_action = std::move(pa);
  carry.first = false;
  return action;
}

}  // namespace apv
