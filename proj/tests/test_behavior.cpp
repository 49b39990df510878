#include <doctest.h>

#include <cmath>

#include "apv/behavior.hpp"
#include "gradcheck.hpp"

using namespace apv;

namespace {

AFConfig tiny_af() {
  AFConfig cfg;
  cfg.conv_depth = 2;
  cfg.deter_dim = 8;
  cfg.stoch_vars = 4;
  cfg.stoch_classes = 4;
  cfg.hidden_dim = 16;
  cfg.free_nats = 0.0;
  return cfg;
}

ACConfig tiny_ac() {
  ACConfig cfg;
  cfg.deter_dim = 8;
  cfg.stoch_vars = 4;
  cfg.stoch_classes = 4;
  cfg.hidden_dim = 16;
  cfg.free_nats = 0.0;
  return cfg;
}

BehaviorConfig tiny_behavior() {
  BehaviorConfig cfg;
  cfg.horizon = 5;
  cfg.target_update_every = 3;
  cfg.actor_lr = 1e-3;
  cfg.critic_lr = 1e-3;
  return cfg;
}

std::vector<LatentState> random_starts(long M, const ACConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LatentState> out(static_cast<std::size_t>(M));
  for (auto& s : out) {
    s.h = Tensor({1, cfg.deter_dim});
    for (long i = 0; i < s.h.size(); ++i) s.h.at(i) = rng.uniform(-1, 1);
    s.z_sample = Tensor::zeros({1, cfg.stoch_flat()});
    for (long g = 0; g < cfg.stoch_vars; ++g)
      s.z_sample.at(g * cfg.stoch_classes +
                    static_cast<long>(rng.uniform_index(cfg.stoch_classes))) = 1.0;
  }
  return out;
}

}  // namespace

TEST_CASE("lambda returns: TD and Monte-Carlo reductions, worked example") {
  std::vector<real> rewards = {1.0, 0.0};
  std::vector<real> values = {0.0, 0.5, 1.0};

  auto td = lambda_returns(rewards, values, 0.99, 0.0);
  CHECK(td[0] == doctest::Approx(1.0 + 0.99 * 0.5).epsilon(1e-12));
  CHECK(td[1] == doctest::Approx(0.0 + 0.99 * 1.0).epsilon(1e-12));

  auto mc = lambda_returns(rewards, values, 0.99, 1.0);
  CHECK(mc[1] == doctest::Approx(0.99).epsilon(1e-12));
  CHECK(mc[0] == doctest::Approx(1.0 + 0.99 * (0.0 + 0.99 * 1.0)).epsilon(1e-12));

  auto v = lambda_returns(rewards, values, 0.99, 0.95);
  CHECK(v[1] == doctest::Approx(0.99).epsilon(1e-9));
  // hand recursion: V0 = 1 + 0.99*(0.05*0.5 + 0.95*0.99)
  CHECK(v[0] == doctest::Approx(1.955845).epsilon(1e-9));
}

TEST_CASE("lambda returns match a brute-force n-step mixture oracle") {
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const long H = 10;
    std::vector<real> rewards(H), values(H + 1);
    for (auto& r : rewards) r = rng.uniform(-1, 1);
    for (auto& v : values) v = rng.uniform(-1, 1);
    const real gamma = rng.uniform(0.8, 0.999);
    const real lam = rng.uniform(0.0, 1.0);

    auto fast = lambda_returns(rewards, values, gamma, lam);

    for (long t = 0; t < H; ++t) {
      // V_t = (1-lam) sum_{n=1}^{H-t-1} lam^{n-1} G_n + lam^{H-t-1} G_{H-t}
      // with G_n the n-step bootstrapped return
      auto nstep = [&](long n) {
        real g = 0, disc = 1;
        for (long i = 0; i < n; ++i) {
          g += disc * rewards[static_cast<std::size_t>(t + i)];
          disc *= gamma;
        }
        return g + disc * values[static_cast<std::size_t>(t + n)];
      };
      real expect = 0;
      const long maxn = H - t;
      for (long n = 1; n < maxn; ++n)
        expect += (1 - lam) * std::pow(lam, static_cast<double>(n - 1)) * nstep(n);
      expect += std::pow(lam, static_cast<double>(maxn - 1)) * nstep(maxn);
      CHECK(std::abs(fast[static_cast<std::size_t>(t)] - expect) < 1e-6);
    }
  }
}

TEST_CASE("critic and actor loss values") {
  std::vector<real> v = {1.0};
  std::vector<real> tgt = {3.0};
  CHECK(critic_loss_value(v, tgt) == doctest::Approx(2.0));
  CHECK(critic_loss_value(tgt, tgt) == doctest::Approx(0.0));

  std::vector<real> returns = {1.0, 2.0};
  std::vector<real> ents = {0.5, 0.5};
  CHECK(actor_loss_value(returns, ents, 0.1) == doctest::Approx(-1.55).epsilon(1e-12));
  CHECK(actor_loss_value(returns, ents, 0.0) == doctest::Approx(-1.5).epsilon(1e-12));
}

TEST_CASE("truncated normal entropy matches a Monte-Carlo estimate") {
  Rng rng(43);
  for (auto [mu, sigma] : std::vector<std::pair<real, real>>{{0.0, 0.5}, {0.7, 0.3}, {-0.4, 1.1}}) {
    const real analytic = trunc_normal_entropy(mu, sigma);
    // MC: H = E[-ln p(x)] with inverse-CDF sampling
    const long n = 10000;
    real acc = 0, acc2 = 0;
    const real a = (-1 - mu) / sigma, b = (1 - mu) / sigma;
    const real phi_a = 0.5 * std::erfc(-a / std::sqrt(2.0));
    const real phi_b = 0.5 * std::erfc(-b / std::sqrt(2.0));
    for (long i = 0; i < n; ++i) {
      const real u = rng.uniform();
      const real x = mu + sigma * inverse_norm_cdf(phi_a + u * (phi_b - phi_a));
      const real nlp = -trunc_normal_log_prob(x, mu, sigma);
      acc += nlp;
      acc2 += nlp * nlp;
    }
    const real mean = acc / n;
    const real se = std::sqrt((acc2 / n - mean * mean) / n);
    INFO("mu=", mu, " sigma=", sigma, " analytic=", analytic, " mc=", mean, " se=", se);
    CHECK(std::abs(analytic - mean) < 3 * se + 1e-6);
  }
}

TEST_CASE("policy produces bounded means and sampling stays in range") {
  BehaviorConfig cfg = tiny_behavior();
  BehaviorLearner learner(cfg, 24, 2, 80);
  Rng rng(45);
  Tensor state({6, 24});
  for (long i = 0; i < state.size(); ++i) state.at(i) = rng.uniform(-2, 2);

  Tape t;
  Binder bind(t, false);
  auto p = learner.policy(bind, t.constant(state));
  const Tensor mu = t.val(p.mu);
  const Tensor sigma = t.val(p.sigma);
  for (long i = 0; i < mu.size(); ++i) {
    CHECK(mu.at(i) > -1.0);
    CHECK(mu.at(i) < 1.0);
    CHECK(sigma.at(i) >= cfg.min_std);
  }
  Rng srng(47);
  Var sample = learner.sample_action(bind, p, srng);
  for (long i = 0; i < t.val(sample).size(); ++i) {
    CHECK(t.val(sample).at(i) >= -1.0);
    CHECK(t.val(sample).at(i) <= 1.0);
  }

  // graph entropy equals the scalar helper
  Var ent = learner.entropy(bind, p);
  for (long r = 0; r < 6; ++r) {
    real expect = 0;
    for (long a = 0; a < 2; ++a) expect += trunc_normal_entropy(mu(r, a), sigma(r, a));
    CHECK(t.val(ent).at(r) == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("sampled actions carry reparameterized gradients") {
  // d sample / d mu and d sample / d sigma against finite differences
  Tensor mu_t = Tensor::from({1, 1}, {0.3});
  Tensor sigma_t = Tensor::from({1, 1}, {0.6});
  const double u_fixed = 0.37;

  auto sample_value = [&]() {
    const double a = (-1 - mu_t.at(0)) / sigma_t.at(0);
    const double b = (1 - mu_t.at(0)) / sigma_t.at(0);
    const double pa = 0.5 * std::erfc(-a / std::sqrt(2.0));
    const double pb = 0.5 * std::erfc(-b / std::sqrt(2.0));
    return mu_t.at(0) + sigma_t.at(0) * inverse_norm_cdf(pa + u_fixed * (pb - pa));
  };

  // graph version with the same fixed uniform
  Tape t;
  Var mu = t.leaf(mu_t, true);
  Var sigma = t.leaf(sigma_t, true);
  namespace op = apv::ops;
  Var alpha = op::div(t, op::add_scalar(t, op::neg(t, mu), -1.0), sigma);
  Var beta = op::div(t, op::add_scalar(t, op::neg(t, mu), 1.0), sigma);
  auto cdf = [&](Var x) {
    return op::scale(t, op::add_scalar(t, op::erf_(t, op::scale(t, x, 1 / std::sqrt(2.0))), 1.0),
                     0.5);
  };
  Var lo = cdf(alpha);
  Var z = op::sub(t, cdf(beta), lo);
  Var prob = op::add(t, lo, op::scale(t, z, u_fixed));
  Var x = op::add(t, mu, op::mul(t, sigma, op::norm_icdf_(t, prob)));
  t.backward(op::sum_all(t, x));

  const double dmu = testutil::numeric_grad(sample_value, mu_t, 0, 1e-6);
  const double dsigma = testutil::numeric_grad(sample_value, sigma_t, 0, 1e-6);
  CHECK(testutil::rel_err(t.grad(mu).at(0), dmu) < 1e-5);
  CHECK(testutil::rel_err(t.grad(sigma).at(0), dsigma) < 1e-5);
}

TEST_CASE("imagination training updates actor/critic and syncs the target on schedule") {
  StackedModel world(tiny_af(), tiny_ac(), 2, 81);
  BehaviorConfig cfg = tiny_behavior();
  BehaviorLearner learner(cfg, tiny_ac().model_state_dim(), 2, 82);
  auto starts = random_starts(4, tiny_ac(), 83);

  auto snapshot_group = [&](const std::string& g) {
    std::vector<Tensor> out;
    for (Param* p : learner.params().group(g)) out.push_back(p->value);
    return out;
  };
  auto equal_group = [&](const std::string& g, const std::vector<Tensor>& snap) {
    auto now = learner.params().group(g);
    for (std::size_t i = 0; i < now.size(); ++i)
      for (long j = 0; j < snap[i].size(); ++j)
        if (now[i]->value.at(j) != snap[i].at(j)) return false;
    return true;
  };

  auto target0 = snapshot_group("critic_target");
  auto actor0 = snapshot_group("actor");

  Rng rng(84);
  auto m1 = learner.train(world, starts, rng);
  CHECK(m1.count("actor_loss") == 1);
  CHECK_FALSE(equal_group("actor", actor0));
  CHECK(equal_group("critic_target", target0));  // update 1 of 3

  learner.train(world, starts, rng);
  CHECK(equal_group("critic_target", target0));  // update 2 of 3

  learner.train(world, starts, rng);  // update 3: sync
  auto tgt = learner.params().group("critic_target");
  auto cr = learner.params().group("critic");
  for (std::size_t i = 0; i < tgt.size(); ++i)
    for (long j = 0; j < tgt[i]->value.size(); ++j)
      CHECK(tgt[i]->value.at(j) == cr[i]->value.at(j));
}

TEST_CASE("acting: eval deterministic, reset clears the carry, explore reproducible") {
  StackedModel world(tiny_af(), tiny_ac(), 2, 85);
  BehaviorLearner learner(tiny_behavior(), tiny_ac().model_state_dim(), 2, 86);

  Rng rng(87);
  std::vector<std::uint8_t> frame(64 * 64 * 3);
  for (auto& v : frame) v = static_cast<std::uint8_t>(rng.uniform_index(256));

  AgentCarry c1, c2;
  Rng r1(88), r2(88);
  auto a1 = act(world, learner, frame.data(), c1, ActMode::Eval, r1);
  auto a2 = act(world, learner, frame.data(), c2, ActMode::Eval, r2);
  CHECK(a1 == a2);
  CHECK(a1.size() == 2);
  for (double v : a1) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK_FALSE(c1.first);

  // explore mode with equal seeds reproduces the action sequence
  AgentCarry c3, c4;
  Rng r3(89), r4(89);
  for (int i = 0; i < 3; ++i) {
    auto x = act(world, learner, frame.data(), c3, ActMode::Explore, r3);
    auto y = act(world, learner, frame.data(), c4, ActMode::Explore, r4);
    CHECK(x == y);
  }

  // resetting the carry reproduces the first action
  AgentCarry c5;
  Rng r5(88);
  auto again = act(world, learner, frame.data(), c5, ActMode::Eval, r5);
  CHECK(again == a1);
}
