#include "apv/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "apv/intrinsic.hpp"

namespace apv {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

Episode fresh_episode(const ToyEnvSpec& spec) {
  Episode ep;
  ep.H = spec.image_size;
  ep.W = spec.image_size;
  ep.A = spec.action_dim;
  ep.has_actions = true;
  ep.has_rewards = true;
  return ep;
}

void push_step(Episode& ep, const std::vector<std::uint8_t>& obs,
               const std::vector<double>& action, double reward, bool done) {
  ep.frames.insert(ep.frames.end(), obs.begin(), obs.end());
  for (long a = 0; a < ep.A; ++a)
    ep.actions.push_back(a < static_cast<long>(action.size())
                             ? static_cast<float>(action[static_cast<std::size_t>(a)])
                             : 0.f);
  ep.rewards.push_back(static_cast<float>(reward));
  ep.dones.push_back(done ? 1 : 0);
  ++ep.T;
}

}  // namespace

void load_all_params(ParamStore& params, const Checkpoint& ckpt) {
  for (Param* p : params.all()) {
    const Checkpoint::Entry* e = ckpt.find(p->name);
    if (!e) throw ValidationError("checkpoint is missing parameter " + p->name);
    ckpt.copy_into(*e, p->value);
  }
}

PretrainResult pretrain(const HarnessConfig& cfg, const fs::path& corpus_manifest,
                        const fs::path& out_dir) {
  cfg.validate();
  ensure_dir(out_dir);
  write_config(cfg, out_dir / "config.txt");

  std::vector<Episode> episodes = load_manifest(corpus_manifest);
  if (episodes.empty()) throw ValidationError("corpus manifest lists no episodes");
  long total_steps = 0;
  for (const Episode& e : episodes) total_steps += e.T;
  ReplayBuffer buffer(std::max(cfg.buffer_capacity, total_steps),
                      Rng::derive(cfg.seed, "pretrain-buffer"));
  for (Episode& e : episodes) {
    // corpora may be action-free; batches for the AF objective need no payloads
    buffer.add_episode(std::move(e));
  }

  ParamStore params;
  ActionFreeModel model(cfg.af, params, Rng::derive(cfg.seed, "af-model"));
  Adam opt(AdamConfig{.lr = cfg.model_lr, .clip_norm = cfg.grad_clip});

  MetricLog log;
  for (long step = 1; step <= cfg.pretrain_steps; ++step) {
    SequenceBatch batch = buffer.sample_sequences(cfg.batch_B, cfg.batch_T);
    Tape tape;
    Binder bind(tape, true);
    Rng rng(Rng::derive(cfg.seed, Rng::derive(step, "pretrain-step")));
    auto res = model.loss(bind, batch, rng);
    tape.backward(res.loss);
    opt.step(tape, bind.bound());
    if (step % cfg.log_every == 0 || step == cfg.pretrain_steps) {
      for (const auto& [k, v] : res.metrics) log.log(step, k, v);
    }
  }

  Checkpoint ckpt = Checkpoint::from_params(params, {"encoder", "af_rssm", "decoder"},
                                            config_to_pairs(cfg),
                                            Rng::derive(cfg.seed, "projection"));
  PretrainResult out;
  out.checkpoint = out_dir / "checkpoint.apvc";
  ckpt.save(out.checkpoint);
  out.log = std::move(log);
  out.log.save(out_dir / "metrics.csv");
  return out;
}

FinetuneResult finetune(const HarnessConfig& cfg, const std::optional<fs::path>& ckpt_path,
                        const fs::path& out_dir, const StopHook& stop) {
  cfg.validate();
  ensure_dir(out_dir);
  write_config(cfg, out_dir / "config.txt");

  StackedModel model(cfg.af, cfg.ac, cfg.action_dim, Rng::derive(cfg.seed, "stacked-model"));
  FinetuneResult out;
  std::uint64_t projection_seed = Rng::derive(cfg.seed, "projection");
  if (ckpt_path) {
    Checkpoint ckpt = Checkpoint::load(*ckpt_path);
    out.transfer_report = model.load_pretrained(ckpt, cfg.ac.transfer_mode);
    projection_seed = ckpt.projection_seed;
  } else {
    for (const char* g : {"encoder", "af_rssm", "decoder", "ac_rssm", "reward_head"})
      if (!(model.naive() && std::string(g) == "af_rssm"))
        out.transfer_report.emplace_back(g, StackedModel::GroupFate::Fresh);
  }

  BehaviorLearner behavior(cfg.behavior, cfg.ac.model_state_dim(), cfg.action_dim,
                           Rng::derive(cfg.seed, "behavior"));
  ReplayBuffer buffer(cfg.buffer_capacity, Rng::derive(cfg.seed, "replay"));

  const long bonus_dim = model.naive()
                             ? cfg.ac.model_state_dim()
                             : cfg.af.model_state_dim();
  ProjectionMap projection = ProjectionMap::create(bonus_dim, cfg.proj_dim, projection_seed);
  EmbeddingQueue queue(cfg.queue_capacity);
  BonusNormalizer normalizer;

  ToyEnvSpec env_spec = cfg.env_spec();
  ToyEnv env(env_spec);
  Rng explore_rng(Rng::derive(cfg.seed, "explore"));
  Rng behavior_rng(Rng::derive(cfg.seed, "imagine"));
  Rng prefill_rng(Rng::derive(cfg.seed, "prefill"));

  MetricLog log;
  std::set<long> visited_cells;
  long env_steps_done = 0;
  long grad_steps_done = 0;
  long episode_index = 0;
  long next_train_at = cfg.train_every;

  Adam model_opt(AdamConfig{.lr = cfg.model_lr, .clip_norm = cfg.grad_clip});

  auto train_step = [&]() {
    SequenceBatch batch = buffer.sample_sequences(cfg.batch_B, cfg.batch_T);
    Tape tape;
    Binder bind(tape, true);
    Rng rng(Rng::derive(cfg.seed, Rng::derive(grad_steps_done + 1, "train-step")));

    real bonus_raw_mean = 0;
    StackedModel::BonusHook hook = nullptr;
    if (cfg.lambda_int > 0) {
      hook = [&](Tape& t, const std::vector<LatentVars>& posts) {
        const long B = cfg.batch_B, T = cfg.batch_T;
        Tensor states({B * T, bonus_dim});
        for (long tt = 0; tt < T; ++tt) {
          const Tensor& ms = t.val(posts[static_cast<std::size_t>(tt)].model_state);
          for (long b = 0; b < B; ++b)
            std::copy(ms.data() + b * bonus_dim, ms.data() + (b + 1) * bonus_dim,
                      states.data() + (b * T + tt) * bonus_dim);
        }
        const real before = normalizer.ema_mean;
        Tensor bonus =
            compute_intrinsic(states, B, T, cfg.bonus_tau, projection, queue, cfg.knn_k,
                              normalizer);
        // recover the raw mean from the EMA update for logging
        bonus_raw_mean = (normalizer.ema_mean - normalizer.decay * before) /
                         (1 - normalizer.decay);
        return bonus;
      };
    }

    auto res = model.loss(bind, batch, nullptr, cfg.lambda_int, rng, hook);
    tape.backward(res.loss);

    std::vector<std::string> groups = {"encoder", "decoder", "ac_rssm", "reward_head"};
    if (!model.naive()) groups.push_back("af_rssm");
    if (grad_steps_done < cfg.ac.freeze_af_initial_steps) {
      std::erase(groups, std::string("encoder"));
      std::erase(groups, std::string("af_rssm"));
      std::erase(groups, std::string("decoder"));
    }
    model_opt.step(tape, bind.bound(), groups);

    // imagination starts: detached AC posterior states
    const auto& posts = res.ac_posteriors;
    std::vector<LatentState> starts;
    const long total = cfg.batch_B * cfg.batch_T;
    long want = cfg.behavior.imagine_starts > 0
                    ? std::min<long>(cfg.behavior.imagine_starts, total)
                    : total;
    for (long i = 0; i < want; ++i) {
      const long flat = want == total
                            ? i
                            : static_cast<long>(behavior_rng.uniform_index(
                                  static_cast<std::uint64_t>(total)));
      const long tt = flat / cfg.batch_B;
      const long b = flat % cfg.batch_B;
      const LatentVars& lv = posts[static_cast<std::size_t>(tt)];
      LatentState s;
      const Tensor& h = tape.val(lv.h);
      const Tensor& z = tape.val(lv.z_sample);
      s.h = Tensor({1, h.cols()});
      std::copy(h.data() + b * h.cols(), h.data() + (b + 1) * h.cols(), s.h.data());
      s.z_sample = Tensor({1, z.cols()});
      std::copy(z.data() + b * z.cols(), z.data() + (b + 1) * z.cols(), s.z_sample.data());
      starts.push_back(std::move(s));
    }
    auto bmetrics = behavior.train(model, starts, behavior_rng);

    ++grad_steps_done;
    if (grad_steps_done % cfg.log_every == 0) {
      for (const auto& [k, v] : res.metrics) log.log(env_steps_done, k, v);
      for (const auto& [k, v] : bmetrics) log.log(env_steps_done, k, v);
      if (cfg.lambda_int > 0) log.log(env_steps_done, "bonus_raw_mean", bonus_raw_mean);
    }
  };

  while (env_steps_done < cfg.env_steps) {
    const std::uint64_t episode_seed =
        Rng::derive(cfg.seed, Rng::derive(static_cast<std::uint64_t>(episode_index), "episode"));
    auto obs = env.reset(episode_seed);
    AgentCarry carry;
    Episode ep = fresh_episode(env_spec);
    push_step(ep, obs, {}, 0.0, false);
    if (env_spec.name == EnvName::GridRooms) visited_cells.insert(env.cell_index());

    double episode_return = 0;
    const bool prefill = episode_index < cfg.prefill_episodes;
    while (!env.done() && env_steps_done < cfg.env_steps) {
      std::vector<double> action(static_cast<std::size_t>(cfg.action_dim));
      if (prefill) {
        for (auto& a : action) a = prefill_rng.uniform(-1, 1);
      } else {
        action = act(model, behavior, obs.data(), carry, ActMode::Explore, explore_rng);
      }
      double reward = 0;
      bool done = false;
      for (long rep = 0; rep < cfg.action_repeat && !env.done(); ++rep) {
        auto res = env.step(action);
        obs = res.obs;
        reward += res.reward;
        done = res.done;
        ++env_steps_done;
      }
      episode_return += reward;
      push_step(ep, obs, action, reward, done);
      if (env_spec.name == EnvName::GridRooms) visited_cells.insert(env.cell_index());

      const bool buffer_ready = buffer.num_episodes() > 0;
      while (env_steps_done >= next_train_at) {
        next_train_at += cfg.train_every;
        if (!prefill && buffer_ready) train_step();
      }
    }
    if (env.done()) {
      buffer.add_episode(std::move(ep));
      log.log(env_steps_done, "episode_return", episode_return);
      log.log(env_steps_done, "success", env.success() ? 1.0 : 0.0);
      if (env_spec.name == EnvName::GridRooms)
        log.log(env_steps_done, "unique_cells", static_cast<double>(visited_cells.size()));
      ++episode_index;
      if (episode_index % 25 == 0) log.save(out_dir / "metrics.csv");
      if (stop && stop(env_steps_done, log)) break;
    }
  }

  out.unique_cells = static_cast<long>(visited_cells.size());

  // full checkpoint: world model plus behavior
  ParamStore combined;
  auto copy_params = [&combined](const ParamStore& src) {
    for (const Param* p : src.all()) combined.add(p->name, p->value);
  };
  copy_params(model.params());
  copy_params(behavior.params());
  std::vector<std::string> groups = {"encoder", "decoder", "ac_rssm", "reward_head",
                                     "actor", "critic", "critic_target"};
  if (!model.naive()) groups.insert(groups.begin() + 1, "af_rssm");
  Checkpoint ckpt =
      Checkpoint::from_params(combined, groups, config_to_pairs(cfg), projection_seed);
  out.checkpoint = out_dir / "checkpoint.apvc";
  ckpt.save(out.checkpoint);
  out.log = std::move(log);
  out.log.save(out_dir / "metrics.csv");
  return out;
}

EvalResult evaluate(const fs::path& ckpt_path, const ToyEnvSpec& env_spec, long episodes,
                    std::uint64_t seed) {
  if (episodes < 1) throw ValidationError("evaluate needs episodes >= 1");
  Checkpoint ckpt = Checkpoint::load(ckpt_path);
  if (!ckpt.has_group("actor"))
    throw ValidationError("checkpoint has no actor group; run finetune first");
  HarnessConfig cfg = config_from_pairs(ckpt.config);

  StackedModel model(cfg.af, cfg.ac, cfg.action_dim, Rng::derive(cfg.seed, "stacked-model"));
  BehaviorLearner behavior(cfg.behavior, cfg.ac.model_state_dim(), cfg.action_dim,
                           Rng::derive(cfg.seed, "behavior"));
  // every stored group loads by name; critic_target may be absent in older files
  for (Param* p : model.params().all()) {
    const Checkpoint::Entry* e = ckpt.find(p->name);
    if (!e) throw ValidationError("checkpoint is missing parameter " + p->name);
    ckpt.copy_into(*e, p->value);
  }
  for (Param* p : behavior.params().all()) {
    const Checkpoint::Entry* e = ckpt.find(p->name);
    if (!e) throw ValidationError("checkpoint is missing parameter " + p->name);
    ckpt.copy_into(*e, p->value);
  }

  EvalResult out;
  ToyEnv env(env_spec);
  for (long ep = 0; ep < episodes; ++ep) {
    const std::uint64_t episode_seed =
        Rng::derive(seed, Rng::derive(static_cast<std::uint64_t>(ep), "eval-episode"));
    auto obs = env.reset(episode_seed);
    AgentCarry carry;
    Rng act_rng(Rng::derive(seed, Rng::derive(static_cast<std::uint64_t>(ep), "eval-act")));
    double ret = 0;
    while (!env.done()) {
      auto action = act(model, behavior, obs.data(), carry, ActMode::Eval, act_rng);
      for (long rep = 0; rep < cfg.action_repeat && !env.done(); ++rep) {
        auto res = env.step(action);
        obs = res.obs;
        ret += res.reward;
      }
    }
    out.returns.push_back(ret);
    out.successes.push_back(env.success() ? 1 : 0);
  }
  return out;
}

ProbeTarget parse_probe_target(const std::string& s) {
  if (s == "reward") return ProbeTarget::Reward;
  if (s == "proprio") return ProbeTarget::Proprio;
  throw ConfigError("unknown probe target: " + s);
}

MetricLog probe_regression(const std::optional<fs::path>& ckpt_path, const HarnessConfig& cfg,
                           ProbeTarget target, long steps, std::uint64_t seed) {
  cfg.validate();
  ToyEnvSpec env_spec = cfg.env_spec();

  // the probe model: action-free level only, frozen throughout
  ParamStore params;
  ActionFreeModel model(cfg.af, params, Rng::derive(seed, "probe-model"), false);
  if (ckpt_path) {
    Checkpoint ckpt = Checkpoint::load(*ckpt_path);
    for (Param* p : params.all()) {
      const Checkpoint::Entry* e = ckpt.find(p->name);
      if (!e) throw ValidationError("checkpoint is missing parameter " + p->name);
      ckpt.copy_into(*e, p->value);
    }
  }
  for (Param* p : params.all()) p->frozen = true;

  // labeled dataset: random-policy episodes with reward/proprio targets
  std::vector<std::vector<double>> features;  // AF model states
  std::vector<std::vector<double>> targets;
  const long ms_dim = cfg.af.model_state_dim();
  ToyEnv env(env_spec);
  for (long e = 0; e < cfg.probe_episodes; ++e) {
    const std::uint64_t episode_seed =
        Rng::derive(seed, Rng::derive(static_cast<std::uint64_t>(e), "probe-episode"));
    Rng policy_rng(Rng::derive(episode_seed, "probe-policy"));
    std::vector<std::vector<std::uint8_t>> frames;
    std::vector<std::vector<double>> step_targets;
    auto obs = env.reset(episode_seed);
    frames.push_back(obs);
    if (target == ProbeTarget::Reward) {
      step_targets.push_back({0.0});
    } else {
      auto pr = env.proprio();
      if (pr.empty()) throw ValidationError("environment exposes no proprioceptive targets");
      step_targets.push_back(pr);
    }
    while (!env.done()) {
      std::vector<double> a(static_cast<std::size_t>(env_spec.action_dim));
      for (auto& v : a) v = policy_rng.uniform(-1, 1);
      auto res = env.step(a);
      frames.push_back(res.obs);
      if (target == ProbeTarget::Reward)
        step_targets.push_back({res.reward});
      else
        step_targets.push_back(env.proprio());
    }

    // filter the episode through the frozen model, batch of one sequence
    Tape t;
    Binder bind(t, false);
    Rng rng(Rng::derive(episode_seed, "probe-filter"));
    LatentVars state = model.initial_state(t, 1);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      Var embed = model.encode(bind, t.constant(scale_frames(frames[i].data(), 1, cfg.af.image_size)));
      Tensor mask({1, 1});
      mask.at(0) = i == 0 ? real(1) : real(0);
      auto [post, prior] = model.observe(bind, state, embed, t.constant(std::move(mask)), rng);
      state = post;
      const Tensor& ms = t.val(post.model_state);
      features.emplace_back(ms.data(), ms.data() + ms_dim);
      targets.push_back(step_targets[i]);
    }
  }

  // shuffled 80/20 split with train-side target normalization
  const std::size_t n = features.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng shuffle_rng(Rng::derive(seed, "probe-shuffle"));
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
  const std::size_t n_train = n * 4 / 5;
  const long tdim = static_cast<long>(targets[0].size());

  std::vector<double> mean(static_cast<std::size_t>(tdim), 0.0),
      stddev(static_cast<std::size_t>(tdim), 0.0);
  for (std::size_t i = 0; i < n_train; ++i)
    for (long j = 0; j < tdim; ++j) mean[static_cast<std::size_t>(j)] += targets[order[i]][static_cast<std::size_t>(j)];
  for (auto& m : mean) m /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < n_train; ++i)
    for (long j = 0; j < tdim; ++j) {
      const double d = targets[order[i]][static_cast<std::size_t>(j)] - mean[static_cast<std::size_t>(j)];
      stddev[static_cast<std::size_t>(j)] += d * d;
    }
  for (auto& s : stddev) s = std::max(std::sqrt(s / static_cast<double>(n_train)), 1e-8);

  auto norm_target = [&](std::size_t row, long j) {
    return (targets[row][static_cast<std::size_t>(j)] - mean[static_cast<std::size_t>(j)]) /
           stddev[static_cast<std::size_t>(j)];
  };

  // small regressor on frozen features
  ParamStore reg;
  Dense l0 = make_dense(reg, "probe/l0", ms_dim, 64, Rng::derive(seed, "probe-reg"));
  Dense l1 = make_dense(reg, "probe/l1", 64, tdim, Rng::derive(seed, "probe-reg2"));
  l1.w->value.fill(0);  // zero output head: predictions start at the target mean
  Adam opt(AdamConfig{.lr = 1e-3});
  Rng batch_rng(Rng::derive(seed, "probe-batches"));
  const long batch_size = 64;

  auto heldout_mse = [&]() {
    double acc = 0;
    long count = 0;
    const long chunk = 256;
    for (std::size_t base = n_train; base < n; base += chunk) {
      const long rows = static_cast<long>(std::min<std::size_t>(chunk, n - base));
      Tensor x({rows, ms_dim});
      for (long r = 0; r < rows; ++r)
        for (long j = 0; j < ms_dim; ++j)
          x(r, j) = features[order[base + static_cast<std::size_t>(r)]][static_cast<std::size_t>(j)];
      Tape t;
      Binder bind(t, false);
      Var pred = dense(bind, l1, ops::elu_(t, dense(bind, l0, t.constant(x))));
      const Tensor& pv = t.val(pred);
      for (long r = 0; r < rows; ++r)
        for (long j = 0; j < tdim; ++j) {
          const double d = pv(r, j) - norm_target(order[base + static_cast<std::size_t>(r)], j);
          acc += d * d;
          ++count;
        }
    }
    return acc / static_cast<double>(count);
  };

  std::vector<Tensor> before;
  for (Param* p : params.all()) before.push_back(p->value);

  MetricLog log;
  log.log(0, "heldout_mse", heldout_mse());
  for (long step = 1; step <= steps; ++step) {
    Tensor x({batch_size, ms_dim});
    Tensor y({batch_size, tdim});
    for (long r = 0; r < batch_size; ++r) {
      const std::size_t pick = order[batch_rng.uniform_index(n_train)];
      for (long j = 0; j < ms_dim; ++j) x(r, j) = features[pick][static_cast<std::size_t>(j)];
      for (long j = 0; j < tdim; ++j) {
        const double v = (targets[pick][static_cast<std::size_t>(j)] - mean[static_cast<std::size_t>(j)]) /
                         stddev[static_cast<std::size_t>(j)];
        y(r, j) = v;
      }
    }
    Tape t;
    Binder bind(t, true);
    Var pred = dense(bind, l1, ops::elu_(t, dense(bind, l0, t.constant(std::move(x)))));
    Var diff = ops::sub(t, pred, t.constant(std::move(y)));
    Var loss = ops::mean_all(t, ops::mul(t, diff, diff));
    t.backward(loss);
    opt.step(t, bind.bound());
    if (step % 25 == 0 || step == steps) log.log(step, "heldout_mse", heldout_mse());
  }

  // the frozen model must be bit-identical after probing
  std::size_t idx = 0;
  for (Param* p : params.all()) {
    for (long i = 0; i < p->value.size(); ++i)
      if (p->value.at(i) != before[idx].at(i))
        throw ValidationError("frozen model changed during probing");
    ++idx;
  }
  return log;
}

}  // namespace apv
