#include <CLI11.hpp>
#include <cstdio>
#include <optional>

#include "apv/plot.hpp"
#include "apv/stats.hpp"
#include "apv/trainer.hpp"

namespace fs = std::filesystem;
using namespace apv;

namespace {

HarnessConfig resolve_config(const std::string& config_path, const std::string& preset,
                             long seed_flag) {
  HarnessConfig cfg;
  if (!config_path.empty()) {
    cfg = parse_config_file(config_path);
    if (!preset.empty() && preset != cfg.preset)
      throw ConfigError("--preset disagrees with the config file; set it in one place");
  } else {
    cfg = preset_config(preset.empty() ? "desk" : preset);
  }
  if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action-free video pre-training for model-based RL"};
  app.require_subcommand(1);

  std::string config_path, preset, out_dir = "out", ckpt_path;
  long seed_flag = -1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file of key = value lines");
    cmd->add_option("--preset", preset, "manipulation | locomotion | desk");
    cmd->add_option("--seed", seed_flag, "seed override");
    cmd->add_option("--out", out_dir, "output directory");
  };

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a video corpus");
  std::string gen_env = "shape-world", gen_policy = "scripted";
  long gen_videos = 10, gen_views = 1, gen_len = 100, gen_seed = 0, gen_adim = 2;
  bool gen_keep_payloads = false;
  gen->add_option("--env", gen_env, "dot-reacher | grid-rooms | shape-world");
  gen->add_option("--videos", gen_videos, "number of distinct trajectories");
  gen->add_option("--views", gen_views, "rendering variants per trajectory");
  gen->add_option("--policy", gen_policy, "scripted | random");
  gen->add_option("--episode-length", gen_len, "steps per episode");
  gen->add_option("--action-dim", gen_adim, "action dimension");
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--out", out_dir, "output directory");
  gen->add_flag("--with-payloads", gen_keep_payloads,
                "store action/reward payloads instead of action-free files");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train the action-free video model");
  std::string corpus_manifest;
  add_common(pre);
  pre->add_option("--corpus", corpus_manifest, "manifest file of episode paths")->required();

  // finetune
  auto* fin = app.add_subcommand("finetune", "fine-tune the stacked world model with RL");
  add_common(fin);
  fin->add_option("--ckpt", ckpt_path, "pre-trained checkpoint (omit for scratch)");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
  long eval_episodes = 10, eval_seed = 0;
  add_common(ev);
  ev->add_option("--ckpt", ckpt_path, "fine-tuned checkpoint")->required();
  ev->add_option("--episodes", eval_episodes, "evaluation episodes");
  ev->add_option("--eval-seed", eval_seed, "evaluation seed");

  // probe
  auto* probe = app.add_subcommand("probe", "regression probe on frozen representations");
  std::string probe_target = "reward";
  long probe_steps = 0;
  add_common(probe);
  probe->add_option("--ckpt", ckpt_path, "pre-trained checkpoint (omit for scratch features)");
  probe->add_option("--target", probe_target, "reward | proprio");
  probe->add_option("--steps", probe_steps, "regressor training steps (0 = config value)");

  // plot
  auto* plot = app.add_subcommand("plot", "plot IQM curves with bootstrap CI bands");
  std::vector<std::string> plot_logs;
  std::string plot_keys = "episode_return", plot_out = "curves.bmp";
  plot->add_option("--keys", plot_keys, "comma-separated metric keys");
  plot->add_option("--out", plot_out, "output image (BMP)");
  plot->add_option("logs", plot_logs, "metric log files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      CorpusSpec spec;
      spec.env = default_env_spec(parse_env_name(gen_env));
      spec.env.episode_length = gen_len;
      spec.env.action_dim = gen_adim;
      spec.env.seed = static_cast<std::uint64_t>(gen_seed);
      spec.num_videos = gen_videos;
      spec.views = gen_views;
      spec.policy = parse_policy(gen_policy);
      spec.action_free = !gen_keep_payloads;
      auto paths = generate_corpus(spec, out_dir);
      std::printf("wrote %zu episodes under %s (manifest.txt)\n", paths.size(), out_dir.c_str());
    } else if (pre->parsed()) {
      HarnessConfig cfg = resolve_config(config_path, preset, seed_flag);
      auto res = pretrain(cfg, corpus_manifest, out_dir);
      std::printf("pretrain done: %s (final image_mse %.6g)\n", res.checkpoint.c_str(),
                  res.log.last("image_mse", -1));
    } else if (fin->parsed()) {
      HarnessConfig cfg = resolve_config(config_path, preset, seed_flag);
      std::optional<fs::path> ckpt;
      if (!ckpt_path.empty()) ckpt = ckpt_path;
      auto res = finetune(cfg, ckpt, out_dir);
      for (const auto& [group, fate] : res.transfer_report)
        std::printf("  %-12s %s\n", group.c_str(), group_fate_string(fate).c_str());
      std::printf("finetune done: %s (last return %.3f)\n", res.checkpoint.c_str(),
                  res.log.last("episode_return", -1));
    } else if (ev->parsed()) {
      HarnessConfig cfg = resolve_config(config_path, preset, seed_flag);
      auto res = evaluate(ckpt_path, cfg.env_spec(), eval_episodes,
                          static_cast<std::uint64_t>(eval_seed));
      const CiResult ci = iqm_ci(res.returns, 2000, nullptr, 0.95, 7);
      double succ = 0;
      for (int s : res.successes) succ += s;
      std::printf("returns:");
      for (double r : res.returns) std::printf(" %.3f", r);
      std::printf("\nIQM %.3f  CI [%.3f, %.3f]  success %.0f%%\n", ci.iqm, ci.lo, ci.hi,
                  100.0 * succ / static_cast<double>(res.successes.size()));
    } else if (probe->parsed()) {
      HarnessConfig cfg = resolve_config(config_path, preset, seed_flag);
      std::optional<fs::path> ckpt;
      if (!ckpt_path.empty()) ckpt = ckpt_path;
      const long steps = probe_steps > 0 ? probe_steps : cfg.probe_steps;
      MetricLog log = probe_regression(ckpt, cfg, parse_probe_target(probe_target), steps,
                                       cfg.seed);
      fs::create_directories(out_dir);
      write_config(cfg, fs::path(out_dir) / "config.txt");
      log.save(fs::path(out_dir) / "probe.csv");
      std::printf("probe done: heldout_mse %.6g -> %.6g\n",
                  log.series("heldout_mse").front().second, log.last("heldout_mse", -1));
    } else if (plot->parsed()) {
      std::vector<MetricLog> logs;
      for (const auto& p : plot_logs) logs.push_back(MetricLog::load(p));
      std::vector<std::string> keys;
      std::size_t pos = 0;
      while (pos != std::string::npos) {
        const auto comma = plot_keys.find(',', pos);
        keys.push_back(plot_keys.substr(pos, comma - pos));
        pos = comma == std::string::npos ? comma : comma + 1;
      }
      plot_curves(logs, keys, plot_out);
      std::printf("wrote %s\n", plot_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
