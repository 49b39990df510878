#include "apv/corpus.hpp"

#include <fstream>

#include "apv/errors.hpp"

namespace apv {

void CorpusSpec::validate() const {
  env.validate();
  if (num_videos < 1) throw ConfigError("num_videos must be >= 1");
  if (views < 1) throw ConfigError("views must be >= 1");
}

CorpusSpec::Policy parse_policy(const std::string& s) {
  if (s == "scripted") return CorpusSpec::Policy::Scripted;
  if (s == "random") return CorpusSpec::Policy::Random;
  throw ConfigError("unknown policy: " + s);
}

Episode roll_episode(const ToyEnvSpec& spec, std::uint64_t episode_seed,
                     CorpusSpec::Policy policy, bool keep_payloads) {
  ToyEnv env(spec);
  // Policy noise must not depend on the view, so renders of the same video
  // share one trajectory.
  Rng policy_rng(Rng::derive(episode_seed, "policy"));

  Episode ep;
  ep.H = spec.image_size;
  ep.W = spec.image_size;
  ep.A = spec.action_dim;
  ep.has_actions = keep_payloads;
  ep.has_rewards = keep_payloads;

  auto obs = env.reset(episode_seed);
  ep.frames.insert(ep.frames.end(), obs.begin(), obs.end());
  if (keep_payloads) {
    ep.actions.insert(ep.actions.end(), static_cast<std::size_t>(spec.action_dim), 0.f);
    ep.rewards.push_back(0.f);
  }
  ep.dones.push_back(0);

  while (!env.done()) {
    std::vector<double> a;
    if (policy == CorpusSpec::Policy::Scripted) {
      a = env.scripted_action(policy_rng);
    } else {
      a.resize(static_cast<std::size_t>(spec.action_dim));
      for (auto& v : a) v = policy_rng.uniform(-1, 1);
    }
    auto res = env.step(a);
    ep.frames.insert(ep.frames.end(), res.obs.begin(), res.obs.end());
    if (keep_payloads) {
      for (double v : a) ep.actions.push_back(static_cast<float>(v));
      ep.rewards.push_back(static_cast<float>(res.reward));
    }
    ep.dones.push_back(res.done ? 1 : 0);
  }
  ep.T = spec.episode_length + 1;
  ep.validate();
  return ep;
}

std::vector<std::string> generate_corpus(const CorpusSpec& spec,
                                         const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir))
    throw IoError("cannot create corpus directory " + out_dir.string());

  std::vector<std::string> paths;
  for (long v = 0; v < spec.num_videos; ++v) {
    const std::uint64_t episode_seed = Rng::derive(spec.env.seed, static_cast<std::uint64_t>(v));
    for (long w = 0; w < spec.views; ++w) {
      ToyEnvSpec es = spec.env;
      es.view = w;
      Episode ep = roll_episode(es, episode_seed, spec.policy, !spec.action_free);
      char name[64];
      std::snprintf(name, sizeof(name), "ep_%05ld_%02ld.apve", v, w);
      write_episode(ep, out_dir / name);
      paths.emplace_back(name);
    }
  }

  std::ofstream manifest(out_dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in " + out_dir.string());
  for (const auto& p : paths) manifest << p << "\n";
  return paths;
}

std::vector<Episode> load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  const auto dir = manifest_path.parent_path();
  std::vector<Episode> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(read_episode(dir / line));
  }
  return out;
}

}  // namespace apv
