#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "apv/env.hpp"
#include "apv/episode.hpp"

namespace apv {

struct CorpusSpec {
  ToyEnvSpec env;
  long num_videos = 10;
  enum class Policy { Scripted, Random } policy = Policy::Scripted;
  long views = 1;
  bool action_free = true;  // omit action/reward payloads in episode files

  void validate() const;
};

CorpusSpec::Policy parse_policy(const std::string& s);

// Rolls one episode with the given policy; records the reset observation at
// index 0 with zero action/reward, so the stored length is episode_length+1.
Episode roll_episode(const ToyEnvSpec& spec, std::uint64_t episode_seed,
                     CorpusSpec::Policy policy, bool keep_payloads);

// Writes num_videos x views episode files plus manifest.txt (one relative
// path per line). Returns the relative paths in manifest order.
std::vector<std::string> generate_corpus(const CorpusSpec& spec,
                                         const std::filesystem::path& out_dir);

// Loads every episode listed in a manifest file.
std::vector<Episode> load_manifest(const std::filesystem::path& manifest_path);

}  // namespace apv
