#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apv/nn.hpp"

namespace apv {

// Named, grouped float32 parameter arrays with a manifest that defines the
// payload layout. Text header, raw little-endian payload; the config snapshot
// travels with the weights so a checkpoint is self-describing.
struct Checkpoint {
  struct Entry {
    std::string name;
    std::string group;
    std::vector<long> shape;
    std::size_t offset = 0;  // element offset into payload

    long count() const {
      long n = 1;
      for (long d : shape) n *= d;
      return shape.empty() ? 0 : n;
    }
  };

  std::vector<Entry> entries;
  std::vector<float> payload;
  std::vector<std::pair<std::string, std::string>> config;  // ordered key/value snapshot
  std::uint64_t projection_seed = 0;

  static Checkpoint from_params(const ParamStore& params,
                                const std::vector<std::string>& groups,
                                std::vector<std::pair<std::string, std::string>> config_snapshot,
                                std::uint64_t projection_seed);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const Entry* find(const std::string& name) const;
  bool has_group(const std::string& group) const;
  std::string config_value(const std::string& key) const;  // "" when absent

  // Copies one entry into a parameter value; shape must match exactly.
  void copy_into(const Entry& e, Tensor& dst) const;
};

}  // namespace apv
