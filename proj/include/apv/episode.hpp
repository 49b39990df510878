#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace apv {

// One fixed-length trajectory. Frames are uint8 HxWx3; action and reward
// payloads are optional (action-free corpora omit them but still record the
// action dimension in the header).
struct Episode {
  long T = 0, H = 0, W = 0, A = 0;
  bool has_actions = false;
  bool has_rewards = false;
  std::vector<std::uint8_t> frames;   // [T, H, W, 3]
  std::vector<float> actions;         // [T, A] when present
  std::vector<float> rewards;         // [T] when present
  std::vector<std::uint8_t> dones;    // [T]

  long frame_bytes() const { return H * W * 3; }
  const std::uint8_t* frame(long t) const { return frames.data() + t * frame_bytes(); }

  void validate() const;
  bool operator==(const Episode&) const = default;
};

// APVE binary format: magic "APVE", version 1, header of eight u32 LE
// (magic, version, T, H, W, C, A, flags), then frames, optional actions,
// optional rewards, dones. Flags: bit 0 actions present, bit 1 rewards.
long write_episode(const Episode& ep, const std::filesystem::path& path);
Episode read_episode(const std::filesystem::path& path);

}  // namespace apv
