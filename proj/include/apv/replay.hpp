#pragma once

#include <deque>

#include "apv/episode.hpp"
#include "apv/rng.hpp"
#include "apv/tensor.hpp"

namespace apv {

// Minibatch of fixed-length windows, each fully inside one episode.
struct SequenceBatch {
  long B = 0, T = 0, H = 0, W = 0, A = 0;
  bool has_actions = false;
  bool has_rewards = false;
  std::vector<std::uint8_t> frames;  // [B, T, H, W, 3]
  std::vector<float> actions;        // [B, T, A] (zeros when absent)
  std::vector<float> rewards;        // [B, T] (zeros when absent)
  std::vector<std::uint8_t> is_first;  // [B, T]

  const std::uint8_t* frame(long b, long t) const {
    return frames.data() + (b * T + t) * H * W * 3;
  }
};

// FIFO episode store bounded by total step count.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(long capacity_steps = 100000, std::uint64_t seed = 0)
      : capacity_(capacity_steps), rng_(seed) {}

  // Returns the number of evicted episodes.
  long add_episode(Episode ep);

  SequenceBatch sample_sequences(long B, long T);

  long total_steps() const { return total_steps_; }
  long num_episodes() const { return static_cast<long>(episodes_.size()); }
  long capacity() const { return capacity_; }
  const Episode& episode(long i) const { return episodes_[static_cast<std::size_t>(i)]; }
  Rng& rng() { return rng_; }

 private:
  std::deque<Episode> episodes_;
  long capacity_ = 0;
  long total_steps_ = 0;
  Rng rng_;
};

}  // namespace apv
