#include "apv/replay.hpp"

#include <cstring>

#include "apv/errors.hpp"

namespace apv {

long ReplayBuffer::add_episode(Episode ep) {
  ep.validate();
  if (ep.T > capacity_)
    throw ValidationError("episode longer than buffer capacity");
  episodes_.push_back(std::move(ep));
  total_steps_ += episodes_.back().T;
  long evicted = 0;
  while (total_steps_ > capacity_) {
    total_steps_ -= episodes_.front().T;
    episodes_.pop_front();
    ++evicted;
  }
  return evicted;
}

SequenceBatch ReplayBuffer::sample_sequences(long B, long T) {
  // Uniform over (episode, start) pairs: weight each episode by its count of
  // valid starts.
  std::vector<long> starts_per_ep(episodes_.size());
  long total_windows = 0;
  for (std::size_t i = 0; i < episodes_.size(); ++i) {
    const long v = episodes_[i].T - T + 1;
    starts_per_ep[i] = v > 0 ? v : 0;
    total_windows += starts_per_ep[i];
  }
  if (total_windows == 0) throw SamplingError("no stored episode of length >= T");

  const Episode& first = episodes_.front();
  SequenceBatch batch;
  batch.B = B;
  batch.T = T;
  batch.H = first.H;
  batch.W = first.W;
  batch.A = first.A;
  batch.has_actions = true;
  batch.has_rewards = true;
  for (const Episode& e : episodes_) {
    batch.has_actions = batch.has_actions && e.has_actions;
    batch.has_rewards = batch.has_rewards && e.has_rewards;
  }
  const long fb = first.H * first.W * 3;
  batch.frames.resize(static_cast<std::size_t>(B) * T * fb);
  batch.actions.assign(static_cast<std::size_t>(B) * T * batch.A, 0.f);
  batch.rewards.assign(static_cast<std::size_t>(B) * T, 0.f);
  batch.is_first.assign(static_cast<std::size_t>(B) * T, 0);

  for (long b = 0; b < B; ++b) {
    long pick = static_cast<long>(rng_.uniform_index(static_cast<std::uint64_t>(total_windows)));
    std::size_t ei = 0;
    while (pick >= starts_per_ep[ei]) {
      pick -= starts_per_ep[ei];
      ++ei;
    }
    const Episode& ep = episodes_[ei];
    const long start = pick;
    std::memcpy(batch.frames.data() + static_cast<std::size_t>(b) * T * fb,
                ep.frames.data() + static_cast<std::size_t>(start) * fb,
                static_cast<std::size_t>(T) * fb);
    if (ep.has_actions)
      std::memcpy(batch.actions.data() + static_cast<std::size_t>(b) * T * ep.A,
                  ep.actions.data() + static_cast<std::size_t>(start) * ep.A,
                  static_cast<std::size_t>(T) * ep.A * sizeof(float));
    if (ep.has_rewards)
      std::memcpy(batch.rewards.data() + static_cast<std::size_t>(b) * T,
                  ep.rewards.data() + start, static_cast<std::size_t>(T) * sizeof(float));
    batch.is_first[static_cast<std::size_t>(b) * T] = 1;
  }
  return batch;
}

}  // namespace apv
