#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "apv/tensor.hpp"

namespace apv {

// Fixed random projection with i.i.d. N(0, 1/d_out) entries and no bias;
// approximately distance-preserving, immutable after creation.
struct ProjectionMap {
  Tensor matrix;  // [d_in, d_out]
  std::uint64_t seed = 0;
  long d_in = 0, d_out = 0;

  static ProjectionMap create(long d_in, long d_out, std::uint64_t seed);
  std::vector<real> project(std::span<const real> y) const;
};

// FIFO queue of recent projected trajectory embeddings.
class EmbeddingQueue {
 public:
  explicit EmbeddingQueue(long capacity = 4096) : capacity_(capacity) {}

  long update(const std::vector<std::vector<real>>& fresh);  // returns evicted count
  long size() const { return static_cast<long>(entries_.size()); }
  long capacity() const { return capacity_; }
  const std::deque<std::vector<real>>& entries() const { return entries_; }

 private:
  std::deque<std::vector<real>> entries_;
  long capacity_ = 0;
};

// Scales raw bonuses by a running mean so the normalized bonus hovers
// around 1.
struct BonusNormalizer {
  real ema_mean = 0;
  real decay = 0.99;
  real epsilon = 1e-8;

  std::vector<real> normalize(const std::vector<real>& raw);
};

// Sliding-window mean pooling along the sequence axis: output row i is the
// mean of rows [i, i+tau).
Tensor pooled_embeddings(const Tensor& z_seq, long tau);

// Euclidean distance from each query to its k-th nearest neighbor in the
// reference set; with fewer than k references the farthest one is used.
// self_offset >= 0 declares that query i sits at reference[self_offset + i]
// and must be excluded from its own search.
std::vector<real> knn_bonus(const std::vector<std::vector<real>>& queries,
                            const std::vector<std::vector<real>>& reference, long k,
                            long self_offset = -1);

// Full pipeline over a batch of action-free model-state sequences
// [B, T, d_model] (rows b*T + t): pool over tau-windows, project, score
// against queue + batch with self-exclusion, push to queue, normalize.
// Window bonuses align to their start index; the tail repeats the last one.
Tensor compute_intrinsic(const Tensor& states, long B, long T, long tau,
                         const ProjectionMap& pm, EmbeddingQueue& queue, long k,
                         BonusNormalizer& norm);

}  // namespace apv
