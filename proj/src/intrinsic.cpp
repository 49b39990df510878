#include "apv/intrinsic.hpp"

#include <algorithm>
#include <cmath>

#include "apv/errors.hpp"
#include "apv/rng.hpp"

namespace apv {

ProjectionMap ProjectionMap::create(long d_in, long d_out, std::uint64_t seed) {
  if (d_in < 1 || d_out < 1) throw ValidationError("projection dims must be >= 1");
  ProjectionMap pm;
  pm.seed = seed;
  pm.d_in = d_in;
  pm.d_out = d_out;
  pm.matrix = Tensor({d_in, d_out});
  Rng rng(seed);
  const real sigma = real(1) / std::sqrt(static_cast<real>(d_out));
  for (long i = 0; i < pm.matrix.size(); ++i) pm.matrix.at(i) = sigma * rng.normal();
  return pm;
}

std::vector<real> ProjectionMap::project(std::span<const real> y) const {
  if (static_cast<long>(y.size()) != d_in) throw ShapeError("projection input width mismatch");
  std::vector<real> out(static_cast<std::size_t>(d_out), real(0));
  for (long i = 0; i < d_in; ++i) {
    const real v = y[static_cast<std::size_t>(i)];
    if (v == 0) continue;
    const real* row = matrix.data() + i * d_out;
    for (long j = 0; j < d_out; ++j) out[static_cast<std::size_t>(j)] += v * row[j];
  }
  return out;
}

long EmbeddingQueue::update(const std::vector<std::vector<real>>& fresh) {
  for (const auto& e : fresh) entries_.push_back(e);
  long evicted = 0;
  while (static_cast<long>(entries_.size()) > capacity_) {
    entries_.pop_front();
    ++evicted;
  }
  return evicted;
}

std::vector<real> BonusNormalizer::normalize(const std::vector<real>& raw) {
  real mean = 0;
  for (real v : raw) {
    if (v < 0) throw ValidationError("raw bonuses must be non-negative");
    mean += v;
  }
  if (!raw.empty()) mean /= static_cast<real>(raw.size());
  ema_mean = decay * ema_mean + (1 - decay) * mean;
  std::vector<real> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / (ema_mean + epsilon);
  return out;
}

Tensor pooled_embeddings(const Tensor& z_seq, long tau) {
  const long L = z_seq.rows(), d = z_seq.cols();
  if (tau < 1 || L < tau) throw ValidationError("pooling needs L >= tau >= 1");
  Tensor out({L - tau + 1, d});
  for (long i = 0; i + tau <= L; ++i) {
    real* dst = out.data() + i * d;
    for (long w = 0; w < tau; ++w) {
      const real* src = z_seq.data() + (i + w) * d;
      for (long j = 0; j < d; ++j) dst[j] += src[j];
    }
    for (long j = 0; j < d; ++j) dst[j] /= static_cast<real>(tau);
  }
  return out;
}

std::vector<real> knn_bonus(const std::vector<std::vector<real>>& queries,
                            const std::vector<std::vector<real>>& reference, long k,
                            long self_offset) {
  if (reference.empty()) throw ValidationError("knn_bonus: empty reference set");
  if (k < 1) throw ValidationError("knn_bonus: k must be >= 1");

  std::vector<real> bonuses(queries.size());
  std::vector<real> dists;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& q = queries[qi];
    dists.clear();
    for (std::size_t ri = 0; ri < reference.size(); ++ri) {
      if (self_offset >= 0 && ri == static_cast<std::size_t>(self_offset) + qi) continue;
      const auto& r = reference[ri];
      real sq = 0;
      for (std::size_t j = 0; j < q.size(); ++j) {
        const real diff = q[j] - r[j];
        sq += diff * diff;
      }
      dists.push_back(sq);
    }
    if (dists.empty()) throw ValidationError("knn_bonus: query has no reference points");
    const std::size_t kth = std::min<std::size_t>(static_cast<std::size_t>(k), dists.size()) - 1;
    std::nth_element(dists.begin(), dists.begin() + static_cast<long>(kth), dists.end());
    bonuses[qi] = std::sqrt(dists[kth]);
  }
  return bonuses;
}

Tensor compute_intrinsic(const Tensor& states, long B, long T, long tau,
                         const ProjectionMap& pm, EmbeddingQueue& queue, long k,
                         BonusNormalizer& norm) {
  if (T < tau) throw ValidationError("compute_intrinsic needs T >= tau");
  if (states.rows() != B * T || states.cols() != pm.d_in)
    throw ShapeError("compute_intrinsic: state array must be [B*T, d_in]");

  const long windows = T - tau + 1;
  std::vector<std::vector<real>> batch_proj;
  batch_proj.reserve(static_cast<std::size_t>(B * windows));
  for (long b = 0; b < B; ++b) {
    Tensor seq({T, states.cols()});
    std::copy(states.data() + b * T * states.cols(), states.data() + (b + 1) * T * states.cols(),
              seq.data());
    Tensor pooled = pooled_embeddings(seq, tau);
    for (long i = 0; i < windows; ++i)
      batch_proj.push_back(
          pm.project(std::span<const real>(pooled.data() + i * pooled.cols(),
                                           static_cast<std::size_t>(pooled.cols()))));
  }

  std::vector<std::vector<real>> reference(queue.entries().begin(), queue.entries().end());
  const long self_offset = static_cast<long>(reference.size());
  reference.insert(reference.end(), batch_proj.begin(), batch_proj.end());

  const std::vector<real> win_bonus = knn_bonus(batch_proj, reference, k, self_offset);
  queue.update(batch_proj);

  std::vector<real> raw(static_cast<std::size_t>(B * T));
  for (long b = 0; b < B; ++b)
    for (long t = 0; t < T; ++t) {
      const long w = std::min(t, windows - 1);
      raw[static_cast<std::size_t>(b * T + t)] =
          win_bonus[static_cast<std::size_t>(b * windows + w)];
    }
  const std::vector<real> normalized = norm.normalize(raw);

  Tensor out({B, T});
  for (long i = 0; i < out.size(); ++i) out.at(i) = normalized[static_cast<std::size_t>(i)];
  return out;
}

}  // namespace apv
