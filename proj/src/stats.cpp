#include "apv/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "apv/errors.hpp"
#include "apv/rng.hpp"

namespace apv {

double iqm(std::vector<double> scores) {
  if (scores.empty()) throw ValidationError("iqm of an empty score list");
  std::sort(scores.begin(), scores.end());
  const std::size_t n = scores.size();
  const std::size_t drop = n / 4;
  double acc = 0;
  for (std::size_t i = drop; i < n - drop; ++i) acc += scores[i];
  return acc / static_cast<double>(n - 2 * drop);
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1 - frac) + sorted[hi] * frac;
}

}  // namespace

CiResult iqm_ci(const std::vector<double>& scores, long bootstrap_n,
                const std::vector<long>* stratified_groups, double confidence,
                std::uint64_t seed) {
  if (scores.empty()) throw ValidationError("iqm_ci of an empty score list");
  if (confidence <= 0 || confidence >= 1)
    throw ValidationError("confidence must lie in (0,1)");
  if (stratified_groups && stratified_groups->size() != scores.size())
    throw ValidationError("group labels must parallel the scores");

  CiResult res;
  res.iqm = iqm(scores);
  if (bootstrap_n < 1) {
    res.lo = res.hi = res.iqm;
    return res;
  }

  // index buckets per stratum; a single stratum without labels
  std::map<long, std::vector<std::size_t>> strata;
  if (stratified_groups) {
    for (std::size_t i = 0; i < scores.size(); ++i)
      strata[(*stratified_groups)[i]].push_back(i);
  } else {
    auto& all = strata[0];
    for (std::size_t i = 0; i < scores.size(); ++i) all.push_back(i);
  }

  Rng rng(seed);
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(bootstrap_n));
  std::vector<double> resample(scores.size());
  for (long rep = 0; rep < bootstrap_n; ++rep) {
    std::size_t w = 0;
    for (const auto& [label, idx] : strata)
      for (std::size_t i = 0; i < idx.size(); ++i)
        resample[w++] = scores[idx[rng.uniform_index(idx.size())]];
    stats.push_back(iqm(resample));
  }
  std::sort(stats.begin(), stats.end());
  res.lo = quantile_sorted(stats, (1 - confidence) / 2);
  res.hi = quantile_sorted(stats, (1 + confidence) / 2);
  return res;
}

}  // namespace apv
