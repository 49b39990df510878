#pragma once

#include <cstdint>
#include <vector>

namespace apv {

// Interquartile mean: mean of the values remaining after dropping
// floor(n/4) from each end of the sorted scores.
double iqm(std::vector<double> scores);

struct CiResult {
  double iqm = 0;
  double lo = 0;
  double hi = 0;
};

// Percentile-bootstrap confidence interval around the IQM. When group labels
// are given, every bootstrap replicate resamples within each group
// (stratified bootstrap); labels must parallel the scores.
CiResult iqm_ci(const std::vector<double>& scores, long bootstrap_n,
                const std::vector<long>* stratified_groups, double confidence,
                std::uint64_t seed);

}  // namespace apv
