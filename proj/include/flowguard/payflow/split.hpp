#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "flowguard/diffcore/rng.hpp"
#include "flowguard/errors.hpp"
#include "flowguard/payflow/features.hpp"
#include "flowguard/payflow/record.hpp"

namespace flowguard::payflow {

struct DatasetSplit {
  std::vector<TransactionRecord> train;
  std::vector<TransactionRecord> test;
  NormalizationStats stats;  // fitted on train only
};

// Train on steps <= b, test on steps > b, where b is the smallest step whose
// cumulative share of records reaches train_fraction.
inline DatasetSplit cross_time_split(std::span<const TransactionRecord> records, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ContractError("cross_time_split: train_fraction must lie in (0, 1)");
  if (records.empty()) throw ContractError("cross_time_split: no records");

  std::map<std::uint32_t, std::size_t> per_step;
  for (const auto& r : records) ++per_step[r.step];
  if (per_step.size() < 2) throw SplitError("cross_time_split: all records share one step, cannot split across time");

  const double needed = train_fraction * static_cast<double>(records.size());
  std::size_t cumulative = 0;
  std::uint32_t boundary = per_step.rbegin()->first;
  for (auto [step, count] : per_step) {
    cumulative += count;
    if (static_cast<double>(cumulative) >= needed) {
      boundary = step;
      break;
    }
  }
  if (boundary == per_step.rbegin()->first)
    throw SplitError("cross_time_split: fraction " + std::to_string(train_fraction) + " leaves no later steps to test on");

  DatasetSplit split;
  for (const auto& r : records) (r.step <= boundary ? split.train : split.test).push_back(r);
  split.stats = fit_stats(split.train);
  return split;
}

// Stratified subsample of the training set keeping
// max(1, round((1 - sparsity) * n)) records of every label present. The
// test set is untouched and stats are refitted.
inline DatasetSplit sparsify(const DatasetSplit& split, double sparsity, std::uint64_t seed) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ContractError("sparsify: sparsity must lie in [0, 1)");
  if (sparsity == 0.0) return split;

  DeterministicRng rng(seed);
  std::vector<std::size_t> keep;
  for (PatternLabel label : kAllLabels) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < split.train.size(); ++i)
      if (split.train[i].label == label) members.push_back(i);
    if (members.empty()) continue;
    const auto wanted = static_cast<std::size_t>(std::llround((1.0 - sparsity) * static_cast<double>(members.size())));
    const std::size_t n_keep = std::clamp<std::size_t>(wanted, 1, members.size());
    // Partial Fisher-Yates: the first n_keep slots become the sample.
    for (std::size_t i = 0; i < n_keep; ++i) {
      const std::size_t j = i + rng.uniform_below(members.size() - i);
      std::swap(members[i], members[j]);
    }
    keep.insert(keep.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_keep));
  }
  std::sort(keep.begin(), keep.end());

  DatasetSplit out;
  out.train.reserve(keep.size());
  for (std::size_t i : keep) out.train.push_back(split.train[i]);
  out.test = split.test;
  out.stats = fit_stats(out.train);
  return out;
}

inline std::map<PatternLabel, std::size_t> label_counts(std::span<const TransactionRecord> records) {
  std::map<PatternLabel, std::size_t> counts;
  for (const auto& r : records) ++counts[r.label];
  return counts;
}

}  // namespace flowguard::payflow
