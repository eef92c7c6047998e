#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flowguard/errors.hpp"

namespace flowguard::evalkit {

// Positive = suspicious.
struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct MetricReport {
  double acc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support_positive = 0;
  std::size_t support_negative = 0;
  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

inline ConfusionCounts confusion(const std::vector<bool>& predicted, const std::vector<bool>& actual) {
  if (predicted.size() != actual.size())
    throw ContractError("confusion: " + std::to_string(predicted.size()) + " predictions for " +
                        std::to_string(actual.size()) + " labels");
  if (predicted.empty()) throw ContractError("confusion: no samples");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i])
      ++(actual[i] ? c.tp : c.fp);
    else
      ++(actual[i] ? c.fn : c.tn);
  }
  return c;
}

inline double harmonic_f1(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

// Zero denominators give 0.
inline MetricReport metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw ContractError("metrics: no samples");
  auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  MetricReport r;
  r.acc = ratio(c.tp + c.tn, c.total());
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.f1 = harmonic_f1(r.precision, r.recall);
  r.support_positive = c.tp + c.fn;
  r.support_negative = c.tn + c.fp;
  return r;
}

inline MetricReport metrics(const std::vector<bool>& predicted, const std::vector<bool>& actual) {
  return metrics(confusion(predicted, actual));
}

// P(score of a random positive > score of a random negative), ties count
// one half. Computed from midranks.
inline double roc_auc(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw ContractError("roc_auc: scores and labels differ in length");
  const std::size_t n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ContractError("roc_auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) positive_rank_sum += midrank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace flowguard::evalkit
