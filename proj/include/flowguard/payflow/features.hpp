#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "flowguard/diffcore/tensor.hpp"
#include "flowguard/errors.hpp"
#include "flowguard/nets.hpp"
#include "flowguard/payflow/record.hpp"

namespace flowguard::payflow {

// Feature layout (width 12):
//   0      standardized log1p(amount)
//   1..5   one-hot transaction type (CASH_IN, CASH_OUT, DEBIT, PAYMENT, TRANSFER)
//   6..9   standardized log1p of oldbalanceOrg, newbalanceOrig, oldbalanceDest, newbalanceDest
//   10,11  sin/cos of the hour within a 24-step day
inline constexpr std::size_t kFeatureWidth = 12;
inline constexpr std::size_t kContinuousCount = 5;
inline constexpr std::size_t kTypeOffset = 1;
inline constexpr std::size_t kHoursPerDay = 24;

inline FeatureLayout feature_layout() { return {kTypeOffset, kTxTypeCount}; }

// Per-feature mean/std of the five log-scaled money columns, fitted on
// training data only. Degenerate columns get std = 1.
struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool fitted() const { return mean.size() == kContinuousCount && stddev.size() == kContinuousCount; }
  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

inline std::array<double, kContinuousCount> raw_continuous(const TransactionRecord& r) {
  return {std::log1p(r.amount), std::log1p(r.orig_balance_before), std::log1p(r.orig_balance_after),
          std::log1p(r.dest_balance_before), std::log1p(r.dest_balance_after)};
}

// Population mean and standard deviation.
inline NormalizationStats fit_stats(std::span<const TransactionRecord> train) {
  if (train.empty()) throw ContractError("fit_stats: empty training set");
  NormalizationStats s;
  s.mean.assign(kContinuousCount, 0.0);
  s.stddev.assign(kContinuousCount, 0.0);
  for (const auto& r : train) {
    const auto raw = raw_continuous(r);
    for (std::size_t j = 0; j < kContinuousCount; ++j) s.mean[j] += raw[j];
  }
  const double n = static_cast<double>(train.size());
  for (double& m : s.mean) m /= n;
  for (const auto& r : train) {
    const auto raw = raw_continuous(r);
    for (std::size_t j = 0; j < kContinuousCount; ++j) s.stddev[j] += (raw[j] - s.mean[j]) * (raw[j] - s.mean[j]);
  }
  for (double& v : s.stddev) {
    v = std::sqrt(v / n);
    if (!(v > 1e-12)) v = 1.0;
  }
  return s;
}

inline void encode_into(const TransactionRecord& r, const NormalizationStats& stats, std::span<double> out) {
  if (!stats.fitted()) throw ContractError("encode: normalization stats not fitted");
  const auto raw = raw_continuous(r);
  auto z = [&](std::size_t j) { return (raw[j] - stats.mean[j]) / stats.stddev[j]; };
  out[0] = z(0);
  for (std::size_t t = 0; t < kTxTypeCount; ++t) out[kTypeOffset + t] = 0.0;
  out[kTypeOffset + static_cast<std::size_t>(r.type)] = 1.0;
  for (std::size_t j = 1; j < kContinuousCount; ++j) out[kTypeOffset + kTxTypeCount + j - 1] = z(j);
  const double phase = 2.0 * std::numbers::pi * static_cast<double>(r.step % kHoursPerDay) / kHoursPerDay;
  out[10] = std::sin(phase);
  out[11] = std::cos(phase);
}

inline std::vector<double> encode(const TransactionRecord& r, const NormalizationStats& stats) {
  std::vector<double> out(kFeatureWidth);
  encode_into(r, stats, out);
  return out;
}

// One row per record.
inline Tensor encode_all(std::span<const TransactionRecord> records, const NormalizationStats& stats) {
  if (records.empty()) throw ContractError("encode_all: no records");
  Tensor out({records.size(), kFeatureWidth});
  for (std::size_t i = 0; i < records.size(); ++i)
    encode_into(records[i], stats, out.values().subspan(i * kFeatureWidth, kFeatureWidth));
  return out;
}

}  // namespace flowguard::payflow
