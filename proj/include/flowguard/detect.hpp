#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flowguard/diffcore/tensor.hpp"
#include "flowguard/errors.hpp"
#include "flowguard/evalkit/metrics.hpp"
#include "flowguard/nets.hpp"

namespace flowguard::detect {

// alpha weighs discriminator evidence against reconstruction evidence.
struct ScoreWeights {
  double alpha = 0.5;
  double recon_scale = 1.0;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("score weights: alpha must lie in [0, 1]");
    if (!(recon_scale > 0.0 && std::isfinite(recon_scale)))
      throw ContractError("score weights: recon_scale must be positive and finite");
  }
  friend bool operator==(const ScoreWeights&, const ScoreWeights&) = default;
};

// value = alpha * d_part + (1 - alpha) * r_part, every field in [0, 1].
struct AnomalyScore {
  double value = 0.0;
  double d_part = 0.0;
  double r_part = 0.0;
};

enum class Verdict : std::uint8_t { normal, suspicious };

inline const char* to_string(Verdict v) { return v == Verdict::suspicious ? "SUSPICIOUS" : "NORMAL"; }

struct CalibratedThreshold {
  double theta = 0.5;
  double f1 = 0.0;
};

inline AnomalyScore combine(double d_prob, double recon_err, const ScoreWeights& w) {
  AnomalyScore s;
  s.d_part = 1.0 - d_prob;
  s.r_part = -std::expm1(-recon_err / w.recon_scale);
  s.value = w.alpha * s.d_part + (1.0 - w.alpha) * s.r_part;
  return s;
}

// Per-row mean squared error of the deterministic reconstruction.
inline std::vector<double> reconstruction_errors(const ModelBundle& bundle, const Tensor& xs) {
  bundle.encoder.check_input(xs.shape());
  const Tensor recon = reconstruct_mean(bundle, xs);
  std::vector<double> out(xs.rows());
  const double width = static_cast<double>(xs.cols());
  for (std::size_t r = 0; r < xs.rows(); ++r) {
    double sse = 0.0;
    for (std::size_t c = 0; c < xs.cols(); ++c) sse += (recon.at(r, c) - xs.at(r, c)) * (recon.at(r, c) - xs.at(r, c));
    out[r] = sse / width;
  }
  return out;
}

inline std::vector<AnomalyScore> score_batch(const ModelBundle& bundle, const ScoreWeights& w, const Tensor& xs) {
  w.validate();
  if (xs.rank() != 2 || xs.cols() != bundle.feature_dim)
    throw ShapeError("score: expected [n, " + std::to_string(bundle.feature_dim) + "] features, got " +
                     shape_string(xs.shape()));
  const Tensor d = discriminate(bundle, xs);
  const std::vector<double> err = reconstruction_errors(bundle, xs);
  std::vector<AnomalyScore> out(xs.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = combine(d[i], err[i], w);
  return out;
}

inline AnomalyScore score(const ModelBundle& bundle, const ScoreWeights& w, std::span<const double> x) {
  if (x.size() != bundle.feature_dim)
    throw ShapeError("score: feature vector has width " + std::to_string(x.size()) + ", expected " +
                     std::to_string(bundle.feature_dim));
  return score_batch(bundle, w, Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())))[0];
}

inline std::vector<double> values(std::span<const AnomalyScore> scores) {
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i].value;
  return out;
}

// Linear-interpolation quantile of a sample, q in [0, 1].
inline double quantile(std::vector<double> sample, double q) {
  if (sample.empty()) throw ContractError("quantile: empty sample");
  std::sort(sample.begin(), sample.end());
  const double pos = q * static_cast<double>(sample.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sample.size() - 1);
  return sample[lo] + (pos - static_cast<double>(lo)) * (sample[hi] - sample[lo]);
}

inline constexpr double kReconScaleQuantile = 0.9;
inline constexpr double kMinReconScale = 1e-12;

// 90th percentile of reconstruction errors on validation normals.
inline double fit_recon_scale(const ModelBundle& bundle, const Tensor& validation_normals) {
  if (validation_normals.rows() == 0) throw CalibrationError("recon_scale: no validation normals");
  return std::max(kMinReconScale,
                  quantile(reconstruction_errors(bundle, validation_normals), kReconScaleQuantile));
}

// Max-F1 threshold over the partitions the scores admit. Each partition
// "suspicious = scores >= cut" is represented by the midpoint below the
// cut; predicting everything uses the smallest score and predicting nothing
// uses 1. Equal F1 resolves to the larger threshold.
inline CalibratedThreshold calibrate_threshold(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw ContractError("calibrate_threshold: scores and labels differ in length");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  if (positives == 0 || positives == labels.size())
    throw CalibrationError("calibrate_threshold: need both suspicious and normal labels, got " +
                           std::to_string(positives) + " suspicious of " + std::to_string(labels.size()));

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  evalkit::ConfusionCounts counts;
  counts.fn = positives;
  counts.tn = labels.size() - positives;
  // F1 = 2tp / (2tp + fp + fn); candidates compare as exact integer ratios
  // so mathematically equal F1 values tie regardless of rounding.
  CalibratedThreshold best{1.0, 0.0};
  std::size_t best_tp = 0, best_den = 0;  // 0/0 marks "no candidate yet"
  if (scores[order.front()] < 1.0) best_den = positives;  // predict nothing: F1 0

  // Walk groups of equal score from the top; after each group, everything
  // at or above it is predicted suspicious.
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    std::size_t j = i;
    for (; j < order.size() && scores[order[j]] == s; ++j) {
      if (labels[order[j]]) {
        ++counts.tp;
        --counts.fn;
      } else {
        ++counts.fp;
        --counts.tn;
      }
    }
    double theta = s;
    if (j < order.size()) {
      const double below = scores[order[j]];
      theta = below + 0.5 * (s - below);
      if (!(theta > below)) theta = s;
    }
    const std::size_t den = 2 * counts.tp + counts.fp + counts.fn;
    // Thresholds only decrease along the walk, so ties keep the earlier one.
    // Products stay below 2n^2, exact in 64 bits for n < 2^31 rows.
    if (best_den == 0 || std::uint64_t{counts.tp} * best_den > std::uint64_t{best_tp} * den) {
      best = {theta, evalkit::metrics(counts).f1};
      best_tp = counts.tp;
      best_den = den;
    }
    i = j;
  }
  return best;
}

inline std::vector<Verdict> classify(std::span<const AnomalyScore> scores, double theta) {
  std::vector<Verdict> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    out[i] = scores[i].value >= theta ? Verdict::suspicious : Verdict::normal;
  return out;
}

inline std::vector<Verdict> classify(const ModelBundle& bundle, const ScoreWeights& w, double theta, const Tensor& xs) {
  return classify(score_batch(bundle, w, xs), theta);
}

inline std::vector<bool> suspicious_mask(std::span<const Verdict> verdicts) {
  std::vector<bool> out(verdicts.size());
  for (std::size_t i = 0; i < verdicts.size(); ++i) out[i] = verdicts[i] == Verdict::suspicious;
  return out;
}

}  // namespace flowguard::detect
