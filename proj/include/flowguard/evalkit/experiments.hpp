#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "flowguard/detect.hpp"
#include "flowguard/errors.hpp"
#include "flowguard/evalkit/metrics.hpp"
#include "flowguard/nets.hpp"
#include "flowguard/payflow/features.hpp"
#include "flowguard/payflow/record.hpp"
#include "flowguard/payflow/split.hpp"
#include "flowguard/trainloop/train.hpp"

namespace flowguard::evalkit {

enum class ModelKind : std::uint8_t { gan, vae, joint };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::gan: return "gan";
    case ModelKind::vae: return "vae";
    case ModelKind::joint: return "joint";
  }
  return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  if (s == "gan") return ModelKind::gan;
  if (s == "vae") return ModelKind::vae;
  if (s == "joint") return ModelKind::joint;
  return std::nullopt;
}

inline BundleSpec payment_bundle_spec() {
  BundleSpec s;
  s.feature_dim = payflow::kFeatureWidth;
  s.layout = payflow::feature_layout();
  return s;
}

struct ExperimentConfig {
  TrainConfig train;  // seed is replaced per run
  BundleSpec bundle = payment_bundle_spec();
  double alpha = 0.5;            // joint models only; gan uses 1 and vae 0
  double train_fraction = 0.8;   // cross-time split
  double holdout_fraction = 0.2;  // calibration tail of the training steps
  // Fit the networks on NORMAL rows only; labels then matter only for
  // calibration and evaluation.
  bool normal_only_training = true;
};

inline double alpha_for(ModelKind kind, double joint_alpha) {
  switch (kind) {
    case ModelKind::gan: return 1.0;
    case ModelKind::vae: return 0.0;
    case ModelKind::joint: return joint_alpha;
  }
  return joint_alpha;
}

inline std::vector<bool> suspicious_labels(std::span<const payflow::TransactionRecord> records) {
  std::vector<bool> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out[i] = records[i].suspicious();
  return out;
}

// A trained model plus its calibrated decision rule.
struct FittedDetector {
  ModelBundle bundle;
  detect::ScoreWeights weights;
  detect::CalibratedThreshold threshold;
  TrainResult training;
};

// Trains on the early part of `train` (without labels) and calibrates
// recon_scale and the threshold on its last holdout_fraction of steps.
inline FittedDetector fit_detector(std::span<const payflow::TransactionRecord> train,
                                   const payflow::NormalizationStats& stats, ModelKind kind,
                                   const ExperimentConfig& config, std::uint64_t seed) {
  const payflow::DatasetSplit inner = payflow::cross_time_split(train, 1.0 - config.holdout_fraction);
  std::vector<payflow::TransactionRecord> fit_rows;
  for (const auto& r : inner.train)
    if (!config.normal_only_training || !r.suspicious()) fit_rows.push_back(r);
  const Tensor x_fit = payflow::encode_all(fit_rows, stats);

  TrainConfig tc = config.train;
  tc.seed = seed;
  ModelBundle init = initial_bundle(config.bundle, seed);
  FittedDetector fitted;
  switch (kind) {
    case ModelKind::gan: fitted.training = train_gan(std::move(init), x_fit, tc); break;
    case ModelKind::vae: fitted.training = train_vae(std::move(init), x_fit, tc); break;
    case ModelKind::joint: fitted.training = train_joint(std::move(init), x_fit, tc); break;
  }
  fitted.bundle = fitted.training.bundle;

  std::vector<payflow::TransactionRecord> holdout_normals;
  for (const auto& r : inner.test)
    if (!r.suspicious()) holdout_normals.push_back(r);
  if (holdout_normals.empty()) throw CalibrationError("calibration holdout contains no NORMAL rows");
  fitted.weights.alpha = alpha_for(kind, config.alpha);
  fitted.weights.recon_scale = detect::fit_recon_scale(fitted.bundle, payflow::encode_all(holdout_normals, stats));

  const auto scores = detect::score_batch(fitted.bundle, fitted.weights, payflow::encode_all(inner.test, stats));
  fitted.threshold = detect::calibrate_threshold(detect::values(scores), suspicious_labels(inner.test));
  return fitted;
}

struct Evaluation {
  ModelKind kind = ModelKind::joint;
  std::uint64_t seed = 0;
  MetricReport report;
  double auc = 0.0;
  detect::ScoreWeights weights;
  detect::CalibratedThreshold threshold;
  std::vector<detect::AnomalyScore> test_scores;
  std::vector<detect::Verdict> verdicts;
};

inline Evaluation evaluate_split(const payflow::DatasetSplit& split, ModelKind kind, const ExperimentConfig& config,
                                 std::uint64_t seed) {
  if (split.test.empty()) throw SplitError("evaluation: empty test set");
  const FittedDetector fitted = fit_detector(split.train, split.stats, kind, config, seed);
  Evaluation e;
  e.kind = kind;
  e.seed = seed;
  e.weights = fitted.weights;
  e.threshold = fitted.threshold;
  e.test_scores = detect::score_batch(fitted.bundle, fitted.weights, payflow::encode_all(split.test, split.stats));
  e.verdicts = detect::classify(e.test_scores, fitted.threshold.theta);
  const std::vector<bool> actual = suspicious_labels(split.test);
  e.report = metrics(detect::suspicious_mask(e.verdicts), actual);
  const auto n_pos = std::count(actual.begin(), actual.end(), true);
  const bool both = n_pos > 0 && static_cast<std::size_t>(n_pos) < actual.size();
  e.auc = both ? roc_auc(detect::values(e.test_scores), actual) : 0.5;
  return e;
}

// Train on the early steps, evaluate on strictly later ones.
inline Evaluation run_cross_time(std::span<const payflow::TransactionRecord> records, ModelKind kind,
                                 const ExperimentConfig& config, std::uint64_t seed) {
  return evaluate_split(payflow::cross_time_split(records, config.train_fraction), kind, config, seed);
}

// Runs f(0..n-1) on up to hardware_concurrency threads. Results land in
// their own slots, so the output does not depend on scheduling.
template <typename Result, typename F>
std::vector<Result> parallel_map(std::size_t n, F f, unsigned max_threads = 0) {
  std::vector<std::optional<Result>> slots(n);
  unsigned workers = max_threads ? max_threads : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i].emplace(f(i));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<Result> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median: empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

// ---- pattern breakdown ---------------------------------------------------------

struct PatternMetrics {
  MetricReport report;
  double auc = 0.5;
};

struct PatternBreakdown {
  std::uint64_t seed = 0;
  std::map<payflow::PatternLabel, PatternMetrics> per_label;
};

// One-vs-rest per label from a single joint model. NORMAL counts "verdict
// normal" as positive over all test rows; FRAUD and LAUNDERING count
// "verdict suspicious" as positive on that label's rows plus NORMAL rows.
inline PatternBreakdown pattern_breakdown(std::span<const payflow::TransactionRecord> test,
                                          std::span<const detect::AnomalyScore> scores,
                                          std::span<const detect::Verdict> verdicts) {
  using payflow::PatternLabel;
  const auto counts = payflow::label_counts(test);
  for (PatternLabel label : payflow::kAllLabels)
    if (!counts.count(label))
      throw MissingClassError(std::string("pattern breakdown: test set has no ") + std::string(payflow::to_string(label)) + " rows");

  PatternBreakdown out;
  for (PatternLabel label : payflow::kAllLabels) {
    std::vector<bool> predicted, actual;
    std::vector<double> evidence;
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (label == PatternLabel::normal) {
        predicted.push_back(verdicts[i] == detect::Verdict::normal);
        actual.push_back(test[i].label == PatternLabel::normal);
        evidence.push_back(-scores[i].value);
      } else if (test[i].label == label || test[i].label == PatternLabel::normal) {
        predicted.push_back(verdicts[i] == detect::Verdict::suspicious);
        actual.push_back(test[i].label == label);
        evidence.push_back(scores[i].value);
      }
    }
    PatternMetrics m;
    m.report = metrics(predicted, actual);
    const auto pos = std::count(actual.begin(), actual.end(), true);
    if (pos > 0 && static_cast<std::size_t>(pos) < actual.size()) m.auc = roc_auc(evidence, actual);
    out.per_label[label] = m;
  }
  return out;
}

inline void require_all_labels(std::span<const payflow::TransactionRecord> records, const char* where) {
  const auto counts = payflow::label_counts(records);
  for (auto label : payflow::kAllLabels)
    if (!counts.count(label))
      throw MissingClassError(std::string(where) + ": no " + std::string(payflow::to_string(label)) + " rows");
}

inline PatternBreakdown run_pattern_breakdown(std::span<const payflow::TransactionRecord> records,
                                              const ExperimentConfig& config, std::uint64_t seed) {
  require_all_labels(records, "pattern breakdown");
  const auto split = payflow::cross_time_split(records, config.train_fraction);
  require_all_labels(split.test, "pattern breakdown test set");
  const Evaluation e = evaluate_split(split, ModelKind::joint, config, seed);
  PatternBreakdown b = pattern_breakdown(split.test, e.test_scores, e.verdicts);
  b.seed = seed;
  return b;
}

// ---- sparsity sweep ---------------------------------------------------------------

struct SparsityPoint {
  double level = 0.0;
  std::uint64_t seed = 0;
  MetricReport report;
  double auc = 0.0;
};

struct SparsitySweepResult {
  std::vector<double> levels;
  std::vector<SparsityPoint> points;  // level-major, seeds in the given order
  std::vector<double> median_f1;      // per level

  std::vector<SparsityPoint> at_level(std::size_t level_index) const {
    std::vector<SparsityPoint> out;
    for (const auto& p : points)
      if (p.level == levels[level_index]) out.push_back(p);
    return out;
  }
};

inline void validate_levels(std::span<const double> levels) {
  if (levels.empty()) throw ContractError("sparsity sweep: no levels");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] >= 0.0 && levels[i] < 1.0)) throw ContractError("sparsity sweep: levels must lie in [0, 1)");
    if (i && !(levels[i] > levels[i - 1])) throw ContractError("sparsity sweep: levels must be strictly increasing");
  }
}

inline SparsitySweepResult run_sparsity_sweep(std::span<const payflow::TransactionRecord> records,
                                              std::span<const double> levels, std::span<const std::uint64_t> seeds,
                                              const ExperimentConfig& config, unsigned max_threads = 0) {
  validate_levels(levels);
  if (seeds.empty()) throw ContractError("sparsity sweep: no seeds");
  const auto split = payflow::cross_time_split(records, config.train_fraction);
  const std::size_t n = levels.size() * seeds.size();
  SparsitySweepResult result;
  result.levels.assign(levels.begin(), levels.end());
  result.points = parallel_map<SparsityPoint>(
      n,
      [&](std::size_t i) {
        const double level = levels[i / seeds.size()];
        const std::uint64_t seed = seeds[i % seeds.size()];
        const Evaluation e = evaluate_split(payflow::sparsify(split, level, seed), ModelKind::joint, config, seed);
        return SparsityPoint{level, seed, e.report, e.auc};
      },
      max_threads);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    std::vector<double> f1;
    for (std::size_t s = 0; s < seeds.size(); ++s) f1.push_back(result.points[l * seeds.size() + s].report.f1);
    result.median_f1.push_back(median(f1));
  }
  return result;
}

}  // namespace flowguard::evalkit
