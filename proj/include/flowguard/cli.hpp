#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowguard/detect.hpp"
#include "flowguard/errors.hpp"
#include "flowguard/evalkit/experiments.hpp"
#include "flowguard/evalkit/report.hpp"
#include "flowguard/payflow/csv.hpp"
#include "flowguard/payflow/synth.hpp"
#include "flowguard/trainloop/checkpoint.hpp"

namespace flowguard::cli {

// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,     // unexpected failure
  kUsage = 2,        // bad flags, config values or infeasible parameters
  kWriteFailed = 3,  // an output could not be written
  kBadInput = 4,     // unreadable data, schema or row errors, missing label class
  kDiverged = 5,     // training produced non-finite values
  kCheckpoint = 6,   // checkpoint unreadable, corrupt or from another version
  kCalibration = 7,  // no threshold can be calibrated from the given labels
};

struct Options {
  // global
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  bool verbose = false;
  // data
  std::string data;
  payflow::GeneratorConfig gen;
  std::size_t max_rows = 0;
  bool skip_malformed = false;
  // model and training
  std::string model = "joint";
  evalkit::ExperimentConfig exp;
  std::string objective = "non-saturating";
  bool all_rows = false;
  // gen-data / train / score outputs
  std::string output;
  std::string ckpt;
  std::optional<double> theta;
  // experiments
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<std::string> models{"gan", "vae", "joint"};
  std::vector<double> levels{0.1, 0.2, 0.3, 0.4, 0.5};
  unsigned threads = 0;
  bool chart = false;
};

namespace detail {

class Logger {
 public:
  Logger(std::ostream& err, bool verbose) : err_(err), verbose_(verbose) {}
  void operator()(const std::string& msg) const {
    if (verbose_) err_ << "flowguard: " << msg << '\n';
  }

 private:
  std::ostream& err_;
  bool verbose_;
};

inline std::filesystem::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (!std::filesystem::is_directory(dir)) throw WriteError("cannot create output directory '" + dir + "'");
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw WriteError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw WriteError("write failed for '" + path.string() + "'");
}

inline std::string label_summary(const std::vector<payflow::TransactionRecord>& records) {
  std::ostringstream s;
  const auto counts = payflow::label_counts(records);
  s << "rows " << records.size();
  for (auto label : payflow::kAllLabels) {
    const auto it = counts.find(label);
    s << "  " << payflow::to_string(label) << ' ' << (it == counts.end() ? 0 : it->second);
  }
  return s.str();
}

inline std::vector<payflow::TransactionRecord> load_data(const Options& o, const Logger& log) {
  payflow::LoadOptions lo;
  lo.max_rows = o.max_rows;
  lo.skip_malformed = o.skip_malformed;
  payflow::LoadResult r = payflow::load_paysim(o.data, lo);
  log("loaded " + o.data + ": " + label_summary(r.records));
  if (r.malformed_rows) {
    log("skipped " + std::to_string(r.malformed_rows) + " malformed rows");
    for (const auto& e : r.row_errors) log("  " + e);
  }
  if (r.records.empty()) throw SchemaError("'" + o.data + "' contains no data rows");
  return std::move(r.records);
}

inline std::vector<payflow::TransactionRecord> synthetic(const Options& o, std::uint64_t seed, const Logger& log) {
  payflow::GeneratorConfig g = o.gen;
  g.seed = seed;
  auto records = payflow::generate_synthetic(g);
  log("generated synthetic flow (seed " + std::to_string(seed) + "): " + label_summary(records));
  return records;
}

inline evalkit::ExperimentConfig experiment_config(const Options& o) {
  evalkit::ExperimentConfig c = o.exp;
  if (o.objective == "minimax")
    c.train.generator_objective = GeneratorObjective::minimax;
  else if (o.objective == "non-saturating")
    c.train.generator_objective = GeneratorObjective::non_saturating;
  else
    throw ConfigError("objective must be non-saturating or minimax, got '" + o.objective + "'");
  c.normal_only_training = !o.all_rows;
  c.train.validate();
  detect::ScoreWeights{c.alpha, 1.0}.validate();
  return c;
}

inline evalkit::ModelKind model_kind(const std::string& name) {
  const auto k = evalkit::parse_model_kind(name);
  if (!k) throw ConfigError("model must be one of gan, vae, joint; got '" + name + "'");
  return *k;
}

inline std::string shortest(double v) { return evalkit::detail::shortest(v); }

// A checkpoint that cannot be opened is a checkpoint failure, not a data one.
inline Checkpoint open_checkpoint(const std::string& path) {
  try {
    return load_checkpoint(path);
  } catch (const ReadError& e) {
    throw CheckpointParseError(e.what());
  }
}

// INI text of the global options and those of the command that ran, with
// the values in effect. Loading it through --config repeats the run.
inline std::string resolved_config(const CLI::App& app) {
  std::string text;
  auto section = [&](const CLI::App& a) {
    for (const CLI::Option* opt : a.get_options()) {
      const std::string& name = opt->get_single_name();
      if (name.empty() || name == "help" || name == "config" || opt->get_lnames().empty()) continue;
      std::string value;
      if (opt->count() > 0) {
        const auto& res = opt->results();
        for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
        if (res.size() > 1) value = "[" + value + "]";
      } else {
        value = opt->get_default_str();
      }
      if (value.empty()) continue;
      text += name + "=" + value + "\n";
    }
  };
  section(app);
  std::string path;
  for (const CLI::App* sub = &app; !sub->get_subcommands().empty();) {
    sub = sub->get_subcommands().front();
    path += (path.empty() ? "" : ".") + sub->get_name();
    text += "\n[" + path + "]\n";
    section(*sub);
  }
  return text;
}

}  // namespace detail

inline int cmd_gen_data(const Options& o, std::ostream& out, const detail::Logger& log) {
  payflow::GeneratorConfig g = o.gen;
  g.seed = o.seed;
  payflow::validate(g);
  const auto dir = detail::ensure_dir(o.out_dir);
  const std::filesystem::path path = o.output.empty() ? dir / "data.csv" : std::filesystem::path(o.output);
  const auto records = payflow::generate_synthetic(g);
  payflow::write_synthetic_csv(path.string(), records);

  nlohmann::json summary;
  summary["rows"] = records.size();
  for (const auto& [label, n] : payflow::label_counts(records)) summary["labels"][std::string(payflow::to_string(label))] = n;
  summary["seed"] = g.seed;
  detail::write_text(path.string() + ".summary.json", summary.dump(2) + "\n");
  log("wrote " + path.string());
  out << detail::label_summary(records) << '\n';
  return kOk;
}

inline int cmd_train(const Options& o, std::ostream& out, const detail::Logger& log) {
  const evalkit::ModelKind kind = detail::model_kind(o.model);
  const evalkit::ExperimentConfig config = detail::experiment_config(o);
  const auto records = detail::load_data(o, log);
  const auto dir = detail::ensure_dir(o.output.empty() ? o.out_dir : o.output);

  const payflow::NormalizationStats stats = payflow::fit_stats(records);
  log("training " + o.model + " for " + std::to_string(config.train.epochs) + " epochs");
  const evalkit::FittedDetector fitted = evalkit::fit_detector(records, stats, kind, config, o.seed);

  Checkpoint c;
  c.bundle = fitted.bundle;
  c.stats = stats;
  c.config = config.train;
  c.config.seed = o.seed;
  c.weights = fitted.weights;
  c.threshold = fitted.threshold.theta;
  c.rng_states = fitted.training.rng_states;
  save_checkpoint(c, (dir / "model.ckpt").string());
  write_trace_csv((dir / "trace.csv").string(), fitted.training.trace);
  log("wrote " + (dir / "model.ckpt").string() + " and trace.csv");

  if (!fitted.training.trace.empty()) {
    const EpochStats& last = fitted.training.trace.back();
    out << "epoch " << last.epoch << "  l_gan " << detail::shortest(last.l_gan) << "  l_vae "
        << detail::shortest(last.l_vae) << "  l_joint " << detail::shortest(last.l_joint) << '\n';
  }
  out << "alpha " << detail::shortest(c.weights.alpha) << "  recon_scale " << detail::shortest(c.weights.recon_scale)
      << "  theta " << detail::shortest(fitted.threshold.theta) << "  holdout_f1 "
      << detail::shortest(fitted.threshold.f1) << '\n';
  return kOk;
}

inline int cmd_score(const Options& o, std::ostream& out, const detail::Logger& log) {
  const Checkpoint c = detail::open_checkpoint(o.ckpt);
  const auto records = detail::load_data(o, log);
  const auto scores = detect::score_batch(c.bundle, c.weights, payflow::encode_all(records, c.stats));
  const std::vector<bool> labels = evalkit::suspicious_labels(records);
  const auto positives = std::count(labels.begin(), labels.end(), true);
  const bool both_classes = positives > 0 && static_cast<std::size_t>(positives) < labels.size();

  double theta = 0.0;
  std::string source;
  if (o.theta) {
    theta = *o.theta;
    source = "flag";
  } else if (both_classes) {
    theta = detect::calibrate_threshold(detect::values(scores), labels).theta;
    source = "calibrated on input labels";
  } else if (c.threshold) {
    theta = *c.threshold;
    source = "checkpoint";
  } else {
    throw CalibrationError("no --theta, no stored threshold and the input has a single label class");
  }
  const auto verdicts = detect::classify(scores, theta);

  const std::filesystem::path path =
      o.output.empty() ? detail::ensure_dir(o.out_dir) / "scores.csv" : std::filesystem::path(o.output);
  std::string csv = "row,score,d_part,r_part,verdict\n";
  for (std::size_t i = 0; i < scores.size(); ++i)
    csv += std::to_string(i + 1) + "," + detail::shortest(scores[i].value) + "," +
           detail::shortest(scores[i].d_part) + "," + detail::shortest(scores[i].r_part) + "," +
           detect::to_string(verdicts[i]) + "\n";
  detail::write_text(path, csv);
  log("wrote " + path.string());

  const auto flagged = std::count(verdicts.begin(), verdicts.end(), detect::Verdict::suspicious);
  out << "theta " << detail::shortest(theta) << " (" << source << ")  flagged " << flagged << " of "
      << scores.size() << '\n';
  if (both_classes) {
    const auto m = evalkit::metrics(detect::suspicious_mask(verdicts), labels);
    out << "acc " << detail::shortest(m.acc) << "  precision " << detail::shortest(m.precision) << "  recall "
        << detail::shortest(m.recall) << "  f1 " << detail::shortest(m.f1) << "  auc "
        << detail::shortest(evalkit::roc_auc(detect::values(scores), labels)) << '\n';
  }
  return kOk;
}

inline int cmd_inspect(const Options& o, std::ostream& out) {
  const Checkpoint c = detail::open_checkpoint(o.ckpt);
  out << describe(c);
  return kOk;
}

inline void emit_report(const Options& o, const std::vector<evalkit::ReportRow>& rows, const std::string& stem,
                        std::ostream& out, const detail::Logger& log) {
  const auto dir = detail::ensure_dir(o.out_dir);
  evalkit::save_report(rows, dir, stem);
  if (o.chart) detail::write_text(dir / (stem + ".svg"), evalkit::render_svg_chart(rows, stem));
  log("wrote " + (dir / (stem + ".csv")).string() + " (+ .json, .txt" + (o.chart ? ", .svg)" : ")"));
  out << evalkit::render_table(rows);
}

// Synthetic runs regenerate the flow with each run seed; a --data file is
// shared by every run.
inline int cmd_cross_time(const Options& o, std::ostream& out, const detail::Logger& log) {
  const evalkit::ExperimentConfig config = detail::experiment_config(o);
  std::vector<evalkit::ModelKind> kinds;
  for (const auto& m : o.models) kinds.push_back(detail::model_kind(m));
  if (o.seeds.empty()) throw ConfigError("cross-time: no seeds");
  std::optional<std::vector<payflow::TransactionRecord>> shared;
  if (!o.data.empty()) shared = detail::load_data(o, log);
  std::vector<std::vector<payflow::TransactionRecord>> per_seed;
  if (!shared)
    for (auto s : o.seeds) per_seed.push_back(detail::synthetic(o, s, log));

  const std::size_t n = kinds.size() * o.seeds.size();
  const auto runs = evalkit::parallel_map<evalkit::Evaluation>(
      n,
      [&](std::size_t i) {
        const std::size_t k = i / o.seeds.size(), s = i % o.seeds.size();
        return evalkit::run_cross_time(shared ? *shared : per_seed[s], kinds[k], config, o.seeds[s]);
      },
      o.threads);
  emit_report(o, evalkit::cross_time_rows(runs), "cross-time", out, log);
  return kOk;
}

inline int cmd_patterns(const Options& o, std::ostream& out, const detail::Logger& log) {
  const evalkit::ExperimentConfig config = detail::experiment_config(o);
  if (o.seeds.empty()) throw ConfigError("patterns: no seeds");
  std::optional<std::vector<payflow::TransactionRecord>> shared;
  if (!o.data.empty()) {
    shared = detail::load_data(o, log);
    evalkit::require_all_labels(*shared, "patterns");
  }
  std::vector<std::vector<payflow::TransactionRecord>> per_seed;
  if (!shared)
    for (auto s : o.seeds) per_seed.push_back(detail::synthetic(o, s, log));
  const auto runs = evalkit::parallel_map<evalkit::PatternBreakdown>(
      o.seeds.size(),
      [&](std::size_t s) { return evalkit::run_pattern_breakdown(shared ? *shared : per_seed[s], config, o.seeds[s]); },
      o.threads);
  emit_report(o, evalkit::pattern_rows(runs), "patterns", out, log);
  return kOk;
}

// One flow (--data, or synthetic with --seed) swept over levels and seeds.
inline int cmd_sparsity(const Options& o, std::ostream& out, const detail::Logger& log) {
  const evalkit::ExperimentConfig config = detail::experiment_config(o);
  evalkit::validate_levels(o.levels);
  if (o.seeds.empty()) throw ConfigError("sparsity: no seeds");
  const auto records = o.data.empty() ? detail::synthetic(o, o.seed, log) : detail::load_data(o, log);
  const auto sweep = evalkit::run_sparsity_sweep(records, o.levels, o.seeds, config, o.threads);
  emit_report(o, evalkit::sparsity_rows(sweep), "sparsity", out, log);
  return kOk;
}

inline void add_generator_options(CLI::App* app, Options& o) {
  app->add_option("--accounts", o.gen.n_accounts, "Customer accounts")->capture_default_str();
  app->add_option("--steps", o.gen.n_steps, "Simulated hours")->capture_default_str();
  app->add_option("--tx-per-step", o.gen.tx_per_step, "Expected transactions per hour")->capture_default_str();
  app->add_option("--fraud-rate", o.gen.fraud_rate, "Share of FRAUD records")->capture_default_str();
  app->add_option("--laundering-rate", o.gen.laundering_rate, "Share of LAUNDERING records")->capture_default_str();
  app->add_option("--drain-rate", o.gen.normal_drain_rate, "Chance a normal spend empties the account")
      ->capture_default_str();
}

inline void add_data_options(CLI::App* app, Options& o, bool required) {
  auto* d = app->add_option("--data", o.data, "PaySim-format CSV (optionally with patternLabel)");
  if (required) d->required();
  app->add_option("--max-rows", o.max_rows, "Read at most this many data rows (0 = all)")->capture_default_str();
  app->add_flag("--skip-malformed", o.skip_malformed, "Skip and count malformed rows instead of failing");
}

inline void add_training_options(CLI::App* app, Options& o) {
  TrainConfig& t = o.exp.train;
  app->add_option("--epochs", t.epochs, "Passes over the training rows")->capture_default_str();
  app->add_option("--batch-size", t.batch_size, "Rows per optimizer step")->capture_default_str();
  app->add_option("--lr-d", t.lr_d, "Discriminator learning rate")->capture_default_str();
  app->add_option("--lr-g", t.lr_g, "Generator learning rate")->capture_default_str();
  app->add_option("--lr-vae", t.lr_vae, "Encoder/decoder learning rate")->capture_default_str();
  app->add_option("--lambda", t.lambda, "Weight of the VAE loss in the joint objective")->capture_default_str();
  app->add_option("--d-steps", t.d_steps_per_g_step, "Discriminator steps per generator step")->capture_default_str();
  app->add_option("--objective", o.objective, "Generator objective: non-saturating or minimax")->capture_default_str();
  app->add_option("--latent-dim", o.exp.bundle.latent_dim, "Latent code width for generator and encoder")->capture_default_str();
  app->add_option("--alpha", o.exp.alpha, "Discriminator weight in the joint anomaly score")->capture_default_str();
  app->add_option("--train-fraction", o.exp.train_fraction, "Cross-time split point")->capture_default_str();
  app->add_option("--holdout-fraction", o.exp.holdout_fraction, "Calibration tail of the training steps")
      ->capture_default_str();
  app->add_flag("--all-rows", o.all_rows, "Fit the networks on every training row, not only NORMAL ones");
}

// Runs the command line and returns the process exit code. stdout gets the
// report; diagnostics go to `err`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"Suspicious-behaviour detection in payment flows with adversarial and variational models",
               "flowguard"};
  app.config_formatter(std::make_shared<CLI::ConfigINI>());
  app.set_config("--config", "", "INI config file; command-line flags take precedence");
  app.add_option("--seed", o.seed, "Seed for data generation and training")->capture_default_str();
  app.add_option("--out-dir", o.out_dir, "Directory for outputs")->capture_default_str();
  app.add_flag("-v,--verbose", o.verbose, "Progress messages on stderr");
  app.require_subcommand(1);
  app.fallthrough();

  auto* gen = app.add_subcommand("gen-data", "Write a labelled synthetic payment flow");
  add_generator_options(gen, o);
  gen->add_option("-o,--output", o.output, "CSV path (default <out-dir>/data.csv)");

  auto* train = app.add_subcommand("train", "Train a detector and save a calibrated checkpoint");
  add_data_options(train, o, true);
  add_training_options(train, o);
  train->add_option("--model", o.model, "gan, vae or joint")->capture_default_str();
  train->add_option("-o,--output", o.output, "Run directory (default <out-dir>)");

  auto* score = app.add_subcommand("score", "Score a CSV with a saved checkpoint");
  score->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  add_data_options(score, o, true);
  score->add_option("--theta", o.theta, "Decision threshold (default: calibrate on input labels)");
  score->add_option("-o,--output", o.output, "Scored CSV path (default <out-dir>/scores.csv)");

  auto* inspect = app.add_subcommand("inspect-ckpt", "Describe a checkpoint");
  inspect->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();

  auto* experiment = app.add_subcommand("experiment", "Run an evaluation protocol");
  experiment->require_subcommand(1);
  auto* cross = experiment->add_subcommand("cross-time", "Train early, test on later steps, per model");
  auto* patterns = experiment->add_subcommand("patterns", "Per-pattern one-vs-rest metrics of the joint model");
  auto* sparsity = experiment->add_subcommand("sparsity", "Joint model under stratified training-row removal");
  for (auto* sub : {cross, patterns, sparsity}) {
    add_data_options(sub, o, false);
    add_generator_options(sub, o);
    add_training_options(sub, o);
    sub->add_option("--seeds", o.seeds, "Run seeds")->delimiter(',')->capture_default_str();
    sub->add_option("--threads", o.threads, "Worker threads (0 = hardware)")->capture_default_str();
    sub->add_flag("--chart", o.chart, "Also write an SVG chart of F1");
  }
  cross->add_option("--models", o.models, "Comma-separated model kinds")->delimiter(',')->capture_default_str();
  sparsity->add_option("--levels", o.levels, "Strictly increasing sparsity levels in [0, 1)")
      ->delimiter(',')
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  const detail::Logger log(err, o.verbose);
  auto failure = [&](int code, const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return code;
  };
  try {
    // Echo the fully resolved configuration so the run can be repeated.
    const CLI::App* command = app.get_subcommands().front();
    std::string name = command->get_name();
    if (!command->get_subcommands().empty()) name += "-" + command->get_subcommands().front()->get_name();
    detail::write_text(detail::ensure_dir(o.out_dir) / (name + ".resolved.ini"), detail::resolved_config(app));

    if (gen->parsed()) return cmd_gen_data(o, out, log);
    if (train->parsed()) return cmd_train(o, out, log);
    if (score->parsed()) return cmd_score(o, out, log);
    if (inspect->parsed()) return cmd_inspect(o, out);
    if (cross->parsed()) return cmd_cross_time(o, out, log);
    if (patterns->parsed()) return cmd_patterns(o, out, log);
    if (sparsity->parsed()) return cmd_sparsity(o, out, log);
    return kUsage;
  } catch (const ConfigError& e) {
    return failure(kUsage, e);
  } catch (const WriteError& e) {
    return failure(kWriteFailed, e);
  } catch (const CheckpointVersionError& e) {
    return failure(kCheckpoint, e);
  } catch (const CheckpointParseError& e) {
    return failure(kCheckpoint, e);
  } catch (const ReadError& e) {
    return failure(kBadInput, e);
  } catch (const SchemaError& e) {
    return failure(kBadInput, e);
  } catch (const RowError& e) {
    return failure(kBadInput, e);
  } catch (const MissingClassError& e) {
    return failure(kBadInput, e);
  } catch (const SplitError& e) {
    return failure(kBadInput, e);
  } catch (const DivergenceError& e) {
    return failure(kDiverged, e);
  } catch (const CalibrationError& e) {
    return failure(kCalibration, e);
  } catch (const ContractError& e) {
    return failure(kUsage, e);
  } catch (const std::exception& e) {
    return failure(kInternal, e);
  }
}

}  // namespace flowguard::cli
