#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "flowguard/diffcore/rng.hpp"
#include "flowguard/diffcore/tape.hpp"
#include "flowguard/errors.hpp"
#include "flowguard/nets.hpp"
#include "flowguard/trainloop/adam.hpp"

namespace flowguard {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  double lr_d = 2e-4;
  double lr_g = 2e-4;
  double lr_vae = 1e-3;
  double lambda = 1.0;
  std::size_t d_steps_per_g_step = 1;
  std::uint64_t seed = 1;
  GeneratorObjective generator_objective = GeneratorObjective::non_saturating;

  void validate() const {
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (d_steps_per_g_step == 0) throw ConfigError("train: d_steps_per_g_step must be positive");
    for (double lr : {lr_d, lr_g, lr_vae})
      if (!(lr > 0.0 && std::isfinite(lr))) throw ConfigError("train: learning rates must be positive and finite");
    if (!(lambda >= 0.0 && std::isfinite(lambda))) throw ConfigError("train: lambda must be finite and >= 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Row-weighted means over one epoch. Parts that a procedure does not train
// are reported as 0.
struct EpochStats {
  std::size_t epoch = 0;
  double l_gan = 0.0;
  double l_vae = 0.0;
  double l_joint = 0.0;
  double d_real_mean = 0.0;
  double d_fake_mean = 0.0;
  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

using TrainingTrace = std::vector<EpochStats>;

namespace detail {
inline void append_field(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}
}  // namespace detail

inline void write_trace_csv(std::ostream& out, const TrainingTrace& trace) {
  std::string buf = "epoch,l_gan,l_vae,l_joint,d_real_mean,d_fake_mean\n";
  for (const auto& e : trace) {
    buf += std::to_string(e.epoch);
    for (double v : {e.l_gan, e.l_vae, e.l_joint, e.d_real_mean, e.d_fake_mean}) {
      buf += ',';
      detail::append_field(buf, v);
    }
    buf += '\n';
  }
  out << buf;
}

inline void write_trace_csv(const std::string& path, const TrainingTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw WriteError("cannot write '" + path + "'");
  write_trace_csv(out, trace);
  if (!out) throw WriteError("write failed for '" + path + "'");
}

enum class StepPhase : std::uint8_t { discriminator, generator, vae };

inline const char* phase_name(StepPhase p) {
  switch (p) {
    case StepPhase::discriminator: return "discriminator";
    case StepPhase::generator: return "generator";
    case StepPhase::vae: return "vae";
  }
  return "?";
}

// Everything needed to recompute one applied gradient from scratch.
// `noise` is z for adversarial phases and eps for the vae phase; `applied`
// follows Mlp::parameters() order (encoder then decoder for vae).
struct GradientAudit {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  StepPhase phase = StepPhase::discriminator;
  ModelBundle before;
  Tensor real;
  Tensor noise;
  double vae_weight = 1.0;
  GeneratorObjective objective = GeneratorObjective::non_saturating;
  std::vector<Tensor> applied;
};

struct TrainHooks {
  // Called for every step of one randomly chosen batch per epoch.
  std::function<void(const GradientAudit&)> audit;
};

// Named substreams of a run's seed.
enum class Stream : std::uint64_t { init = 1, shuffle = 2, noise = 3, eps = 4, audit = 5 };

inline constexpr std::size_t kTrainStreamCount = 4;  // shuffle, noise, eps, audit

struct TrainStreams {
  DeterministicRng shuffle, noise, eps, audit;

  explicit TrainStreams(std::uint64_t seed)
      : shuffle(substream(seed, static_cast<std::uint64_t>(Stream::shuffle))),
        noise(substream(seed, static_cast<std::uint64_t>(Stream::noise))),
        eps(substream(seed, static_cast<std::uint64_t>(Stream::eps))),
        audit(substream(seed, static_cast<std::uint64_t>(Stream::audit))) {}

  std::array<DeterministicRng::State, kTrainStreamCount> states() const {
    return {shuffle.state(), noise.state(), eps.state(), audit.state()};
  }
};

inline ModelBundle initial_bundle(const BundleSpec& spec, std::uint64_t seed) {
  DeterministicRng rng = substream(seed, static_cast<std::uint64_t>(Stream::init));
  return ModelBundle::create(spec, rng);
}

struct TrainResult {
  ModelBundle bundle;
  TrainingTrace trace;
  std::array<DeterministicRng::State, kTrainStreamCount> rng_states{};
};

namespace detail {

struct Procedure {
  bool adversarial = false;
  bool vae = false;
  double vae_weight = 1.0;  // multiplies L_VAE in its update and in l_joint
};

inline std::vector<Tensor*> vae_parameters(ModelBundle& b) {
  auto p = b.encoder.parameters();
  auto d = b.decoder.parameters();
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

inline void check_finite_value(double v, const char* what, std::size_t epoch, std::size_t batch, StepPhase phase) {
  if (!std::isfinite(v))
    throw DivergenceError(std::string("non-finite ") + what + " in " + phase_name(phase) + " step at epoch " +
                          std::to_string(epoch) + ", batch " + std::to_string(batch));
}

inline void check_finite_params(const std::vector<Tensor*>& params, std::size_t epoch, std::size_t batch,
                                StepPhase phase) {
  for (const Tensor* p : params)
    if (!p->all_finite())
      throw DivergenceError(std::string("non-finite parameter after ") + phase_name(phase) + " step at epoch " +
                            std::to_string(epoch) + ", batch " + std::to_string(batch));
}

struct EpochAccumulator {
  double rows = 0.0, gan = 0.0, vae = 0.0, d_real = 0.0, d_fake = 0.0;
};

class Trainer {
 public:
  Trainer(ModelBundle bundle, const Tensor& features, const TrainConfig& config, Procedure procedure,
          const TrainHooks& hooks)
      : bundle_(std::move(bundle)),
        x_(features),
        config_(config),
        procedure_(procedure),
        hooks_(hooks),
        streams_(config.seed),
        adam_d_(AdamHyper{.lr = config.lr_d}),
        adam_g_(AdamHyper{.lr = config.lr_g}),
        adam_vae_(AdamHyper{.lr = config.lr_vae}) {}

  TrainResult run() {
    config_.validate();
    if (x_.rank() != 2 || x_.rows() == 0) throw ContractError("train: features must be a non-empty [n, d] matrix");
    if (x_.cols() != bundle_.feature_dim)
      throw ShapeError("train: features have width " + std::to_string(x_.cols()) + " but the model expects " +
                       std::to_string(bundle_.feature_dim));

    const std::size_t n = x_.rows();
    const std::size_t n_batches = (n + config_.batch_size - 1) / config_.batch_size;
    std::vector<std::size_t> order(n);
    TrainResult result;

    for (std::size_t epoch = 1; epoch <= config_.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      streams_.shuffle.shuffle(order);
      const std::size_t audited = streams_.audit.uniform_below(n_batches);
      EpochAccumulator acc;

      for (std::size_t b = 0; b < n_batches; ++b) {
        const std::size_t begin = b * config_.batch_size;
        const std::size_t end = std::min(n, begin + config_.batch_size);
        const Tensor real = x_.select_rows(std::span(order).subspan(begin, end - begin));
        const double rows = static_cast<double>(end - begin);
        audit_this_ = b == audited;
        acc.rows += rows;
        if (procedure_.adversarial) adversarial_batch(real, epoch, b, acc, rows);
        if (procedure_.vae) vae_batch(real, epoch, b, acc, rows);
      }

      EpochStats stats;
      stats.epoch = epoch;
      stats.l_gan = acc.gan / acc.rows;
      stats.l_vae = acc.vae / acc.rows;
      stats.l_joint = joint_loss(stats.l_gan, stats.l_vae, {.lambda = procedure_.vae_weight});
      stats.d_real_mean = acc.d_real / acc.rows;
      stats.d_fake_mean = acc.d_fake / acc.rows;
      result.trace.push_back(stats);
    }

    result.bundle = std::move(bundle_);
    result.rng_states = streams_.states();
    return result;
  }

 private:
  void adversarial_batch(const Tensor& real, std::size_t epoch, std::size_t b, EpochAccumulator& acc, double rows) {
    const std::size_t batch = real.rows();
    for (std::size_t k = 0; k < config_.d_steps_per_g_step; ++k) {
      const Tensor z = streams_.noise.standard_normal({batch, bundle_.latent_dim});
      const Tensor fake = bundle_.generator.infer(z);
      Tape tape;
      const BoundMlp d = bind(tape, bundle_.discriminator, true);
      const Var d_real = discriminator_forward(d, tape.constant(real));
      const Var d_fake = discriminator_forward(d, tape.constant(fake));
      const Var l_gan = gan_loss(d_real, d_fake);
      check_finite_value(l_gan.value().item(), "adversarial loss", epoch, b, StepPhase::discriminator);
      if (k == 0) {
        acc.gan += l_gan.value().item() * rows;
        acc.d_real += kernels::sum(d_real.value());
        acc.d_fake += kernels::sum(d_fake.value());
      }
      // Ascent on L_GAN for D is descent on its negation.
      const GradientMap grads = tape.backward(negate(l_gan));
      apply(StepPhase::discriminator, d, grads, bundle_.discriminator.parameters(), adam_d_, real, z, epoch, b);
    }

    const Tensor z = streams_.noise.standard_normal({batch, bundle_.latent_dim});
    Tape tape;
    const BoundMlp g = bind(tape, bundle_.generator, true);
    const BoundMlp d = bind(tape, bundle_.discriminator, false);
    const Var d_fake = discriminator_forward(d, generator_forward(g, tape.constant(z)));
    const Var loss = generator_loss(d_fake, config_.generator_objective);
    check_finite_value(loss.value().item(), "generator loss", epoch, b, StepPhase::generator);
    const GradientMap grads = tape.backward(loss);
    apply(StepPhase::generator, g, grads, bundle_.generator.parameters(), adam_g_, real, z, epoch, b);
  }

  void vae_batch(const Tensor& real, std::size_t epoch, std::size_t b, EpochAccumulator& acc, double rows) {
    const Tensor eps = streams_.eps.standard_normal({real.rows(), bundle_.latent_dim});
    Tape tape;
    const BoundMlp enc = bind(tape, bundle_.encoder, true);
    const BoundMlp dec = bind(tape, bundle_.decoder, true);
    const Var x = tape.constant(real);
    const Posterior post = encoder_forward(enc, x);
    const Var x_hat = dec.forward(reparameterize(post.mu, post.log_var, eps));
    const Var l_vae = vae_loss(x, x_hat, post.mu, post.log_var, bundle_.layout);
    check_finite_value(l_vae.value().item(), "vae loss", epoch, b, StepPhase::vae);
    acc.vae += l_vae.value().item() * rows;
    const GradientMap grads = tape.backward(scale(l_vae, procedure_.vae_weight));

    std::vector<Tensor> applied = enc.gradients(grads);
    for (Tensor& t : dec.gradients(grads)) applied.push_back(std::move(t));
    std::vector<Tensor*> params = vae_parameters(bundle_);
    if (audit_this_ && hooks_.audit) emit_audit(StepPhase::vae, real, eps, applied, epoch, b);
    adam_step(params, applied, adam_vae_);
    check_finite_params(params, epoch, b, StepPhase::vae);
  }

  void apply(StepPhase phase, const BoundMlp& net, const GradientMap& grads, std::vector<Tensor*> params,
             AdamState& adam, const Tensor& real, const Tensor& noise, std::size_t epoch, std::size_t b) {
    std::vector<Tensor> applied = net.gradients(grads);
    if (audit_this_ && hooks_.audit) emit_audit(phase, real, noise, applied, epoch, b);
    adam_step(params, applied, adam);
    check_finite_params(params, epoch, b, phase);
  }

  void emit_audit(StepPhase phase, const Tensor& real, const Tensor& noise, const std::vector<Tensor>& applied,
                  std::size_t epoch, std::size_t b) const {
    GradientAudit a;
    a.epoch = epoch;
    a.batch = b;
    a.phase = phase;
    a.before = bundle_;
    a.real = real;
    a.noise = noise;
    a.vae_weight = procedure_.vae_weight;
    a.objective = config_.generator_objective;
    a.applied = applied;
    hooks_.audit(a);
  }

  ModelBundle bundle_;
  const Tensor& x_;
  TrainConfig config_;
  Procedure procedure_;
  const TrainHooks& hooks_;
  TrainStreams streams_;
  AdamState adam_d_, adam_g_, adam_vae_;
  bool audit_this_ = false;
};

}  // namespace detail

// Alternating adversarial training: per batch, d_steps_per_g_step
// discriminator steps on a fresh G(z) each, then one generator step.
inline TrainResult train_gan(ModelBundle bundle, const Tensor& features, const TrainConfig& config,
                             const TrainHooks& hooks = {}) {
  return detail::Trainer(std::move(bundle), features, config, {.adversarial = true, .vae = false}, hooks).run();
}

// Minibatch descent on L_VAE over encoder and decoder.
inline TrainResult train_vae(ModelBundle bundle, const Tensor& features, const TrainConfig& config,
                             const TrainHooks& hooks = {}) {
  return detail::Trainer(std::move(bundle), features, config, {.adversarial = false, .vae = true, .vae_weight = 1.0},
                         hooks)
      .run();
}

// Adversarial steps interleaved with a lambda-weighted VAE step on the same
// batch. The VAE step is skipped at lambda = 0, which leaves every other
// stream untouched, so the run coincides with train_gan. The VAE step touches
// only encoder and decoder, and Adam ignores a constant gradient scale up to
// eps, so every lambda > 0 yields nearly the same VAE updates.
inline TrainResult train_joint(ModelBundle bundle, const Tensor& features, const TrainConfig& config,
                               const TrainHooks& hooks = {}) {
  if (!(config.lambda >= 0.0)) throw ContractError("train_joint: lambda must be >= 0");
  return detail::Trainer(std::move(bundle), features, config,
                         {.adversarial = true, .vae = config.lambda > 0.0, .vae_weight = config.lambda}, hooks)
      .run();
}

}  // namespace flowguard
