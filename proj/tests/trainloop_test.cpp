#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "flowguard/detect.hpp"
#include "flowguard/trainloop/adam.hpp"
#include "flowguard/trainloop/checkpoint.hpp"
#include "flowguard/trainloop/train.hpp"

namespace flowguard {
namespace {

// ---- Adam ------------------------------------------------------------------

TEST(Adam, ZeroGradientKeepsParametersAndDecaysMoments) {
  Tensor w({2}, std::vector<double>{1.0, -2.0});
  AdamState state(AdamHyper{.lr = 0.1});
  std::vector<Tensor*> params{&w};
  adam_step(params, std::vector<Tensor>{Tensor({2}, std::vector<double>{0.5, 0.5})}, state);
  const Tensor after_first = w;
  const double m_before = state.first_moment[0][0];
  adam_step(params, std::vector<Tensor>{Tensor({2})}, state);
  // Bias-corrected m is still non-zero, so only exact zeros keep w fixed
  // when the moments themselves are zero.
  EXPECT_LT(std::abs(state.first_moment[0][0]), std::abs(m_before));
  EXPECT_EQ(state.step, 2u);

  Tensor fresh({3}, 1.5);
  AdamState clean;
  std::vector<Tensor*> fp{&fresh};
  for (int i = 0; i < 5; ++i) adam_step(fp, std::vector<Tensor>{Tensor({3})}, clean);
  EXPECT_EQ(fresh, Tensor({3}, 1.5));
  EXPECT_EQ(clean.first_moment[0], Tensor({3}));
  (void)after_first;
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  Tensor w({3}, std::vector<double>{0.0, 0.0, 0.0});
  AdamState state(AdamHyper{.lr = 0.01});
  std::vector<Tensor*> params{&w};
  adam_step(params, std::vector<Tensor>{Tensor({3}, std::vector<double>{4.0, -0.5, 1e-3})}, state);
  EXPECT_NEAR(w[0], -0.01, 1e-9);
  EXPECT_NEAR(w[1], 0.01, 1e-9);
  EXPECT_NEAR(w[2], -0.01, 1e-7);  // eps matters only for tiny gradients
}

TEST(Adam, QuadraticConvergesTowardMinimum) {
  Tensor w({1}, 0.0);
  AdamState state(AdamHyper{.lr = 0.1});
  std::vector<Tensor*> params{&w};
  for (int i = 0; i < 50; ++i) adam_step(params, std::vector<Tensor>{Tensor({1}, 2.0 * (w[0] - 3.0))}, state);
  EXPECT_LT(std::abs(w[0] - 3.0), 0.5);
}

TEST(Adam, ShapeMismatchIsContractError) {
  Tensor w({2});
  AdamState state;
  std::vector<Tensor*> params{&w};
  EXPECT_THROW(adam_step(params, std::vector<Tensor>{Tensor({3})}, state), ContractError);
  EXPECT_THROW(adam_step(params, std::vector<Tensor>{}, state), ContractError);
}

// ---- toy problems ------------------------------------------------------------

BundleSpec toy_spec(std::size_t dim = 2) {
  BundleSpec s;
  s.feature_dim = dim;
  s.latent_dim = 2;
  s.generator_hidden = {16, 16};
  s.discriminator_hidden = {16, 16};
  s.encoder_hidden = {16};
  s.decoder_hidden = {16};
  return s;
}

Tensor gaussian_data(std::size_t n, std::vector<double> mean, double sd, std::uint64_t seed) {
  DeterministicRng rng(seed);
  Tensor x({n, mean.size()});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < mean.size(); ++j) x.at(i, j) = rng.normal(mean[j], sd);
  return x;
}

TrainConfig toy_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 64;
  c.seed = 5;
  return c;
}

TEST(TrainGan, ZeroEpochsLeavesBundleUnchanged) {
  const ModelBundle init = initial_bundle(toy_spec(), 1);
  auto result = train_gan(init, gaussian_data(100, {0, 0}, 1, 1), toy_config(0));
  EXPECT_EQ(result.bundle, init);
  EXPECT_TRUE(result.trace.empty());
  EXPECT_EQ(train_vae(init, gaussian_data(100, {0, 0}, 1, 1), toy_config(0)).bundle, init);
}

TEST(TrainGan, SameSeedSameTraceAndBundle) {
  const ModelBundle init = initial_bundle(toy_spec(), 1);
  const Tensor x = gaussian_data(300, {1, 1}, 1, 2);
  auto a = train_gan(init, x, toy_config(3));
  auto b = train_gan(init, x, toy_config(3));
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(a.bundle, b.bundle);
  EXPECT_EQ(a.trace.size(), 3u);
  auto other = toy_config(3);
  other.seed = 6;
  EXPECT_NE(train_gan(init, x, other).trace, a.trace);
}

TEST(TrainGan, GaussianToyGeneratorFindsTheMean) {
  const Tensor x = gaussian_data(512, {2.0, -1.0}, 0.5, 3);
  auto cfg = toy_config(200);
  cfg.lr_d = 1e-3;
  cfg.lr_g = 1e-3;
  auto result = train_gan(initial_bundle(toy_spec(), 2), x, cfg);
  DeterministicRng rng(99);
  const Tensor samples = generate(result.bundle, rng.standard_normal({4000, 2}));
  for (std::size_t j = 0; j < 2; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < samples.rows(); ++i) m += samples.at(i, j);
    m /= static_cast<double>(samples.rows());
    EXPECT_LT(std::abs(m - (j == 0 ? 2.0 : -1.0)), 0.5) << "coordinate " << j;
  }
  const double d_real = kernels::sum(discriminate(result.bundle, x)) / static_cast<double>(x.rows());
  EXPECT_GE(d_real, 0.35);
  EXPECT_LE(d_real, 0.65);
}

TEST(TrainGan, MinimaxObjectiveAlsoRuns) {
  auto cfg = toy_config(2);
  cfg.generator_objective = GeneratorObjective::minimax;
  auto r = train_gan(initial_bundle(toy_spec(), 1), gaussian_data(128, {0, 0}, 1, 4), cfg);
  EXPECT_EQ(r.trace.size(), 2u);
  EXPECT_NE(r.trace, train_gan(initial_bundle(toy_spec(), 1), gaussian_data(128, {0, 0}, 1, 4), toy_config(2)).trace);
}

TEST(TrainVae, LossDecreasesOnToyData) {
  auto cfg = toy_config(100);
  auto r = train_vae(initial_bundle(toy_spec(3), 3), gaussian_data(256, {1.0, -2.0, 0.5}, 1.0, 5), cfg);
  ASSERT_EQ(r.trace.size(), 100u);
  EXPECT_LT(r.trace.back().l_vae, r.trace.front().l_vae);
  EXPECT_EQ(r.trace.front().l_gan, 0.0);
  EXPECT_EQ(r.trace.back().l_joint, r.trace.back().l_vae);
  auto again = train_vae(initial_bundle(toy_spec(3), 3), gaussian_data(256, {1.0, -2.0, 0.5}, 1.0, 5), cfg);
  EXPECT_EQ(again.trace, r.trace);
}

TEST(TrainJoint, LambdaZeroReproducesGanExactly) {
  const ModelBundle init = initial_bundle(toy_spec(), 7);
  const Tensor x = gaussian_data(200, {1, 2}, 1, 7);
  auto cfg = toy_config(4);
  cfg.lambda = 0.0;
  auto gan = train_gan(init, x, cfg);
  auto joint = train_joint(init, x, cfg);
  EXPECT_EQ(gan.trace, joint.trace);
  EXPECT_EQ(gan.bundle, joint.bundle);
  EXPECT_EQ(gan.rng_states, joint.rng_states);
  Checkpoint a{gan.bundle, {}, cfg, {}, std::nullopt, gan.rng_states};
  Checkpoint b{joint.bundle, {}, cfg, {}, std::nullopt, joint.rng_states};
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
}

double window_mean(const TrainingTrace& t, std::size_t begin, std::size_t end, double EpochStats::*field) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += t[i].*field;
  return s / static_cast<double>(end - begin);
}

TEST(TrainJoint, LambdaOneImprovesReconstruction) {
  const ModelBundle init = initial_bundle(toy_spec(3), 8);
  const Tensor x = gaussian_data(256, {0.5, -1.0, 2.0}, 1.0, 8);
  const double err_before = detect::quantile(detect::reconstruction_errors(init, x), 0.5);
  auto r = train_joint(init, x, toy_config(60));
  ASSERT_EQ(r.trace.size(), 60u);
  EXPECT_LT(window_mean(r.trace, 50, 60, &EpochStats::l_vae), window_mean(r.trace, 0, 10, &EpochStats::l_vae));
  EXPECT_LT(detect::quantile(detect::reconstruction_errors(r.bundle, x), 0.5), err_before);
  for (const auto& e : r.trace) EXPECT_DOUBLE_EQ(e.l_joint, e.l_gan + e.l_vae);
}

TEST(TrainJoint, NegativeLambdaRejected) {
  auto cfg = toy_config(1);
  cfg.lambda = -1.0;
  EXPECT_THROW(train_joint(initial_bundle(toy_spec(), 1), gaussian_data(10, {0, 0}, 1, 1), cfg), ContractError);
}

TEST(Train, DivergenceAbortsNamingEpochAndBatch) {
  auto cfg = toy_config(3);
  cfg.lr_d = 1e307;
  cfg.lr_g = 1e307;
  try {
    train_gan(initial_bundle(toy_spec(), 1), gaussian_data(256, {0, 0}, 1, 1), cfg);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch "), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch "), std::string::npos) << msg;
  }
}

TEST(Train, WidthMismatchIsShapeError) {
  EXPECT_THROW(train_vae(initial_bundle(toy_spec(), 1), gaussian_data(10, {0, 0, 0}, 1, 1), toy_config(1)), ShapeError);
}

// ---- gradient audit ----------------------------------------------------------

// Loss of one phase evaluated without a tape, for finite differences.
double phase_loss(const GradientAudit& a, const ModelBundle& m) {
  const std::size_t n = a.real.rows();
  switch (a.phase) {
    case StepPhase::discriminator: {
      const Tensor dr = discriminate(m, a.real);
      const Tensor df = discriminate(m, generate(m, a.noise));
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += std::log(dr[i]) / n + std::log(1.0 - df[i]) / df.size();
      return -s;
    }
    case StepPhase::generator: {
      const Tensor df = discriminate(m, generate(m, a.noise));
      double s = 0.0;
      for (double d : df.values()) s -= std::log(d) / static_cast<double>(df.size());
      return s;
    }
    case StepPhase::vae: {
      Tape tape;
      const Var x = tape.constant(a.real);
      const Posterior post = encoder_forward(bind(tape, m.encoder, false), x);
      const Var x_hat = bind(tape, m.decoder, false).forward(reparameterize(post.mu, post.log_var, a.noise));
      return a.vae_weight * vae_loss(x, x_hat, post.mu, post.log_var, m.layout).value().item();
    }
  }
  return 0.0;
}

std::vector<Tensor*> phase_params(StepPhase p, ModelBundle& m) {
  switch (p) {
    case StepPhase::discriminator: return m.discriminator.parameters();
    case StepPhase::generator: return m.generator.parameters();
    case StepPhase::vae: {
      auto v = m.encoder.parameters();
      for (Tensor* t : m.decoder.parameters()) v.push_back(t);
      return v;
    }
  }
  return {};
}

TEST(GradientAuditHook, AppliedGradientsMatchCentralDifferences) {
  const Tensor x = gaussian_data(150, {1, -1}, 1, 11);
  std::size_t audits = 0;
  std::set<StepPhase> phases;
  DeterministicRng pick(3);
  TrainHooks hooks;
  hooks.audit = [&](const GradientAudit& a) {
    ++audits;
    phases.insert(a.phase);
    ModelBundle m = a.before;
    auto params = phase_params(a.phase, m);
    ASSERT_EQ(params.size(), a.applied.size());
    for (int probe = 0; probe < 12; ++probe) {
      const std::size_t p = pick.uniform_below(params.size());
      const std::size_t k = pick.uniform_below(params[p]->size());
      const double h = 1e-6, saved = (*params[p])[k];
      (*params[p])[k] = saved + h;
      const double up = phase_loss(a, m);
      (*params[p])[k] = saved - h;
      const double down = phase_loss(a, m);
      (*params[p])[k] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = a.applied[p][k];
      EXPECT_NEAR(analytic, numeric, 1e-6 * std::max(1.0, std::abs(analytic)))
          << phase_name(a.phase) << " epoch " << a.epoch << " param " << p << "[" << k << "]";
    }
  };
  auto cfg = toy_config(3);
  cfg.lambda = 0.7;
  cfg.d_steps_per_g_step = 2;
  auto with_hook = train_joint(initial_bundle(toy_spec(), 4), x, cfg, hooks);
  EXPECT_EQ(audits, 3u * 4u);  // per epoch: 2 discriminator, 1 generator, 1 vae
  EXPECT_EQ(phases.size(), 3u);
  // Observing training must not change it.
  auto without = train_joint(initial_bundle(toy_spec(), 4), x, cfg);
  EXPECT_EQ(with_hook.bundle, without.bundle);
  EXPECT_EQ(with_hook.rng_states, without.rng_states);
}

// ---- trace CSV ---------------------------------------------------------------

TEST(TraceCsv, HeaderAndRoundTrippableValues) {
  TrainingTrace t{{1, -1.25, 0.5, -0.75, 0.6, 0.4}, {2, 0.1, 0.2, 0.30000000000000004, 0.5, 0.5}};
  std::ostringstream out;
  write_trace_csv(out, t);
  EXPECT_EQ(out.str(),
            "epoch,l_gan,l_vae,l_joint,d_real_mean,d_fake_mean\n1,-1.25,0.5,-0.75,0.6,0.4\n"
            "2,0.1,0.2,0.30000000000000004,0.5,0.5\n");
}

// ---- checkpoint --------------------------------------------------------------

Checkpoint trained_checkpoint() {
  BundleSpec spec;
  spec.layout = {1, 5};
  const std::size_t n = 200;
  DeterministicRng rng(21);
  Tensor x({n, 12});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 12; ++j) x.at(i, j) = rng.normal();
    for (std::size_t j = 1; j <= 5; ++j) x.at(i, j) = 0.0;
    x.at(i, 1 + rng.uniform_below(5)) = 1.0;
  }
  auto cfg = toy_config(2);
  auto r = train_joint(initial_bundle(spec, 1), x, cfg);
  Checkpoint c;
  c.bundle = r.bundle;
  c.stats = {{1.0, 2.0, 3.0, 4.0, 5.0}, {0.1, 0.2, 0.3, 0.4, 0.5}};
  c.config = cfg;
  c.weights = {0.3, 0.123456789};
  c.threshold = 0.4242;
  c.rng_states = r.rng_states;
  return c;
}

TEST(CheckpointFormat, RoundTripPreservesEverythingAndScoresBitwise) {
  const Checkpoint c = trained_checkpoint();
  const auto path = std::filesystem::temp_directory_path() / "flowguard_trainloop_test.ckpt";
  save_checkpoint(c, path.string());
  const Checkpoint back = load_checkpoint(path.string());
  EXPECT_EQ(back, c);
  DeterministicRng rng(5);
  const Tensor probe = rng.standard_normal({500, 12});
  const auto before = detect::score_batch(c.bundle, c.weights, probe);
  const auto after = detect::score_batch(back.bundle, back.weights, probe);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(before[i].value), std::bit_cast<std::uint64_t>(after[i].value));
  }
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(c));
  std::filesystem::remove(path);
}

TEST(CheckpointFormat, SpecialFloatsSurvive) {
  Checkpoint c = trained_checkpoint();
  c.stats.mean = {-0.0, 5e-324, 1.7976931348623157e308, 0.1, -3.5};
  c.threshold.reset();
  EXPECT_EQ(deserialize_checkpoint(serialize_checkpoint(c)), c);
  EXPECT_TRUE(std::signbit(deserialize_checkpoint(serialize_checkpoint(c)).stats.mean[0]));
}

TEST(CheckpointFormat, OtherVersionIsIncompatible) {
  std::string bytes = serialize_checkpoint(trained_checkpoint());
  const std::uint32_t v = 999;
  for (int i = 0; i < 4; ++i) bytes[kCheckpointMagic.size() + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  try {
    deserialize_checkpoint(bytes);
    FAIL() << "expected CheckpointVersionError";
  } catch (const CheckpointVersionError& e) {
    EXPECT_NE(std::string(e.what()).find("999"), std::string::npos);
  }
}

TEST(CheckpointFormat, EveryTruncationIsParseError) {
  const std::string bytes = serialize_checkpoint(trained_checkpoint());
  // Version check happens before any truncation could be noticed past it,
  // so every proper prefix must fail as a parse error.
  for (std::size_t cut = 0; cut < bytes.size(); cut += 1 + cut / 64) {
    EXPECT_THROW(deserialize_checkpoint(std::string_view(bytes).substr(0, cut)), CheckpointParseError) << cut;
  }
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), CheckpointParseError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), CheckpointParseError);
  EXPECT_THROW(deserialize_checkpoint("not a checkpoint at all"), CheckpointParseError);
}

TEST(CheckpointFormat, SameSeedSameBytes) {
  EXPECT_EQ(serialize_checkpoint(trained_checkpoint()), serialize_checkpoint(trained_checkpoint()));
}

TEST(CheckpointFormat, DescribeListsArchitecture) {
  const std::string d = describe(trained_checkpoint());
  EXPECT_NE(d.find("8-64-64-12"), std::string::npos) << d;
  EXPECT_NE(d.find("12-64-32-1"), std::string::npos) << d;
  EXPECT_NE(d.find("0.4242"), std::string::npos) << d;
}

}  // namespace
}  // namespace flowguard
