#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "flowguard/nets.hpp"

namespace flowguard {
namespace {

Tensor random_tensor(DeterministicRng& rng, Shape shape, double spread = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-spread, spread);
  return t;
}

BundleSpec small_spec(std::size_t d_x, std::size_t d_z, FeatureLayout layout = {}) {
  BundleSpec s;
  s.feature_dim = d_x;
  s.latent_dim = d_z;
  s.generator_hidden = {5};
  s.discriminator_hidden = {4};
  s.encoder_hidden = {5};
  s.decoder_hidden = {5};
  s.layout = layout;
  return s;
}

ModelBundle zero_bundle(std::size_t d_x, std::size_t d_z) {
  DeterministicRng rng(1);
  ModelBundle b = ModelBundle::create(small_spec(d_x, d_z), rng);
  for (Mlp* m : {&b.generator, &b.discriminator, &b.encoder, &b.decoder})
    for (Tensor* p : m->parameters()) *p = Tensor(p->shape());
  return b;
}

TEST(Generator, ZeroNetworkGivesZeroOutput) {
  ModelBundle b = zero_bundle(3, 2);
  Tape tape;
  Var out = generator_forward(bind(tape, b.generator, true), tape.constant(Tensor({4, 2}, 1.5)));
  EXPECT_EQ(out.value(), Tensor({4, 3}));
}

TEST(Generator, DeterministicAndShaped) {
  auto run = [] {
    DeterministicRng rng(7);
    ModelBundle b = ModelBundle::create(BundleSpec{}, rng);
    Tape tape;
    Tensor z = rng.standard_normal({8, b.latent_dim});
    return generator_forward(bind(tape, b.generator, true), tape.constant(z)).value();
  };
  const Tensor a = run();
  EXPECT_EQ(a, run());
  EXPECT_EQ(a.shape(), (Shape{8, 12}));
}

TEST(Generator, WidthMismatchThrows) {
  ModelBundle b = zero_bundle(3, 2);
  Tape tape;
  EXPECT_THROW(generator_forward(bind(tape, b.generator, true), tape.constant(Tensor({4, 3}))), ShapeError);
  EXPECT_THROW(discriminator_forward(bind(tape, b.discriminator, true), tape.constant(Tensor({4, 2}))), ShapeError);
  EXPECT_THROW(encoder_forward(bind(tape, b.encoder, true), tape.constant(Tensor({4, 5}))), ShapeError);
}

TEST(Discriminator, ZeroFinalLayerGivesOneHalf) {
  DeterministicRng rng(3);
  ModelBundle b = ModelBundle::create(small_spec(3, 2), rng);
  auto& last = b.discriminator.layers().back();
  last.weight = Tensor(last.weight.shape());
  last.bias = Tensor(last.bias.shape());
  Tape tape;
  Var d = discriminator_forward(bind(tape, b.discriminator, true), tape.constant(random_tensor(rng, {8, 3}, 5.0)));
  ASSERT_EQ(d.value().shape(), (Shape{8, 1}));
  for (double p : d.value().values()) EXPECT_DOUBLE_EQ(p, 0.5);
}

TEST(Discriminator, ExtremeLogitIsClamped) {
  ModelBundle b = zero_bundle(3, 2);
  b.discriminator.layers().back().bias = Tensor({1, 1}, 50.0);
  Tape tape;
  Var d = discriminator_forward(bind(tape, b.discriminator, true), tape.constant(Tensor({2, 3})));
  for (double p : d.value().values()) {
    EXPECT_LT(p, 1.0);
    EXPECT_DOUBLE_EQ(p, 1.0 - 1e-12);
  }
  Var l = mean(log(add_scalar(negate(d), 1.0)));
  EXPECT_TRUE(std::isfinite(l.value()[0]));
}

TEST(Encoder, ZeroNetworkIsThePrior) {
  ModelBundle b = zero_bundle(3, 2);
  Tape tape;
  Posterior q = encoder_forward(bind(tape, b.encoder, true), tape.constant(Tensor({8, 3}, 2.0)));
  EXPECT_EQ(q.mu.value(), Tensor({8, 2}));
  EXPECT_EQ(q.log_var.value(), Tensor({8, 2}));
}

TEST(Encoder, LogVarIsClamped) {
  ModelBundle b = zero_bundle(3, 2);
  b.encoder.layers().back().bias = Tensor::matrix(1, 4, {0.0, 0.0, 25.0, -25.0});
  Tape tape;
  Posterior q = encoder_forward(bind(tape, b.encoder, true), tape.constant(Tensor({1, 3})));
  EXPECT_EQ(q.log_var.value(), Tensor::matrix(1, 2, {10.0, -10.0}));
}

TEST(Reparameterize, UnitSigmaArithmetic) {
  Tape tape;
  Var mu = tape.constant(Tensor::matrix(1, 2, {1.0, 2.0}));
  Var lv = tape.constant(Tensor::matrix(1, 2, {0.0, 0.0}));
  Var z = reparameterize(mu, lv, Tensor::matrix(1, 2, {0.5, -0.5}));
  EXPECT_EQ(z.value(), Tensor::matrix(1, 2, {1.5, 1.5}));
}

TEST(Reparameterize, ClampedLogVarStaysNearMean) {
  Tape tape;
  Var mu = tape.constant(Tensor::matrix(1, 3, {0.3, -1.0, 4.0}));
  Var lv = tape.constant(Tensor({1, 3}, -10.0));
  Var z = reparameterize(mu, lv, Tensor::matrix(1, 3, {1.0, -1.0, 0.2}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(std::abs(z.value()[i] - mu.value()[i]), 0.007);
}

TEST(Reparameterize, SampleVarianceAtPrior) {
  DeterministicRng rng(42);
  Tape tape;
  Var mu = tape.constant(Tensor({100000, 1}));
  Var lv = tape.constant(Tensor({100000, 1}));
  Reparameterized r = reparameterize(mu, lv, rng);
  double m = 0.0, v = 0.0;
  for (double x : r.z.value().values()) m += x;
  m /= 100000.0;
  for (double x : r.z.value().values()) v += (x - m) * (x - m);
  v /= 100000.0;
  EXPECT_GE(v, 0.97);
  EXPECT_LE(v, 1.03);
  EXPECT_EQ(r.eps.shape(), (Shape{100000, 1}));
}

TEST(GanLoss, KnownValues) {
  const std::vector<double> half{0.5};
  EXPECT_NEAR(gan_loss(half, half), -1.3862943611198906, 1e-12);
  const std::vector<double> real{1.0 - 1e-12}, fake{1e-12};
  EXPECT_NEAR(gan_loss(real, fake), 0.0, 1e-11);
  // Independently recomputed: (ln .9 + ln .8)/2 + (ln .9 + ln .7)/2.
  const std::vector<double> r2{0.9, 0.8}, f2{0.1, 0.3};
  EXPECT_NEAR(gan_loss(r2, f2), -0.39526976328429736, 1e-12);
  EXPECT_THROW(gan_loss(std::vector<double>{}, half), ContractError);
}

TEST(GanLoss, TapedMatchesScalar) {
  Tape tape;
  Var r = tape.constant(Tensor::matrix(2, 1, {0.9, 0.8}));
  Var f = tape.constant(Tensor::matrix(2, 1, {0.1, 0.3}));
  EXPECT_NEAR(gan_loss(r, f).value()[0], -0.39526976328429736, 1e-12);
}

TEST(GanLossProperty, PermutationInvariant) {
  DeterministicRng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> real(9), fake(9);
    for (auto& p : real) p = rng.uniform(0.01, 0.99);
    for (auto& p : fake) p = rng.uniform(0.01, 0.99);
    const double before = gan_loss(real, fake);
    rng.shuffle(real);
    rng.shuffle(fake);
    EXPECT_NEAR(gan_loss(real, fake), before, 1e-12);
  }
}

TEST(GaussianKl, ClosedFormValues) {
  Tape tape;
  EXPECT_EQ(gaussian_kl(tape.constant(Tensor({3, 2})), tape.constant(Tensor({3, 2}))).value()[0], 0.0);
  EXPECT_DOUBLE_EQ(
      gaussian_kl(tape.constant(Tensor::matrix(1, 1, {1.0})), tape.constant(Tensor::matrix(1, 1, {0.0}))).value()[0],
      0.5);
}

// Trapezoid rule for the integral of q log(q/p) on [-10, 10].
double kl_by_quadrature(double mu, double log_var) {
  const double sigma = std::exp(0.5 * log_var);
  const int n = 100000;
  const double lo = -10.0, hi = 10.0, h = (hi - lo) / n;
  auto integrand = [&](double z) {
    const double log_q = -0.5 * std::log(2 * M_PI) - std::log(sigma) - (z - mu) * (z - mu) / (2 * sigma * sigma);
    const double log_p = -0.5 * std::log(2 * M_PI) - z * z / 2;
    return std::exp(log_q) * (log_q - log_p);
  };
  double acc = 0.5 * (integrand(lo) + integrand(hi));
  for (int i = 1; i < n; ++i) acc += integrand(lo + i * h);
  return acc * h;
}

TEST(GaussianKl, MatchesQuadrature) {
  Tape tape;
  const double kl =
      gaussian_kl(tape.constant(Tensor::matrix(1, 1, {0.3})), tape.constant(Tensor::matrix(1, 1, {0.4}))).value()[0];
  EXPECT_NEAR(kl, kl_by_quadrature(0.3, 0.4), 1e-6);
  EXPECT_NEAR(kl, 0.09091234882061607, 1e-12);
}

TEST(GaussianKlProperty, NonNegativeAndZeroOnlyAtPrior) {
  DeterministicRng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    Tape tape;
    Tensor mu = random_tensor(rng, {4, 3}, 3.0);
    Tensor lv = random_tensor(rng, {4, 3}, 10.0);
    const double kl = gaussian_kl(tape.constant(mu), tape.constant(lv)).value()[0];
    EXPECT_GE(kl, -1e-12);
    EXPECT_GT(kl, 1e-12);
  }
}

TEST(VaeLoss, PerfectReconstructionAtPriorIsZero) {
  DeterministicRng rng(4);
  Tape tape;
  Tensor x = random_tensor(rng, {5, 3});
  Var zero = tape.constant(Tensor({5, 2}));
  EXPECT_EQ(vae_loss(tape.constant(x), tape.constant(x), zero, zero, {}).value()[0], 0.0);
}

TEST(VaeLoss, HalfSquaredErrorConvention) {
  Tape tape;
  Var zero = tape.constant(Tensor({1, 1}));
  Var l = vae_loss(tape.constant(Tensor::matrix(1, 2, {1.0, 0.0})), tape.constant(Tensor({1, 2})), zero, zero, {});
  EXPECT_DOUBLE_EQ(l.value()[0], 0.5);
}

TEST(VaeLoss, ShapeMismatchThrows) {
  Tape tape;
  Var zero = tape.constant(Tensor({1, 1}));
  EXPECT_THROW(vae_loss(tape.constant(Tensor({1, 2})), tape.constant(Tensor({1, 3})), zero, zero, {}), ShapeError);
}

// Plain-loop evaluation of the same objective.
double vae_loss_reference(const Tensor& x, const Tensor& logits, const Tensor& mu, const Tensor& lv,
                          std::size_t cat_begin, std::size_t cat_size) {
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double lse_max = -1e300;
    for (std::size_t c = cat_begin; c < cat_begin + cat_size; ++c) lse_max = std::max(lse_max, logits.at(r, c));
    double z = 0.0;
    for (std::size_t c = cat_begin; c < cat_begin + cat_size; ++c) z += std::exp(logits.at(r, c) - lse_max);
    const double lse = lse_max + std::log(z);
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (c >= cat_begin && c < cat_begin + cat_size)
        total -= x.at(r, c) * (logits.at(r, c) - lse);
      else
        total += 0.5 * (x.at(r, c) - logits.at(r, c)) * (x.at(r, c) - logits.at(r, c));
    }
    for (std::size_t j = 0; j < mu.cols(); ++j) {
      const double m = mu.at(r, j), l = lv.at(r, j);
      total += 0.5 * (m * m + std::exp(l) - 1.0 - l);
    }
  }
  return total / static_cast<double>(x.rows());
}

TEST(VaeLoss, MatchesReferenceImplementation) {
  DeterministicRng rng(99);
  const FeatureLayout layout{2, 3};
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(rng, {4, 7});
    for (std::size_t r = 0; r < 4; ++r) {
      const std::size_t hot = rng.uniform_below(3);
      for (std::size_t c = 0; c < 3; ++c) x.at(r, 2 + c) = c == hot ? 1.0 : 0.0;
    }
    Tensor xh = random_tensor(rng, {4, 7}, 2.0);
    Tensor mu = random_tensor(rng, {4, 3});
    Tensor lv = random_tensor(rng, {4, 3});
    Tape tape;
    const double got =
        vae_loss(tape.constant(x), tape.constant(xh), tape.constant(mu), tape.constant(lv), layout).value()[0];
    EXPECT_NEAR(got, vae_loss_reference(x, xh, mu, lv, 2, 3), 1e-9);
  }
}

TEST(JointLoss, WeightedSum) {
  EXPECT_EQ(joint_loss(-1.3863, 0.5, {.lambda = 0.0}), -1.3863);
  EXPECT_NEAR(joint_loss(-1.3863, 0.5, {.lambda = 2.0}), -0.3863, 1e-12);
  EXPECT_EQ(joint_loss(-0.7, 0.0, {.lambda = 1.0}), -0.7);
  EXPECT_THROW(joint_loss(1.0, 1.0, {.lambda = -0.1}), ContractError);
}

TEST(JointLossProperty, LinearInVaeTermWithSlopeLambda) {
  DeterministicRng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const double lambda = rng.uniform(0.0, 5.0);
    const double gan = rng.uniform(-3.0, 0.0);
    const double v1 = rng.uniform(0.0, 10.0), v2 = rng.uniform(0.0, 10.0);
    const double slope = (joint_loss(gan, v2, {.lambda = lambda}) - joint_loss(gan, v1, {.lambda = lambda})) / (v2 - v1);
    EXPECT_NEAR(slope, lambda, 1e-9);
  }
}

// All four networks' parameters as one flat list, plus a way to rebind them.
struct FlatBundle {
  ModelBundle bundle;
  std::vector<Tensor> params;
  std::vector<std::size_t> offsets;  // start of each network in params

  explicit FlatBundle(ModelBundle b) : bundle(std::move(b)) {
    for (const Mlp* m : nets()) {
      offsets.push_back(params.size());
      for (const Tensor* p : m->parameters()) params.push_back(*p);
    }
  }
  std::vector<const Mlp*> nets() const {
    return {&bundle.generator, &bundle.discriminator, &bundle.encoder, &bundle.decoder};
  }
  BoundMlp bound(std::size_t net, std::span<const Var> leaves) const {
    const Mlp* m = nets()[net];
    BoundMlp b{m, {}};
    const std::size_t n = m->parameters().size();
    b.params.assign(leaves.begin() + offsets[net], leaves.begin() + offsets[net] + n);
    return b;
  }
};

TEST(LossGradients, AllLossesPassFiniteDifferenceCheck) {
  DeterministicRng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const FeatureLayout layout{1, 3};
    FlatBundle fb(ModelBundle::create(small_spec(6, 2, layout), rng));
    const Tensor real = random_tensor(rng, {4, 6});
    const Tensor noise = rng.standard_normal({4, 2});
    const Tensor eps = rng.standard_normal({4, 2});

    ScalarFunction gan = [&](Tape& tape, std::span<const Var> p) {
      Var fake = generator_forward(fb.bound(0, p), tape.constant(noise));
      BoundMlp d = fb.bound(1, p);
      return gan_loss(discriminator_forward(d, tape.constant(real)), discriminator_forward(d, fake));
    };
    ScalarFunction vae = [&](Tape& tape, std::span<const Var> p) {
      Var x = tape.constant(real);
      Posterior q = encoder_forward(fb.bound(2, p), x);
      Var z = reparameterize(q.mu, q.log_var, eps);
      return vae_loss(x, fb.bound(3, p).forward(z), q.mu, q.log_var, layout);
    };
    EXPECT_LT(finite_difference_check(gan, fb.params, 1e-5), 1e-4);
    EXPECT_LT(finite_difference_check(gan, fb.params, 1e-4), 1e-4);
    EXPECT_LT(finite_difference_check(vae, fb.params, 1e-5), 1e-4);
    for (double lambda : {0.0, 0.5, 2.0}) {
      ScalarFunction joint = [&](Tape& tape, std::span<const Var> p) {
        return joint_loss(gan(tape, p), vae(tape, p), {.lambda = lambda});
      };
      EXPECT_LT(finite_difference_check(joint, fb.params, 1e-5), 1e-4) << "lambda " << lambda;
    }
  }
}

TEST(Degenerate, ZeroNetworksGiveConstantReconstruction) {
  ModelBundle b = zero_bundle(4, 3);
  DeterministicRng rng(6);
  Tensor first, second;
  for (Tensor* out : {&first, &second}) {
    Tape tape;
    Posterior q = encoder_forward(bind(tape, b.encoder, true), tape.constant(random_tensor(rng, {3, 4}, 5.0)));
    Var z = reparameterize(q.mu, q.log_var, rng).z;
    *out = b.decoder.infer(z.value());
  }
  EXPECT_EQ(first, second);
  EXPECT_EQ(reconstruct_mean(b, Tensor({2, 4}, 1.0)), reconstruct_mean(b, Tensor({2, 4}, -3.0)));
}

TEST(Inference, TapeFreeMatchesTapedForward) {
  DeterministicRng rng(14);
  ModelBundle b = ModelBundle::create(BundleSpec{}, rng);
  const Tensor x = random_tensor(rng, {5, 12});
  Tape tape;
  Var d = discriminator_forward(bind(tape, b.discriminator, false), tape.constant(x));
  EXPECT_EQ(d.value(), discriminate(b, x));
}

}  // namespace
}  // namespace flowguard
