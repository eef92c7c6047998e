#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "flowguard/diffcore/kernels.hpp"
#include "flowguard/diffcore/rng.hpp"
#include "flowguard/diffcore/tape.hpp"

namespace flowguard {

enum class Activation : std::uint8_t { leaky_relu, tanh, sigmoid, identity };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::leaky_relu: return "leaky-relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "?";
}

struct MlpSpec {
  std::vector<std::size_t> widths;
  Activation hidden = Activation::leaky_relu;
  Activation output = Activation::identity;

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }

  void validate() const {
    if (widths.size() < 2) throw ContractError("mlp spec: need at least an input and an output width");
    for (std::size_t w : widths)
      if (w == 0) throw ContractError("mlp spec: widths must be positive");
    if (hidden == Activation::sigmoid || hidden == Activation::identity)
      throw ContractError("mlp spec: hidden activation must be leaky-relu or tanh");
    if (output == Activation::leaky_relu) throw ContractError("mlp spec: output activation must be sigmoid, identity or tanh");
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct DenseLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]
};

inline Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::leaky_relu:
      return kernels::map(x, [](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    case Activation::tanh: return kernels::map(x, [](double v) { return std::tanh(v); });
    case Activation::sigmoid: return kernels::map(x, kernels::logistic);
    case Activation::identity: return x;
  }
  return x;
}

inline Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::leaky_relu: return leaky_relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::identity: return x;
  }
  return x;
}

class Mlp {
 public:
  Mlp() = default;

  // All weights and biases zero.
  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    for (std::size_t i = 0; i + 1 < spec_.widths.size(); ++i)
      layers_.push_back({Tensor({spec_.widths[i], spec_.widths[i + 1]}), Tensor({1, spec_.widths[i + 1]})});
  }

  // Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  static Mlp glorot(MlpSpec spec, DeterministicRng& rng) {
    Mlp m(std::move(spec));
    for (auto& layer : m.layers_) {
      const double fan_in = static_cast<double>(layer.weight.rows());
      const double fan_out = static_cast<double>(layer.weight.cols());
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& w : layer.weight.values()) w = rng.uniform(-limit, limit);
    }
    return m;
  }

  const MlpSpec& spec() const noexcept { return spec_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::size_t input_width() const { return spec_.input_width(); }
  std::size_t output_width() const { return spec_.output_width(); }

  // Weight, bias, weight, bias, ... in layer order.
  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  // Tape-free forward pass.
  Tensor infer(const Tensor& x) const {
    check_input(x.shape());
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = kernels::add_bias(kernels::matmul(h, layers_[i].weight), layers_[i].bias);
      h = activate(h, i + 1 == layers_.size() ? spec_.output : spec_.hidden);
    }
    return h;
  }

  void check_input(const Shape& shape) const {
    if (shape.size() != 2 || shape[1] != input_width())
      throw ShapeError("mlp: expected input width " + std::to_string(input_width()) + ", got " + shape_string(shape));
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (!(a.spec_ == b.spec_) || a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i)
      if (a.layers_[i].weight != b.layers_[i].weight || a.layers_[i].bias != b.layers_[i].bias) return false;
    return true;
  }

 private:
  MlpSpec spec_;
  std::vector<DenseLayer> layers_;
};

// An Mlp whose parameters have been placed on a tape.
struct BoundMlp {
  const Mlp* mlp = nullptr;
  std::vector<Var> params;  // same order as Mlp::parameters()

  Var forward(Var x) const {
    mlp->check_input(x.shape());
    const std::size_t n = mlp->layers().size();
    Var h = x;
    for (std::size_t i = 0; i < n; ++i) {
      h = add_bias(matmul(h, params[2 * i]), params[2 * i + 1]);
      h = activate(h, i + 1 == n ? mlp->spec().output : mlp->spec().hidden);
    }
    return h;
  }

  std::vector<Tensor> gradients(const GradientMap& grads) const {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (Var p : params) out.push_back(grads.at(p));
    return out;
  }
};

// `trainable` parameters appear in the GradientMap; frozen ones still pass
// gradients through to their inputs.
inline BoundMlp bind(Tape& tape, const Mlp& mlp, bool trainable) {
  BoundMlp b{&mlp, {}};
  for (const Tensor* p : mlp.parameters()) b.params.push_back(trainable ? tape.parameter(*p) : tape.constant(*p));
  return b;
}

// Position of the one-hot categorical block inside a feature vector. Every
// other coordinate is continuous.
struct FeatureLayout {
  std::size_t categorical_offset = 0;
  std::size_t categorical_size = 0;

  bool has_categorical() const { return categorical_size > 0; }

  // Continuous [begin, end) column ranges for a feature width.
  std::vector<std::pair<std::size_t, std::size_t>> continuous_segments(std::size_t width) const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (!has_categorical()) {
      out.emplace_back(0, width);
      return out;
    }
    if (categorical_offset > 0) out.emplace_back(0, categorical_offset);
    const std::size_t after = categorical_offset + categorical_size;
    if (after < width) out.emplace_back(after, width);
    return out;
  }

  friend bool operator==(const FeatureLayout&, const FeatureLayout&) = default;
};

struct BundleSpec {
  std::size_t feature_dim = 12;
  std::size_t latent_dim = 8;
  std::vector<std::size_t> generator_hidden{64, 64};
  std::vector<std::size_t> discriminator_hidden{64, 32};
  std::vector<std::size_t> encoder_hidden{64};
  std::vector<std::size_t> decoder_hidden{64};
  Activation hidden = Activation::leaky_relu;
  FeatureLayout layout;
};

inline std::vector<std::size_t> chain_widths(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

// Generator G, discriminator D, encoder q(z|x) and decoder p(x|z).
struct ModelBundle {
  Mlp generator;      // d_z -> d_x
  Mlp discriminator;  // d_x -> 1, sigmoid
  Mlp encoder;        // d_x -> 2 d_z  (mu | log_var)
  Mlp decoder;        // d_z -> d_x
  std::size_t latent_dim = 0;
  std::size_t feature_dim = 0;
  FeatureLayout layout;

  static ModelBundle create(const BundleSpec& s, DeterministicRng& rng) {
    if (s.feature_dim == 0 || s.latent_dim == 0) throw ContractError("bundle: dimensions must be positive");
    if (s.layout.categorical_offset + s.layout.categorical_size > s.feature_dim)
      throw ContractError("bundle: categorical block exceeds feature width");
    ModelBundle b;
    b.latent_dim = s.latent_dim;
    b.feature_dim = s.feature_dim;
    b.layout = s.layout;
    b.generator = Mlp::glorot({chain_widths(s.latent_dim, s.generator_hidden, s.feature_dim), s.hidden,
                               Activation::identity},
                              rng);
    b.discriminator =
        Mlp::glorot({chain_widths(s.feature_dim, s.discriminator_hidden, 1), s.hidden, Activation::sigmoid}, rng);
    b.encoder = Mlp::glorot(
        {chain_widths(s.feature_dim, s.encoder_hidden, 2 * s.latent_dim), s.hidden, Activation::identity}, rng);
    b.decoder = Mlp::glorot(
        {chain_widths(s.latent_dim, s.decoder_hidden, s.feature_dim), s.hidden, Activation::identity}, rng);
    return b;
  }

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

enum class GeneratorObjective : std::uint8_t { non_saturating, minimax };

struct JointConfig {
  double lambda = 1.0;
  GeneratorObjective generator_objective = GeneratorObjective::non_saturating;
};

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kLogVarBound = 10.0;

namespace detail {
inline void require_width(Var x, std::size_t width, const char* what) {
  if (x.shape().size() != 2 || x.shape()[1] != width)
    throw ShapeError(std::string(what) + ": expected width " + std::to_string(width) + ", got " +
                     shape_string(x.shape()));
}
}  // namespace detail

inline Var generator_forward(const BoundMlp& generator, Var z) {
  detail::require_width(z, generator.mlp->input_width(), "generator");
  return generator.forward(z);
}

// Probabilities clamped to [1e-12, 1 - 1e-12].
inline Var discriminator_forward(const BoundMlp& discriminator, Var x) {
  detail::require_width(x, discriminator.mlp->input_width(), "discriminator");
  return clamp(discriminator.forward(x), kProbFloor, 1.0 - kProbFloor);
}

struct Posterior {
  Var mu;
  Var log_var;
};

// log_var clamped to [-10, 10].
inline Posterior encoder_forward(const BoundMlp& encoder, Var x) {
  detail::require_width(x, encoder.mlp->input_width(), "encoder");
  Var out = encoder.forward(x);
  const std::size_t d = encoder.mlp->output_width() / 2;
  return {slice_cols(out, 0, d), clamp(slice_cols(out, d, 2 * d), -kLogVarBound, kLogVarBound)};
}

// z = mu + exp(log_var / 2) * eps with a caller-supplied eps.
inline Var reparameterize(Var mu, Var log_var, const Tensor& eps) {
  if (mu.shape() != log_var.shape() || mu.shape() != eps.shape())
    throw ShapeError("reparameterize: shapes " + shape_string(mu.shape()) + ", " + shape_string(log_var.shape()) +
                     ", " + shape_string(eps.shape()) + " differ");
  Var sigma = exp(scale(log_var, 0.5));
  return add(mu, mul(sigma, mu.tape->constant(eps)));
}

struct Reparameterized {
  Var z;
  Tensor eps;  // kept so a frozen-noise replay is possible
};

inline Reparameterized reparameterize(Var mu, Var log_var, DeterministicRng& rng) {
  Tensor eps = rng.standard_normal(mu.shape());
  Var z = reparameterize(mu, log_var, eps);
  return {z, std::move(eps)};
}

// mean(log D(x)) + mean(log(1 - D(G(z)))).
inline Var gan_loss(Var d_real, Var d_fake) {
  return add(mean(log(d_real)), mean(log(add_scalar(negate(d_fake), 1.0))));
}

inline double gan_loss(std::span<const double> d_real, std::span<const double> d_fake) {
  if (d_real.empty() || d_fake.empty()) throw ContractError("gan_loss: empty batch");
  double real = 0.0, fake = 0.0;
  for (double p : d_real) real += std::log(std::max(p, kLogFloor));
  for (double p : d_fake) fake += std::log(std::max(1.0 - p, kLogFloor));
  return real / static_cast<double>(d_real.size()) + fake / static_cast<double>(d_fake.size());
}

// Quantity the generator minimises.
inline Var generator_loss(Var d_fake, GeneratorObjective objective) {
  if (objective == GeneratorObjective::non_saturating) return negate(mean(log(d_fake)));
  return mean(log(add_scalar(negate(d_fake), 1.0)));
}

// Batch mean of KL(N(mu, sigma^2) || N(0, I)).
inline Var gaussian_kl(Var mu, Var log_var) {
  if (mu.shape() != log_var.shape())
    throw ShapeError("gaussian_kl: shapes " + shape_string(mu.shape()) + " and " + shape_string(log_var.shape()));
  const double batch = static_cast<double>(mu.value().rows());
  Var inner = sub(sub(add_scalar(log_var, 1.0), square(mu)), exp(log_var));
  return scale(sum(inner), -0.5 / batch);
}

// Batch-averaged 1/2 squared error over continuous features plus
// cross-entropy over the categorical block (x_hat holds logits there).
inline Var reconstruction_loss(Var x, Var x_hat, const FeatureLayout& layout) {
  if (x.shape() != x_hat.shape())
    throw ShapeError("vae_loss: x " + shape_string(x.shape()) + " and x_hat " + shape_string(x_hat.shape()) +
                     " differ");
  const std::size_t width = x.shape().back();
  const double batch = static_cast<double>(x.value().rows());
  Var total = x.tape->constant(Tensor::scalar(0.0));
  for (auto [b, e] : layout.continuous_segments(width)) {
    Var diff = sub(slice_cols(x, b, e), slice_cols(x_hat, b, e));
    total = add(total, scale(sum(square(diff)), 0.5 / batch));
  }
  if (layout.has_categorical()) {
    const std::size_t b = layout.categorical_offset, e = b + layout.categorical_size;
    Var ce = sum(mul(slice_cols(x, b, e), log_softmax(slice_cols(x_hat, b, e))));
    total = add(total, scale(ce, -1.0 / batch));
  }
  return total;
}

inline Var vae_loss(Var x, Var x_hat, Var mu, Var log_var, const FeatureLayout& layout) {
  return add(reconstruction_loss(x, x_hat, layout), gaussian_kl(mu, log_var));
}

inline double joint_loss(double gan_value, double vae_value, const JointConfig& config) {
  if (!(config.lambda >= 0.0)) throw ContractError("joint_loss: lambda must be non-negative");
  return gan_value + config.lambda * vae_value;
}

inline Var joint_loss(Var gan_value, Var vae_value, const JointConfig& config) {
  if (!(config.lambda >= 0.0)) throw ContractError("joint_loss: lambda must be non-negative");
  return add(gan_value, scale(vae_value, config.lambda));
}

// Deterministic reconstruction decoder(mu(x)) with the categorical block
// mapped back to probabilities.
inline Tensor reconstruct_mean(const ModelBundle& bundle, const Tensor& x) {
  const Tensor enc = bundle.encoder.infer(x);
  const Tensor mu = kernels::slice_cols(enc, 0, bundle.latent_dim);
  Tensor out = bundle.decoder.infer(mu);
  if (bundle.layout.has_categorical()) {
    const std::size_t b = bundle.layout.categorical_offset, e = b + bundle.layout.categorical_size;
    const Tensor probs = kernels::map(kernels::log_softmax_rows(kernels::slice_cols(out, b, e)),
                                      [](double v) { return std::exp(v); });
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = b; c < e; ++c) out.at(r, c) = probs.at(r, c - b);
  }
  return out;
}

// Tape-free D(x), clamped like discriminator_forward.
inline Tensor discriminate(const ModelBundle& bundle, const Tensor& x) {
  return kernels::map(bundle.discriminator.infer(x),
                      [](double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); });
}

inline Tensor generate(const ModelBundle& bundle, const Tensor& z) { return bundle.generator.infer(z); }

}  // namespace flowguard
