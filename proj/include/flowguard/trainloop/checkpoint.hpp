#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "flowguard/detect.hpp"
#include "flowguard/errors.hpp"
#include "flowguard/nets.hpp"
#include "flowguard/payflow/features.hpp"
#include "flowguard/trainloop/train.hpp"

namespace flowguard {

// Binary layout, all integers and doubles little-endian, doubles as their
// IEEE-754 bit patterns:
//   magic      8 bytes "FGCKPT\r\n"
//   version    u32
//   bundle     u64 feature_dim, u64 latent_dim, u64 categorical_offset,
//              u64 categorical_size, then generator, discriminator,
//              encoder, decoder, each as:
//                u32 width count, u64 widths..., u8 hidden, u8 output,
//                per layer: weight tensor, bias tensor
//              tensor = u32 rank, u64 dims..., f64 values (row-major)
//   stats      u32 count, f64 means..., f64 stddevs...
//   config     u64 epochs, u64 batch_size, f64 lr_d, f64 lr_g, f64 lr_vae,
//              f64 lambda, u64 d_steps_per_g_step, u64 seed, u8 objective
//   scoring    f64 alpha, f64 recon_scale, u8 has_threshold, f64 threshold
//   rng        4 x (u64 counter, u8 has_spare, f64 spare)
//   end        4 bytes "END!"
inline constexpr std::string_view kCheckpointMagic{"FGCKPT\r\n", 8};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelBundle bundle;
  payflow::NormalizationStats stats;
  TrainConfig config;
  detect::ScoreWeights weights;
  std::optional<double> threshold;
  std::array<DeterministicRng::State, kTrainStreamCount> rng_states{};

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace ckpt_detail {

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void size(std::size_t v) { u64(static_cast<std::uint64_t>(v)); }

  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) size(d);
    for (double v : t.values()) f64(v);
  }

  void mlp(const Mlp& m) {
    const auto& spec = m.spec();
    u32(static_cast<std::uint32_t>(spec.widths.size()));
    for (std::size_t w : spec.widths) size(w);
    u8(static_cast<std::uint8_t>(spec.hidden));
    u8(static_cast<std::uint8_t>(spec.output));
    for (const auto& layer : m.layers()) {
      tensor(layer.weight);
      tensor(layer.bias);
    }
  }

  const std::string& str() const { return out_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

// Bounds on declared sizes so corrupt headers fail fast instead of
// requesting huge allocations.
inline constexpr std::uint64_t kMaxDim = 1u << 20;
inline constexpr std::uint32_t kMaxRank = 8;

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::size_t dim() {
    const std::uint64_t v = u64();
    if (v == 0 || v > kMaxDim) fail("implausible dimension " + std::to_string(v));
    return static_cast<std::size_t>(v);
  }

  Tensor tensor(const Shape& expected) {
    const std::uint32_t rank = u32();
    if (rank == 0 || rank > kMaxRank) fail("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = dim();
    if (shape != expected)
      fail("tensor shape " + shape_string(shape) + " does not match declared " + shape_string(expected));
    Tensor t(shape);
    for (double& v : t.values()) v = f64();
    return t;
  }

  Mlp mlp() {
    MlpSpec spec;
    const std::uint32_t n = u32();
    if (n < 2 || n > 64) fail("implausible layer count " + std::to_string(n));
    spec.widths.resize(n);
    for (auto& w : spec.widths) w = dim();
    spec.hidden = activation();
    spec.output = activation();
    Mlp m(spec);
    auto params = m.parameters();
    for (Tensor* p : params) *p = tensor(p->shape());
    return m;
  }

  Activation activation() {
    const std::uint8_t a = u8();
    if (a > static_cast<std::uint8_t>(Activation::identity)) fail("unknown activation code " + std::to_string(a));
    return static_cast<Activation>(a);
  }

  bool at_end() const { return pos_ == data_.size(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointParseError("checkpoint: " + what + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n)
      throw CheckpointParseError("checkpoint: truncated, needed " + std::to_string(n) + " bytes at offset " +
                                 std::to_string(pos_) + " of " + std::to_string(data_.size()));
  }
  std::uint64_t le(int n) {
    const auto s = bytes(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

inline constexpr std::string_view kEndMarker{"END!", 4};

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  ckpt_detail::Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);

  const auto& b = c.bundle;
  w.size(b.feature_dim);
  w.size(b.latent_dim);
  w.size(b.layout.categorical_offset);
  w.size(b.layout.categorical_size);
  for (const Mlp* m : {&b.generator, &b.discriminator, &b.encoder, &b.decoder}) w.mlp(*m);

  w.u32(static_cast<std::uint32_t>(c.stats.mean.size()));
  for (double v : c.stats.mean) w.f64(v);
  for (double v : c.stats.stddev) w.f64(v);

  const auto& cfg = c.config;
  w.size(cfg.epochs);
  w.size(cfg.batch_size);
  w.f64(cfg.lr_d);
  w.f64(cfg.lr_g);
  w.f64(cfg.lr_vae);
  w.f64(cfg.lambda);
  w.size(cfg.d_steps_per_g_step);
  w.u64(cfg.seed);
  w.u8(static_cast<std::uint8_t>(cfg.generator_objective));

  w.f64(c.weights.alpha);
  w.f64(c.weights.recon_scale);
  w.u8(c.threshold.has_value() ? 1 : 0);
  w.f64(c.threshold.value_or(0.0));

  for (const auto& s : c.rng_states) {
    w.u64(s.counter);
    w.u8(s.has_spare ? 1 : 0);
    w.f64(s.spare);
  }
  w.bytes(ckpt_detail::kEndMarker);
  return w.str();
}

// Either a complete checkpoint or an exception; never a partial model.
inline Checkpoint deserialize_checkpoint(std::string_view data) {
  ckpt_detail::Reader r(data);
  if (data.size() < kCheckpointMagic.size() || data.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    throw CheckpointParseError("checkpoint: bad magic bytes, not a checkpoint file");
  r.bytes(kCheckpointMagic.size());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint: format version " + std::to_string(version) +
                                 " is not supported (this build reads version " +
                                 std::to_string(kCheckpointVersion) + ")");

  Checkpoint c;
  auto& b = c.bundle;
  b.feature_dim = r.dim();
  b.latent_dim = r.dim();
  b.layout.categorical_offset = static_cast<std::size_t>(r.u64());
  b.layout.categorical_size = static_cast<std::size_t>(r.u64());
  if (b.layout.categorical_offset + b.layout.categorical_size > b.feature_dim) r.fail("categorical block out of range");
  b.generator = r.mlp();
  b.discriminator = r.mlp();
  b.encoder = r.mlp();
  b.decoder = r.mlp();
  auto expect_io = [&](const Mlp& m, std::size_t in, std::size_t out, const char* name) {
    if (m.spec().widths.front() != in || m.spec().widths.back() != out)
      r.fail(std::string(name) + " widths do not match the bundle dimensions");
  };
  expect_io(b.generator, b.latent_dim, b.feature_dim, "generator");
  expect_io(b.discriminator, b.feature_dim, 1, "discriminator");
  expect_io(b.encoder, b.feature_dim, 2 * b.latent_dim, "encoder");
  expect_io(b.decoder, b.latent_dim, b.feature_dim, "decoder");

  const std::uint32_t n_stats = r.u32();
  if (n_stats > ckpt_detail::kMaxDim) r.fail("implausible stats length");
  c.stats.mean.resize(n_stats);
  c.stats.stddev.resize(n_stats);
  for (double& v : c.stats.mean) v = r.f64();
  for (double& v : c.stats.stddev) v = r.f64();

  auto& cfg = c.config;
  cfg.epochs = static_cast<std::size_t>(r.u64());
  cfg.batch_size = static_cast<std::size_t>(r.u64());
  cfg.lr_d = r.f64();
  cfg.lr_g = r.f64();
  cfg.lr_vae = r.f64();
  cfg.lambda = r.f64();
  cfg.d_steps_per_g_step = static_cast<std::size_t>(r.u64());
  cfg.seed = r.u64();
  const std::uint8_t objective = r.u8();
  if (objective > static_cast<std::uint8_t>(GeneratorObjective::minimax)) r.fail("unknown generator objective");
  cfg.generator_objective = static_cast<GeneratorObjective>(objective);

  c.weights.alpha = r.f64();
  c.weights.recon_scale = r.f64();
  const std::uint8_t has_threshold = r.u8();
  const double threshold = r.f64();
  if (has_threshold > 1) r.fail("bad threshold flag");
  if (has_threshold) c.threshold = threshold;

  for (auto& s : c.rng_states) {
    s.counter = r.u64();
    const std::uint8_t spare = r.u8();
    if (spare > 1) r.fail("bad rng flag");
    s.has_spare = spare == 1;
    s.spare = r.f64();
  }
  if (r.bytes(ckpt_detail::kEndMarker.size()) != ckpt_detail::kEndMarker) r.fail("missing end marker");
  if (!r.at_end()) r.fail("trailing bytes after end marker");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw WriteError("write failed for checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReadError("cannot open checkpoint '" + path + "'");
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(data);
}

inline std::string describe(const Checkpoint& c) {
  std::ostringstream s;
  auto widths = [](const Mlp& m) {
    std::string out;
    for (std::size_t i = 0; i < m.spec().widths.size(); ++i)
      out += (i ? "-" : "") + std::to_string(m.spec().widths[i]);
    return out + " (" + activation_name(m.spec().hidden) + ", out " + activation_name(m.spec().output) + ")";
  };
  s << "format version  " << kCheckpointVersion << '\n'
    << "generator       " << widths(c.bundle.generator) << '\n'
    << "discriminator   " << widths(c.bundle.discriminator) << '\n'
    << "encoder         " << widths(c.bundle.encoder) << '\n'
    << "decoder         " << widths(c.bundle.decoder) << '\n'
    << "epochs          " << c.config.epochs << '\n'
    << "batch size      " << c.config.batch_size << '\n'
    << "lambda          " << c.config.lambda << '\n'
    << "seed            " << c.config.seed << '\n'
    << "alpha           " << c.weights.alpha << '\n'
    << "recon scale     " << c.weights.recon_scale << '\n'
    << "threshold       " << (c.threshold ? std::to_string(*c.threshold) : std::string("(none)")) << '\n';
  return s.str();
}

}  // namespace flowguard
