#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "flowguard/diffcore/rng.hpp"
#include "flowguard/diffcore/tape.hpp"

namespace flowguard {
namespace {

Tensor random_tensor(DeterministicRng& rng, Shape shape, double spread = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-spread, spread);
  return t;
}

// Moves values away from the leaky-relu kink.
Tensor away_from_zero(Tensor t) {
  for (double& v : t.values())
    if (std::abs(v) < 1e-3) v = v < 0 ? -0.5 : 0.5;
  return t;
}

TEST(Primitives, MatmulByHand) {
  Tape tape;
  Var a = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var b = tape.constant(Tensor::matrix(2, 1, {1, 1}));
  Var c = matmul(a, b);
  EXPECT_EQ(c.value(), Tensor::matrix(2, 1, {3, 7}));
  EXPECT_EQ(tape.size(), 3u);
}

TEST(Primitives, SigmoidAndLeakyRelu) {
  Tape tape;
  EXPECT_DOUBLE_EQ(sigmoid(tape.constant(Tensor::scalar(0.0))).value()[0], 0.5);
  EXPECT_DOUBLE_EQ(leaky_relu(tape.constant(Tensor::scalar(-2.0)), 0.2).value()[0], -0.4);
  EXPECT_DOUBLE_EQ(leaky_relu(tape.constant(Tensor::scalar(-2.0))).value()[0], -0.4);
}

TEST(Primitives, LogClampsItsArgument) {
  Tape tape;
  const double v = log(tape.constant(Tensor::scalar(0.0))).value()[0];
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_DOUBLE_EQ(v, std::log(1e-12));
}

TEST(Primitives, ShapeErrorNamesOperationAndShapes) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(add(a, tape.constant(Tensor({3, 2}))), ShapeError);
  EXPECT_THROW(add_bias(a, tape.constant(Tensor({1, 2}))), ShapeError);
  EXPECT_THROW(slice_cols(a, 2, 5), ShapeError);
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var w = tape.parameter(Tensor::scalar(3.0));
  GradientMap g = tape.backward(sum(square(w)));
  EXPECT_DOUBLE_EQ(g.at(w)[0], 6.0);
}

TEST(Backward, SigmoidAtZero) {
  Tape tape;
  Var w = tape.parameter(Tensor::scalar(0.0));
  Var c = tape.constant(Tensor::scalar(1.0));
  GradientMap g = tape.backward(mul(sigmoid(w), c));
  EXPECT_DOUBLE_EQ(g.at(w)[0], 0.25);
}

TEST(Backward, NonScalarRootIsRejected) {
  Tape tape;
  Var w = tape.parameter(Tensor({2, 2}, 1.0));
  EXPECT_THROW(tape.backward(square(w)), ContractError);
}

TEST(Backward, NonContributingLeafGetsZeros) {
  Tape tape;
  Var used = tape.parameter(Tensor::scalar(2.0));
  Var unused = tape.parameter(Tensor({2, 3}, 5.0));
  GradientMap g = tape.backward(square(used));
  ASSERT_TRUE(g.contains(unused.id));
  EXPECT_EQ(g.at(unused), Tensor({2, 3}, 0.0));
  EXPECT_EQ(g.size(), 2u);
}

TEST(Backward, ThreeLayerMlpMatchesFiniteDifferences) {
  DeterministicRng rng(11);
  std::vector<Tensor> params = {random_tensor(rng, {4, 6}), random_tensor(rng, {1, 6}), random_tensor(rng, {6, 5}),
                                random_tensor(rng, {1, 5}), random_tensor(rng, {5, 1}), random_tensor(rng, {1, 1})};
  const Tensor input = random_tensor(rng, {7, 4}, 2.0);
  ScalarFunction loss = [&](Tape& tape, std::span<const Var> p) {
    Var x = tape.constant(input);
    Var h1 = tanh(add_bias(matmul(x, p[0]), p[1]));
    Var h2 = tanh(add_bias(matmul(h1, p[2]), p[3]));
    Var out = sigmoid(add_bias(matmul(h2, p[4]), p[5]));
    return mean(log(out));
  };
  EXPECT_LT(finite_difference_check(loss, params, 1e-5), 1e-4);
}

TEST(FiniteDifference, QuadraticIsExact) {
  std::vector<Tensor> params = {Tensor::scalar(3.0)};
  ScalarFunction f = [](Tape&, std::span<const Var> p) { return sum(square(p[0])); };
  EXPECT_LT(finite_difference_check(f, params, 1e-5), 1e-8);
}

TEST(FiniteDifference, RejectsNonDeterministicFunction) {
  int calls = 0;
  std::vector<Tensor> params = {Tensor::scalar(1.0)};
  ScalarFunction f = [&](Tape& tape, std::span<const Var> p) {
    ++calls;
    return add(sum(p[0]), tape.constant(Tensor::scalar(static_cast<double>(calls))));
  };
  EXPECT_THROW(finite_difference_check(f, params, 1e-5), ContractError);
  EXPECT_THROW(finite_difference_check(f, params, 0.0), ContractError);
}

// Each primitive's analytic gradient against central differences on random
// inputs. The scalar wrapper sum(w * op(x)) exercises the full Jacobian.
TEST(PrimitiveProperty, GradientsMatchFiniteDifferences) {
  DeterministicRng rng(2024);
  using Unary = std::function<Var(Var)>;
  const std::vector<std::pair<const char*, Unary>> unary = {
      {"leaky-relu", [](Var x) { return leaky_relu(x); }},
      {"sigmoid", [](Var x) { return sigmoid(x); }},
      {"tanh", [](Var x) { return tanh(x); }},
      {"exp", [](Var x) { return exp(x); }},
      {"log", [](Var x) { return log(add_scalar(square(x), 0.5)); }},
      {"negate", [](Var x) { return negate(x); }},
      {"square", [](Var x) { return square(x); }},
      {"sum", [](Var x) { return sum(x); }},
      {"mean", [](Var x) { return mean(x); }},
      {"clamp", [](Var x) { return clamp(x, -0.7, 0.7); }},
      {"scale", [](Var x) { return scale(x, -1.7); }},
      {"add-scalar", [](Var x) { return add_scalar(x, 0.3); }},
      {"slice-cols", [](Var x) { return slice_cols(x, 1, 3); }},
      {"log-softmax", [](Var x) { return log_softmax(x); }},
  };
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = away_from_zero(random_tensor(rng, {3, 4}));
    // Keep clamp inputs off its bounds.
    for (double& v : x.values())
      if (std::abs(std::abs(v) - 0.7) < 1e-3) v *= 0.9;
    for (const auto& [name, op] : unary) {
      Tape probe;
      const Shape out_shape = op(probe.constant(x)).shape();
      const Tensor weights = random_tensor(rng, out_shape);
      ScalarFunction f = [&](Tape& tape, std::span<const Var> p) {
        return sum(mul(op(p[0]), tape.constant(weights)));
      };
      std::vector<Tensor> params = {x};
      EXPECT_LT(finite_difference_check(f, params, 1e-5), 1e-4) << name << " trial " << trial;
    }

    std::vector<Tensor> pair = {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})};
    ScalarFunction mm = [](Tape&, std::span<const Var> p) { return sum(square(matmul(p[0], p[1]))); };
    EXPECT_LT(finite_difference_check(mm, pair, 1e-5), 1e-4) << "matmul";

    std::vector<Tensor> same = {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})};
    ScalarFunction ad = [](Tape&, std::span<const Var> p) { return sum(square(add(p[0], p[1]))); };
    ScalarFunction ml = [](Tape&, std::span<const Var> p) { return sum(square(mul(p[0], p[1]))); };
    EXPECT_LT(finite_difference_check(ad, same, 1e-5), 1e-4) << "add";
    EXPECT_LT(finite_difference_check(ml, same, 1e-5), 1e-4) << "mul";

    std::vector<Tensor> biased = {random_tensor(rng, {3, 4}), random_tensor(rng, {1, 4})};
    ScalarFunction bias = [](Tape&, std::span<const Var> p) { return sum(tanh(add_bias(p[0], p[1]))); };
    EXPECT_LT(finite_difference_check(bias, biased, 1e-5), 1e-4) << "add-bias";

    std::vector<Tensor> joined = {random_tensor(rng, {3, 2}), random_tensor(rng, {3, 3})};
    const Tensor weights = random_tensor(rng, {3, 5});
    ScalarFunction cat = [&](Tape& tape, std::span<const Var> p) {
      return sum(mul(square(concat(p[0], p[1])), tape.constant(weights)));
    };
    EXPECT_LT(finite_difference_check(cat, joined, 1e-5), 1e-4) << "concat";
  }
}

TEST(BackwardProperty, LinearityOverSums) {
  DeterministicRng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor w0 = random_tensor(rng, {3, 3});
    const Tensor c = random_tensor(rng, {3, 3});
    auto first = [&](Var w) { return sum(tanh(matmul(w, w))); };
    auto second = [&](Var w) { return mean(mul(sigmoid(w), w.tape->constant(c))); };

    Tape t1, t2, t3;
    Var a = t1.parameter(w0);
    Var b = t2.parameter(w0);
    Var s = t3.parameter(w0);
    const Tensor ga = t1.backward(first(a)).at(a);
    const Tensor gb = t2.backward(second(b)).at(b);
    const Tensor gs = t3.backward(add(first(s), second(s))).at(s);
    for (std::size_t i = 0; i < gs.size(); ++i) EXPECT_NEAR(gs[i], ga[i] + gb[i], 1e-12);
  }
}

TEST(TapeProperty, ReplayIsBitwiseIdentical) {
  DeterministicRng rng(8);
  const Tensor w = random_tensor(rng, {5, 4});
  const Tensor x = random_tensor(rng, {6, 5});
  auto run = [&] {
    Tape tape;
    Var h = leaky_relu(matmul(tape.constant(x), tape.parameter(w)));
    return log_softmax(h).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Rng, SameSeedSameDraws) {
  DeterministicRng a(42), b(42);
  EXPECT_EQ(draw_standard_normal(a, {4}), draw_standard_normal(b, {4}));
}

TEST(Rng, LongSequencesAgree) {
  DeterministicRng a(77), b(77);
  bool equal = true;
  for (int i = 0; i < 1'000'000; ++i) equal = equal && (a.next_u64() == b.next_u64());
  EXPECT_TRUE(equal);
}

TEST(Rng, ShapeIsRowMajor) {
  DeterministicRng a(3), b(3);
  Tensor t = draw_standard_normal(a, {2, 3});
  EXPECT_EQ(t.shape(), (Shape{2, 3}));
  ASSERT_EQ(t.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(t[i], b.normal());
}

TEST(Rng, StandardNormalMoments) {
  DeterministicRng rng(42);
  Tensor t = draw_standard_normal(rng, {100000});
  double m = 0.0;
  for (double v : t.values()) m += v;
  m /= static_cast<double>(t.size());
  double var = 0.0;
  for (double v : t.values()) var += (v - m) * (v - m);
  var /= static_cast<double>(t.size());
  EXPECT_GE(m, -0.02);
  EXPECT_LE(m, 0.02);
  EXPECT_GE(var, 0.97);
  EXPECT_LE(var, 1.03);
}

TEST(Rng, StateRestoreResumesSequence) {
  DeterministicRng rng(9);
  rng.normal();
  const auto saved = rng.state();
  const double next = rng.normal();
  rng.restore(saved);
  EXPECT_EQ(rng.normal(), next);
}

TEST(Rng, UniformBelowStaysInRange) {
  DeterministicRng rng(1);
  for (int i = 0; i < 10000; ++i) EXPECT_LT(rng.uniform_below(7), 7u);
  EXPECT_THROW(rng.uniform_below(0), ContractError);
}

}  // namespace
}  // namespace flowguard
