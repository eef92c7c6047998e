#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flowguard/diffcore/kernels.hpp"
#include "flowguard/diffcore/tensor.hpp"

namespace flowguard {

enum class Primitive : std::uint8_t {
  leaf,
  matmul,
  add,
  mul,
  leaky_relu,
  sigmoid,
  tanh,
  exp,
  log,
  negate,
  sum,
  mean,
  square,
  add_bias,
  concat,
  // Extensions used by the networks and losses.
  clamp,
  scale,
  add_scalar,
  slice_cols,
  log_softmax,
};

inline const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::leaf: return "leaf";
    case Primitive::matmul: return "matmul";
    case Primitive::add: return "add";
    case Primitive::mul: return "elementwise-mul";
    case Primitive::leaky_relu: return "leaky-relu";
    case Primitive::sigmoid: return "sigmoid";
    case Primitive::tanh: return "tanh";
    case Primitive::exp: return "exp";
    case Primitive::log: return "log";
    case Primitive::negate: return "negate";
    case Primitive::sum: return "sum";
    case Primitive::mean: return "mean";
    case Primitive::square: return "square";
    case Primitive::add_bias: return "broadcast-add-bias";
    case Primitive::concat: return "concat";
    case Primitive::clamp: return "clamp";
    case Primitive::scale: return "scale";
    case Primitive::add_scalar: return "add-scalar";
    case Primitive::slice_cols: return "slice-cols";
    case Primitive::log_softmax: return "log-softmax";
  }
  return "?";
}

// Scalar/range parameters of a primitive. `a`/`b` carry slope, clamp bounds,
// or scale factor; `begin`/`end` a column range.
struct PrimitiveAttrs {
  double a = 0.0;
  double b = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kLogFloor = 1e-12;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Gradients of a scalar root with respect to every parameter leaf.
class GradientMap {
 public:
  const Tensor& at(Var v) const { return at(v.id); }
  const Tensor& at(std::size_t leaf_id) const {
    auto it = grads_.find(leaf_id);
    if (it == grads_.end()) throw ContractError("gradient map: node " + std::to_string(leaf_id) + " is not a parameter leaf");
    return it->second;
  }
  bool contains(std::size_t leaf_id) const { return grads_.count(leaf_id) != 0; }
  std::size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  friend class Tape;
  std::map<std::size_t, Tensor> grads_;
};

// Append-only record of eagerly evaluated primitives. Node inputs always
// precede the node, so reverse id order is a valid backward schedule.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf whose gradient is reported by backward().
  Var parameter(Tensor value) { return push_leaf(std::move(value), true); }
  // Leaf treated as data: no gradient is accumulated for it.
  Var constant(Tensor value) { return push_leaf(std::move(value), false); }

  Var record(Primitive kind, std::initializer_list<Var> inputs, PrimitiveAttrs attrs = {}) {
    return record(kind, std::span<const Var>(inputs.begin(), inputs.size()), attrs);
  }

  Var record(Primitive kind, std::span<const Var> inputs, PrimitiveAttrs attrs = {});

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool is_parameter(Var v) const { return nodes_.at(v.id).parameter; }

  GradientMap backward(Var root) const;

 private:
  struct Node {
    Primitive kind = Primitive::leaf;
    std::array<std::size_t, 2> inputs{};
    std::uint8_t input_count = 0;
    Tensor value;
    PrimitiveAttrs attrs;
    bool requires_grad = false;
    bool parameter = false;
  };

  Var push_leaf(Tensor value, bool parameter) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = parameter;
    n.parameter = parameter;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  static std::size_t expected_inputs(Primitive kind) {
    switch (kind) {
      case Primitive::leaf: return 0;
      case Primitive::matmul:
      case Primitive::add:
      case Primitive::mul:
      case Primitive::add_bias:
      case Primitive::concat: return 2;
      default: return 1;
    }
  }

  Tensor forward(Primitive kind, const Tensor& x, const Tensor* y, const PrimitiveAttrs& attrs) const;
  void accumulate_input_grads(const Node& node, const Tensor& grad, std::vector<Tensor>& grads) const;

  // Deque keeps node references stable while the tape grows.
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace detail {

[[noreturn]] inline void shape_mismatch(Primitive kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(primitive_name(kind)) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

inline void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace detail

inline Tensor Tape::forward(Primitive kind, const Tensor& x, const Tensor* y, const PrimitiveAttrs& attrs) const {
  using namespace kernels;
  switch (kind) {
    case Primitive::matmul:
      if (x.rank() != 2 || y->rank() != 2 || x.cols() != y->rows()) detail::shape_mismatch(kind, x.shape(), y->shape());
      return matmul(x, *y);
    case Primitive::add:
      if (x.shape() != y->shape()) detail::shape_mismatch(kind, x.shape(), y->shape());
      return zip(x, *y, [](double a, double b) { return a + b; });
    case Primitive::mul:
      if (x.shape() != y->shape()) detail::shape_mismatch(kind, x.shape(), y->shape());
      return zip(x, *y, [](double a, double b) { return a * b; });
    case Primitive::add_bias:
      if (x.rank() != 2 || y->size() != x.cols() || y->rows() != 1) detail::shape_mismatch(kind, x.shape(), y->shape());
      return add_bias(x, *y);
    case Primitive::concat:
      if (x.rank() != 2 || y->rank() != 2 || x.rows() != y->rows()) detail::shape_mismatch(kind, x.shape(), y->shape());
      return concat_cols(x, *y);
    case Primitive::leaky_relu: {
      const double slope = attrs.a;
      return map(x, [slope](double v) { return v > 0.0 ? v : slope * v; });
    }
    case Primitive::sigmoid: return map(x, logistic);
    case Primitive::tanh: return map(x, [](double v) { return std::tanh(v); });
    case Primitive::exp: return map(x, [](double v) { return std::exp(v); });
    case Primitive::log: return map(x, [](double v) { return std::log(std::max(v, kLogFloor)); });
    case Primitive::negate: return map(x, [](double v) { return -v; });
    case Primitive::square: return map(x, [](double v) { return v * v; });
    case Primitive::sum: return Tensor::scalar(sum(x));
    case Primitive::mean: return Tensor::scalar(sum(x) / static_cast<double>(x.size()));
    case Primitive::clamp: {
      const double lo = attrs.a, hi = attrs.b;
      return map(x, [lo, hi](double v) { return std::clamp(v, lo, hi); });
    }
    case Primitive::scale: {
      const double c = attrs.a;
      return map(x, [c](double v) { return c * v; });
    }
    case Primitive::add_scalar: {
      const double c = attrs.a;
      return map(x, [c](double v) { return v + c; });
    }
    case Primitive::slice_cols:
      if (x.rank() != 2 || attrs.begin >= attrs.end || attrs.end > x.cols())
        throw ShapeError(std::string("slice-cols: range [") + std::to_string(attrs.begin) + "," +
                         std::to_string(attrs.end) + ") outside " + shape_string(x.shape()));
      return slice_cols(x, attrs.begin, attrs.end);
    case Primitive::log_softmax:
      if (x.rank() != 2) throw ShapeError("log-softmax: expected rank-2 input, got " + shape_string(x.shape()));
      return log_softmax_rows(x);
    case Primitive::leaf: break;
  }
  throw ContractError("tape: cannot record a leaf through record()");
}

inline Var Tape::record(Primitive kind, std::span<const Var> inputs, PrimitiveAttrs attrs) {
  if (inputs.size() != expected_inputs(kind))
    throw ContractError(std::string(primitive_name(kind)) + ": expected " + std::to_string(expected_inputs(kind)) +
                        " inputs, got " + std::to_string(inputs.size()));
  for (const Var& v : inputs)
    if (v.tape != this || v.id >= nodes_.size())
      throw ContractError(std::string(primitive_name(kind)) + ": input does not belong to this tape");

  const Tensor& x = nodes_[inputs[0].id].value;
  const Tensor* y = inputs.size() > 1 ? &nodes_[inputs[1].id].value : nullptr;
  Node n;
  n.kind = kind;
  n.attrs = attrs;
  n.value = forward(kind, x, y, attrs);
  n.input_count = static_cast<std::uint8_t>(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    n.inputs[i] = inputs[i].id;
    n.requires_grad = n.requires_grad || nodes_[inputs[i].id].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

inline void Tape::accumulate_input_grads(const Node& node, const Tensor& g, std::vector<Tensor>& grads) const {
  using namespace kernels;
  const Node& in0 = nodes_[node.inputs[0]];
  const Tensor& x = in0.value;
  const Tensor& y = node.value;

  auto push = [&](std::size_t id, Tensor&& contribution) {
    if (!nodes_[id].requires_grad) return;
    if (grads[id].empty())
      grads[id] = std::move(contribution);
    else
      detail::add_into(grads[id], contribution);
  };
  auto wants = [&](std::size_t slot) { return nodes_[node.inputs[slot]].requires_grad; };

  switch (node.kind) {
    case Primitive::matmul: {
      const Tensor& w = nodes_[node.inputs[1]].value;
      if (wants(0)) push(node.inputs[0], matmul_nt(g, w));
      if (wants(1)) push(node.inputs[1], matmul_tn(x, g));
      break;
    }
    case Primitive::add:
      if (wants(0)) push(node.inputs[0], Tensor(g));
      if (wants(1)) push(node.inputs[1], Tensor(g));
      break;
    case Primitive::mul: {
      const Tensor& other = nodes_[node.inputs[1]].value;
      if (wants(0)) push(node.inputs[0], zip(g, other, [](double a, double b) { return a * b; }));
      if (wants(1)) push(node.inputs[1], zip(g, x, [](double a, double b) { return a * b; }));
      break;
    }
    case Primitive::add_bias:
      if (wants(0)) push(node.inputs[0], Tensor(g));
      if (wants(1)) push(node.inputs[1], column_sums(g, nodes_[node.inputs[1]].value.shape()));
      break;
    case Primitive::concat: {
      const std::size_t split = x.cols();
      if (wants(0)) push(node.inputs[0], slice_cols(g, 0, split));
      if (wants(1)) push(node.inputs[1], slice_cols(g, split, g.cols()));
      break;
    }
    case Primitive::leaky_relu: {
      const double slope = node.attrs.a;
      push(node.inputs[0], zip(g, x, [slope](double d, double v) { return v > 0.0 ? d : slope * d; }));
      break;
    }
    case Primitive::sigmoid:
      push(node.inputs[0], zip(g, y, [](double d, double s) { return d * s * (1.0 - s); }));
      break;
    case Primitive::tanh:
      push(node.inputs[0], zip(g, y, [](double d, double t) { return d * (1.0 - t * t); }));
      break;
    case Primitive::exp:
      push(node.inputs[0], zip(g, y, [](double d, double e) { return d * e; }));
      break;
    case Primitive::log:
      push(node.inputs[0], zip(g, x, [](double d, double v) { return v < kLogFloor ? 0.0 : d / v; }));
      break;
    case Primitive::negate:
      push(node.inputs[0], map(g, [](double d) { return -d; }));
      break;
    case Primitive::square:
      push(node.inputs[0], zip(g, x, [](double d, double v) { return 2.0 * v * d; }));
      break;
    case Primitive::sum:
      push(node.inputs[0], Tensor(x.shape(), g[0]));
      break;
    case Primitive::mean:
      push(node.inputs[0], Tensor(x.shape(), g[0] / static_cast<double>(x.size())));
      break;
    case Primitive::clamp: {
      const double lo = node.attrs.a, hi = node.attrs.b;
      push(node.inputs[0], zip(g, x, [lo, hi](double d, double v) { return (v >= lo && v <= hi) ? d : 0.0; }));
      break;
    }
    case Primitive::scale: {
      const double c = node.attrs.a;
      push(node.inputs[0], map(g, [c](double d) { return c * d; }));
      break;
    }
    case Primitive::add_scalar:
      push(node.inputs[0], Tensor(g));
      break;
    case Primitive::slice_cols: {
      Tensor full(x.shape());
      const std::size_t width = node.attrs.end - node.attrs.begin;
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < width; ++c) full.at(r, node.attrs.begin + c) = g.at(r, c);
      push(node.inputs[0], std::move(full));
      break;
    }
    case Primitive::log_softmax: {
      // dx = g - softmax * rowsum(g)
      Tensor dx(x.shape());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        double gsum = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) gsum += g.at(r, c);
        for (std::size_t c = 0; c < x.cols(); ++c) dx.at(r, c) = g.at(r, c) - std::exp(y.at(r, c)) * gsum;
      }
      push(node.inputs[0], std::move(dx));
      break;
    }
    case Primitive::leaf: break;
  }
}

inline GradientMap Tape::backward(Var root) const {
  if (root.tape != this || root.id >= nodes_.size()) throw ContractError("backward: root does not belong to this tape");
  const Tensor& root_value = nodes_[root.id].value;
  if (root_value.size() != 1)
    throw ContractError("backward: root must be scalar, got shape " + shape_string(root_value.shape()));

  std::vector<Tensor> grads(root.id + 1);
  if (nodes_[root.id].requires_grad) grads[root.id] = Tensor(root_value.shape(), 1.0);

  for (std::size_t id = root.id + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (node.kind == Primitive::leaf || grads[id].empty()) continue;
    accumulate_input_grads(node, grads[id], grads);
    if (!node.parameter) grads[id] = Tensor();
  }

  GradientMap out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (!node.parameter) continue;
    if (id < grads.size() && !grads[id].empty())
      out.grads_.emplace(id, std::move(grads[id]));
    else
      out.grads_.emplace(id, Tensor(node.value.shape()));
  }
  return out;
}

// Primitive wrappers.

inline Var matmul(Var a, Var b) { return a.tape->record(Primitive::matmul, {a, b}); }
inline Var add(Var a, Var b) { return a.tape->record(Primitive::add, {a, b}); }
inline Var mul(Var a, Var b) { return a.tape->record(Primitive::mul, {a, b}); }
inline Var add_bias(Var x, Var bias) { return x.tape->record(Primitive::add_bias, {x, bias}); }
inline Var concat(Var a, Var b) { return a.tape->record(Primitive::concat, {a, b}); }
inline Var leaky_relu(Var x, double slope = kLeakySlope) {
  return x.tape->record(Primitive::leaky_relu, {x}, {.a = slope});
}
inline Var sigmoid(Var x) { return x.tape->record(Primitive::sigmoid, {x}); }
inline Var tanh(Var x) { return x.tape->record(Primitive::tanh, {x}); }
inline Var exp(Var x) { return x.tape->record(Primitive::exp, {x}); }
inline Var log(Var x) { return x.tape->record(Primitive::log, {x}); }
inline Var negate(Var x) { return x.tape->record(Primitive::negate, {x}); }
inline Var sum(Var x) { return x.tape->record(Primitive::sum, {x}); }
inline Var mean(Var x) { return x.tape->record(Primitive::mean, {x}); }
inline Var square(Var x) { return x.tape->record(Primitive::square, {x}); }
inline Var clamp(Var x, double lo, double hi) { return x.tape->record(Primitive::clamp, {x}, {.a = lo, .b = hi}); }
inline Var scale(Var x, double c) { return x.tape->record(Primitive::scale, {x}, {.a = c}); }
inline Var add_scalar(Var x, double c) { return x.tape->record(Primitive::add_scalar, {x}, {.a = c}); }
inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  return x.tape->record(Primitive::slice_cols, {x}, {.begin = begin, .end = end});
}
inline Var log_softmax(Var x) { return x.tape->record(Primitive::log_softmax, {x}); }
inline Var sub(Var a, Var b) { return add(a, negate(b)); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return negate(a); }

inline Var record_primitive(Tape& tape, Primitive kind, std::span<const Var> inputs, PrimitiveAttrs attrs = {}) {
  return tape.record(kind, inputs, attrs);
}

inline GradientMap backward(Tape& tape, Var root) { return tape.backward(root); }

// Builds a scalar from parameter leaves on the given tape.
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

// Largest |analytic - central difference| / max(1, |analytic|) over every
// coordinate of every parameter. Throws ContractError when two evaluations at
// the same point disagree.
inline double finite_difference_check(const ScalarFunction& f, std::span<const Tensor> params, double step) {
  if (!(step > 0.0)) throw ContractError("finite_difference_check: step must be positive");

  std::vector<Tensor> point(params.begin(), params.end());
  auto evaluate = [&](const std::vector<Tensor>& at) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(at.size());
    for (const Tensor& p : at) leaves.push_back(tape.parameter(p));
    Var root = f(tape, leaves);
    if (root.value().size() != 1) throw ContractError("finite_difference_check: function is not scalar");
    return root.value()[0];
  };

  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& p : point) leaves.push_back(tape.parameter(p));
  Var root = f(tape, leaves);
  const GradientMap grads = tape.backward(root);

  const double base_a = evaluate(point);
  const double base_b = evaluate(point);
  if (std::memcmp(&base_a, &base_b, sizeof(double)) != 0 || base_a != root.value()[0])
    throw ContractError("finite_difference_check: function is not deterministic");

  double worst = 0.0;
  for (std::size_t p = 0; p < point.size(); ++p) {
    const Tensor& analytic = grads.at(leaves[p]);
    for (std::size_t i = 0; i < point[p].size(); ++i) {
      const double original = point[p][i];
      point[p][i] = original + step;
      const double up = evaluate(point);
      point[p][i] = original - step;
      const double down = evaluate(point);
      point[p][i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace flowguard
