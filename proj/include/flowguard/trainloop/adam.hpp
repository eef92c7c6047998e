#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "flowguard/diffcore/tensor.hpp"
#include "flowguard/errors.hpp"

namespace flowguard {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments are created lazily on the first step and mirror parameter shapes
// from then on.
struct AdamState {
  AdamHyper hyper;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamHyper h) : hyper(h) {}
};

// One bias-corrected Adam update of params[i] by grads[i].
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size())
    throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                        std::to_string(grads.size()) + " gradients");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i]->shape() != grads[i].shape())
      throw ContractError("adam_step: parameter " + std::to_string(i) + " has shape " +
                          shape_string(params[i]->shape()) + " but gradient has " + shape_string(grads[i].shape()));
  if (state.first_moment.empty()) {
    for (Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  } else if (state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: optimizer state tracks a different parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.first_moment[i].shape() != params[i]->shape())
      throw ContractError("adam_step: moment shape differs from parameter " + std::to_string(i));

  ++state.step;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(h.beta1, t);
  const double correct2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    const auto g = grads[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g[k];
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g[k] * g[k];
      p[k] -= h.lr * (m[k] / correct1) / (std::sqrt(v[k] / correct2) + h.eps);
    }
  }
}

}  // namespace flowguard
