#include "imnd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace imnd {

void sgd_step(ParamSet& params, const ParamSet& grads, double lr) {
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    if (!p.same_shape(g))
      throw std::invalid_argument("sgd_step: shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] -= lr * g.data[i];
  }
}

AdamState AdamState::init(const ParamSet& params) {
  AdamState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

void adam_step(AdamState& state, ParamSet& params, const ParamSet& grads, double lr) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, state.t);
  const double bc2 = 1.0 - std::pow(state.beta2, state.t);
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    if (!p.same_shape(g))
      throw std::invalid_argument("adam_step: shape mismatch for '" + name + "'");
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g.data[i];
      v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g.data[i] * g.data[i];
      p.data[i] -= lr * (m.data[i] / bc1) / (std::sqrt(v.data[i] / bc2) + state.eps);
    }
  }
}

}  // namespace imnd
