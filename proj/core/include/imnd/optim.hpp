#pragma once

#include "imnd/tensor.hpp"

namespace imnd {

/// p <- p - lr * g, elementwise; shapes must match name-for-name.
void sgd_step(ParamSet& params, const ParamSet& grads, double lr);

struct AdamState {
  ParamSet m;
  ParamSet v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init(const ParamSet& params);
};

void adam_step(AdamState& state, ParamSet& params, const ParamSet& grads, double lr);

}  // namespace imnd
