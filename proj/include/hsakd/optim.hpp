// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <span>
#include <string>

#include "hsakd/tensor.hpp"

namespace hsakd {

struct SgdHyper {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Heavy-ball SGD:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
/// Velocity buffers are keyed by parameter name. Gradients are left in place.
class SgdMomentum {
 public:
  void step(std::span<Parameter> params, const SgdHyper& hyper);
  const std::map<std::string, Storage>& velocity() const { return velocity_; }

 private:
  std::map<std::string, Storage> velocity_;
};

/// Free-function form of SgdMomentum::step.
inline void sgd_momentum_step(std::span<Parameter> params, SgdMomentum& state,
                              double lr, double momentum, double weight_decay) {
  state.step(params, SgdHyper{lr, momentum, weight_decay});
}

/// Zeroes every existing gradient buffer.
void zero_grads(std::span<Parameter> params);

}  // namespace hsakd
