// SPDX-License-Identifier: Apache-2.0
#include "hsakd/optim.hpp"

namespace hsakd {

void SgdMomentum::step(std::span<Parameter> params, const SgdHyper& hyper) {
  if (!(hyper.lr > 0.0)) throw ContractError("sgd: lr must be positive");
  if (hyper.momentum < 0.0 || hyper.momentum >= 1.0) {
    throw ContractError("sgd: momentum must lie in [0, 1)");
  }
  for (Parameter& p : params) {
    if (!p.tensor.has_grad()) {
      throw ContractError("sgd: parameter '" + p.name + "' has no gradient");
    }
  }
  for (Parameter& p : params) {
    auto [it, inserted] = velocity_.try_emplace(
        p.name, Storage(p.tensor.dtype(), p.tensor.numel()));
    Storage& vel = it->second;
    if (vel.size() != p.tensor.numel() || vel.dtype() != p.tensor.dtype()) {
      throw ContractError("sgd: parameter '" + p.name + "' changed shape");
    }
    dispatch_dtype(p.tensor.dtype(), [&]<typename T>() {
      auto w = p.tensor.mutable_data<T>();
      const auto g = p.tensor.grad().template span<T>();
      auto v = vel.template span<T>();
      const T mom = static_cast<T>(hyper.momentum);
      const T wd = static_cast<T>(hyper.weight_decay);
      const T lr = static_cast<T>(hyper.lr);
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = mom * v[i] + g[i] + wd * w[i];
        w[i] -= lr * v[i];
      }
    });
  }
}

void zero_grads(std::span<Parameter> params) {
  for (Parameter& p : params) p.tensor.zero_grad();
}

}  // namespace hsakd
