#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rvf/rng.hpp"
#include "rvf/tensor.hpp"

namespace rvf {

/// He/MSRA initialization: normal(0, sqrt(2/fan_in)), as a trainable leaf.
template <typename S>
inline TensorT<S> msra_init(std::vector<int> shape, int fan_in, Rng& rng, std::string name) {
  if (fan_in <= 0)
    throw std::invalid_argument("msra_init: fan_in must be positive for " + name);
  const double stddev = std::sqrt(2.0 / fan_in);
  std::vector<S> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<S>(rng.normal(0.0, stddev));
  return TensorT<S>::param(std::move(shape), std::move(data), std::move(name));
}

/// Momentum buffers keyed by parameter node. Buffers appear on first use.
template <typename S>
struct SgdState {
  std::unordered_map<TensorNode<S>*, std::vector<S>> velocity;
};

/// Classic momentum SGD with L2 regularization folded into the gradient:
///   v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v
template <typename S>
inline void sgd_step(std::vector<TensorT<S>>& params, double lr, double momentum,
                     double weight_decay, SgdState<S>& state) {
  for (auto& p : params) {
    auto& value = p.raw_value();
    auto& grad = p.raw_grad();
    auto& v = state.velocity[p.node()];
    if (v.size() != value.size()) v.assign(value.size(), S(0));
    const S m = static_cast<S>(momentum);
    const S wd = static_cast<S>(weight_decay);
    const S step = static_cast<S>(lr);
    for (std::size_t i = 0; i < value.size(); ++i) {
      v[i] = m * v[i] + grad[i] + wd * value[i];
      value[i] -= step * v[i];
    }
  }
}

template <typename S>
inline void zero_grads(std::vector<TensorT<S>>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace rvf
