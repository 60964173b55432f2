#pragma once

#include <cmath>
#include <vector>

#include "kws/common.hpp"
#include "kws/tensor.hpp"

namespace kws::nn {

// Adam with bias correction; canonical constants.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  long long t = 0;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  static AdamState for_params(const std::vector<Tensor<T>*>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor<T>* p : params) {
      s.m.emplace_back(p->shape);
      s.v.emplace_back(p->shape);
    }
    return s;
  }
};

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, T alpha) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    fail("shape-error", "adam_step parameter/gradient/state mismatch");
  }
  state.t += 1;
  const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.t));
  const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<T>& theta = *params[p];
    const Tensor<T>& g = grads[p];
    if (!theta.same_shape(g)) fail("shape-error", "adam_step gradient shape mismatch");
    Tensor<T>& m = state.m[p];
    Tensor<T>& v = state.v[p];
    for (std::size_t i = 0; i < theta.data.size(); ++i) {
      m.data[i] = state.beta1 * m.data[i] + (T(1) - state.beta1) * g.data[i];
      v.data[i] = state.beta2 * v.data[i] + (T(1) - state.beta2) * g.data[i] * g.data[i];
      const T m_hat = m.data[i] / bc1;
      const T v_hat = v.data[i] / bc2;
      theta.data[i] -= alpha * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace kws::nn
