#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "xforge/tensor.hpp"

namespace xforge {

struct AdamState {
  std::vector<Tensor> m;  // first moments, shape-matched to params
  std::vector<Tensor> v;  // second moments
  int64_t step = 0;
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;

  static AdamState init(const std::vector<Tensor>& params, float lr) {
    AdamState s;
    s.lr = lr;
    for (const auto& p : params) {
      s.m.emplace_back(p.shape);
      s.v.emplace_back(p.shape);
    }
    return s;
  }
};

inline void adam_step(std::vector<Tensor>& params,
                      const std::vector<Tensor>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    if (!params[k].same_shape(grads[k]) || !params[k].same_shape(state.m[k]))
      throw std::invalid_argument("adam_step: shape mismatch at parameter " +
                                  std::to_string(k) + " " +
                                  shape_str(params[k].shape) + " vs " +
                                  shape_str(grads[k].shape));
    for (int64_t i = 0; i < params[k].size(); ++i) {
      const double g = grads[k].at(i);
      const double m = state.beta1 * state.m[k].at(i) + (1.0 - state.beta1) * g;
      const double v =
          state.beta2 * state.v[k].at(i) + (1.0 - state.beta2) * g * g;
      state.m[k].at(i) = static_cast<float>(m);
      state.v[k].at(i) = static_cast<float>(v);
      params[k].at(i) -= static_cast<float>(
          state.lr * (m / bc1) / (std::sqrt(v / bc2) + state.epsilon));
    }
  }
}

}  // namespace xforge
