#include "drrnet/optimizer.hpp"

#include <cmath>

#include "drrnet/ops.hpp"

namespace drr {

template <Scalar T>
AdamState<T> AdamState<T>::zeros_like(std::span<const Tensor<T>* const> params) {
  AdamState s;
  for (const Tensor<T>* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

template <Scalar T>
void adam_step(const OptimizerConfig& cfg, std::span<Tensor<T>* const> params,
               std::span<const Tensor<T>> grads, AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients, " +
                     std::to_string(state.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i]->shape(), grads[i].shape(), "adam_step");
    require_finite(grads[i], "adam_step gradient");
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const T* g = grads[i].data();
    for (std::size_t e = 0; e < grads[i].size(); ++e) {
      m[e] = b1 * m[e] + (T{1} - b1) * g[e];
      v[e] = b2 * v[e] + (T{1} - b2) * g[e] * g[e];
      const T m_hat = m[e] / c1;
      const T v_hat = v[e] / c2;
      p[e] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(const OptimizerConfig&, std::span<Tensor<float>* const>,
                        std::span<const Tensor<float>>, AdamState<float>&);
template void adam_step(const OptimizerConfig&, std::span<Tensor<double>* const>,
                        std::span<const Tensor<double>>, AdamState<double>&);

}  // namespace drr
