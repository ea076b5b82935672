#pragma once

#include <cmath>
#include <string>

#include "drrnet/tensor.hpp"

namespace drr {

/// Central-difference gradient of a scalar function:
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every coordinate i.
///
/// `f` must be pure. A non-finite evaluation raises NumericError naming the
/// offending coordinate.
template <Scalar T, typename F>
Tensor<T> finite_difference_grad(F&& f, const Tensor<T>& x, T eps) {
  if (!(eps > T{0})) throw NumericError("finite_difference_grad: step must be positive");
  Tensor<T> probe = x;
  Tensor<T> grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T saved = probe[i];
    probe[i] = saved + eps;
    const T plus = static_cast<T>(f(static_cast<const Tensor<T>&>(probe)));
    probe[i] = saved - eps;
    const T minus = static_cast<T>(f(static_cast<const Tensor<T>&>(probe)));
    probe[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("finite_difference_grad: non-finite evaluation at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (plus - minus) / (T{2} * eps);
  }
  return grad;
}

}  // namespace drr
