#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "drrnet/config.hpp"
#include "drrnet/tensor.hpp"

namespace drr {

/// First and second moment estimates, one pair per parameter tensor.
template <Scalar T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t t = 0;

  static AdamState zeros_like(std::span<const Tensor<T>* const> params);
};

/// One bias-corrected Adam update, no weight decay. Reads only its
/// arguments and writes only `params` and `state`.
template <Scalar T>
void adam_step(const OptimizerConfig& cfg, std::span<Tensor<T>* const> params,
               std::span<const Tensor<T>> grads, AdamState<T>& state);

}  // namespace drr
