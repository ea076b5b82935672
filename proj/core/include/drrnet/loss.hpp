#pragma once

#include <span>
#include <vector>

#include "drrnet/tensor.hpp"

namespace drr {

template <Scalar T>
struct LossOutput {
  double loss = 0.0;
  Tensor<T> grad;  // dL/dlogits
};

/// Mean softmax cross-entropy over the rows of logits[B x C].
template <Scalar T>
LossOutput<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// L = sum of all logits; its gradient is all ones.
template <Scalar T>
LossOutput<T> sum_of_logits(const Tensor<T>& logits);

/// Row-wise argmax of logits[B x C]; ties go to the lower index.
template <Scalar T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

}  // namespace drr
