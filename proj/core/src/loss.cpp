#include "drrnet/loss.hpp"

#include <cmath>

#include "drrnet/ops.hpp"

namespace drr {

template <Scalar T>
LossOutput<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  LossOutput<T> out;
  out.grad = softmax_rows(logits);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw ShapeError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(c) + ")");
    }
    const T* row = logits.data() + r * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    total += std::log(z) + mx - static_cast<double>(row[label]);
    out.grad[r * c + static_cast<std::size_t>(label)] -= T{1};
  }
  const T inv_b = static_cast<T>(1.0 / static_cast<double>(b));
  for (auto& g : out.grad.values()) g *= inv_b;
  out.loss = total / static_cast<double>(b);
  return out;
}

template <Scalar T>
LossOutput<T> sum_of_logits(const Tensor<T>& logits) {
  LossOutput<T> out;
  out.loss = static_cast<double>(sum(logits));
  out.grad = Tensor<T>::full(logits.shape(), T{1});
  return out;
}

template <Scalar T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expected a matrix, got " + shape_string(logits.shape()));
  const std::size_t c = logits.dim(1);
  std::vector<int> out;
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (logits.at(r, j) > logits.at(r, best)) best = j;
    }
    out.push_back(static_cast<int>(best));
  }
  return out;
}

template LossOutput<float> cross_entropy(const Tensor<float>&, std::span<const int>);
template LossOutput<double> cross_entropy(const Tensor<double>&, std::span<const int>);
template LossOutput<float> sum_of_logits(const Tensor<float>&);
template LossOutput<double> sum_of_logits(const Tensor<double>&);
template std::vector<int> argmax_rows(const Tensor<float>&);
template std::vector<int> argmax_rows(const Tensor<double>&);

}  // namespace drr
