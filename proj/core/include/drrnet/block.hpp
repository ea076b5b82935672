#pragma once

#include <string>
#include <vector>

#include "drrnet/prng.hpp"
#include "drrnet/tensor.hpp"

namespace drr {

enum class BlockKind { mlp, attention };

const char* to_string(BlockKind kind);

/// Intermediate tensors of one block evaluation, kept so the VJP can run
/// without re-evaluating the block.
///   mlp:       {pre-activation H, activation A}
///   attention: {Q, K, V, attention weights P, context C}
template <Scalar T>
struct BlockTrace {
  std::vector<Tensor<T>> internals;

  std::size_t bytes() const {
    std::size_t total = 0;
    for (const auto& t : internals) total += t.bytes();
    return total;
  }
};

template <Scalar T>
struct BlockGrad {
  Tensor<T> input;                // gradient w.r.t. the block input
  std::vector<Tensor<T>> params;  // aligned with FBlock::params()
};

/// A dimension-preserving sub-network F: x[..., d] -> [..., d].
///
/// mlp parameters:       W1[d x h], b1[h], W2[h x d], b2[d]
/// attention parameters: Wq, Wk, Wv, Wo, each [d x d]; single head, the token
///                       axis is the second-to-last one.
template <Scalar T>
class FBlock {
 public:
  FBlock(BlockKind kind, std::vector<Tensor<T>> params);

  static FBlock zeros(BlockKind kind, std::size_t width, std::size_t hidden);
  /// Weights ~ N(0, 1/d), biases zero.
  static FBlock random(BlockKind kind, std::size_t width, std::size_t hidden, Prng& rng);

  BlockKind kind() const { return kind_; }
  std::size_t width() const { return width_; }
  std::size_t hidden() const { return hidden_; }

  std::vector<Tensor<T>>& params() { return params_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  static const std::vector<std::string>& param_names(BlockKind kind);

  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x, BlockTrace<T>& trace) const;

  /// Reverse-mode derivative at x, re-evaluating the block internals.
  BlockGrad<T> vjp(const Tensor<T>& x, const Tensor<T>& g_out) const;
  /// Same, reusing the trace recorded by forward(x, trace).
  BlockGrad<T> vjp(const Tensor<T>& x, const BlockTrace<T>& trace, const Tensor<T>& g_out) const;

  template <Scalar U>
  FBlock<U> cast() const {
    std::vector<Tensor<U>> converted;
    for (const auto& p : params_) converted.push_back(p.template cast<U>());
    return FBlock<U>(kind_, std::move(converted));
  }

 private:
  void check_input(const Tensor<T>& x) const;

  BlockKind kind_;
  std::size_t width_ = 0;
  std::size_t hidden_ = 0;
  std::vector<Tensor<T>> params_;
};

/// G(x) = F(x) + alpha * x, evaluated per element in exactly that order.
template <Scalar T>
Tensor<T> g_apply(const FBlock<T>& block, T alpha, const Tensor<T>& x);

template <Scalar T>
Tensor<T> g_apply(const FBlock<T>& block, T alpha, const Tensor<T>& x, BlockTrace<T>& trace);

}  // namespace drr
