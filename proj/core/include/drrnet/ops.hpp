#pragma once

#include <vector>

#include "drrnet/tensor.hpp"

namespace drr {

// Dense primitives. Every reduction runs in a fixed sequential order so that
// equal inputs give bit-identical outputs.

/// Standard product of 2-D tensors a[m x k] and b[k x n].
/// VJP: grad_a = g * b^T, grad_b = a^T * g (see matmul_nt / matmul_tn).
template <Scalar T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// a^T * b for 2-D a[r x m], b[r x n] -> [m x n].
template <Scalar T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

/// a * b^T for 2-D a[m x k], b[n x k] -> [m x n].
template <Scalar T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <Scalar T>
Tensor<T> transpose(const Tensor<T>& a);

/// Applies w[k x n] to the last axis of x[..., k] -> [..., n].
template <Scalar T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w);

/// Weight gradient of `linear`: flatten(x)^T * flatten(g) -> [k x n].
template <Scalar T>
Tensor<T> linear_weight_grad(const Tensor<T>& x, const Tensor<T>& g);

/// Input gradient of `linear`: g * w^T, keeping g's leading axes.
template <Scalar T>
Tensor<T> linear_input_grad(const Tensor<T>& g, const Tensor<T>& w);

/// Broadcast-adds bias[n] over the last axis.
template <Scalar T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// Column sums over all leading axes -> [n].
template <Scalar T>
Tensor<T> sum_rows(const Tensor<T>& g);

template <Scalar T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <Scalar T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

/// c * x elementwise. c == 0 yields an exact (+0) zero tensor.
template <Scalar T>
Tensor<T> scaled(const Tensor<T>& x, T c);

/// x / c elementwise.
template <Scalar T>
Tensor<T> divided(const Tensor<T>& x, T c);

/// a + c * b, evaluated per element as a[i] + (c * b[i]).
template <Scalar T>
Tensor<T> add_scaled(const Tensor<T>& a, const Tensor<T>& b, T c);

template <Scalar T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b);

template <Scalar T>
T sum(const Tensor<T>& x);

// Elementwise kernels with closed-form derivatives.

enum class UnaryOp { gelu, scale, add_const };

struct UnaryKernel {
  UnaryOp op = UnaryOp::gelu;
  double constant = 0.0;

  static UnaryKernel gelu() { return {UnaryOp::gelu, 0.0}; }
  static UnaryKernel scale(double c) { return {UnaryOp::scale, c}; }
  static UnaryKernel add_const(double c) { return {UnaryOp::add_const, c}; }
};

/// tanh-approximated GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <Scalar T>
T gelu(T x);

template <Scalar T>
T gelu_derivative(T x);

template <Scalar T>
Tensor<T> map_unary(UnaryKernel kernel, const Tensor<T>& x);

/// d kernel / dx evaluated at each element of x.
template <Scalar T>
Tensor<T> map_unary_derivative(UnaryKernel kernel, const Tensor<T>& x);

/// grad_x = g * kernel'(x).
template <Scalar T>
Tensor<T> map_unary_vjp(UnaryKernel kernel, const Tensor<T>& x, const Tensor<T>& g);

/// Row-wise softmax over the last axis, max-subtracted.
template <Scalar T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// Given y = softmax_rows(x) and upstream g: row-wise y * (g - <g, y>).
template <Scalar T>
Tensor<T> softmax_rows_vjp(const Tensor<T>& y, const Tensor<T>& g);

/// Mean over the token axis: x[B, L, d] -> [B, d] (rank-2 x[L, d] -> [1, d]).
template <Scalar T>
Tensor<T> mean_tokens(const Tensor<T>& x);

/// VJP of mean_tokens: spreads g[B, d] back to `shape` with weight 1/L.
template <Scalar T>
Tensor<T> mean_tokens_vjp(const Tensor<T>& g, const Shape& shape);

void require_same_shape(const Shape& a, const Shape& b, const char* op);

}  // namespace drr
