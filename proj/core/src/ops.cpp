#include "drrnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace drr {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

namespace {

void require_matrix(const Shape& s, const char* op) {
  if (s.size() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_string(s));
  }
}

// c[m x n] = a[m x k] * b[k x n]. Every c[i][j] is summed over p in
// increasing order starting from zero, whatever the tiling, so results do
// not depend on the matrix sizes.
template <Scalar T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kCols = 64 / sizeof(T);
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + i * k;
    const T* a1 = a0 + k;
    const T* a2 = a1 + k;
    const T* a3 = a2 + k;
    T* c0 = c + i * n;
    T* c1 = c0 + n;
    T* c2 = c1 + n;
    T* c3 = c2 + n;
    std::size_t j = 0;
    for (; j + kCols <= n; j += kCols) {
      T acc0[kCols] = {}, acc1[kCols] = {}, acc2[kCols] = {}, acc3[kCols] = {};
      for (std::size_t p = 0; p < k; ++p) {
        const T* __restrict br = b + p * n + j;
        const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
        for (std::size_t q = 0; q < kCols; ++q) {
          const T bv = br[q];
          acc0[q] += x0 * bv;
          acc1[q] += x1 * bv;
          acc2[q] += x2 * bv;
          acc3[q] += x3 * bv;
        }
      }
      for (std::size_t q = 0; q < kCols; ++q) {
        c0[j + q] = acc0[q];
        c1[j + q] = acc1[q];
        c2[j + q] = acc2[q];
        c3[j + q] = acc3[q];
      }
    }
    if (j < n) {
      for (std::size_t q = j; q < n; ++q) c0[q] = c1[q] = c2[q] = c3[q] = T{0};
      for (std::size_t p = 0; p < k; ++p) {
        const T* __restrict br = b + p * n;
        const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
        for (std::size_t q = j; q < n; ++q) {
          c0[q] += x0 * br[q];
          c1[q] += x1 * br[q];
          c2[q] += x2 * br[q];
          c3[q] += x3 * br[q];
        }
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict crow = c + i * n;
    for (std::size_t q = 0; q < n; ++q) crow[q] = T{0};
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* __restrict br = b + p * n;
      for (std::size_t q = 0; q < n; ++q) crow[q] += av * br[q];
    }
  }
}

}  // namespace

template <Scalar T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.shape(), "matmul");
  require_matrix(b.shape(), "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor<T> c(Shape{a.dim(0), b.dim(1)});
  gemm(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

template <Scalar T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a.shape(), "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> t(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  }
  return t;
}

template <Scalar T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.shape(), "matmul_tn");
  require_matrix(b.shape(), "matmul_tn");
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("matmul_tn: row counts differ, " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const Tensor<T> at = transpose(a);
  Tensor<T> c(Shape{a.dim(1), b.dim(1)});
  gemm(at.data(), b.data(), c.data(), a.dim(1), a.dim(0), b.dim(1));
  return c;
}

template <Scalar T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.shape(), "matmul_nt");
  require_matrix(b.shape(), "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt: column counts differ, " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  return matmul(a, transpose(b));
}

template <Scalar T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  require_matrix(w.shape(), "linear");
  if (x.cols() != w.dim(0)) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not fit weight " +
                     shape_string(w.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  Tensor<T> out(out_shape);
  gemm(x.data(), w.data(), out.data(), x.rows(), x.cols(), w.dim(1));
  return out;
}

template <Scalar T>
Tensor<T> linear_weight_grad(const Tensor<T>& x, const Tensor<T>& g) {
  if (x.rows() != g.rows()) {
    throw ShapeError("linear_weight_grad: " + shape_string(x.shape()) + " vs " +
                     shape_string(g.shape()));
  }
  return matmul_tn(x.reshaped({x.rows(), x.cols()}), g.reshaped({g.rows(), g.cols()}));
}

template <Scalar T>
Tensor<T> linear_input_grad(const Tensor<T>& g, const Tensor<T>& w) {
  require_matrix(w.shape(), "linear_input_grad");
  if (g.cols() != w.dim(1)) {
    throw ShapeError("linear_input_grad: gradient " + shape_string(g.shape()) +
                     " does not fit weight " + shape_string(w.shape()));
  }
  return linear(g, transpose(w));
}

template <Scalar T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.size() != x.cols()) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " vs input " +
                     shape_string(x.shape()));
  }
  Tensor<T> out = x;
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    T* row = out.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
  }
  return out;
}

template <Scalar T>
Tensor<T> sum_rows(const Tensor<T>& g) {
  const std::size_t n = g.cols();
  Tensor<T> out(Shape{n});
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const T* row = g.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += row[j];
  }
  return out;
}

template <Scalar T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <Scalar T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <Scalar T>
Tensor<T> scaled(const Tensor<T>& x, T c) {
  Tensor<T> out(x.shape());
  if (c == T{0}) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = c * x[i];
  return out;
}

template <Scalar T>
Tensor<T> divided(const Tensor<T>& x, T c) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / c;
  return out;
}

template <Scalar T>
Tensor<T> add_scaled(const Tensor<T>& a, const Tensor<T>& b, T c) {
  require_same_shape(a.shape(), b.shape(), "add_scaled");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + c * b[i];
  return out;
}

template <Scalar T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "hadamard");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <Scalar T>
T sum(const Tensor<T>& x) {
  T total{0};
  for (T v : x.values()) total += v;
  return total;
}

namespace {

template <Scalar T>
constexpr T kGeluCubic = T(0.044715);

template <Scalar T>
constexpr T kSqrtTwoOverPi = T(0.79788456080286535587989211986876);  // sqrt(2/pi)

}  // namespace

template <Scalar T>
T gelu(T x) {
  const T u = kSqrtTwoOverPi<T> * (x + kGeluCubic<T> * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <Scalar T>
T gelu_derivative(T x) {
  const T u = kSqrtTwoOverPi<T> * (x + kGeluCubic<T> * x * x * x);
  const T th = std::tanh(u);
  const T du = kSqrtTwoOverPi<T> * (T(1) + T(3) * kGeluCubic<T> * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

template <Scalar T>
Tensor<T> map_unary(UnaryKernel kernel, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T c = static_cast<T>(kernel.constant);
  switch (kernel.op) {
    case UnaryOp::gelu:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
      break;
    case UnaryOp::scale:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = c * x[i];
      break;
    case UnaryOp::add_const:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + c;
      break;
  }
  return out;
}

template <Scalar T>
Tensor<T> map_unary_derivative(UnaryKernel kernel, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  switch (kernel.op) {
    case UnaryOp::gelu:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu_derivative(x[i]);
      break;
    case UnaryOp::scale:
      std::fill(out.values().begin(), out.values().end(), static_cast<T>(kernel.constant));
      break;
    case UnaryOp::add_const:
      std::fill(out.values().begin(), out.values().end(), T{1});
      break;
  }
  return out;
}

template <Scalar T>
Tensor<T> map_unary_vjp(UnaryKernel kernel, const Tensor<T>& x, const Tensor<T>& g) {
  require_same_shape(x.shape(), g.shape(), "map_unary_vjp");
  return hadamard(g, map_unary_derivative(kernel, x));
}

template <Scalar T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* in = x.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total{0};
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return out;
}

template <Scalar T>
Tensor<T> softmax_rows_vjp(const Tensor<T>& y, const Tensor<T>& g) {
  require_same_shape(y.shape(), g.shape(), "softmax_rows_vjp");
  Tensor<T> out(y.shape());
  const std::size_t n = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const T* yr = y.data() + r * n;
    const T* gr = g.data() + r * n;
    T dot{0};
    for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
    T* o = out.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) o[j] = yr[j] * (gr[j] - dot);
  }
  return out;
}

namespace {

struct TokenLayout {
  std::size_t batch, tokens, width;
};

TokenLayout token_layout(const Shape& s, const char* op) {
  if (s.size() == 2) return {1, s[0], s[1]};
  if (s.size() == 3) return {s[0], s[1], s[2]};
  throw ShapeError(std::string(op) + ": expected [L, d] or [B, L, d], got " + shape_string(s));
}

}  // namespace

template <Scalar T>
Tensor<T> mean_tokens(const Tensor<T>& x) {
  const auto [batch, tokens, width] = token_layout(x.shape(), "mean_tokens");
  Tensor<T> out(Shape{batch, width});
  const T inv = T(1) / static_cast<T>(tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    T* o = out.data() + b * width;
    for (std::size_t l = 0; l < tokens; ++l) {
      const T* row = x.data() + (b * tokens + l) * width;
      for (std::size_t j = 0; j < width; ++j) o[j] += row[j];
    }
    for (std::size_t j = 0; j < width; ++j) o[j] *= inv;
  }
  return out;
}

template <Scalar T>
Tensor<T> mean_tokens_vjp(const Tensor<T>& g, const Shape& shape) {
  const auto [batch, tokens, width] = token_layout(shape, "mean_tokens_vjp");
  if (g.shape() != Shape{batch, width}) {
    throw ShapeError("mean_tokens_vjp: gradient " + shape_string(g.shape()) +
                     " does not match input " + shape_string(shape));
  }
  Tensor<T> out(shape);
  const T inv = T(1) / static_cast<T>(tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* gr = g.data() + b * width;
    for (std::size_t l = 0; l < tokens; ++l) {
      T* row = out.data() + (b * tokens + l) * width;
      for (std::size_t j = 0; j < width; ++j) row[j] = gr[j] * inv;
    }
  }
  return out;
}

#define DRR_INSTANTIATE_OPS(T)                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> transpose(const Tensor<T>&);                                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> linear_weight_grad(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> linear_input_grad(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> sum_rows(const Tensor<T>&);                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> scaled(const Tensor<T>&, T);                                     \
  template Tensor<T> divided(const Tensor<T>&, T);                                    \
  template Tensor<T> add_scaled(const Tensor<T>&, const Tensor<T>&, T);               \
  template Tensor<T> hadamard(const Tensor<T>&, const Tensor<T>&);                    \
  template T sum(const Tensor<T>&);                                                   \
  template T gelu(T);                                                                 \
  template T gelu_derivative(T);                                                      \
  template Tensor<T> map_unary(UnaryKernel, const Tensor<T>&);                        \
  template Tensor<T> map_unary_derivative(UnaryKernel, const Tensor<T>&);             \
  template Tensor<T> map_unary_vjp(UnaryKernel, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                  \
  template Tensor<T> softmax_rows_vjp(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> mean_tokens(const Tensor<T>&);                                   \
  template Tensor<T> mean_tokens_vjp(const Tensor<T>&, const Shape&);

DRR_INSTANTIATE_OPS(float)
DRR_INSTANTIATE_OPS(double)

#undef DRR_INSTANTIATE_OPS

}  // namespace drr
