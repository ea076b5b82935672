#include "drrnet/block.hpp"

#include <cmath>

#include "drrnet/ops.hpp"

namespace drr {

const char* to_string(BlockKind kind) {
  return kind == BlockKind::mlp ? "mlp" : "attention";
}

namespace {

enum MlpParam { kW1 = 0, kB1 = 1, kW2 = 2, kB2 = 3 };
enum AttnParam { kWq = 0, kWk = 1, kWv = 2, kWo = 3 };
enum AttnInternal { kQ = 0, kK = 1, kV = 2, kP = 3, kC = 4 };

std::size_t token_count(const Shape& s) {
  return s[s.size() - 2];
}

}  // namespace

template <Scalar T>
const std::vector<std::string>& FBlock<T>::param_names(BlockKind kind) {
  static const std::vector<std::string> mlp{"W1", "b1", "W2", "b2"};
  static const std::vector<std::string> attention{"Wq", "Wk", "Wv", "Wo"};
  return kind == BlockKind::mlp ? mlp : attention;
}

template <Scalar T>
FBlock<T>::FBlock(BlockKind kind, std::vector<Tensor<T>> params)
    : kind_(kind), params_(std::move(params)) {
  if (params_.size() != 4) {
    throw ShapeError(std::string(to_string(kind)) + " block expects 4 parameter tensors");
  }
  auto expect = [&](std::size_t i, const Shape& s) {
    if (params_[i].shape() != s) {
      throw ShapeError(std::string(to_string(kind)) + " block parameter " + param_names(kind)[i] +
                       " has shape " + shape_string(params_[i].shape()) + ", expected " +
                       shape_string(s));
    }
  };
  if (params_[0].rank() != 2) throw ShapeError("block weight must be 2-D");
  width_ = params_[0].dim(0);
  if (kind == BlockKind::mlp) {
    hidden_ = params_[kW1].dim(1);
    expect(kB1, {hidden_});
    expect(kW2, {hidden_, width_});
    expect(kB2, {width_});
  } else {
    for (std::size_t i = 0; i < 4; ++i) expect(i, {width_, width_});
  }
}

template <Scalar T>
FBlock<T> FBlock<T>::zeros(BlockKind kind, std::size_t width, std::size_t hidden) {
  if (kind == BlockKind::mlp) {
    return FBlock(kind, {Tensor<T>({width, hidden}), Tensor<T>({hidden}),
                         Tensor<T>({hidden, width}), Tensor<T>({width})});
  }
  return FBlock(kind, {Tensor<T>({width, width}), Tensor<T>({width, width}),
                       Tensor<T>({width, width}), Tensor<T>({width, width})});
}

template <Scalar T>
FBlock<T> FBlock<T>::random(BlockKind kind, std::size_t width, std::size_t hidden, Prng& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(width));
  if (kind == BlockKind::mlp) {
    // Draw order fixed: W1, W2.
    auto w1 = normal_tensor<T>(rng, {width, hidden}, stddev);
    auto w2 = normal_tensor<T>(rng, {hidden, width}, stddev);
    return FBlock(kind, {std::move(w1), Tensor<T>({hidden}), std::move(w2), Tensor<T>({width})});
  }
  std::vector<Tensor<T>> params;
  for (int i = 0; i < 4; ++i) params.push_back(normal_tensor<T>(rng, {width, width}, stddev));
  return FBlock(kind, std::move(params));
}

template <Scalar T>
void FBlock<T>::check_input(const Tensor<T>& x) const {
  if (x.cols() != width_) {
    throw ShapeError(std::string(to_string(kind_)) + " block of width " + std::to_string(width_) +
                     " got input " + shape_string(x.shape()));
  }
  if (kind_ == BlockKind::attention && x.rank() < 2) {
    throw ShapeError("attention block needs [L, d] or [B, L, d] input, got " +
                     shape_string(x.shape()));
  }
}

template <Scalar T>
Tensor<T> FBlock<T>::forward(const Tensor<T>& x) const {
  BlockTrace<T> scratch;
  return forward(x, scratch);
}

template <Scalar T>
Tensor<T> FBlock<T>::forward(const Tensor<T>& x, BlockTrace<T>& trace) const {
  check_input(x);
  trace.internals.clear();
  if (kind_ == BlockKind::mlp) {
    Tensor<T> h = add_bias(linear(x, params_[kW1]), params_[kB1]);
    Tensor<T> a = map_unary(UnaryKernel::gelu(), h);
    Tensor<T> out = add_bias(linear(a, params_[kW2]), params_[kB2]);
    trace.internals.push_back(std::move(h));
    trace.internals.push_back(std::move(a));
    return out;
  }

  const std::size_t d = width_;
  const std::size_t L = token_count(x.shape());
  const std::size_t batch = x.rows() / L;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));

  Tensor<T> q = linear(x, params_[kWq]);
  Tensor<T> k = linear(x, params_[kWk]);
  Tensor<T> v = linear(x, params_[kWv]);
  Tensor<T> scores(Shape{batch, L, L});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t l = 0; l < L; ++l) {
      const T* qr = q.data() + (b * L + l) * d;
      for (std::size_t m = 0; m < L; ++m) {
        const T* kr = k.data() + (b * L + m) * d;
        T dot{0};
        for (std::size_t j = 0; j < d; ++j) dot += qr[j] * kr[j];
        scores[(b * L + l) * L + m] = dot * scale;
      }
    }
  }
  Tensor<T> p = softmax_rows(scores);
  Tensor<T> c(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t l = 0; l < L; ++l) {
      T* cr = c.data() + (b * L + l) * d;
      for (std::size_t m = 0; m < L; ++m) {
        const T w = p[(b * L + l) * L + m];
        const T* vr = v.data() + (b * L + m) * d;
        for (std::size_t j = 0; j < d; ++j) cr[j] += w * vr[j];
      }
    }
  }
  Tensor<T> out = linear(c, params_[kWo]);
  trace.internals.push_back(std::move(q));
  trace.internals.push_back(std::move(k));
  trace.internals.push_back(std::move(v));
  trace.internals.push_back(std::move(p));
  trace.internals.push_back(std::move(c));
  return out;
}

template <Scalar T>
BlockGrad<T> FBlock<T>::vjp(const Tensor<T>& x, const Tensor<T>& g_out) const {
  BlockTrace<T> trace;
  forward(x, trace);
  return vjp(x, trace, g_out);
}

template <Scalar T>
BlockGrad<T> FBlock<T>::vjp(const Tensor<T>& x, const BlockTrace<T>& trace,
                            const Tensor<T>& g_out) const {
  check_input(x);
  if (g_out.shape() != x.shape()) {
    throw ShapeError(std::string(to_string(kind_)) + " block vjp: upstream gradient " +
                     shape_string(g_out.shape()) + " does not match input " +
                     shape_string(x.shape()));
  }
  const std::size_t expected = kind_ == BlockKind::mlp ? 2 : 5;
  if (trace.internals.size() != expected) {
    throw ShapeError("block vjp: trace does not belong to a " + std::string(to_string(kind_)) +
                     " block");
  }

  BlockGrad<T> grad;
  grad.params.resize(4);
  if (kind_ == BlockKind::mlp) {
    const Tensor<T>& h = trace.internals[0];
    const Tensor<T>& a = trace.internals[1];
    grad.params[kW2] = linear_weight_grad(a, g_out);
    grad.params[kB2] = sum_rows(g_out);
    Tensor<T> g_h = map_unary_vjp(UnaryKernel::gelu(), h, linear_input_grad(g_out, params_[kW2]));
    grad.params[kW1] = linear_weight_grad(x, g_h);
    grad.params[kB1] = sum_rows(g_h);
    grad.input = linear_input_grad(g_h, params_[kW1]);
    return grad;
  }

  const std::size_t d = width_;
  const std::size_t L = token_count(x.shape());
  const std::size_t batch = x.rows() / L;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const Tensor<T>& q = trace.internals[kQ];
  const Tensor<T>& k = trace.internals[kK];
  const Tensor<T>& v = trace.internals[kV];
  const Tensor<T>& p = trace.internals[kP];
  const Tensor<T>& c = trace.internals[kC];

  grad.params[kWo] = linear_weight_grad(c, g_out);
  Tensor<T> g_c = linear_input_grad(g_out, params_[kWo]);

  Tensor<T> g_p(p.shape());
  Tensor<T> g_v(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t l = 0; l < L; ++l) {
      const T* gcr = g_c.data() + (b * L + l) * d;
      for (std::size_t m = 0; m < L; ++m) {
        const T* vr = v.data() + (b * L + m) * d;
        T dot{0};
        for (std::size_t j = 0; j < d; ++j) dot += gcr[j] * vr[j];
        g_p[(b * L + l) * L + m] = dot;
        const T w = p[(b * L + l) * L + m];
        T* gvr = g_v.data() + (b * L + m) * d;
        for (std::size_t j = 0; j < d; ++j) gvr[j] += w * gcr[j];
      }
    }
  }
  Tensor<T> g_s = scaled(softmax_rows_vjp(p, g_p), scale);

  Tensor<T> g_q(x.shape());
  Tensor<T> g_k(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t l = 0; l < L; ++l) {
      T* gqr = g_q.data() + (b * L + l) * d;
      const T* qr = q.data() + (b * L + l) * d;
      for (std::size_t m = 0; m < L; ++m) {
        const T w = g_s[(b * L + l) * L + m];
        const T* kr = k.data() + (b * L + m) * d;
        T* gkr = g_k.data() + (b * L + m) * d;
        for (std::size_t j = 0; j < d; ++j) {
          gqr[j] += w * kr[j];
          gkr[j] += w * qr[j];
        }
      }
    }
  }

  grad.params[kWq] = linear_weight_grad(x, g_q);
  grad.params[kWk] = linear_weight_grad(x, g_k);
  grad.params[kWv] = linear_weight_grad(x, g_v);
  grad.input = add(add(linear_input_grad(g_q, params_[kWq]), linear_input_grad(g_k, params_[kWk])),
                   linear_input_grad(g_v, params_[kWv]));
  return grad;
}

template <Scalar T>
Tensor<T> g_apply(const FBlock<T>& block, T alpha, const Tensor<T>& x) {
  return add_scaled(block.forward(x), x, alpha);
}

template <Scalar T>
Tensor<T> g_apply(const FBlock<T>& block, T alpha, const Tensor<T>& x, BlockTrace<T>& trace) {
  return add_scaled(block.forward(x, trace), x, alpha);
}

template class FBlock<float>;
template class FBlock<double>;
template Tensor<float> g_apply(const FBlock<float>&, float, const Tensor<float>&);
template Tensor<double> g_apply(const FBlock<double>&, double, const Tensor<double>&);
template Tensor<float> g_apply(const FBlock<float>&, float, const Tensor<float>&,
                               BlockTrace<float>&);
template Tensor<double> g_apply(const FBlock<double>&, double, const Tensor<double>&,
                                BlockTrace<double>&);

}  // namespace drr
