#include "drrnet/drr_network.hpp"

#include <string>

#include "drrnet/ops.hpp"

namespace drr {

const char* to_string(ExecutionMode mode) {
  return mode == ExecutionMode::cached ? "cached" : "reversible";
}

namespace {

void validate_coefficients(Coefficients c) {
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0) || !(c.beta >= 0.0 && c.beta <= 1.0)) {
    throw ConfigError("coefficients must lie in [0, 1], got alpha=" + std::to_string(c.alpha) +
                      " beta=" + std::to_string(c.beta));
  }
}

// One dual-residual module: (x_{i-1}, y_{i-1}) -> (x_i, y_i). Both execution
// modes go through here so their outputs agree bit for bit.
template <Scalar T>
std::pair<Tensor<T>, Tensor<T>> module_forward(const FBlock<T>& block, T alpha, T beta,
                                               const Tensor<T>& x, const Tensor<T>& y,
                                               BlockTrace<T>& trace) {
  Tensor<T> x_next = add(g_apply(block, alpha, x, trace), y);
  return {std::move(x_next), scaled(x, beta)};
}

// Gradient of one module. On entry g_x, g_y hold dL/dx_i, dL/dy_i; on exit
// dL/dx_{i-1}, dL/dy_{i-1}:
//   g_x_{i-1} = beta * g_y_i + F'(x_{i-1})^T g_x_i + alpha * g_x_i
//   g_y_{i-1} = g_x_i
template <Scalar T>
void module_backward(const FBlock<T>& block, T alpha, T beta, const Tensor<T>& x_prev,
                     const BlockTrace<T>& trace, Tensor<T>& g_x, Tensor<T>& g_y,
                     Gradients<T>& grads, std::size_t param_offset) {
  BlockGrad<T> bg = block.vjp(x_prev, trace, g_x);
  for (std::size_t k = 0; k < bg.params.size(); ++k) {
    grads.params[param_offset + k] = std::move(bg.params[k]);
  }
  Tensor<T> g_prev(g_x.shape());
  for (std::size_t e = 0; e < g_prev.size(); ++e) {
    g_prev[e] = (beta * g_y[e] + bg.input[e]) + alpha * g_x[e];
  }
  g_y = std::move(g_x);
  g_x = std::move(g_prev);
}

}  // namespace

template <Scalar T>
DrrNetwork<T>::DrrNetwork(Backbone<T> backbone, Coefficients coefficients, ExecutionMode mode)
    : backbone_(std::move(backbone)),
      coefficients_(coefficients),
      mode_(mode),
      ledger_(std::make_unique<ActivationLedger>()) {
  backbone_.validate();
  validate_coefficients(coefficients_);
}

template <Scalar T>
DrrNetwork<T> DrrNetwork<T>::from_pretrained(const NetworkConfig& config, const Checkpoint& ckpt,
                                             InitVariant variant) {
  const Coefficients c =
      variant == InitVariant::dr2 ? kDr2InitCoefficients : kHardInitCoefficients;
  return DrrNetwork(backbone_from_checkpoint<T>(ckpt, config), c, ExecutionMode::reversible);
}

template <Scalar T>
void DrrNetwork<T>::set_coefficients(Coefficients c) {
  validate_coefficients(c);
  coefficients_ = c;
}

template <Scalar T>
void DrrNetwork<T>::require_reversible() const {
  if (coefficients_.beta == 0.0) {
    throw ReversibilityError("reversible execution needs beta != 0 (alpha=" +
                             std::to_string(coefficients_.alpha) + ", beta=0)");
  }
}

template <Scalar T>
ReversibleForward<T> DrrNetwork<T>::forward_reversible(const Tensor<T>& x0) {
  require_reversible();
  require_network_input(config(), x0.shape());
  const T alpha = static_cast<T>(coefficients_.alpha);
  const T beta = static_cast<T>(coefficients_.beta);
  ActivationLedger& ledger = *ledger_;
  ledger.begin_step();

  ReversibleForward<T> out;
  out.input_shape = x0.shape();
  out.coefficients = coefficients_;
  for (std::size_t s = 0; s < backbone_.stages.size(); ++s) {
    Tracked<T> x(ledger, s == 0 ? x0
                                : linear(out.boundaries.back().x.value, backbone_.transitions[s - 1]));
    Tracked<T> y(ledger, scaled(x.value, beta));
    for (const auto& block : backbone_.stages[s]) {
      BlockTrace<T> trace;
      auto [xn, yn] = module_forward(block, alpha, beta, x.value, y.value, trace);
      LedgerToken trace_token = ledger.acquire(trace.bytes());
      Tracked<T> x_next(ledger, std::move(xn));
      Tracked<T> y_next(ledger, std::move(yn));
      trace_token.reset();
      x = std::move(x_next);
      y = std::move(y_next);
    }
    out.boundaries.push_back({std::move(x), std::move(y)});
  }
  out.pooled = Tracked<T>(ledger, mean_tokens(out.boundaries.back().x.value));
  out.logits = linear(out.pooled.value, backbone_.head);
  return out;
}

template <Scalar T>
CachedForward<T> DrrNetwork<T>::forward_cached(const Tensor<T>& x0) {
  require_network_input(config(), x0.shape());
  const T alpha = static_cast<T>(coefficients_.alpha);
  const T beta = static_cast<T>(coefficients_.beta);
  ActivationLedger& ledger = *ledger_;
  ledger.begin_step();

  CachedForward<T> out;
  out.input_shape = x0.shape();
  out.coefficients = coefficients_;
  for (std::size_t s = 0; s < backbone_.stages.size(); ++s) {
    CachedStage<T>& st = out.stages.emplace_back();
    Tensor<T> x_in = s == 0 ? x0 : linear(out.stages[s - 1].x.back().value,
                                          backbone_.transitions[s - 1]);
    Tensor<T> y_in = scaled(x_in, beta);
    st.x.emplace_back(ledger, std::move(x_in));
    st.y.emplace_back(ledger, std::move(y_in));
    for (const auto& block : backbone_.stages[s]) {
      BlockTrace<T> trace;
      auto [xn, yn] = module_forward(block, alpha, beta, st.x.back().value, st.y.back().value, trace);
      st.trace_tokens.push_back(ledger.acquire(trace.bytes()));
      st.traces.push_back(std::move(trace));
      st.x.emplace_back(ledger, std::move(xn));
      st.y.emplace_back(ledger, std::move(yn));
    }
  }
  out.pooled = Tracked<T>(ledger, mean_tokens(out.stages.back().x.back().value));
  out.logits = linear(out.pooled.value, backbone_.head);
  return out;
}

template <Scalar T>
Tensor<T> DrrNetwork<T>::logits(const Tensor<T>& x0) const {
  require_network_input(config(), x0.shape());
  const T alpha = static_cast<T>(coefficients_.alpha);
  const T beta = static_cast<T>(coefficients_.beta);
  Tensor<T> x = x0;
  for (std::size_t s = 0; s < backbone_.stages.size(); ++s) {
    if (s > 0) x = linear(x, backbone_.transitions[s - 1]);
    Tensor<T> y = scaled(x, beta);
    for (const auto& block : backbone_.stages[s]) {
      BlockTrace<T> trace;
      auto [xn, yn] = module_forward(block, alpha, beta, x, y, trace);
      x = std::move(xn);
      y = std::move(yn);
    }
  }
  return linear(mean_tokens(x), backbone_.head);
}

template <Scalar T>
std::vector<StageActivations<T>> DrrNetwork<T>::activations(const Tensor<T>& x0) const {
  require_network_input(config(), x0.shape());
  const T alpha = static_cast<T>(coefficients_.alpha);
  const T beta = static_cast<T>(coefficients_.beta);
  std::vector<StageActivations<T>> out;
  for (std::size_t s = 0; s < backbone_.stages.size(); ++s) {
    StageActivations<T>& acts = out.emplace_back();
    acts.x.push_back(s == 0 ? x0 : linear(out[s - 1].x.back(), backbone_.transitions[s - 1]));
    acts.y.push_back(scaled(acts.x.back(), beta));
    for (const auto& block : backbone_.stages[s]) {
      BlockTrace<T> trace;
      auto [xn, yn] = module_forward(block, alpha, beta, acts.x.back(), acts.y.back(), trace);
      acts.x.push_back(std::move(xn));
      acts.y.push_back(std::move(yn));
    }
  }
  return out;
}

template <Scalar T>
StageActivations<T> DrrNetwork<T>::reverse_stage(std::size_t stage, const Tensor<T>& x_n,
                                                 const Tensor<T>& y_n) const {
  require_reversible();
  if (stage >= backbone_.stages.size()) throw ShapeError("reverse_stage: no such stage");
  require_same_shape(x_n.shape(), y_n.shape(), "reverse_stage");
  const T alpha = static_cast<T>(coefficients_.alpha);
  const T beta = static_cast<T>(coefficients_.beta);
  const auto& blocks = backbone_.stages[stage];
  const std::size_t n = blocks.size();

  StageActivations<T> acts;
  acts.x.resize(n + 1);
  acts.y.resize(n + 1);
  acts.x[n] = x_n;
  acts.y[n] = y_n;
  for (std::size_t i = n; i >= 1; --i) {
    acts.x[i - 1] = divided(acts.y[i], beta);
    acts.y[i - 1] = sub(acts.x[i], g_apply(blocks[i - 1], alpha, acts.x[i - 1]));
  }
  return acts;
}

template <Scalar T>
Tensor<T> DrrNetwork<T>::head_backward(const Tensor<T>& pooled, const Shape& shape,
                                       const Tensor<T>& g_logits, Gradients<T>& grads) const {
  if (g_logits.shape() != Shape{pooled.dim(0), config().classes}) {
    throw ShapeError("logits gradient " + shape_string(g_logits.shape()) + " does not match [" +
                     std::to_string(pooled.dim(0)) + "x" + std::to_string(config().classes) + "]");
  }
  grads.params[backbone_.head_param_index()] = matmul_tn(pooled, g_logits);
  return mean_tokens_vjp(matmul_nt(g_logits, backbone_.head), shape);
}

template <Scalar T>
Gradients<T> DrrNetwork<T>::backprop_cached(const CachedForward<T>& fwd,
                                            const Tensor<T>& g_logits) {
  if (fwd.stages.size() != backbone_.stages.size()) {
    throw ShapeError("backprop_cached: forward result does not belong to this network");
  }
  if (!(fwd.coefficients == coefficients_)) {
    throw InvariantError("backprop_cached: coefficients changed since the forward pass");
  }
  const T alpha = static_cast<T>(coefficients_.alpha);
  const T beta = static_cast<T>(coefficients_.beta);
  Gradients<T> grads = backbone_.zero_gradients(fwd.input_shape);
  Tensor<T> g_x = head_backward(fwd.pooled.value, fwd.input_shape, g_logits, grads);

  for (std::size_t s = backbone_.stages.size(); s-- > 0;) {
    const CachedStage<T>& st = fwd.stages[s];
    const auto& blocks = backbone_.stages[s];
    Tensor<T> g_y(g_x.shape());  // head and transitions read x_N only
    for (std::size_t i = blocks.size(); i >= 1; --i) {
      module_backward(blocks[i - 1], alpha, beta, st.x[i - 1].value, st.traces[i - 1], g_x, g_y,
                      grads, backbone_.block_param_offset(s, i - 1));
    }
    Tensor<T> g_in = add_scaled(g_x, g_y, beta);  // y_0 = beta * x_0
    if (s > 0) {
      const Tensor<T>& prev_out = fwd.stages[s - 1].x.back().value;
      grads.params[backbone_.transition_param_index(s - 1)] = linear_weight_grad(prev_out, g_in);
      g_x = linear_input_grad(g_in, backbone_.transitions[s - 1]);
    } else {
      grads.input = std::move(g_in);
    }
  }
  return grads;
}

template <Scalar T>
Gradients<T> DrrNetwork<T>::backprop_reversible(const ReversibleForward<T>& fwd,
                                                const Tensor<T>& g_logits) {
  require_reversible();
  if (fwd.boundaries.size() != backbone_.stages.size()) {
    throw ShapeError("backprop_reversible: forward result does not belong to this network");
  }
  if (!(fwd.coefficients == coefficients_)) {
    throw InvariantError("backprop_reversible: coefficients changed since the forward pass");
  }
  const T alpha = static_cast<T>(coefficients_.alpha);
  const T beta = static_cast<T>(coefficients_.beta);
  ActivationLedger& ledger = *ledger_;
  Gradients<T> grads = backbone_.zero_gradients(fwd.input_shape);
  Tensor<T> g_x = head_backward(fwd.pooled.value, fwd.input_shape, g_logits, grads);

  for (std::size_t s = backbone_.stages.size(); s-- > 0;) {
    const auto& blocks = backbone_.stages[s];
    Tensor<T> g_y(g_x.shape());
    // (x_i, y_i): the cached boundary pair first, then reconstructed transients.
    const Tensor<T>* x_cur = &fwd.boundaries[s].x.value;
    const Tensor<T>* y_cur = &fwd.boundaries[s].y.value;
    Tracked<T> held_x, held_y;
    for (std::size_t i = blocks.size(); i >= 1; --i) {
      const auto& block = blocks[i - 1];
      Tracked<T> x_prev(ledger, divided(*y_cur, beta));
      BlockTrace<T> trace;
      Tracked<T> y_prev(ledger, sub(*x_cur, g_apply(block, alpha, x_prev.value, trace)));
      LedgerToken trace_token = ledger.acquire(trace.bytes());
      if (!x_prev.value.all_finite() || !y_prev.value.all_finite()) {
        throw NumericError("non-finite activation reconstructed at stage " + std::to_string(s) +
                           " module " + std::to_string(i) + " (alpha=" +
                           std::to_string(coefficients_.alpha) +
                           ", beta=" + std::to_string(coefficients_.beta) + ")");
      }
      module_backward(block, alpha, beta, x_prev.value, trace, g_x, g_y, grads,
                      backbone_.block_param_offset(s, i - 1));
      trace_token.reset();
      held_x = std::move(x_prev);
      held_y = std::move(y_prev);
      x_cur = &held_x.value;
      y_cur = &held_y.value;
    }
    Tensor<T> g_in = add_scaled(g_x, g_y, beta);
    if (s > 0) {
      const Tensor<T>& prev_out = fwd.boundaries[s - 1].x.value;
      grads.params[backbone_.transition_param_index(s - 1)] = linear_weight_grad(prev_out, g_in);
      g_x = linear_input_grad(g_in, backbone_.transitions[s - 1]);
    } else {
      grads.input = std::move(g_in);
    }
  }
  return grads;
}

template <Scalar T>
StepOutput<T> DrrNetwork<T>::forward_backward(
    const Tensor<T>& x0, const std::function<Tensor<T>(const Tensor<T>&)>& loss_grad) {
  StepOutput<T> out;
  if (mode_ == ExecutionMode::reversible) {
    ReversibleForward<T> fwd = forward_reversible(x0);
    out.grads = backprop_reversible(fwd, loss_grad(fwd.logits));
    out.logits = std::move(fwd.logits);
  } else {
    CachedForward<T> fwd = forward_cached(x0);
    out.grads = backprop_cached(fwd, loss_grad(fwd.logits));
    out.logits = std::move(fwd.logits);
  }
  return out;
}

template class DrrNetwork<float>;
template class DrrNetwork<double>;

}  // namespace drr
