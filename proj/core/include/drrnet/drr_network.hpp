#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "drrnet/checkpoint.hpp"
#include "drrnet/ledger.hpp"
#include "drrnet/network.hpp"

namespace drr {

/// The two residual weights shared by every module of the network.
/// alpha scales the original shortcut inside G, beta the added one.
struct Coefficients {
  double alpha = 1.0;
  double beta = 0.1;

  friend bool operator==(const Coefficients&, const Coefficients&) = default;
};

enum class ExecutionMode { cached, reversible };

const char* to_string(ExecutionMode mode);

/// dr2: the Dr2Net starting point (alpha, beta) = (1, 0.1).
/// hard: fully reversible (0, 1) loaded with the same parameters.
enum class InitVariant { dr2, hard };

inline constexpr Coefficients kDr2InitCoefficients{1.0, 0.1};
inline constexpr Coefficients kHardInitCoefficients{0.0, 1.0};

template <Scalar T>
struct StageBoundary {
  Tracked<T> x;
  Tracked<T> y;
};

/// What reversible execution keeps: one (x_N, y_N) pair per stage.
template <Scalar T>
struct ReversibleForward {
  Shape input_shape;
  Coefficients coefficients;
  std::vector<StageBoundary<T>> boundaries;
  Tracked<T> pooled;
  Tensor<T> logits;
};

template <Scalar T>
struct CachedStage {
  std::vector<Tracked<T>> x;  // x_0 .. x_N
  std::vector<Tracked<T>> y;  // y_0 .. y_N
  std::vector<BlockTrace<T>> traces;  // module 1 .. N
  std::vector<LedgerToken> trace_tokens;
};

/// Everything conventional backpropagation keeps.
template <Scalar T>
struct CachedForward {
  Shape input_shape;
  Coefficients coefficients;
  std::vector<CachedStage<T>> stages;
  Tracked<T> pooled;
  Tensor<T> logits;
};

/// Activations of one stage indexed by module: x[i], y[i] for i = 0 .. N.
template <Scalar T>
struct StageActivations {
  std::vector<Tensor<T>> x;
  std::vector<Tensor<T>> y;
};

template <Scalar T>
struct StepOutput {
  Tensor<T> logits;
  Gradients<T> grads;
};

/// Dynamic reversible dual-residual network. Per module i of a stage:
///
///   y_i = beta * x_{i-1}
///   x_i = G_i(x_{i-1}) + y_{i-1},   G_i(x) = F_i(x) + alpha * x
///
/// with y_0 = beta * x_0, so (alpha, beta) = (1, 0) is exactly the plain
/// residual network. Inverse, for beta != 0:
///
///   x_{i-1} = y_i / beta
///   y_{i-1} = x_i - G_i(x_{i-1})
///
/// Stage transitions and the head read x_N only.
///
/// Forward results hold ledger tokens and must not outlive the network.
/// One step at a time per instance.
template <Scalar T>
class DrrNetwork {
 public:
  DrrNetwork(Backbone<T> backbone, Coefficients coefficients,
             ExecutionMode mode = ExecutionMode::reversible);

  /// Copies theta from a pretrained checkpoint; coefficients per `variant`.
  static DrrNetwork from_pretrained(const NetworkConfig& config, const Checkpoint& ckpt,
                                    InitVariant variant = InitVariant::dr2);

  Backbone<T>& backbone() { return backbone_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const NetworkConfig& config() const { return backbone_.config; }

  Coefficients coefficients() const { return coefficients_; }
  void set_coefficients(Coefficients c);
  ExecutionMode mode() const { return mode_; }
  void set_mode(ExecutionMode mode) { mode_ = mode; }

  ReversibleForward<T> forward_reversible(const Tensor<T>& x0);
  CachedForward<T> forward_cached(const Tensor<T>& x0);

  /// Inference only; nothing retained, valid for any beta.
  Tensor<T> logits(const Tensor<T>& x0) const;

  /// Every (x_i, y_i) of every stage, computed exactly as the forward passes
  /// do but outside the ledger. Reference for reconstruction checks.
  std::vector<StageActivations<T>> activations(const Tensor<T>& x0) const;

  /// Rebuilds every (x_i, y_i) of `stage` from its output pair.
  StageActivations<T> reverse_stage(std::size_t stage, const Tensor<T>& x_n,
                                    const Tensor<T>& y_n) const;

  Gradients<T> backprop_cached(const CachedForward<T>& fwd, const Tensor<T>& g_logits);
  /// Reconstructs activations module by module, releasing each module's
  /// tensors before moving on.
  Gradients<T> backprop_reversible(const ReversibleForward<T>& fwd, const Tensor<T>& g_logits);

  /// Forward + backward in the current mode. `loss_grad` maps logits to dL/dlogits.
  StepOutput<T> forward_backward(const Tensor<T>& x0,
                                 const std::function<Tensor<T>(const Tensor<T>&)>& loss_grad);

  const ActivationLedger& ledger() const { return *ledger_; }
  LedgerReport ledger_report() const { return ledger_->report(); }

 private:
  void require_reversible() const;
  Tensor<T> head_backward(const Tensor<T>& pooled, const Shape& shape, const Tensor<T>& g_logits,
                          Gradients<T>& grads) const;

  Backbone<T> backbone_;
  Coefficients coefficients_;
  ExecutionMode mode_;
  std::unique_ptr<ActivationLedger> ledger_;
};

}  // namespace drr
