#pragma once

#include <string>
#include <vector>

#include "drrnet/block.hpp"

namespace drr {

enum class BlockPattern { interleaved, mlp, attention };

const char* to_string(BlockPattern pattern);
BlockPattern parse_block_pattern(const std::string& text);

/// Topology shared by the plain and the dual-residual networks.
struct NetworkConfig {
  std::size_t width = 32;
  std::size_t hidden = 64;
  std::size_t seq_len = 8;
  std::size_t classes = 10;
  std::size_t stages = 2;
  std::size_t depth_per_stage = 6;
  BlockPattern pattern = BlockPattern::interleaved;

  /// Interleaved stages start with attention.
  BlockKind kind_at(std::size_t index_in_stage) const;
  void validate() const;
  /// One `key = value` line per field, in a fixed order.
  std::string describe() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

template <Scalar T>
struct Gradients {
  std::vector<Tensor<T>> params;  // aligned with Backbone::parameters()
  Tensor<T> input;
};

/// Parameters theta: F-blocks per stage, d x d stage transitions, d x C head.
template <Scalar T>
struct Backbone {
  NetworkConfig config;
  std::vector<std::vector<FBlock<T>>> stages;
  std::vector<Tensor<T>> transitions;
  Tensor<T> head;

  static Backbone random(const NetworkConfig& config, Prng& rng);
  /// Zero blocks, identity transitions, zero head.
  static Backbone zeros(const NetworkConfig& config);

  void validate() const;

  std::size_t block_param_offset(std::size_t stage, std::size_t block) const;
  std::size_t transition_param_index(std::size_t stage) const;
  std::size_t head_param_index() const;

  std::vector<Tensor<T>*> parameters();
  std::vector<const Tensor<T>*> parameters() const;
  std::vector<std::string> parameter_names() const;
  Gradients<T> zero_gradients(const Shape& input_shape) const;

  template <Scalar U>
  Backbone<U> cast() const {
    Backbone<U> out;
    out.config = config;
    for (const auto& stage : stages) {
      auto& dst = out.stages.emplace_back();
      for (const auto& block : stage) dst.push_back(block.template cast<U>());
    }
    for (const auto& t : transitions) out.transitions.push_back(t.template cast<U>());
    out.head = head.template cast<U>();
    return out;
  }
};

/// Throws ShapeError unless x0 is [L, d] or [B, L, d] for this topology.
void require_network_input(const NetworkConfig& config, const Shape& shape);

template <Scalar T>
struct PlainCache {
  Shape input_shape;
  std::vector<std::vector<Tensor<T>>> block_inputs;  // x_{i-1} for every block
  std::vector<std::vector<BlockTrace<T>>> traces;
  std::vector<Tensor<T>> stage_outputs;  // inputs to transitions / pooling
  Tensor<T> pooled;
};

template <Scalar T>
struct PlainForward {
  Tensor<T> logits;
  PlainCache<T> cache;
};

/// The conventional residual network: x_i = F_i(x_{i-1}) + x_{i-1}, stage
/// transitions in between, head on mean-pooled final tokens.
template <Scalar T>
class PlainResidualNetwork {
 public:
  explicit PlainResidualNetwork(Backbone<T> backbone);

  Backbone<T>& backbone() { return backbone_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const NetworkConfig& config() const { return backbone_.config; }

  PlainForward<T> forward(const Tensor<T>& x0) const;
  Tensor<T> logits(const Tensor<T>& x0) const;
  Gradients<T> backprop(const PlainCache<T>& cache, const Tensor<T>& g_logits) const;

 private:
  Backbone<T> backbone_;
};

}  // namespace drr
