#include "drrnet/network.hpp"

#include <cmath>
#include <sstream>

#include "drrnet/ops.hpp"

namespace drr {

const char* to_string(BlockPattern pattern) {
  switch (pattern) {
    case BlockPattern::interleaved:
      return "interleaved";
    case BlockPattern::mlp:
      return "mlp";
    case BlockPattern::attention:
      return "attention";
  }
  return "?";
}

BlockPattern parse_block_pattern(const std::string& text) {
  if (text == "interleaved") return BlockPattern::interleaved;
  if (text == "mlp") return BlockPattern::mlp;
  if (text == "attention") return BlockPattern::attention;
  throw ConfigError("model.pattern must be interleaved, mlp or attention, got '" + text + "'");
}

BlockKind NetworkConfig::kind_at(std::size_t index_in_stage) const {
  switch (pattern) {
    case BlockPattern::mlp:
      return BlockKind::mlp;
    case BlockPattern::attention:
      return BlockKind::attention;
    case BlockPattern::interleaved:
      break;
  }
  return index_in_stage % 2 == 0 ? BlockKind::attention : BlockKind::mlp;
}

void NetworkConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(std::string(key) + " must be positive");
  };
  positive(width, "model.width");
  positive(hidden, "model.hidden");
  positive(seq_len, "model.seq_len");
  positive(classes, "model.classes");
  positive(stages, "model.stages");
}

std::string NetworkConfig::describe() const {
  std::ostringstream out;
  out << "model.width = " << width << "\n"
      << "model.hidden = " << hidden << "\n"
      << "model.seq_len = " << seq_len << "\n"
      << "model.classes = " << classes << "\n"
      << "model.stages = " << stages << "\n"
      << "model.depth_per_stage = " << depth_per_stage << "\n"
      << "model.pattern = " << to_string(pattern) << "\n";
  return out.str();
}

void require_network_input(const NetworkConfig& config, const Shape& shape) {
  const bool ok = (shape.size() == 2 || shape.size() == 3) && shape.back() == config.width &&
                  shape[shape.size() - 2] == config.seq_len;
  if (!ok) {
    throw ShapeError("network input " + shape_string(shape) + " does not match [B, " +
                     std::to_string(config.seq_len) + ", " + std::to_string(config.width) + "]");
  }
}

template <Scalar T>
Backbone<T> Backbone<T>::random(const NetworkConfig& config, Prng& rng) {
  config.validate();
  Backbone b;
  b.config = config;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(config.width));
  for (std::size_t s = 0; s < config.stages; ++s) {
    auto& stage = b.stages.emplace_back();
    for (std::size_t i = 0; i < config.depth_per_stage; ++i) {
      Prng block_rng = rng.child("stage" + std::to_string(s) + ".block" + std::to_string(i));
      stage.push_back(FBlock<T>::random(config.kind_at(i), config.width, config.hidden, block_rng));
    }
  }
  for (std::size_t s = 0; s + 1 < config.stages; ++s) {
    Prng t_rng = rng.child("transition" + std::to_string(s));
    b.transitions.push_back(normal_tensor<T>(t_rng, {config.width, config.width}, stddev));
  }
  Prng head_rng = rng.child("head");
  b.head = normal_tensor<T>(head_rng, {config.width, config.classes}, stddev);
  return b;
}

template <Scalar T>
Backbone<T> Backbone<T>::zeros(const NetworkConfig& config) {
  config.validate();
  Backbone b;
  b.config = config;
  for (std::size_t s = 0; s < config.stages; ++s) {
    auto& stage = b.stages.emplace_back();
    for (std::size_t i = 0; i < config.depth_per_stage; ++i) {
      stage.push_back(FBlock<T>::zeros(config.kind_at(i), config.width, config.hidden));
    }
  }
  for (std::size_t s = 0; s + 1 < config.stages; ++s) {
    b.transitions.push_back(Tensor<T>::identity(config.width));
  }
  b.head = Tensor<T>(Shape{config.width, config.classes});
  return b;
}

template <Scalar T>
void Backbone<T>::validate() const {
  config.validate();
  if (stages.size() != config.stages) throw ShapeError("backbone stage count differs from config");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (stages[s].size() != config.depth_per_stage) {
      throw ShapeError("backbone stage " + std::to_string(s) + " has " +
                       std::to_string(stages[s].size()) + " blocks, config says " +
                       std::to_string(config.depth_per_stage));
    }
    for (std::size_t i = 0; i < stages[s].size(); ++i) {
      const auto& blk = stages[s][i];
      if (blk.width() != config.width || blk.kind() != config.kind_at(i) ||
          (blk.kind() == BlockKind::mlp && blk.hidden() != config.hidden)) {
        throw ShapeError("backbone block stage" + std::to_string(s) + ".block" +
                         std::to_string(i) + " does not match the configured topology");
      }
    }
  }
  if (transitions.size() + 1 != config.stages) throw ShapeError("backbone transition count");
  for (const auto& t : transitions) {
    require_same_shape(t.shape(), {config.width, config.width}, "backbone transition");
  }
  require_same_shape(head.shape(), {config.width, config.classes}, "backbone head");
}

template <Scalar T>
std::size_t Backbone<T>::block_param_offset(std::size_t stage, std::size_t block) const {
  return 4 * (stage * config.depth_per_stage + block);
}

template <Scalar T>
std::size_t Backbone<T>::transition_param_index(std::size_t stage) const {
  return 4 * config.stages * config.depth_per_stage + stage;
}

template <Scalar T>
std::size_t Backbone<T>::head_param_index() const {
  return 4 * config.stages * config.depth_per_stage + transitions.size();
}

template <Scalar T>
std::vector<Tensor<T>*> Backbone<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto& stage : stages) {
    for (auto& block : stage) {
      for (auto& p : block.params()) out.push_back(&p);
    }
  }
  for (auto& t : transitions) out.push_back(&t);
  out.push_back(&head);
  return out;
}

template <Scalar T>
std::vector<const Tensor<T>*> Backbone<T>::parameters() const {
  std::vector<const Tensor<T>*> out;
  for (const auto& stage : stages) {
    for (const auto& block : stage) {
      for (const auto& p : block.params()) out.push_back(&p);
    }
  }
  for (const auto& t : transitions) out.push_back(&t);
  out.push_back(&head);
  return out;
}

template <Scalar T>
std::vector<std::string> Backbone<T>::parameter_names() const {
  std::vector<std::string> out;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t i = 0; i < stages[s].size(); ++i) {
      const std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(i) + ".";
      for (const auto& n : FBlock<T>::param_names(stages[s][i].kind())) out.push_back(prefix + n);
    }
  }
  for (std::size_t s = 0; s < transitions.size(); ++s) {
    out.push_back("transition" + std::to_string(s));
  }
  out.push_back("head");
  return out;
}

template <Scalar T>
Gradients<T> Backbone<T>::zero_gradients(const Shape& input_shape) const {
  Gradients<T> g;
  for (const auto* p : parameters()) g.params.emplace_back(p->shape());
  g.input = Tensor<T>(input_shape);
  return g;
}

template <Scalar T>
PlainResidualNetwork<T>::PlainResidualNetwork(Backbone<T> backbone)
    : backbone_(std::move(backbone)) {
  backbone_.validate();
}

template <Scalar T>
PlainForward<T> PlainResidualNetwork<T>::forward(const Tensor<T>& x0) const {
  require_network_input(config(), x0.shape());
  PlainForward<T> result;
  PlainCache<T>& cache = result.cache;
  cache.input_shape = x0.shape();
  Tensor<T> x = x0;
  for (std::size_t s = 0; s < backbone_.stages.size(); ++s) {
    if (s > 0) x = linear(cache.stage_outputs.back(), backbone_.transitions[s - 1]);
    auto& inputs = cache.block_inputs.emplace_back();
    auto& traces = cache.traces.emplace_back();
    for (const auto& block : backbone_.stages[s]) {
      BlockTrace<T> trace;
      Tensor<T> next = add(block.forward(x, trace), x);
      inputs.push_back(std::move(x));
      traces.push_back(std::move(trace));
      x = std::move(next);
    }
    cache.stage_outputs.push_back(std::move(x));
  }
  cache.pooled = mean_tokens(cache.stage_outputs.back());
  result.logits = linear(cache.pooled, backbone_.head);
  return result;
}

template <Scalar T>
Tensor<T> PlainResidualNetwork<T>::logits(const Tensor<T>& x0) const {
  require_network_input(config(), x0.shape());
  Tensor<T> x = x0;
  for (std::size_t s = 0; s < backbone_.stages.size(); ++s) {
    if (s > 0) x = linear(x, backbone_.transitions[s - 1]);
    for (const auto& block : backbone_.stages[s]) x = add(block.forward(x), x);
  }
  return linear(mean_tokens(x), backbone_.head);
}

template <Scalar T>
Gradients<T> PlainResidualNetwork<T>::backprop(const PlainCache<T>& cache,
                                               const Tensor<T>& g_logits) const {
  const auto& bb = backbone_;
  const bool consistent = cache.block_inputs.size() == bb.stages.size() &&
                          cache.traces.size() == bb.stages.size() &&
                          cache.stage_outputs.size() == bb.stages.size() &&
                          !cache.pooled.empty() && cache.pooled.cols() == bb.config.width;
  if (!consistent) throw ShapeError("plain backprop: cache does not match the network (stale?)");
  for (std::size_t s = 0; s < bb.stages.size(); ++s) {
    if (cache.block_inputs[s].size() != bb.stages[s].size()) {
      throw ShapeError("plain backprop: cache does not match the network (stale?)");
    }
    for (const auto& x : cache.block_inputs[s]) {
      require_same_shape(x.shape(), cache.input_shape, "plain backprop cache");
    }
  }
  if (g_logits.shape() != Shape{cache.pooled.dim(0), bb.config.classes}) {
    throw ShapeError("plain backprop: logits gradient " + shape_string(g_logits.shape()));
  }

  Gradients<T> grads = bb.zero_gradients(cache.input_shape);
  grads.params[bb.head_param_index()] = matmul_tn(cache.pooled, g_logits);
  Tensor<T> g = mean_tokens_vjp(matmul_nt(g_logits, bb.head), cache.input_shape);

  for (std::size_t s = bb.stages.size(); s-- > 0;) {
    for (std::size_t i = bb.stages[s].size(); i-- > 0;) {
      const auto& block = bb.stages[s][i];
      BlockGrad<T> bg = block.vjp(cache.block_inputs[s][i], cache.traces[s][i], g);
      const std::size_t off = bb.block_param_offset(s, i);
      for (std::size_t k = 0; k < 4; ++k) grads.params[off + k] = std::move(bg.params[k]);
      g = add(bg.input, g);
    }
    if (s > 0) {
      grads.params[bb.transition_param_index(s - 1)] =
          linear_weight_grad(cache.stage_outputs[s - 1], g);
      g = linear_input_grad(g, bb.transitions[s - 1]);
    }
  }
  grads.input = std::move(g);
  return grads;
}

template struct Backbone<float>;
template struct Backbone<double>;
template class PlainResidualNetwork<float>;
template class PlainResidualNetwork<double>;

}  // namespace drr
