#include "drrnet/bench.hpp"

#include <algorithm>
#include <chrono>

#include "drrnet/loss.hpp"
#include "drrnet/optimizer.hpp"

namespace drr {

namespace {

template <Scalar T>
struct BenchRig {
  DrrNetwork<T> net;
  AdamState<T> state;
  Tensor<T> x;
  std::vector<int> labels;
};

template <Scalar T>
BenchRig<T> make_rig(const NetworkConfig& model, std::size_t batch, std::uint64_t seed) {
  const Prng root(seed);
  Prng theta_rng = root.child("theta");
  Prng input_rng = root.child("input");
  DrrNetwork<T> net(Backbone<T>::random(model, theta_rng), kBenchCoefficients);
  auto params = net.backbone().parameters();
  auto state = AdamState<T>::zeros_like(std::vector<const Tensor<T>*>(params.begin(), params.end()));
  Tensor<T> x = normal_tensor<T>(input_rng, {batch, model.seq_len, model.width});
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % model.classes);
  return {std::move(net), std::move(state), std::move(x), std::move(labels)};
}

template <Scalar T>
void train_step(BenchRig<T>& rig, ExecutionMode mode) {
  rig.net.set_mode(mode);
  auto out = rig.net.forward_backward(
      rig.x, [&](const Tensor<T>& logits) { return cross_entropy(logits, rig.labels).grad; });
  auto params = rig.net.backbone().parameters();
  adam_step<T>(OptimizerConfig{}, params, out.grads.params, rig.state);
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

template <Scalar T>
std::vector<MemBenchRow> mem_bench(const NetworkConfig& model, std::span<const std::size_t> depths,
                                   std::size_t batch, std::uint64_t seed) {
  if (depths.empty()) throw ConfigError("mem-bench needs at least one depth");
  for (std::size_t i = 0; i < depths.size(); ++i) {
    if (depths[i] == 0 || (i > 0 && depths[i] <= depths[i - 1])) {
      throw ConfigError("mem-bench depths must be positive and strictly ascending");
    }
  }
  std::vector<MemBenchRow> rows;
  for (std::size_t depth : depths) {
    NetworkConfig cfg = model;
    cfg.depth_per_stage = depth;
    auto rig = make_rig<T>(cfg, batch, seed);
    for (ExecutionMode mode : {ExecutionMode::cached, ExecutionMode::reversible}) {
      train_step(rig, mode);
      rows.push_back({depth, mode, rig.net.ledger_report().peak_bytes});
    }
  }
  return rows;
}

double mem_ratio(std::span<const MemBenchRow> rows, ExecutionMode mode) {
  const MemBenchRow* first = nullptr;
  const MemBenchRow* last = nullptr;
  for (const auto& r : rows) {
    if (r.mode != mode) continue;
    if (first == nullptr) first = &r;
    last = &r;
  }
  if (first == nullptr || first->peak_bytes == 0) throw ConfigError("mem_ratio: no rows for mode");
  return static_cast<double>(last->peak_bytes) / static_cast<double>(first->peak_bytes);
}

template <Scalar T>
TimeBenchResult time_bench(const NetworkConfig& model, std::size_t trials, std::size_t batch,
                           std::uint64_t seed, std::size_t warmup) {
  if (trials == 0) throw ConfigError("time-bench needs at least one trial");
  if (warmup < kMinWarmup) throw ConfigError("time-bench needs at least 3 warmup trials");
  using Clock = std::chrono::steady_clock;
  auto rig = make_rig<T>(model, batch, seed);
  std::vector<double> cached, reversible;
  for (std::size_t i = 0; i < warmup + trials; ++i) {
    for (ExecutionMode mode : {ExecutionMode::cached, ExecutionMode::reversible}) {
      const auto t0 = Clock::now();
      train_step(rig, mode);
      const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
      if (i >= warmup) (mode == ExecutionMode::cached ? cached : reversible).push_back(ms);
    }
  }
  TimeBenchResult r;
  r.cached_ms = median(cached);
  r.reversible_ms = median(reversible);
  r.ratio = r.reversible_ms / r.cached_ms;
  r.trials = trials;
  r.warmup = warmup;
  return r;
}

template std::vector<MemBenchRow> mem_bench<float>(const NetworkConfig&, std::span<const std::size_t>,
                                                   std::size_t, std::uint64_t);
template std::vector<MemBenchRow> mem_bench<double>(const NetworkConfig&, std::span<const std::size_t>,
                                                    std::size_t, std::uint64_t);
template TimeBenchResult time_bench<float>(const NetworkConfig&, std::size_t, std::size_t, std::uint64_t,
                                           std::size_t);
template TimeBenchResult time_bench<double>(const NetworkConfig&, std::size_t, std::size_t, std::uint64_t,
                                            std::size_t);

}  // namespace drr
