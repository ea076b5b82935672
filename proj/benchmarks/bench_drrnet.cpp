#include <benchmark/benchmark.h>

#include "drrnet/drr_network.hpp"
#include "drrnet/ops.hpp"

namespace {

using namespace drr;

template <Scalar T>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Prng rng(1);
  const auto a = normal_tensor<T>(rng, {n, n});
  const auto b = normal_tensor<T>(rng, {n, n});
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul<float>)->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<double>)->Arg(64)->Arg(256);

NetworkConfig bench_model(std::size_t depth) {
  NetworkConfig c;
  c.width = 64;
  c.hidden = 128;
  c.stages = 1;
  c.depth_per_stage = depth;
  return c;
}

template <Scalar T>
void BM_TrainingStep(benchmark::State& state) {
  const NetworkConfig c = bench_model(static_cast<std::size_t>(state.range(0)));
  const auto mode = state.range(1) == 0 ? ExecutionMode::cached : ExecutionMode::reversible;
  Prng rng = Prng(2).child("theta");
  DrrNetwork<T> net(Backbone<T>::random(c, rng), {0.3, 0.7}, mode);
  Prng input_rng(3);
  const auto x = normal_tensor<T>(input_rng, {8, c.seq_len, c.width});
  const auto ones = [](const Tensor<T>& logits) { return Tensor<T>::full(logits.shape(), T{1}); };
  for (auto _ : state) benchmark::DoNotOptimize(net.forward_backward(x, ones));
  state.SetLabel(to_string(mode));
}
BENCHMARK(BM_TrainingStep<float>)->ArgsProduct({{4, 12}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainingStep<double>)->ArgsProduct({{4, 12}, {0, 1}})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
