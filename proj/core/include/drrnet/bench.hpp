#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "drrnet/config.hpp"
#include "drrnet/drr_network.hpp"

namespace drr {

/// Coefficients the benchmarks run at; any beta != 0 gives the same costs.
inline constexpr Coefficients kBenchCoefficients{0.3, 0.7};
inline constexpr std::size_t kMinWarmup = 3;

struct MemBenchRow {
  std::size_t depth = 0;  // modules per stage
  ExecutionMode mode = ExecutionMode::cached;
  std::size_t peak_bytes = 0;
};

/// One training step per (depth, mode) on `model` with depth_per_stage
/// replaced; reports the ledger peak. Depths must be strictly ascending.
template <Scalar T>
std::vector<MemBenchRow> mem_bench(const NetworkConfig& model, std::span<const std::size_t> depths,
                                   std::size_t batch, std::uint64_t seed);

/// Peak ratio between the last and first depth for one mode.
double mem_ratio(std::span<const MemBenchRow> rows, ExecutionMode mode);

struct TimeBenchResult {
  double cached_ms = 0.0;      // median
  double reversible_ms = 0.0;  // median
  double ratio = 0.0;          // reversible / cached
  std::size_t trials = 0;
  std::size_t warmup = 0;
};

/// Alternates cached and reversible training steps on identical inputs;
/// the first `warmup` pairs are discarded.
template <Scalar T>
TimeBenchResult time_bench(const NetworkConfig& model, std::size_t trials, std::size_t batch,
                           std::uint64_t seed, std::size_t warmup = kMinWarmup);

double median(std::vector<double> values);

}  // namespace drr
