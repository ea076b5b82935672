#pragma once

#include <cstdint>
#include <string_view>

#include "drrnet/tensor.hpp"

namespace drr {

/// splitmix64 generator (Steele, Lea & Flood constants). Integer output is
/// platform-independent; normals go through Box-Muller with the spare cached.
///
/// Children are keyed by (state, label) or (state, index) and hashed back
/// through splitmix, so sibling streams never share state.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal.
  double normal();

  Prng child(std::string_view label) const;
  Prng child(std::uint64_t index) const;

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view text);

/// Tensor with N(0, stddev^2) entries.
template <Scalar T>
Tensor<T> normal_tensor(Prng& rng, Shape shape, double stddev = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(stddev * rng.normal());
  return t;
}

}  // namespace drr
