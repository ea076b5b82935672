#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "drrnet/network.hpp"

namespace drr {

/// Task A is the pretraining task, B the downstream one.
enum class TaskVariant { a, b };
enum class Split { train, eval };

/// Training pool size; also the sample the class balance is checked on.
inline constexpr std::size_t kTaskPoolSize = 10000;
inline constexpr double kMinClassShare = 0.02;
inline constexpr double kMaxClassShare = 0.90;

inline constexpr std::size_t kDefaultTeacherDepth = 2;

/// Classification by a fixed random teacher network: inputs are N(0, 1)
/// token grids, labels the argmax of the teacher's logits. Task B's teacher
/// is task A's with N(0, sigma^2) noise added to every parameter.
///
/// The teacher is one stage of `teacher_depth` blocks with the student's
/// width, sequence length and class count. Deep random residual nets are
/// chaotic: any parameter noise would scramble their labels completely.
///
/// Input `i` of a split comes from its own child generator, so it does not
/// depend on how many other inputs were drawn.
class SyntheticTask {
 public:
  /// Throws ConfigError if either teacher gives a class less than 2% or more
  /// than 90% of the training pool.
  static SyntheticTask make(const NetworkConfig& dims, std::uint64_t seed, double sigma,
                            std::size_t eval_size = 1000,
                            std::size_t teacher_depth = kDefaultTeacherDepth);

  const NetworkConfig& dims() const { return dims_; }
  std::uint64_t seed() const { return seed_; }
  double sigma() const { return sigma_; }
  const Backbone<double>& teacher(TaskVariant variant) const;

  std::size_t size(Split split) const;
  /// [L, d] input number `index` of `split`.
  Tensor<double> input(Split split, std::size_t index) const;
  int label(Split split, TaskVariant variant, std::size_t index) const;
  std::span<const int> labels(Split split, TaskVariant variant) const;

  /// Gathers inputs into [n, L, d] and their labels.
  template <Scalar T>
  Tensor<T> gather_inputs(Split split, std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(Split split, TaskVariant variant,
                                 std::span<const std::size_t> indices) const;

  /// Fraction of the training pool in each class.
  std::vector<double> class_shares(TaskVariant variant) const;

 private:
  struct SplitData {
    std::vector<double> inputs;  // n * L * d
    std::vector<int> labels_a;
    std::vector<int> labels_b;
  };

  const SplitData& data(Split split) const { return split == Split::train ? train_ : eval_; }

  NetworkConfig dims_;
  std::uint64_t seed_ = 0;
  double sigma_ = 0.0;
  Backbone<double> teacher_a_;
  Backbone<double> teacher_b_;
  SplitData train_;
  SplitData eval_;
};

/// Deterministic generator for the draw of input `index` of `split`.
Prng task_input_rng(std::uint64_t seed, Split split, std::size_t index);

}  // namespace drr
