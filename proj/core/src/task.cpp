#include "drrnet/task.hpp"

#include <cmath>
#include <cstdio>

#include "drrnet/loss.hpp"
#include "drrnet/ops.hpp"

namespace drr {

namespace {

constexpr std::size_t kLabelChunk = 250;
constexpr std::size_t kCalibrationSize = 1000;

const char* split_label(Split split) { return split == Split::train ? "train" : "eval"; }

std::vector<int> teacher_labels(const PlainResidualNetwork<double>& teacher,
                                const std::vector<double>& inputs, std::size_t n,
                                const NetworkConfig& dims) {
  const std::size_t per = dims.seq_len * dims.width;
  std::vector<int> labels;
  labels.reserve(n);
  for (std::size_t start = 0; start < n; start += kLabelChunk) {
    const std::size_t count = std::min(kLabelChunk, n - start);
    Tensor<double> batch(Shape{count, dims.seq_len, dims.width},
                         std::vector<double>(inputs.begin() + static_cast<std::ptrdiff_t>(start * per),
                                             inputs.begin() + static_cast<std::ptrdiff_t>((start + count) * per)));
    const auto chunk = argmax_rows(teacher.logits(batch));
    labels.insert(labels.end(), chunk.begin(), chunk.end());
  }
  return labels;
}

std::vector<double> shares(std::span<const int> labels, std::size_t classes) {
  std::vector<double> out(classes, 0.0);
  for (int l : labels) out[static_cast<std::size_t>(l)] += 1.0;
  for (auto& v : out) v /= static_cast<double>(labels.size());
  return out;
}

void require_balanced(std::span<const int> labels, std::size_t classes, std::uint64_t seed,
                      const char* which) {
  const auto s = shares(labels, classes);
  for (std::size_t k = 0; k < classes; ++k) {
    if (s[k] < kMinClassShare || s[k] > kMaxClassShare) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * s[k]);
      throw ConfigError(std::string("degenerate teacher for task ") + which + ": class " +
                        std::to_string(k) + " holds " + buf + " of " +
                        std::to_string(labels.size()) +
                        " samples (allowed 2%..90%); choose another seed (seed = " +
                        std::to_string(seed) + ")");
    }
  }
}

// Pooled features of a random residual net share a large input-independent
// component (the mean of gelu pushed through W2). Left in, it picks the same
// class for almost every input. The head is made orthogonal to it, then each
// column is scaled so every class logit has unit spread on a calibration set.
void calibrate_head(Backbone<double>& teacher, std::uint64_t seed) {
  const NetworkConfig& dims = teacher.config;
  const std::size_t d = dims.width, classes = dims.classes;
  Prng rng = Prng(seed).child("calibration");
  const auto x = normal_tensor<double>(rng, {kCalibrationSize, dims.seq_len, d});
  const Tensor<double> pooled = PlainResidualNetwork<double>(teacher).forward(x).cache.pooled;
  const double n = static_cast<double>(pooled.dim(0));

  std::vector<double> mu(d, 0.0);
  for (std::size_t r = 0; r < pooled.dim(0); ++r) {
    for (std::size_t c = 0; c < d; ++c) mu[c] += pooled.at(r, c) / n;
  }
  double norm2 = 0.0;
  for (double v : mu) norm2 += v * v;
  Tensor<double>& head = teacher.head;
  if (norm2 > 0.0) {
    for (std::size_t k = 0; k < classes; ++k) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += mu[c] * head.at(c, k);
      for (std::size_t c = 0; c < d; ++c) head.at(c, k) -= dot / norm2 * mu[c];
    }
  }

  const Tensor<double> logits = matmul(pooled, head);
  for (std::size_t k = 0; k < classes; ++k) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t r = 0; r < logits.dim(0); ++r) mean += logits.at(r, k) / n;
    for (std::size_t r = 0; r < logits.dim(0); ++r) sq += (logits.at(r, k) - mean) * (logits.at(r, k) - mean) / n;
    if (sq == 0.0) continue;
    const double scale = 1.0 / std::sqrt(sq);
    for (std::size_t c = 0; c < d; ++c) head.at(c, k) *= scale;
  }
}

}  // namespace

Prng task_input_rng(std::uint64_t seed, Split split, std::size_t index) {
  return Prng(seed).child("inputs").child(split_label(split)).child(static_cast<std::uint64_t>(index));
}

SyntheticTask SyntheticTask::make(const NetworkConfig& dims, std::uint64_t seed, double sigma,
                                  std::size_t eval_size, std::size_t teacher_depth) {
  dims.validate();
  if (teacher_depth == 0) throw ConfigError("task.teacher_depth must be at least 1");
  NetworkConfig teacher_dims = dims;
  teacher_dims.stages = 1;
  teacher_dims.depth_per_stage = teacher_depth;
  if (!(sigma >= 0.0)) throw ConfigError("task.sigma must be non-negative");
  if (eval_size == 0) throw ConfigError("task eval set must not be empty");

  SyntheticTask task;
  task.dims_ = dims;
  task.seed_ = seed;
  task.sigma_ = sigma;
  const Prng root(seed);
  Prng teacher_rng = root.child("teacher");
  task.teacher_a_ = Backbone<double>::random(teacher_dims, teacher_rng);
  Prng head_rng = root.child("teacher-head");
  task.teacher_a_.head = normal_tensor<double>(head_rng, {dims.width, dims.classes});
  calibrate_head(task.teacher_a_, seed);
  task.teacher_b_ = task.teacher_a_;
  if (sigma > 0.0) {
    Prng noise_rng = root.child("perturbation");
    for (Tensor<double>* p : task.teacher_b_.parameters()) {
      *p = add(*p, normal_tensor<double>(noise_rng, p->shape(), sigma));
    }
    calibrate_head(task.teacher_b_, seed);
  }

  const PlainResidualNetwork<double> a(task.teacher_a_), b(task.teacher_b_);
  const std::size_t per = dims.seq_len * dims.width;
  auto fill = [&](SplitData& d, Split split, std::size_t n) {
    d.inputs.reserve(n * per);
    for (std::size_t i = 0; i < n; ++i) {
      Prng rng = task_input_rng(seed, split, i);
      const auto x = normal_tensor<double>(rng, {dims.seq_len, dims.width});
      d.inputs.insert(d.inputs.end(), x.values().begin(), x.values().end());
    }
    d.labels_a = teacher_labels(a, d.inputs, n, teacher_dims);
    d.labels_b = sigma > 0.0 ? teacher_labels(b, d.inputs, n, teacher_dims) : d.labels_a;
  };
  fill(task.train_, Split::train, kTaskPoolSize);
  fill(task.eval_, Split::eval, eval_size);

  require_balanced(task.train_.labels_a, dims.classes, seed, "A");
  require_balanced(task.train_.labels_b, dims.classes, seed, "B");
  return task;
}

const Backbone<double>& SyntheticTask::teacher(TaskVariant variant) const {
  return variant == TaskVariant::a ? teacher_a_ : teacher_b_;
}

std::size_t SyntheticTask::size(Split split) const { return data(split).labels_a.size(); }

Tensor<double> SyntheticTask::input(Split split, std::size_t index) const {
  if (index >= size(split)) throw ShapeError("task input index out of range");
  const std::size_t per = dims_.seq_len * dims_.width;
  const auto& in = data(split).inputs;
  return Tensor<double>(Shape{dims_.seq_len, dims_.width},
                        std::vector<double>(in.begin() + static_cast<std::ptrdiff_t>(index * per),
                                            in.begin() + static_cast<std::ptrdiff_t>((index + 1) * per)));
}

std::span<const int> SyntheticTask::labels(Split split, TaskVariant variant) const {
  const auto& d = data(split);
  return variant == TaskVariant::a ? std::span<const int>(d.labels_a) : std::span<const int>(d.labels_b);
}

int SyntheticTask::label(Split split, TaskVariant variant, std::size_t index) const {
  const auto l = labels(split, variant);
  if (index >= l.size()) throw ShapeError("task label index out of range");
  return l[index];
}

template <Scalar T>
Tensor<T> SyntheticTask::gather_inputs(Split split, std::span<const std::size_t> indices) const {
  const std::size_t per = dims_.seq_len * dims_.width;
  const auto& in = data(split).inputs;
  std::vector<T> values;
  values.reserve(indices.size() * per);
  for (std::size_t idx : indices) {
    if (idx >= size(split)) throw ShapeError("task input index out of range");
    for (std::size_t e = 0; e < per; ++e) values.push_back(static_cast<T>(in[idx * per + e]));
  }
  return Tensor<T>(Shape{indices.size(), dims_.seq_len, dims_.width}, std::move(values));
}

std::vector<int> SyntheticTask::gather_labels(Split split, TaskVariant variant,
                                              std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t idx : indices) out.push_back(label(split, variant, idx));
  return out;
}

std::vector<double> SyntheticTask::class_shares(TaskVariant variant) const {
  return shares(labels(Split::train, variant), dims_.classes);
}

template Tensor<float> SyntheticTask::gather_inputs(Split, std::span<const std::size_t>) const;
template Tensor<double> SyntheticTask::gather_inputs(Split, std::span<const std::size_t>) const;

}  // namespace drr
