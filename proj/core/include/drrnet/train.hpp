#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "drrnet/checkpoint.hpp"
#include "drrnet/config.hpp"
#include "drrnet/drr_network.hpp"
#include "drrnet/task.hpp"

namespace drr {

enum class Regime { conventional, frozen, rev_scratch, hard, dr2_vanilla, dr2_dynamic };

const char* to_string(Regime regime);
Regime parse_regime(const std::string& text);
const std::vector<Regime>& all_regimes();
/// Regimes that train a DrrNetwork with reconstruction-based backprop.
bool is_reversible(Regime regime);
/// Every regime except rev-scratch starts from pretrained parameters.
bool needs_checkpoint(Regime regime);

/// Metrics are recorded at every multiple of this many steps and at the last step.
inline constexpr std::int64_t kRecordEvery = kStepsPerEpoch;

struct MetricsRecord {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double alpha = 0.0;
  double beta = 0.0;
  double train_loss = 0.0;
  double eval_accuracy = 0.0;
  std::size_t peak_activation_bytes = 0;
  double step_time_ms = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

/// One JSON object, fields in declaration order, no trailing newline.
std::string to_json_line(const MetricsRecord& record);
MetricsRecord parse_json_line(const std::string& line);

struct RunOptions {
  /// false writes step_time_ms = 0 so metrics streams compare byte for byte.
  bool timing = true;
  std::function<void(const MetricsRecord&)> on_record;
};

struct PretrainResult {
  Checkpoint checkpoint;
  double accuracy = 0.0;  // task A, eval split
  std::vector<MetricsRecord> records;
};

struct FinetuneResult {
  double final_accuracy = 0.0;  // task B, eval split
  std::vector<MetricsRecord> records;
  Checkpoint checkpoint;  // parameters after training
};

SyntheticTask make_task(const TrainConfig& cfg);

/// Trains a PlainResidualNetwork on task A from a seeded random init.
template <Scalar T>
PretrainResult pretrain(const TrainConfig& cfg, const SyntheticTask& task, const RunOptions& options = {});

/// Trains on task B under `regime`. `init` is required unless the regime is
/// rev-scratch, and ignored there.
template <Scalar T>
FinetuneResult finetune(const TrainConfig& cfg, Regime regime, const Checkpoint* init,
                        const SyntheticTask& task, const RunOptions& options = {});

/// Fraction of the first `n` eval inputs whose argmax logit is the label.
template <Scalar T>
double evaluate(const std::function<Tensor<T>(const Tensor<T>&)>& logits, const SyntheticTask& task,
                TaskVariant variant, std::size_t n);
template <Scalar T>
double evaluate(const PlainResidualNetwork<T>& net, const SyntheticTask& task, TaskVariant variant,
                std::size_t n);
template <Scalar T>
double evaluate(const DrrNetwork<T>& net, const SyntheticTask& task, TaskVariant variant, std::size_t n);

/// Bytes of every activation a PlainCache holds, counted as the ledger would.
template <Scalar T>
std::size_t plain_cache_bytes(const PlainCache<T>& cache);

}  // namespace drr
