#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "drrnet/network.hpp"
#include "drrnet/schedule.hpp"

namespace drr {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Everything one pretrain or finetune run needs, read from a config file.
struct TrainConfig {
  NetworkConfig model;
  OptimizerConfig optimizer;
  std::int64_t steps = 1000;           // finetuning steps
  std::int64_t pretrain_steps = 2000;
  std::size_t batch = 64;
  std::size_t eval_size = 1000;
  SchedulePolicy schedule;
  double task_sigma = 0.1;
  std::size_t teacher_depth = 2;
  std::uint64_t seed = 0;
  Precision precision = Precision::f64;

  void validate() const;
  /// Canonical `key = value` text; parse_config(describe()) gives back *this.
  std::string describe() const;
};

/// Every key parse_config accepts, in canonical order.
const std::vector<std::string>& config_keys();

/// Line-oriented `key = value`; `#` starts a comment. Unknown keys,
/// duplicates and malformed values raise ConfigError.
TrainConfig parse_config(std::istream& in, const std::string& source = "<config>");
TrainConfig parse_config_string(const std::string& text);
TrainConfig load_config(const std::string& path);

}  // namespace drr
