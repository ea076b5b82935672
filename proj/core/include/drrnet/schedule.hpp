#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drrnet/drr_network.hpp"

namespace drr {

enum class PolicyShape { linear, exponential, logarithm };
enum class UpdateOrder { simultaneous, alpha_first, beta_first };
enum class StepUnit { epochs, iterations };

const char* to_string(PolicyShape shape);
const char* to_string(UpdateOrder order);
const char* to_string(StepUnit unit);
PolicyShape parse_policy_shape(const std::string& text);
UpdateOrder parse_update_order(const std::string& text);
StepUnit parse_step_unit(const std::string& text);

inline constexpr std::int64_t kStepsPerEpoch = 100;
inline constexpr double kExponentialWarp = 3.0;
inline constexpr double kLogarithmWarp = 9.0;

/// Trajectory of (alpha, beta) during finetuning: alpha falls from `start`
/// to `end`, beta rises, values change only every `eta` units and stop
/// changing at `tau`.
struct SchedulePolicy {
  PolicyShape shape = PolicyShape::linear;
  UpdateOrder order = UpdateOrder::simultaneous;
  std::int64_t eta = 1;
  std::int64_t tau = 10;
  StepUnit unit = StepUnit::epochs;
  Coefficients start = kDr2InitCoefficients;
  Coefficients end{0.3, 0.7};

  /// Throws ConfigError for tau <= 0, eta <= 0, or a non-monotone end point.
  void validate() const;
  /// True when eta > tau: the whole move happens in one jump at t = eta.
  bool single_jump() const { return eta > tau; }

  std::int64_t eta_steps() const;
  std::int64_t tau_steps() const;
};

/// Coefficients in force at training step `step` (iterations, 0-based).
Coefficients coefficients_at(const SchedulePolicy& policy, std::int64_t step);

struct ScheduleEvent {
  std::int64_t step;
  Coefficients coefficients;

  friend bool operator==(const ScheduleEvent&, const ScheduleEvent&) = default;
};

/// Every step in [0, total_steps) where the coefficients change, plus step 0.
std::vector<ScheduleEvent> schedule_events(const SchedulePolicy& policy, std::int64_t total_steps);

}  // namespace drr
