#include "drrnet/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace drr {

const char* to_string(PolicyShape shape) {
  switch (shape) {
    case PolicyShape::linear:
      return "linear";
    case PolicyShape::exponential:
      return "exponential";
    case PolicyShape::logarithm:
      return "logarithm";
  }
  return "?";
}

const char* to_string(UpdateOrder order) {
  switch (order) {
    case UpdateOrder::simultaneous:
      return "simultaneous";
    case UpdateOrder::alpha_first:
      return "alpha_first";
    case UpdateOrder::beta_first:
      return "beta_first";
  }
  return "?";
}

const char* to_string(StepUnit unit) {
  return unit == StepUnit::epochs ? "epochs" : "iterations";
}

PolicyShape parse_policy_shape(const std::string& text) {
  if (text == "linear") return PolicyShape::linear;
  if (text == "exponential") return PolicyShape::exponential;
  if (text == "logarithm") return PolicyShape::logarithm;
  throw ConfigError("schedule.policy must be linear, exponential or logarithm, got '" + text + "'");
}

UpdateOrder parse_update_order(const std::string& text) {
  if (text == "simultaneous") return UpdateOrder::simultaneous;
  if (text == "alpha_first") return UpdateOrder::alpha_first;
  if (text == "beta_first") return UpdateOrder::beta_first;
  throw ConfigError("schedule.order must be simultaneous, alpha_first or beta_first, got '" +
                    text + "'");
}

StepUnit parse_step_unit(const std::string& text) {
  if (text == "epochs" || text == "epoch") return StepUnit::epochs;
  if (text == "iterations" || text == "iteration") return StepUnit::iterations;
  throw ConfigError("schedule.eta_unit must be epochs or iterations, got '" + text + "'");
}

void SchedulePolicy::validate() const {
  if (tau <= 0) throw ConfigError("degenerate schedule: schedule.tau must be positive");
  if (eta <= 0) throw ConfigError("schedule.eta must be positive");
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(start.alpha) || !in_unit(start.beta) || !in_unit(end.alpha) || !in_unit(end.beta)) {
    throw ConfigError("schedule coefficients must lie in [0, 1]");
  }
  if (end.alpha > start.alpha) throw ConfigError("schedule.alpha_end must not exceed the start alpha");
  if (end.beta < start.beta) throw ConfigError("schedule.beta_end must not be below the start beta");
  if (start.beta <= 0.0) throw ConfigError("schedule start beta must be nonzero");
}

std::int64_t SchedulePolicy::eta_steps() const {
  return unit == StepUnit::epochs ? eta * kStepsPerEpoch : eta;
}

std::int64_t SchedulePolicy::tau_steps() const {
  return unit == StepUnit::epochs ? tau * kStepsPerEpoch : tau;
}

namespace {

double warp(PolicyShape shape, double p) {
  switch (shape) {
    case PolicyShape::linear:
      return p;
    case PolicyShape::exponential:
      return std::expm1(kExponentialWarp * p) / std::expm1(kExponentialWarp);
    case PolicyShape::logarithm:
      return std::log1p(kLogarithmWarp * p) / std::log1p(kLogarithmWarp);
  }
  return p;
}

// start + w * (end - start): monotone in w under rounding. w == 1 pins the
// end value exactly; the clamp keeps the last interior value from overshooting it.
double interpolate(double start, double end, double w) {
  if (w <= 0.0) return start;
  if (w >= 1.0) return end;
  const double v = start + w * (end - start);
  return end < start ? std::max(v, end) : std::min(v, end);
}

}  // namespace

Coefficients coefficients_at(const SchedulePolicy& policy, std::int64_t step) {
  policy.validate();
  if (step < 0) throw ConfigError("coefficients_at: step must be non-negative");
  const std::int64_t eta = policy.eta_steps();
  const std::int64_t tau = policy.tau_steps();

  std::int64_t q = 0;
  if (policy.single_jump()) {
    q = step >= eta ? tau : 0;
  } else if (step >= tau) {
    q = tau;
  } else {
    q = (step / eta) * eta;
  }
  const double s = static_cast<double>(q) / static_cast<double>(tau);

  double pa = s, pb = s;
  switch (policy.order) {
    case UpdateOrder::simultaneous:
      break;
    case UpdateOrder::alpha_first:
      pa = std::min(1.0, 2.0 * s);
      pb = std::max(0.0, 2.0 * s - 1.0);
      break;
    case UpdateOrder::beta_first:
      pb = std::min(1.0, 2.0 * s);
      pa = std::max(0.0, 2.0 * s - 1.0);
      break;
  }
  return {interpolate(policy.start.alpha, policy.end.alpha, warp(policy.shape, pa)),
          interpolate(policy.start.beta, policy.end.beta, warp(policy.shape, pb))};
}

std::vector<ScheduleEvent> schedule_events(const SchedulePolicy& policy, std::int64_t total_steps) {
  policy.validate();
  if (total_steps < 1) throw ConfigError("schedule_events: total_steps must be at least 1");
  const std::int64_t eta = policy.eta_steps();
  const std::int64_t tau = policy.tau_steps();

  std::vector<std::int64_t> candidates;
  if (policy.single_jump()) {
    candidates = {0, eta};
  } else {
    for (std::int64_t t = 0; t < tau; t += eta) candidates.push_back(t);
    candidates.push_back(tau);
  }

  std::vector<ScheduleEvent> events;
  for (std::int64_t t : candidates) {
    if (t >= total_steps) break;
    const Coefficients c = coefficients_at(policy, t);
    if (events.empty() || !(events.back().coefficients == c)) events.push_back({t, c});
  }
  return events;
}

}  // namespace drr
