#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "drrnet/schedule.hpp"

using namespace drr;

namespace {

SchedulePolicy policy(PolicyShape shape, UpdateOrder order, std::int64_t eta, std::int64_t tau) {
  SchedulePolicy p;
  p.shape = shape;
  p.order = order;
  p.eta = eta;
  p.tau = tau;
  p.unit = StepUnit::iterations;
  return p;
}

const PolicyShape kShapes[] = {PolicyShape::linear, PolicyShape::exponential, PolicyShape::logarithm};
const UpdateOrder kOrders[] = {UpdateOrder::simultaneous, UpdateOrder::alpha_first, UpdateOrder::beta_first};

// Independent evaluation of the warp for a progress fraction s.
double warp_ref(PolicyShape shape, double s) {
  switch (shape) {
    case PolicyShape::linear:
      return s;
    case PolicyShape::exponential:
      return (std::exp(3.0 * s) - 1.0) / (std::exp(3.0) - 1.0);
    case PolicyShape::logarithm:
      return std::log(1.0 + 9.0 * s) / std::log(10.0);
  }
  return s;
}

}  // namespace

TEST_CASE("start point is alpha 1, beta 0.1") {
  const Coefficients c = coefficients_at(SchedulePolicy{}, 0);
  CHECK(c.alpha == 1.0);
  CHECK(c.beta == 0.1);
}

TEST_CASE("default end point is alpha 0.3, beta 0.7 for every t >= tau") {
  const SchedulePolicy p = policy(PolicyShape::linear, UpdateOrder::simultaneous, 1, 10);
  for (std::int64_t t : {10, 11, 57, 1000000}) {
    const Coefficients c = coefficients_at(p, t);
    CHECK(c.alpha == 0.3);
    CHECK(c.beta == 0.7);
  }
}

TEST_CASE("linear simultaneous midpoint") {
  const Coefficients c = coefficients_at(policy(PolicyShape::linear, UpdateOrder::simultaneous, 1, 10), 5);
  CHECK(c.alpha == doctest::Approx(0.65).epsilon(1e-15));
  CHECK(c.beta == doctest::Approx(0.40).epsilon(1e-15));
}

TEST_CASE("warped shapes follow their closed forms") {
  for (PolicyShape shape : kShapes) {
    const SchedulePolicy p = policy(shape, UpdateOrder::simultaneous, 1, 20);
    for (std::int64_t t = 0; t <= 20; ++t) {
      const double w = warp_ref(shape, t / 20.0);
      const Coefficients c = coefficients_at(p, t);
      REQUIRE(c.alpha == doctest::Approx(1.0 + w * (0.3 - 1.0)).epsilon(1e-13));
      REQUIRE(c.beta == doctest::Approx(0.1 + w * (0.7 - 0.1)).epsilon(1e-13));
    }
  }
  // Convex and concave paths: at the midpoint exponential lags and logarithm leads.
  const double lin = coefficients_at(policy(PolicyShape::linear, UpdateOrder::simultaneous, 1, 10), 5).beta;
  const double ex = coefficients_at(policy(PolicyShape::exponential, UpdateOrder::simultaneous, 1, 10), 5).beta;
  const double lg = coefficients_at(policy(PolicyShape::logarithm, UpdateOrder::simultaneous, 1, 10), 5).beta;
  CHECK(ex < lin);
  CHECK(lin < lg);
}

TEST_CASE("endpoints are pinned for every shape and order") {
  for (PolicyShape shape : kShapes) {
    for (UpdateOrder order : kOrders) {
      for (auto [eta, tau] : std::vector<std::pair<int, int>>{{1, 10}, {3, 10}, {7, 100}, {10, 10}}) {
        SchedulePolicy p = policy(shape, order, eta, tau);
        p.end = {0.2, 0.9};
        REQUIRE(coefficients_at(p, 0) == p.start);
        REQUIRE(coefficients_at(p, tau) == p.end);
        REQUIRE(coefficients_at(p, tau + 1) == p.end);
      }
    }
  }
}

TEST_CASE("trajectories are monotone and constant on every eta interval") {
  for (PolicyShape shape : kShapes) {
    for (UpdateOrder order : kOrders) {
      for (std::int64_t eta : {1, 2, 3, 7}) {
        const std::int64_t tau = 30;
        const SchedulePolicy p = policy(shape, order, eta, tau);
        Coefficients prev = coefficients_at(p, 0);
        for (std::int64_t t = 1; t < 50; ++t) {
          const Coefficients c = coefficients_at(p, t);
          REQUIRE(c.alpha <= prev.alpha);
          REQUIRE(c.beta >= prev.beta);
          // The interval containing tau splits there when eta does not divide tau.
          if (t % eta != 0 && t != tau) REQUIRE(c == prev);
          if (t >= tau) REQUIRE(c == p.end);
          prev = c;
        }
      }
    }
  }
}

TEST_CASE("sequential orders split the budget at tau / 2") {
  const SchedulePolicy af = policy(PolicyShape::linear, UpdateOrder::alpha_first, 1, 10);
  CHECK(coefficients_at(af, 5).alpha == 0.3);
  CHECK(coefficients_at(af, 5).beta == 0.1);
  CHECK(coefficients_at(af, 3).beta == 0.1);
  CHECK(coefficients_at(af, 7).alpha == 0.3);
  CHECK(coefficients_at(af, 7).beta > 0.1);

  const SchedulePolicy bf = policy(PolicyShape::linear, UpdateOrder::beta_first, 1, 10);
  CHECK(coefficients_at(bf, 5).beta == 0.7);
  CHECK(coefficients_at(bf, 5).alpha == 1.0);
  CHECK(coefficients_at(bf, 7).alpha < 1.0);

  const SchedulePolicy sim = policy(PolicyShape::linear, UpdateOrder::simultaneous, 1, 10);
  for (std::int64_t t = 1; t <= 10; ++t) {
    const Coefficients a = coefficients_at(sim, t - 1), b = coefficients_at(sim, t);
    REQUIRE(b.alpha < a.alpha);
    REQUIRE(b.beta > a.beta);
  }
}

TEST_CASE("epoch units scale eta and tau by the epoch length") {
  SchedulePolicy p = policy(PolicyShape::linear, UpdateOrder::simultaneous, 1, 10);
  p.unit = StepUnit::epochs;
  CHECK(p.eta_steps() == kStepsPerEpoch);
  CHECK(p.tau_steps() == 10 * kStepsPerEpoch);
  CHECK(coefficients_at(p, kStepsPerEpoch - 1) == p.start);
  CHECK(coefficients_at(p, 5 * kStepsPerEpoch).alpha == doctest::Approx(0.65));
  CHECK(coefficients_at(p, 10 * kStepsPerEpoch) == p.end);
}

TEST_CASE("eta beyond tau is a single jump at eta") {
  const SchedulePolicy p = policy(PolicyShape::linear, UpdateOrder::simultaneous, 15, 10);
  CHECK(p.single_jump());
  CHECK(coefficients_at(p, 10) == p.start);
  CHECK(coefficients_at(p, 14) == p.start);
  CHECK(coefficients_at(p, 15) == p.end);
  const auto events = schedule_events(p, 100);
  REQUIRE(events.size() == 2);
  CHECK(events[1].step == 15);
}

TEST_CASE("invalid policies are configuration errors") {
  CHECK_THROWS_AS(coefficients_at(policy(PolicyShape::linear, UpdateOrder::simultaneous, 1, 0), 0), ConfigError);
  CHECK_THROWS_AS(coefficients_at(policy(PolicyShape::linear, UpdateOrder::simultaneous, 0, 10), 0), ConfigError);
  CHECK_THROWS_AS(coefficients_at(SchedulePolicy{}, -1), ConfigError);
  SchedulePolicy up = SchedulePolicy{};
  up.end = {1.0, 0.05};
  CHECK_THROWS_AS(up.validate(), ConfigError);
  SchedulePolicy grow = SchedulePolicy{};
  grow.end = {1.2, 0.7};
  CHECK_THROWS_AS(grow.validate(), ConfigError);
  CHECK_THROWS_AS(schedule_events(SchedulePolicy{}, 0), ConfigError);
  CHECK_THROWS_AS(parse_policy_shape("cubic"), ConfigError);
  CHECK_THROWS_AS(parse_update_order("random"), ConfigError);
  CHECK_THROWS_AS(parse_step_unit("hours"), ConfigError);
}

TEST_CASE("names round trip") {
  for (PolicyShape s : kShapes) CHECK(parse_policy_shape(to_string(s)) == s);
  for (UpdateOrder o : kOrders) CHECK(parse_update_order(to_string(o)) == o);
  CHECK(parse_step_unit(to_string(StepUnit::epochs)) == StepUnit::epochs);
  CHECK(parse_step_unit(to_string(StepUnit::iterations)) == StepUnit::iterations);
}

TEST_CASE("events: eta equal to tau gives start and end") {
  const auto events = schedule_events(policy(PolicyShape::linear, UpdateOrder::simultaneous, 10, 10), 100);
  REQUIRE(events.size() == 2);
  CHECK(events[0] == ScheduleEvent{0, {1.0, 0.1}});
  CHECK(events[1].step == 10);
  CHECK(events[1].coefficients == Coefficients{0.3, 0.7});
}

TEST_CASE("events: linear, tau 10, eta 2 changes at 0, 2, 4, 6, 8, 10") {
  const auto events = schedule_events(policy(PolicyShape::linear, UpdateOrder::simultaneous, 2, 10), 100);
  REQUIRE(events.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(events[i].step == static_cast<std::int64_t>(2 * i));
}

TEST_CASE("events: all shapes share first and last events") {
  std::vector<std::vector<ScheduleEvent>> all;
  for (PolicyShape shape : kShapes) all.push_back(schedule_events(policy(shape, UpdateOrder::simultaneous, 3, 12), 50));
  for (const auto& ev : all) {
    CHECK(ev.front() == all[0].front());
    CHECK(ev.back() == all[0].back());
    CHECK(ev.back().step <= 12);
  }
}

TEST_CASE("events agree with coefficients_at and stop at the horizon") {
  for (UpdateOrder order : kOrders) {
    const SchedulePolicy p = policy(PolicyShape::exponential, order, 4, 40);
    const auto events = schedule_events(p, 25);
    CHECK(events.front().step == 0);
    for (const auto& e : events) {
      CHECK(e.step < 25);
      CHECK(coefficients_at(p, e.step) == e.coefficients);
    }
    std::size_t k = 0;
    for (std::int64_t t = 0; t < 25; ++t) {
      if (k + 1 < events.size() && events[k + 1].step == t) ++k;
      REQUIRE(coefficients_at(p, t) == events[k].coefficients);
    }
  }
}
