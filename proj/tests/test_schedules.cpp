#include <doctest.h>

#include <cmath>

#include "segloss/error.hpp"
#include "segloss/schedules.hpp"

using namespace segloss;

TEST_CASE("constant schedules") {
  for (int n = 0; n <= 40; ++n) {
    LossSchedule s{ScheduleKind::kAdd, 40};
    const LossWeights w = weights_at(s, n);
    CHECK(w.bce == 1.0);
    CHECK(w.dice == 1.0);
    CHECK(weights_at({ScheduleKind::kBceOnly, 40}, n).bce == 1.0);
    CHECK(weights_at({ScheduleKind::kBceOnly, 40}, n).dice == 0.0);
    CHECK(weights_at({ScheduleKind::kDiceOnly, 40}, n).bce == 0.0);
    CHECK(weights_at({ScheduleKind::kDiceOnly, 40}, n).dice == 1.0);
  }
}

TEST_CASE("soft finetune interpolates linearly") {
  LossSchedule s{ScheduleKind::kSoftFinetune, 40};
  const LossWeights w = weights_at(s, 10);
  CHECK(w.bce == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(w.dice == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(weights_at(s, 0).bce == 1.0);
  CHECK(weights_at(s, 0).dice == 0.0);
  CHECK(weights_at(s, 40).bce == 0.0);
  CHECK(weights_at(s, 40).dice == 1.0);
}

TEST_CASE("soft finetune weights sum to 1 and move monotonically") {
  for (int N : {1, 2, 3, 7, 40, 100}) {
    LossSchedule s{ScheduleKind::kSoftFinetune, N};
    double prev_bce = 2.0;
    for (int n = 0; n <= N; ++n) {
      const LossWeights w = weights_at(s, n);
      CHECK(std::abs(w.bce + w.dice - 1.0) <= 1e-12);
      CHECK(w.bce <= prev_bce);
      prev_bce = w.bce;
    }
  }
}

TEST_CASE("hard finetune switches strictly at 0.9N") {
  LossSchedule s{ScheduleKind::kHardFinetune, 40};
  CHECK(weights_at(s, 35).bce == 1.0);
  CHECK(weights_at(s, 35).dice == 0.0);
  CHECK(weights_at(s, 36).bce == 0.0);
  CHECK(weights_at(s, 36).dice == 1.0);
}

TEST_CASE("hard finetune emits exactly one switch, at ceil(0.9N)") {
  for (int N = 1; N <= 100; ++N) {
    LossSchedule s{ScheduleKind::kHardFinetune, N};
    int switches = 0;
    int first_dice = -1;
    LossWeights prev = weights_at(s, 0);
    CHECK(prev.bce + prev.dice == 1.0);  // one-hot
    if (prev.dice == 1.0) first_dice = 0;
    for (int n = 1; n <= N; ++n) {
      const LossWeights w = weights_at(s, n);
      CHECK((w.bce == 1.0 || w.dice == 1.0));
      CHECK(w.bce + w.dice == 1.0);
      if (w.dice != prev.dice) ++switches;
      if (first_dice < 0 && w.dice == 1.0) first_dice = n;
      prev = w;
    }
    CHECK(switches == 1);
    CHECK(first_dice == int(std::ceil(0.9 * double(N))));
  }
}

TEST_CASE("epoch bounds are enforced") {
  LossSchedule s{ScheduleKind::kAdd, 10};
  CHECK_THROWS_AS(weights_at(s, 11), ContractError);
  CHECK_THROWS_AS(weights_at(s, -1), ContractError);
  CHECK_THROWS_AS(weights_at({ScheduleKind::kAdd, 0}, 0), ContractError);
}

TEST_CASE("schedule names round-trip") {
  for (ScheduleKind k : all_schedules()) {
    const auto parsed = parse_schedule(schedule_name(k));
    REQUIRE(parsed.has_value());
    CHECK(*parsed == k);
  }
  CHECK(!parse_schedule("bogus").has_value());
  CHECK(all_schedules().size() == 5);
}
