#include <algorithm>
#include <vector>

#include "doctest.h"

#include "helpers.hpp"
#include "retain/cohort.hpp"
#include "retain/rng.hpp"

using namespace retain;
using retain::testing::log_from_visits;

namespace {

const Date kAsOf(2013, 6, 1);

std::vector<Date> offsets(std::initializer_list<int> days) {
  std::vector<Date> v;
  for (int d : days) v.push_back(kAsOf.plus_days(d));
  std::sort(v.begin(), v.end());
  return v;
}

// Independent oracle: literal quantified definition, no sorting tricks.
int retention_oracle(const std::vector<Date>& visits, Date as_of, int window, int gap) {
  for (std::size_t i = 0; i < visits.size(); ++i)
    for (std::size_t j = 0; j < visits.size(); ++j) {
      const Date a = visits[i], b = visits[j];
      bool a_in = a > as_of && a <= as_of.plus_days(window);
      bool b_in = b > as_of && b <= as_of.plus_days(window);
      if (a_in && b_in && a < b && b - a > gap) return 0;
    }
  return 1;
}

int access_oracle(const std::vector<Date>& visits, Date as_of, int window) {
  for (Date v : visits)
    if (v > as_of && v <= as_of.plus_days(window)) return 0;
  return 1;
}

}  // namespace

TEST_CASE("retention label needs two sufficiently spaced future visits") {
  // 100-day spread: retained.
  CHECK(retention_label(offsets({10, 110}), kAsOf, 365, 90) == 0);
  // 80-day spread: two visits but too close together.
  CHECK(retention_label(offsets({10, 90}), kAsOf, 365, 90) == 1);
  // Exactly 90 days apart: strict inequality, still at risk.
  CHECK(retention_label(offsets({10, 100}), kAsOf, 365, 90) == 1);
  // Middle visit does not help; first-to-last spread decides.
  CHECK(retention_label(offsets({10, 60, 160}), kAsOf, 365, 90) == 0);
  // A single future visit can never satisfy the pair requirement.
  CHECK(retention_label(offsets({100}), kAsOf, 365, 90) == 1);
  CHECK(retention_label({}, kAsOf, 365, 90) == 1);
}

TEST_CASE("outcome windows are open on the left, closed on the right") {
  // The as-of-day visit itself never counts.
  CHECK(retention_label(offsets({0, 120}), kAsOf, 365, 90) == 1);
  CHECK(access_label(offsets({0}), kAsOf, 365) == 1);
  // A visit exactly at the window end still counts.
  CHECK(retention_label(offsets({10, 365}), kAsOf, 365, 90) == 0);
  CHECK(access_label(offsets({365}), kAsOf, 365) == 0);
  // One day past the window does not.
  CHECK(retention_label(offsets({10, 366}), kAsOf, 365, 90) == 1);
  CHECK(access_label(offsets({366}), kAsOf, 365) == 1);
  // Same-day duplicate visits are one visit.
  CHECK(retention_label(offsets({100, 100}), kAsOf, 365, 90) == 1);
}

TEST_CASE("access label fires on any single in-window visit") {
  CHECK(access_label(offsets({30}), kAsOf, 183) == 0);
  CHECK(access_label(offsets({183}), kAsOf, 183) == 0);
  CHECK(access_label(offsets({184}), kAsOf, 183) == 1);
  CHECK(access_label(offsets({-20}), kAsOf, 183) == 1);
  CHECK(access_label({}, kAsOf, 183) == 1);
}

TEST_CASE("labels reject unsorted histories") {
  std::vector<Date> bad = {kAsOf.plus_days(50), kAsOf.plus_days(10)};
  CHECK_THROWS_AS(retention_label(bad, kAsOf, 365, 90), std::invalid_argument);
  CHECK_THROWS_AS(access_label(bad, kAsOf, 365), std::invalid_argument);
}

TEST_CASE("labels match a brute-force oracle on random histories") {
  Rng rng(20130601);
  for (int trial = 0; trial < 2000; ++trial) {
    const int window = rng.bernoulli(0.5) ? 365 : 183;
    const int gap = 90;
    std::vector<Date> visits;
    const int n = static_cast<int>(rng.uniform_int(0, 7));
    for (int i = 0; i < n; ++i)
      visits.push_back(kAsOf.plus_days(static_cast<int>(rng.uniform_int(-60, window + 90))));
    std::sort(visits.begin(), visits.end());

    CHECK(retention_label(visits, kAsOf, window, gap) ==
          retention_oracle(visits, kAsOf, window, gap));
    CHECK(access_label(visits, kAsOf, window) == access_oracle(visits, kAsOf, window));
  }
}

TEST_CASE("visits outside the window never change a label") {
  Rng rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Date> visits;
    const int n = static_cast<int>(rng.uniform_int(0, 5));
    for (int i = 0; i < n; ++i)
      visits.push_back(kAsOf.plus_days(static_cast<int>(rng.uniform_int(1, 365))));
    std::sort(visits.begin(), visits.end());
    int base_ret = retention_label(visits, kAsOf, 365, 90);
    int base_acc = access_label(visits, kAsOf, 365);

    // Add noise strictly before (or on) as_of and strictly after the window.
    std::vector<Date> noisy = visits;
    noisy.insert(noisy.begin(), kAsOf.plus_days(-static_cast<int>(rng.uniform_int(0, 100))));
    noisy.push_back(kAsOf.plus_days(366 + static_cast<int>(rng.uniform_int(0, 100))));
    std::sort(noisy.begin(), noisy.end());

    CHECK(retention_label(noisy, kAsOf, 365, 90) == base_ret);
    CHECK(access_label(noisy, kAsOf, 365) == base_acc);
  }
}

TEST_CASE("accessing care is necessary for retention") {
  // access == 1 (no visit at all) forces retention == 1 for the same window.
  Rng rng(97);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Date> visits;
    const int n = static_cast<int>(rng.uniform_int(0, 6));
    for (int i = 0; i < n; ++i)
      visits.push_back(kAsOf.plus_days(static_cast<int>(rng.uniform_int(-30, 500))));
    std::sort(visits.begin(), visits.end());
    if (access_label(visits, kAsOf, 365) == 1)
      CHECK(retention_label(visits, kAsOf, 365, 90) == 1);
  }
}

TEST_CASE("clinic cohort has one row per distinct appointment day in the period") {
  EventLog log = log_from_visits(
      {
          {"A", {Date(2013, 2, 1), Date(2013, 2, 1), Date(2013, 5, 10), Date(2014, 1, 1)}},
          {"B", {Date(2012, 6, 1)}},
          {"C", {Date(2013, 3, 3)}},
      },
      {Date(2012, 1, 1), Date(2014, 12, 31)});

  auto cohort = build_clinic_cohort(log, {Date(2013, 1, 1), Date(2013, 12, 31)});
  REQUIRE(cohort.size() == 3);  // A twice (same-day pair collapsed), C once
  CHECK(cohort[0].entity_id == "A");
  CHECK(cohort[0].as_of == Date(2013, 2, 1));
  CHECK(cohort[1].entity_id == "A");
  CHECK(cohort[1].as_of == Date(2013, 5, 10));
  CHECK(cohort[2].entity_id == "C");
  CHECK(cohort[0].context == CohortContext::clinic_appointment);

  CHECK_THROWS_AS(build_clinic_cohort(log, {Date(2013, 6, 1), Date(2013, 1, 1)}),
                  std::invalid_argument);
}

TEST_CASE("roster cohort keys on recent lab contact") {
  const Date as_of(2013, 6, 1);
  std::vector<Entity> ents = {retain::testing::make_entity("A"),
                              retain::testing::make_entity("B"),
                              retain::testing::make_entity("C"),
                              retain::testing::make_entity("D")};
  std::vector<Event> events = {
      // A: viral load 100 days back -> in.
      {"A", EventType::viral_load_test, as_of.plus_days(-100), 90.0, {}},
      // B: only contact 400 days back -> out.
      {"B", EventType::cd4_test, as_of.plus_days(-400), 300.0, {}},
      // C: CD4 exactly at the lookback boundary -> in (inclusive).
      {"C", EventType::cd4_test, as_of.plus_days(-365), 450.0, {}},
      // D: recent visit but no lab work -> out.
      {"D", EventType::hiv_visit, as_of.plus_days(-10), {}, {}},
  };
  EventLog log = EventLog::build(std::move(ents), std::move(events),
                                 {Date(2011, 1, 1), Date(2014, 12, 31)});

  auto cohort = build_roster_cohort(log, as_of, 365);
  REQUIRE(cohort.size() == 2);
  CHECK(cohort[0].entity_id == "A");
  CHECK(cohort[1].entity_id == "C");
  CHECK(cohort[0].as_of == as_of);
  CHECK(cohort[0].context == CohortContext::monthly_roster);

  CHECK_THROWS_AS(build_roster_cohort(log, Date(2015, 6, 1), 365), std::invalid_argument);
}

TEST_CASE("label matrix composes per-row labels and stays in input order") {
  EventLog log = log_from_visits(
      {
          // A: visits 20 and 150 days after as_of -> retained (gap 130).
          {"A", {Date(2013, 6, 21), Date(2013, 10, 29)}},
          // B: one early visit only -> not retained.
          {"B", {Date(2013, 6, 21)}},
          // C: visits 10 and 120 days after -> retained.
          {"C", {Date(2013, 6, 11), Date(2013, 9, 29)}},
      },
      {Date(2012, 1, 1), Date(2014, 12, 31)});

  std::vector<PredictionPoint> cohort = {
      {"A", Date(2013, 6, 1), CohortContext::clinic_appointment},
      {"B", Date(2013, 6, 1), CohortContext::clinic_appointment},
      {"C", Date(2013, 6, 1), CohortContext::clinic_appointment},
  };
  LabelSpec spec;
  spec.kind = LabelKind::retention;
  spec.window_days = 365;
  spec.min_gap_days = 90;

  LabelMatrix m = build_label_matrix(cohort, log, spec);
  REQUIRE(m.labels.size() == 3);
  CHECK(m.labels == std::vector<int>{0, 1, 0});
  CHECK(m.rows[0].entity_id == "A");
  CHECK(m.rows[2].entity_id == "C");

  LabelMatrix empty = build_label_matrix({}, log, spec);
  CHECK(empty.rows.empty());
  CHECK(empty.labels.empty());
}

TEST_CASE("unobservable outcome windows abort labeling by name") {
  EventLog log = log_from_visits({{"A", {Date(2013, 2, 1)}}},
                                 {Date(2012, 1, 1), Date(2013, 12, 31)});
  std::vector<PredictionPoint> cohort = {
      {"A", Date(2013, 6, 1), CohortContext::clinic_appointment}};
  LabelSpec spec;
  spec.window_days = 365;  // ends 2014-06-01, past data end

  CHECK_THROWS_WITH_AS(build_label_matrix(cohort, log, spec),
                       doctest::Contains("unobservable"), std::runtime_error);
  CHECK_THROWS_WITH_AS(build_label_matrix(cohort, log, spec), doctest::Contains("2013-06-01"),
                       std::runtime_error);
}

TEST_CASE("label spec validation") {
  LabelSpec bad;
  bad.window_days = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.window_days = 90;
  bad.min_gap_days = 90;
  bad.kind = LabelKind::retention;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.kind = LabelKind::access;  // gap irrelevant for access
  CHECK_NOTHROW(bad.validate());
}
