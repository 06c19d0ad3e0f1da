#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"

#include "helpers.hpp"
#include "retain/cohort.hpp"
#include "retain/event_store.hpp"
#include "retain/rng.hpp"

using namespace retain;
using retain::testing::make_entity;
using retain::testing::scratch_dir;

namespace {

const DateRange kRange{Date(2012, 1, 1), Date(2014, 12, 31)};

std::vector<Entity> two_entities() {
  Entity a = make_entity("P1");
  a.birth_date = Date(1980, 5, 12);
  a.gender = "female";
  a.race = "groupA";
  a.zip_code = "Z01";
  a.transmission_category = "sexual_contact";
  a.diagnosis_date = Date(2010, 3, 1);
  Entity b = make_entity("P2");  // everything optional left missing
  return {a, b};
}

}  // namespace

TEST_CASE("event log sorts events and indexes per-entity spans") {
  std::vector<Event> events = {
      {"P2", EventType::hiv_visit, Date(2012, 6, 1), {}, {}},
      {"P1", EventType::viral_load_test, Date(2012, 8, 1), 150.0, {}},
      {"P1", EventType::hiv_visit, Date(2012, 3, 1), {}, {}},
  };
  EventLog log = EventLog::build(two_entities(), events, kRange);

  REQUIRE(log.events().size() == 3);
  CHECK(log.events()[0].entity_id == "P1");
  CHECK(log.events()[0].date == Date(2012, 3, 1));
  CHECK(log.events()[1].date == Date(2012, 8, 1));
  CHECK(log.events()[2].entity_id == "P2");

  auto span = log.events_for("P1");
  REQUIRE(span.size() == 2);
  CHECK(span[0].type == EventType::hiv_visit);
  CHECK(log.events_for("P2").size() == 1);
  CHECK(log.events_for("nobody").empty());

  CHECK(log.find_entity("P1") != nullptr);
  CHECK(log.find_entity("P3") == nullptr);
}

TEST_CASE("build rejects events referencing unknown entities") {
  std::vector<Event> events = {{"ghost", EventType::hiv_visit, Date(2012, 6, 1), {}, {}}};
  CHECK_THROWS_WITH_AS(EventLog::build(two_entities(), events, kRange),
                       doctest::Contains("ghost"), std::invalid_argument);
}

TEST_CASE("csv export then ingest reproduces the log") {
  auto dir = scratch_dir("event_csv");
  std::vector<Event> events = {
      {"P1", EventType::hiv_visit, Date(2012, 3, 1), {}, {}},
      {"P1", EventType::viral_load_test, Date(2012, 8, 1), 210.0, {}},
      {"P1", EventType::diagnosis, Date(2013, 1, 5), {}, std::optional<std::string>("std")},
      {"P2", EventType::cd4_test, Date(2012, 6, 1), 410.0, {}},
  };
  EventLog log = EventLog::build(two_entities(), events, kRange);
  std::string epath = (dir / "entities.csv").string();
  std::string vpath = (dir / "events.csv").string();
  export_csv(log, epath, vpath);

  EventLog back = ingest_csv(epath, vpath);
  REQUIRE(back.entities().size() == 2);
  const Entity* p1 = back.find_entity("P1");
  REQUIRE(p1 != nullptr);
  CHECK(p1->birth_date == Date(1980, 5, 12));
  CHECK(p1->gender == std::optional<std::string>("female"));
  CHECK(p1->zip_code == std::optional<std::string>("Z01"));
  const Entity* p2 = back.find_entity("P2");
  REQUIRE(p2 != nullptr);
  CHECK_FALSE(p2->birth_date.has_value());
  CHECK_FALSE(p2->gender.has_value());

  REQUIRE(back.events().size() == log.events().size());
  for (std::size_t i = 0; i < back.events().size(); ++i) {
    CHECK(back.events()[i].entity_id == log.events()[i].entity_id);
    CHECK(back.events()[i].type == log.events()[i].type);
    CHECK(back.events()[i].date == log.events()[i].date);
    CHECK(back.events()[i].numeric_value == log.events()[i].numeric_value);
    CHECK(back.events()[i].category_value == log.events()[i].category_value);
  }
  // The CSV pair carries no coverage metadata, so ingest derives the range
  // from the events themselves; re-ingesting its own export is a fixed point.
  CHECK(back.date_range().start == Date(2012, 3, 1));
  CHECK(back.date_range().end == Date(2013, 1, 5));
}

TEST_CASE("validation flags each defect class") {
  std::vector<Entity> ents = two_entities();
  std::vector<Event> events = {
      // Out of (entity, date) order on purpose.
      {"P1", EventType::hiv_visit, Date(2012, 8, 1), {}, {}},
      {"P1", EventType::hiv_visit, Date(2012, 3, 1), {}, {}},
      // Unknown entity.
      {"zz", EventType::hiv_visit, Date(2012, 5, 1), {}, {}},
      // Outside the stated range.
      {"P2", EventType::hiv_visit, Date(2015, 6, 1), {}, {}},
      // Before P1's 1980 birth date.
      {"P1", EventType::other_visit, Date(1975, 1, 1), {}, {}},
      // Negative lab value and a lab event without any value.
      {"P2", EventType::viral_load_test, Date(2012, 7, 1), -5.0, {}},
      {"P2", EventType::cd4_test, Date(2012, 7, 2), {}, {}},
  };
  EventLog log = EventLog::adopt_unchecked(std::move(ents), std::move(events), kRange);
  ValidationReport report = validate_event_log(log);

  using K = ValidationFinding::Kind;
  CHECK_FALSE(report.ok());
  CHECK(report.count(K::unsorted) >= 1);
  CHECK(report.count(K::dangling_reference) == 1);
  CHECK(report.count(K::out_of_range) >= 1);
  CHECK(report.count(K::before_birth) == 1);
  CHECK(report.count(K::negative_value) == 1);
  CHECK(report.count(K::missing_lab_value) == 1);
}

TEST_CASE("a clean log validates with no findings") {
  std::vector<Event> events = {
      {"P1", EventType::hiv_visit, Date(2012, 3, 1), {}, {}},
      {"P2", EventType::viral_load_test, Date(2012, 6, 1), 80.0, {}},
  };
  EventLog log = EventLog::build(two_entities(), events, kRange);
  CHECK(validate_event_log(log).ok());
}

TEST_CASE("shift_dates moves every date uniformly and commutes with labels") {
  std::vector<Event> events = {
      {"P1", EventType::hiv_visit, Date(2012, 3, 1), {}, {}},
      {"P1", EventType::hiv_visit, Date(2012, 9, 1), {}, {}},
      {"P1", EventType::hiv_visit, Date(2013, 4, 1), {}, {}},
  };
  EventLog log = EventLog::build(two_entities(), events, kRange);
  EventLog shifted = log.shift_dates(45);

  CHECK(shifted.date_range().start == kRange.start.plus_days(45));
  CHECK(shifted.date_range().end == kRange.end.plus_days(45));
  CHECK(shifted.events()[0].date == Date(2012, 3, 1).plus_days(45));
  const Entity* p1 = shifted.find_entity("P1");
  REQUIRE(p1 != nullptr);
  CHECK(*p1->birth_date == Date(1980, 5, 12).plus_days(45));

  Date as_of(2012, 4, 1);
  auto visits = hiv_visit_dates(log, "P1");
  auto visits_shifted = hiv_visit_dates(shifted, "P1");
  CHECK(retention_label(visits, as_of, 365, 90) ==
        retention_label(visits_shifted, as_of.plus_days(45), 365, 90));
  CHECK(access_label(visits, as_of, 365) ==
        access_label(visits_shifted, as_of.plus_days(45), 365));
}

TEST_CASE("synthetic generation is a pure function of its config") {
  SyntheticConfig cfg;
  cfg.n_entities = 40;
  cfg.seed = 923;
  cfg.date_range = {Date(2011, 1, 1), Date(2013, 12, 31)};

  auto [log_a, truth_a] = generate_synthetic_cohort(cfg);
  auto [log_b, truth_b] = generate_synthetic_cohort(cfg);

  REQUIRE(log_a.events().size() == log_b.events().size());
  for (std::size_t i = 0; i < log_a.events().size(); ++i) {
    CHECK(log_a.events()[i].entity_id == log_b.events()[i].entity_id);
    CHECK(log_a.events()[i].date == log_b.events()[i].date);
    CHECK(log_a.events()[i].numeric_value == log_b.events()[i].numeric_value);
  }
  REQUIRE(truth_a.rows.size() == truth_b.rows.size());
  for (std::size_t i = 0; i < truth_a.rows.size(); ++i) {
    CHECK(truth_a.rows[i].planted_dropout_prob == truth_b.rows[i].planted_dropout_prob);
    CHECK(truth_a.rows[i].dropout_date == truth_b.rows[i].dropout_date);
  }

  SyntheticConfig other = cfg;
  other.seed = 924;
  auto [log_c, truth_c] = generate_synthetic_cohort(other);
  bool same = log_a.events().size() == log_c.events().size();
  if (same)
    for (std::size_t i = 0; i < log_a.events().size() && same; ++i)
      same = log_a.events()[i].date == log_c.events()[i].date;
  CHECK_FALSE(same);
}

TEST_CASE("synthetic cohorts are internally consistent") {
  SyntheticConfig cfg;
  cfg.n_entities = 120;
  cfg.seed = 7;
  auto [log, truth] = generate_synthetic_cohort(cfg);

  CHECK(validate_event_log(log).ok());
  CHECK(log.entities().size() == 120);
  CHECK(truth.rows.size() == 120);

  // Visit sequences advance strictly; every entity has at least one visit.
  for (const Entity& ent : log.entities()) {
    auto visits = hiv_visit_dates(log, ent.entity_id);
    CHECK(!visits.empty());
    for (std::size_t i = 1; i < visits.size(); ++i) CHECK(visits[i - 1] < visits[i]);
  }

  // Planted probabilities are probabilities.
  for (const auto& row : truth.rows) {
    CHECK(row.planted_dropout_prob >= 0.0);
    CHECK(row.planted_dropout_prob <= 0.97);
    if (row.dropout_date) CHECK(cfg.date_range.contains(*row.dropout_date));
  }
}

TEST_CASE("group_bias multiplies the planted drop-out probability") {
  SyntheticConfig cfg;
  cfg.n_entities = 4000;
  cfg.seed = 311;
  cfg.base_dropout_rate = 0.2;
  cfg.group_bias = GroupBias{"race", "groupB", 2.0};

  SyntheticConfig flat = cfg;
  flat.group_bias.reset();

  auto [log, truth] = generate_synthetic_cohort(cfg);
  auto [log_flat, truth_flat] = generate_synthetic_cohort(flat);

  // Per entity, biased probability is exactly multiplier x flat (then clamped)
  // for members of the biased group, and untouched otherwise.
  for (std::size_t i = 0; i < truth.rows.size(); ++i) {
    const Entity* ent = log.find_entity(truth.rows[i].entity_id);
    REQUIRE(ent != nullptr);
    double flat_p = truth_flat.rows[i].planted_dropout_prob;
    double biased_p = truth.rows[i].planted_dropout_prob;
    if (ent->race == std::optional<std::string>("groupB")) {
      CHECK(biased_p == doctest::Approx(std::min(2.0 * flat_p, 0.97)).epsilon(1e-12));
    } else {
      CHECK(biased_p == flat_p);
    }
  }

  // Realized drop-out is materially elevated for the biased group.
  std::size_t b_n = 0, b_drop = 0, o_n = 0, o_drop = 0;
  for (const auto& row : truth.rows) {
    const Entity* ent = log.find_entity(row.entity_id);
    bool is_b = ent->race == std::optional<std::string>("groupB");
    (is_b ? b_n : o_n) += 1;
    if (row.dropout_date) (is_b ? b_drop : o_drop) += 1;
  }
  REQUIRE(b_n > 500);
  REQUIRE(o_n > 500);
  double ratio = (static_cast<double>(b_drop) / b_n) / (static_cast<double>(o_drop) / o_n);
  CHECK(ratio > 1.5);
  CHECK(ratio < 2.3);
}

TEST_CASE("zero-weight signal severs features from outcomes") {
  SyntheticConfig cfg;
  cfg.n_entities = 3000;
  cfg.seed = 88;
  cfg.base_dropout_rate = 0.3;
  cfg.dropout_signal = {{"low_adherence", 0.0}};

  auto [log, truth] = generate_synthetic_cohort(cfg);
  double drop = 0.0;
  for (const auto& row : truth.rows) {
    CHECK(row.planted_dropout_prob == doctest::Approx(0.3).epsilon(1e-9));
    drop += row.dropout_date ? 1.0 : 0.0;
  }
  CHECK(drop / cfg.n_entities == doctest::Approx(0.3).epsilon(0.1));
}

TEST_CASE("generator rejects out-of-domain configs") {
  SyntheticConfig cfg;
  cfg.n_entities = 0;
  CHECK_THROWS_AS(generate_synthetic_cohort(cfg), std::invalid_argument);

  cfg.n_entities = 10;
  cfg.base_dropout_rate = 0.0;
  CHECK_THROWS_AS(generate_synthetic_cohort(cfg), std::invalid_argument);

  cfg.base_dropout_rate = 0.25;
  cfg.dropout_signal = {{"no_such_latent", 1.0}};
  CHECK_THROWS_WITH_AS(generate_synthetic_cohort(cfg), doctest::Contains("no_such_latent"),
                       std::runtime_error);

  cfg.dropout_signal.clear();
  cfg.group_bias = GroupBias{"shoe_size", "large", 2.0};
  CHECK_THROWS_AS(generate_synthetic_cohort(cfg), std::invalid_argument);
}

TEST_CASE("zip attribute export is keyed by zip and deterministic") {
  auto dir = scratch_dir("zip_attrs");
  SyntheticConfig cfg;
  cfg.n_entities = 60;
  cfg.seed = 5;
  auto [log, truth] = generate_synthetic_cohort(cfg);

  std::string p1 = (dir / "zip1.csv").string();
  std::string p2 = (dir / "zip2.csv").string();
  export_zip_attributes(log, 99, p1);
  export_zip_attributes(log, 99, p2);
  CHECK(retain::testing::read_file(p1) == retain::testing::read_file(p2));

  ZipAttributeTable table = ZipAttributeTable::load(p1);
  CHECK(table.columns == std::vector<std::string>{"area_poverty_rate", "area_clinic_density"});
  CHECK(!table.by_zip.empty());
  for (const auto& [zip, vals] : table.by_zip) REQUIRE(vals.size() == 2);
}
