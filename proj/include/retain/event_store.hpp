#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "retain/date.hpp"

namespace retain {

enum class EventType {
  hiv_visit,
  other_visit,
  viral_load_test,
  cd4_test,
  diagnosis,
  medication,
  opportunistic_infection,
};

std::string_view to_string(EventType t);
std::optional<EventType> parse_event_type(std::string_view s);

/// One person in the cohort. Absent demographics are nullopt, never "" —
/// the imputation flags downstream depend on missingness being explicit.
struct Entity {
  std::string entity_id;
  std::optional<Date> birth_date;
  std::optional<std::string> gender;
  std::optional<std::string> race;
  std::optional<std::string> zip_code;
  std::optional<std::string> transmission_category;
  std::optional<Date> diagnosis_date;
};

struct Event {
  std::string entity_id;
  EventType type = EventType::hiv_visit;
  Date date;
  std::optional<double> numeric_value;   // copies/ml for viral load, cells/mm3 for CD4
  std::optional<std::string> category_value;
};

/// Immutable event store, events kept sorted by (entity_id, event_date).
/// Safe for concurrent reads once constructed.
class EventLog {
 public:
  /// Sorts events and verifies every event resolves to an entity; throws
  /// listing dangling ids otherwise.
  static EventLog build(std::vector<Entity> entities, std::vector<Event> events,
                        DateRange range);
  /// Keeps the given order and skips reference checks. Exists so validation
  /// tests can construct deliberately broken logs.
  static EventLog adopt_unchecked(std::vector<Entity> entities, std::vector<Event> events,
                                  DateRange range);

  const std::vector<Entity>& entities() const { return entities_; }
  const std::vector<Event>& events() const { return events_; }
  const DateRange& date_range() const { return range_; }

  const Entity* find_entity(std::string_view id) const;
  /// Events of one entity, in date order (contiguous in the sorted store).
  std::span<const Event> events_for(std::string_view entity_id) const;

  /// Uniform day-offset on every date (anonymization-style shift). Commutes
  /// with all label and feature computation when as-of dates shift alongside.
  EventLog shift_dates(int offset_days) const;

 private:
  EventLog() = default;
  void index();

  std::vector<Entity> entities_;  // sorted by entity_id
  std::vector<Event> events_;     // sorted by (entity_id, date)
  DateRange range_{};
  std::map<std::string, std::pair<std::size_t, std::size_t>, std::less<>> spans_;
  std::map<std::string, std::size_t, std::less<>> entity_idx_;
};

// ---------------------------------------------------------------------------
// CSV ingest / export

/// Loads entities.csv + events.csv (schemas documented in docs/config.md).
/// Malformed rows raise CsvError naming file, line and column.
EventLog ingest_csv(const std::string& entities_path, const std::string& events_path);

void export_csv(const EventLog& log, const std::string& entities_path,
                const std::string& events_path);

// ---------------------------------------------------------------------------
// Validation

struct ValidationFinding {
  enum class Kind {
    unsorted,
    dangling_reference,
    out_of_range,
    before_birth,
    negative_value,
    missing_lab_value,
  };
  Kind kind;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationFinding> findings;

  bool ok() const { return findings.empty(); }
  std::size_t count(ValidationFinding::Kind k) const;
};

ValidationReport validate_event_log(const EventLog& log);

// ---------------------------------------------------------------------------
// Synthetic cohort generation

/// One additive term of the planted drop-out signal. Feature names are the
/// per-entity latent covariates the generator exposes:
///   low_adherence, unsuppressed_viral_load, young_age, sparse_visits
struct SignalTerm {
  std::string feature;
  double weight = 0.0;
};

struct GroupBias {
  std::string attribute;  // race | gender | transmission_category | zip_code
  std::string group;
  double multiplier = 1.0;
};

struct SyntheticConfig {
  int n_entities = 1000;
  DateRange date_range{Date(2010, 1, 1), Date(2014, 12, 31)};
  std::uint64_t seed = 0;
  std::vector<SignalTerm> dropout_signal;  // empty = default_dropout_signal()
  std::optional<GroupBias> group_bias;
  double base_dropout_rate = 0.25;  // mean planted drop-out probability
};

std::vector<SignalTerm> default_dropout_signal();

/// Latent per-entity parameters, recorded so tests can verify that planted
/// signal is recoverable from the generated events.
struct GroundTruth {
  struct Row {
    std::string entity_id;
    double latent_adherence = 0.0;
    double planted_dropout_prob = 0.0;
    std::optional<Date> dropout_date;  // engaged iff the entity drops out
  };
  std::vector<Row> rows;
};

/// Pure function of the config: identical configs give byte-identical logs.
std::pair<EventLog, GroundTruth> generate_synthetic_cohort(const SyntheticConfig& config);

void export_ground_truth(const GroundTruth& gt, const std::string& path);

/// Synthetic area-level attributes keyed by zip code (stand-in for external
/// census joins). Deterministic in the seed.
void export_zip_attributes(const EventLog& log, std::uint64_t seed, const std::string& path);

}  // namespace retain
