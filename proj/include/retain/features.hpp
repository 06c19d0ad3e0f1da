#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "retain/cohort.hpp"
#include "retain/event_store.hpp"

namespace retain {

enum class AggQuantity { count, numeric_value };
enum class AggFunction { count, mean, min, max, stddev, days_since_last };
enum class AggWindow { d183, d365, d1095, all_history };
enum class SpatialGroup { none, zip_code };

int window_days(AggWindow w);  // 0 for all_history
std::string_view to_string(AggQuantity q);
std::string_view to_string(AggFunction f);
std::string_view to_string(AggWindow w);

/// One declarative time/space aggregation over the event log.
struct AggregateSpec {
  EventType source = EventType::hiv_visit;
  AggQuantity quantity = AggQuantity::count;
  AggFunction function = AggFunction::count;
  AggWindow window = AggWindow::d365;
  SpatialGroup spatial = SpatialGroup::none;

  /// Self-describing column name: {source}_{quantity}_{function}_{window},
  /// with a _zip suffix for spatial aggregates.
  std::string name() const;
  void validate() const;
};

/// Static area-level numeric attributes joined by zip code.
struct ZipAttributeTable {
  std::vector<std::string> columns;                       // e.g. area_poverty_rate
  std::map<std::string, std::vector<double>> by_zip;      // zip -> values per column

  static ZipAttributeTable load(const std::string& path);
};

struct FeatureConfig {
  std::vector<AggregateSpec> aggregates;
  std::vector<std::string> entity_categoricals;  // gender, race, transmission_category
  std::vector<std::string> entity_numerics;      // age_years, days_since_diagnosis
  std::optional<ZipAttributeTable> zip_attributes;

  void validate() const;
};

/// Sensible default covering demographics, visit cadence, labs, diagnoses
/// and medications. Used when an experiment file says "features": "default".
FeatureConfig default_feature_config();

/// Everything fitted on training rows only: imputation constants, one-hot
/// vocabularies, and the identity of the rows used for fitting (kept so the
/// leakage audit can prove no test row leaked into the fit).
struct EncoderState {
  std::map<std::string, double> impute_constants;
  std::map<std::string, std::vector<std::string>> vocabularies;
  std::vector<std::string> degenerate_columns;  // all-missing at fit time, imputed 0
  std::vector<std::pair<std::string, std::int32_t>> fitted_rows;  // (entity_id, as_of days)

  bool fitted_on(const PredictionPoint& p) const;
};

struct FeatureMatrix {
  std::vector<PredictionPoint> rows;
  std::vector<std::string> columns;  // lexicographic, flags included
  std::vector<double> values;        // row-major
  std::vector<std::uint8_t> flag_column;  // 1 where the column is an _imputed indicator

  std::size_t n_rows() const { return rows.size(); }
  std::size_t n_cols() const { return columns.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * columns.size() + c]; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * columns.size(), columns.size()};
  }
  std::size_t column_index(const std::string& name) const;  // throws if absent
};

/// Aggregates events with event_date <= point.as_of inside the spec's
/// trailing window. Missing when no event qualifies, except count -> 0.
std::optional<double> compute_aggregate(const AggregateSpec& spec, const EventLog& log,
                                        const PredictionPoint& point);

EncoderState fit_encoders(const FeatureConfig& config,
                          std::span<const PredictionPoint> train_rows, const EventLog& log);

/// Builds the design matrix for `rows` with the given fitted state. Never
/// mutates the encoder; unseen test categories one-hot to all zeros with the
/// missing indicator set.
FeatureMatrix build_feature_matrix(const FeatureConfig& config,
                                   std::span<const PredictionPoint> rows, const EventLog& log,
                                   const EncoderState& encoder);

void export_feature_matrix(const FeatureMatrix& m, const std::string& path);

}  // namespace retain
