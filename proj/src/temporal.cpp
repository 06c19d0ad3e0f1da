#include "retain/temporal.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "retain/csv.hpp"

namespace retain {

void TemporalConfig::validate() const {
  if (feature_start >= data_end)
    throw std::invalid_argument("temporal config: feature_start must precede data_end");
  if (label_window_days <= 0)
    throw std::invalid_argument("temporal config: label_window_days must be positive");
  if (update_frequency_months <= 0 || test_span_months <= 0 || min_train_history_months < 0)
    throw std::invalid_argument("temporal config: durations must be positive");
  if (sliding_window && sliding_window_months <= 0)
    throw std::invalid_argument("temporal config: sliding_window_months must be positive");
}

std::vector<TimeSplit> generate_splits(const TemporalConfig& config) {
  config.validate();
  const Date last_scorable = config.data_end.plus_days(-config.label_window_days);

  std::vector<TimeSplit> splits;
  for (int k = 0;; ++k) {
    const Date test_start =
        config.feature_start.plus_months(config.min_train_history_months +
                                         k * config.update_frequency_months);
    if (test_start > last_scorable) break;
    const Date train_end = test_start.plus_days(-config.label_window_days);
    if (train_end < config.feature_start) continue;  // not enough history yet

    TimeSplit s;
    s.split_id = static_cast<int>(splits.size());
    Date train_start = config.feature_start;
    if (config.sliding_window)
      train_start = std::max(train_start, test_start.plus_months(-config.sliding_window_months));
    s.train_period = {train_start, train_end};
    const Date test_end =
        std::min(test_start.plus_months(config.test_span_months).plus_days(-1), last_scorable);
    s.test_period = {test_start, test_end};
    s.train_label_cutoff = train_end.plus_days(config.label_window_days);
    s.test_label_cutoff = test_end.plus_days(config.label_window_days);
    splits.push_back(s);
  }

  if (splits.empty()) {
    const Date earliest_feasible = config.feature_start
                                       .plus_months(config.min_train_history_months)
                                       .plus_days(config.label_window_days);
    throw std::runtime_error(
        "temporal config admits no split: data_end " + config.data_end.to_string() +
        " is too early, needs at least " + earliest_feasible.to_string());
  }
  return splits;
}

void export_splits(const std::vector<TimeSplit>& splits, const std::string& path) {
  CsvWriter w(path);
  w.write_row({"split_id", "train_start", "train_end", "test_start", "test_end"});
  for (const TimeSplit& s : splits)
    w.write_row({std::to_string(s.split_id), s.train_period.start.to_string(),
                 s.train_period.end.to_string(), s.test_period.start.to_string(),
                 s.test_period.end.to_string()});
}

std::vector<TimeSplit> import_splits(const std::string& path, int label_window_days) {
  CsvReader reader(path);
  reader.require_header({"split_id", "train_start", "train_end", "test_start", "test_end"});
  std::vector<TimeSplit> out;
  std::vector<std::string> row;
  auto date_at = [&](std::size_t i, std::vector<std::string>& r) {
    std::optional<Date> d = Date::parse(r[i]);
    if (!d)
      throw CsvError(path + ":" + std::to_string(reader.line()) + ": invalid date '" + r[i] +
                     "'");
    return *d;
  };
  while (reader.next(row)) {
    TimeSplit s;
    s.split_id = std::stoi(row[0]);
    s.train_period = {date_at(1, row), date_at(2, row)};
    s.test_period = {date_at(3, row), date_at(4, row)};
    s.train_label_cutoff = s.train_period.end.plus_days(label_window_days);
    s.test_label_cutoff = s.test_period.end.plus_days(label_window_days);
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Leakage audit

namespace {

EventLog censor_after(const EventLog& log, Date cutoff) {
  std::vector<Event> kept;
  for (const Event& e : log.events())
    if (e.date <= cutoff) kept.push_back(e);
  return EventLog::build(std::vector<Entity>(log.entities()), std::move(kept),
                         log.date_range());
}

// Re-derives every aggregate for a row against a log stripped of all events
// after the row's as_of. The pipeline's fast path must agree exactly.
void check_recomputation(const SplitArtifacts& a, const FeatureMatrix& X, const char* role,
                         std::vector<LeakageFinding>& findings) {
  std::size_t stride = 1;
  if (a.recompute_sample > 0 && X.n_rows() > a.recompute_sample)
    stride = (X.n_rows() + a.recompute_sample - 1) / a.recompute_sample;

  for (std::size_t r = 0; r < X.n_rows(); r += stride) {
    const PredictionPoint& p = X.rows[r];
    EventLog censored = censor_after(*a.log, p.as_of);
    for (const auto& spec : a.features->aggregates) {
      std::optional<double> raw = compute_aggregate(spec, censored, p);
      const std::string col = spec.name();
      const std::size_t c = X.column_index(col);
      double expected;
      bool expected_flag = false;
      if (raw) {
        expected = *raw;
      } else {
        auto it = a.encoder->impute_constants.find(col);
        expected = it == a.encoder->impute_constants.end() ? 0.0 : it->second;
        expected_flag = true;
      }
      const double got = X.at(r, c);
      bool flag_mismatch = false;
      auto flag_it = std::find(X.columns.begin(), X.columns.end(), col + "_imputed");
      if (flag_it != X.columns.end()) {
        double flag = X.at(r, static_cast<std::size_t>(flag_it - X.columns.begin()));
        flag_mismatch = (flag != 0.0) != expected_flag;
      }
      if (got != expected || flag_mismatch) {
        findings.push_back(
            {LeakageFinding::Kind::feature_recomputed_differs,
             std::string(role) + " row " + std::to_string(r) + " (" + p.entity_id + " @ " +
                 p.as_of.to_string() + ") column '" + col +
                 "': recomputation on censored events gives " +
                 (raw ? format_double(*raw) : std::string("missing")) + ", matrix holds " +
                 format_double(got)});
        return;  // one finding per matrix is enough to fail the audit
      }
    }
  }
}

}  // namespace

std::vector<LeakageFinding> check_leakage(const SplitArtifacts& a) {
  if (!a.split || !a.log || !a.features || !a.encoder || !a.train_X || !a.train_y ||
      !a.test_X || !a.test_y)
    throw std::invalid_argument("check_leakage: incomplete artifacts");

  std::vector<LeakageFinding> findings;

  // (a) Train outcome windows must close before the test period opens.
  for (std::size_t r = 0; r < a.train_y->rows.size(); ++r) {
    const PredictionPoint& p = a.train_y->rows[r];
    Date window_end = p.as_of.plus_days(a.label_window_days);
    if (window_end > a.split->test_period.start) {
      findings.push_back({LeakageFinding::Kind::train_window_overlap,
                          "train row " + std::to_string(r) + " (" + p.entity_id + " @ " +
                              p.as_of.to_string() + ") label window ends " +
                              window_end.to_string() + ", after test start " +
                              a.split->test_period.start.to_string()});
    }
  }

  // (b) Features must be reproducible from the event-censored log.
  check_recomputation(a, *a.train_X, "train", findings);
  check_recomputation(a, *a.test_X, "test", findings);

  // (c) The encoder must not have been fitted on any test row.
  std::set<std::pair<std::string, std::int32_t>> fitted(a.encoder->fitted_rows.begin(),
                                                        a.encoder->fitted_rows.end());
  for (const PredictionPoint& p : a.test_X->rows) {
    if (fitted.contains({p.entity_id, p.as_of.epoch_days()})) {
      findings.push_back({LeakageFinding::Kind::encoder_fitted_on_test,
                          "encoder state was fitted on test row " + p.entity_id + " @ " +
                              p.as_of.to_string()});
      break;
    }
  }
  return findings;
}

}  // namespace retain
