#pragma once

#include <string>
#include <vector>

#include "retain/cohort.hpp"
#include "retain/date.hpp"
#include "retain/features.hpp"

namespace retain {

struct TemporalConfig {
  Date feature_start;
  Date data_end;
  int update_frequency_months = 1;
  int test_span_months = 1;
  int label_window_days = 365;
  int min_train_history_months = 12;
  // Growing training window by default: every split trains on all data from
  // feature_start. The sliding variant caps the train span instead.
  bool sliding_window = false;
  int sliding_window_months = 24;

  void validate() const;
};

/// One temporal fold. Periods are inclusive date intervals over as-of dates.
/// Invariant: every train as-of's outcome window closes by test_period.start,
/// and every test as-of's closes by data_end.
struct TimeSplit {
  int split_id = 0;
  DateRange train_period;
  DateRange test_period;
  Date train_label_cutoff;  // train_period.end + label window
  Date test_label_cutoff;   // test_period.end + label window
};

/// Tiles test periods at the update frequency and pairs each with the
/// maximum usable training history. Throws when the config admits no split,
/// stating the earliest data_end that would.
std::vector<TimeSplit> generate_splits(const TemporalConfig& config);

void export_splits(const std::vector<TimeSplit>& splits, const std::string& path);
std::vector<TimeSplit> import_splits(const std::string& path, int label_window_days);

// ---------------------------------------------------------------------------
// Leakage audit

struct LeakageFinding {
  enum class Kind {
    train_window_overlap,        // a train label window extends past test start
    feature_recomputed_differs,  // a feature changes when future events are censored
    encoder_fitted_on_test,      // encoder state saw a test row
  };
  Kind kind;
  std::string detail;
};

/// Everything the audit needs to re-derive what the pipeline claims.
struct SplitArtifacts {
  const TimeSplit* split = nullptr;
  const EventLog* log = nullptr;
  const FeatureConfig* features = nullptr;
  const EncoderState* encoder = nullptr;
  const FeatureMatrix* train_X = nullptr;
  const LabelMatrix* train_y = nullptr;
  const FeatureMatrix* test_X = nullptr;
  const LabelMatrix* test_y = nullptr;
  int label_window_days = 0;
  // Cap on rows re-derived per matrix for finding (b); 0 = all rows.
  std::size_t recompute_sample = 0;
};

std::vector<LeakageFinding> check_leakage(const SplitArtifacts& a);

}  // namespace retain
