#pragma once

#include <span>
#include <string>
#include <vector>

#include "retain/date.hpp"
#include "retain/event_store.hpp"

namespace retain {

enum class CohortContext { clinic_appointment, monthly_roster };

/// An (entity, as-of date) pair at which a score is produced. One row of
/// every feature/label matrix.
struct PredictionPoint {
  std::string entity_id;
  Date as_of;
  CohortContext context = CohortContext::clinic_appointment;

  friend bool operator==(const PredictionPoint& a, const PredictionPoint& b) {
    return a.entity_id == b.entity_id && a.as_of == b.as_of;
  }
};

enum class LabelKind { retention, access };

struct LabelSpec {
  LabelKind kind = LabelKind::retention;
  int window_days = 365;
  int min_gap_days = 90;  // retention only

  void validate() const;
};

struct LabelMatrix {
  std::vector<PredictionPoint> rows;
  std::vector<int> labels;  // 1 = outcome failure (not retained / did not access)
  LabelSpec spec;
};

/// 1 unless two visit dates v1 < v2 exist in (as_of, as_of + window_days]
/// with v2 - v1 > min_gap_days. The as-of-day visit itself never counts:
/// the outcome concerns subsequent appointments. Outcome windows are
/// half-open on the left, closed on the right.
int retention_label(std::span<const Date> visits_sorted, Date as_of, int window_days,
                    int min_gap_days);

/// 1 unless any visit date falls in (as_of, as_of + window_days].
int access_label(std::span<const Date> visits_sorted, Date as_of, int window_days);

/// Deduplicated hiv_visit dates for one entity, sorted ascending.
std::vector<Date> hiv_visit_dates(const EventLog& log, std::string_view entity_id);

/// One point per hiv_visit event inside `period`, appointment-level rows,
/// same-day duplicates collapsed. Ordered by (entity_id, as_of).
std::vector<PredictionPoint> build_clinic_cohort(const EventLog& log, DateRange period);

/// One point per entity with a CD4 or viral-load test in the trailing
/// lookback window [as_of - lookback_days, as_of].
std::vector<PredictionPoint> build_roster_cohort(const EventLog& log, Date as_of,
                                                 int lookback_days = 365);

/// Labels every point per the spec's rule. Rows keep their input order.
/// Throws if any point's outcome window extends past the log's data end —
/// silently censored labels are never produced.
LabelMatrix build_label_matrix(std::vector<PredictionPoint> cohort, const EventLog& log,
                               const LabelSpec& spec);

void export_label_matrix(const LabelMatrix& m, const std::string& path);

}  // namespace retain
