#include "retain/cohort.hpp"

#include <algorithm>
#include <stdexcept>

#include "retain/csv.hpp"

namespace retain {

void LabelSpec::validate() const {
  if (window_days <= 0) throw std::invalid_argument("label window_days must be positive");
  if (kind == LabelKind::retention && min_gap_days >= window_days)
    throw std::invalid_argument("retention min_gap_days must be below window_days");
}

namespace {

void require_sorted(std::span<const Date> visits) {
  if (!std::is_sorted(visits.begin(), visits.end()))
    throw std::invalid_argument("visit dates must be sorted ascending");
}

}  // namespace

int retention_label(std::span<const Date> visits_sorted, Date as_of, int window_days,
                    int min_gap_days) {
  require_sorted(visits_sorted);
  const Date lo = as_of;                        // exclusive
  const Date hi = as_of.plus_days(window_days);  // inclusive
  // Qualifying dates are distinct and sorted, so the widest pair is
  // (first, last); any qualifying pair implies that one qualifies too.
  Date first, last;
  int n = 0;
  for (Date v : visits_sorted) {
    if (v <= lo || v > hi) continue;
    if (n == 0) first = v;
    if (n == 0 || v != last) {
      last = v;
      ++n;
    }
  }
  return (n >= 2 && last - first > min_gap_days) ? 0 : 1;
}

int access_label(std::span<const Date> visits_sorted, Date as_of, int window_days) {
  require_sorted(visits_sorted);
  const Date hi = as_of.plus_days(window_days);
  for (Date v : visits_sorted)
    if (v > as_of && v <= hi) return 0;
  return 1;
}

std::vector<Date> hiv_visit_dates(const EventLog& log, std::string_view entity_id) {
  std::vector<Date> dates;
  for (const Event& e : log.events_for(entity_id))
    if (e.type == EventType::hiv_visit) dates.push_back(e.date);
  dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
  return dates;
}

std::vector<PredictionPoint> build_clinic_cohort(const EventLog& log, DateRange period) {
  if (!period.valid()) throw std::invalid_argument("clinic cohort period is empty");
  std::vector<PredictionPoint> points;
  const Event* prev = nullptr;
  for (const Event& e : log.events()) {
    if (e.type != EventType::hiv_visit || !period.contains(e.date)) continue;
    if (prev && prev->entity_id == e.entity_id && prev->date == e.date) continue;
    points.push_back({e.entity_id, e.date, CohortContext::clinic_appointment});
    prev = &e;
  }
  return points;
}

std::vector<PredictionPoint> build_roster_cohort(const EventLog& log, Date as_of,
                                                 int lookback_days) {
  if (!log.date_range().contains(as_of))
    throw std::invalid_argument("roster as_of " + as_of.to_string() +
                                " outside log date range");
  const Date lo = as_of.plus_days(-lookback_days);  // inclusive
  std::vector<PredictionPoint> points;
  for (const Entity& ent : log.entities()) {
    for (const Event& e : log.events_for(ent.entity_id)) {
      if (e.type != EventType::viral_load_test && e.type != EventType::cd4_test) continue;
      if (e.date < lo || e.date > as_of) continue;
      points.push_back({ent.entity_id, as_of, CohortContext::monthly_roster});
      break;
    }
  }
  return points;
}

LabelMatrix build_label_matrix(std::vector<PredictionPoint> cohort, const EventLog& log,
                               const LabelSpec& spec) {
  spec.validate();
  LabelMatrix m;
  m.spec = spec;
  m.labels.reserve(cohort.size());

  std::vector<Date> visits;
  std::string cached_entity;
  for (const PredictionPoint& p : cohort) {
    if (p.as_of.plus_days(spec.window_days) > log.date_range().end)
      throw std::runtime_error(
          "unobservable outcome window for entity '" + p.entity_id + "' as of " +
          p.as_of.to_string() + ": window ends " +
          p.as_of.plus_days(spec.window_days).to_string() + ", data ends " +
          log.date_range().end.to_string());
    if (p.entity_id != cached_entity) {
      visits = hiv_visit_dates(log, p.entity_id);
      cached_entity = p.entity_id;
    }
    int label = spec.kind == LabelKind::retention
                    ? retention_label(visits, p.as_of, spec.window_days, spec.min_gap_days)
                    : access_label(visits, p.as_of, spec.window_days);
    m.labels.push_back(label);
  }
  m.rows = std::move(cohort);
  return m;
}

void export_label_matrix(const LabelMatrix& m, const std::string& path) {
  CsvWriter w(path);
  w.write_row({"entity_id", "as_of", "label"});
  for (std::size_t i = 0; i < m.rows.size(); ++i)
    w.write_row({m.rows[i].entity_id, m.rows[i].as_of.to_string(),
                 std::to_string(m.labels[i])});
}

}  // namespace retain
