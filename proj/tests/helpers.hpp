#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "retain/cohort.hpp"
#include "retain/date.hpp"
#include "retain/event_store.hpp"
#include "retain/features.hpp"

namespace retain::testing {

/// Fresh scratch directory under the build tree; removed and recreated per
/// call so stale artifacts from a previous run cannot leak into assertions.
inline std::filesystem::path scratch_dir(const std::string& name) {
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "retain_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Entity make_entity(std::string id) {
  Entity e;
  e.entity_id = std::move(id);
  return e;
}

/// Event log containing only hiv_visit events, one entity per map key.
inline EventLog log_from_visits(const std::map<std::string, std::vector<Date>>& visits,
                                DateRange range) {
  std::vector<Entity> entities;
  std::vector<Event> events;
  for (const auto& [id, dates] : visits) {
    entities.push_back(make_entity(id));
    for (Date d : dates) events.push_back({id, EventType::hiv_visit, d, {}, {}});
  }
  return EventLog::build(std::move(entities), std::move(events), range);
}

/// Design matrix with explicit values; rows get sequential entity ids E000,
/// E001, ... and a fixed as-of date so evaluation tie-breaks are predictable.
inline FeatureMatrix make_matrix(std::vector<std::string> columns,
                                 const std::vector<std::vector<double>>& row_values,
                                 Date as_of = Date(2015, 6, 1)) {
  FeatureMatrix m;
  m.columns = std::move(columns);
  m.flag_column.assign(m.columns.size(), 0);
  for (std::size_t i = 0; i < row_values.size(); ++i) {
    char id[24];
    std::snprintf(id, sizeof(id), "E%05zu", i);
    m.rows.push_back({id, as_of, CohortContext::clinic_appointment});
    for (double v : row_values[i]) m.values.push_back(v);
  }
  return m;
}

/// Prediction points matching make_matrix's naming, for metric tests that
/// take scores directly.
inline std::vector<PredictionPoint> make_points(std::size_t n, Date as_of = Date(2015, 6, 1)) {
  std::vector<PredictionPoint> pts;
  for (std::size_t i = 0; i < n; ++i) {
    char id[24];
    std::snprintf(id, sizeof(id), "E%05zu", i);
    pts.push_back({id, as_of, CohortContext::clinic_appointment});
  }
  return pts;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace retain::testing
