#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "retain/cohort.hpp"
#include "retain/evaluation.hpp"
#include "retain/event_store.hpp"

namespace retain {

/// FOR over a group's unflagged rows: of the people the model passes over,
/// how many actually hit the bad outcome. Undefined (nullopt) when the group
/// has no unflagged rows.
std::optional<double> false_omission_rate(std::span<const std::uint8_t> flagged,
                                          std::span<const int> labels,
                                          std::span<const std::uint8_t> group_mask);

/// Group FOR / reference FOR. Conventions: both zero → 1.0 (no disparity);
/// reference zero with group positive → undefined, treated as extreme
/// disparity by callers; either input undefined → undefined.
std::optional<double> for_ratio(std::optional<double> for_group,
                                std::optional<double> for_reference);

struct AuditConfig {
  std::vector<std::string> attributes = {"race", "gender", "transmission_category"};
  /// attribute → reference value; attributes not listed use the largest group.
  std::map<std::string, std::string> reference_groups;
  double band_lo = 0.9;
  double band_hi = 1.1;
  std::size_t min_group_size = 25;
};

struct AuditRow {
  std::string model_group;
  int split_id = -1;
  std::string attribute;
  std::string group;
  std::size_t n = 0;   // group rows in the evaluation frame
  std::size_t fn = 0;  // unflagged with label 1
  std::size_t tn = 0;  // unflagged with label 0
  std::optional<double> fo_rate;
  std::optional<double> ratio;  // vs the attribute's reference group
  std::optional<bool> in_band;
  bool is_reference = false;
};

struct AuditReport {
  std::vector<AuditRow> rows;
  std::vector<std::string> notices;   // excluded small groups, fallbacks
  std::vector<std::string> warnings;  // mostly-missing attributes
};

/// Audits one model's flagged set on one split across the configured entity
/// attributes. Rows whose attribute is absent form the "missing" group.
AuditReport audit_model(std::span<const std::uint8_t> flagged, std::span<const int> labels,
                        std::span<const PredictionPoint> rows, const EventLog& log,
                        const AuditConfig& config, const std::string& model_group,
                        int split_id);

void export_audits(std::span<const AuditRow> rows, const std::string& path);
std::vector<AuditRow> import_audits(const std::string& path);

struct JointSelection {
  std::vector<std::string> ranked;  // best first
  std::vector<std::string> in_band_groups;
  std::string rationale;
  bool disparity_warning = false;
};

/// Performance + fairness selection: models whose mean FOR ratios over the
/// selection window all sit inside the parity band are ranked first by the
/// stability rule; when none qualify, everything is ranked by performance and
/// the disparity warning is set.
JointSelection joint_select(std::span<const EvaluationRecord> records,
                            std::span<const AuditRow> audits, const SelectionRule& rule,
                            const AuditConfig& config);

}  // namespace retain
