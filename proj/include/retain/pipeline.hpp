#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "retain/cohort.hpp"
#include "retain/evaluation.hpp"
#include "retain/fairness.hpp"
#include "retain/features.hpp"
#include "retain/learners.hpp"
#include "retain/temporal.hpp"

namespace retain {

/// One model in the experiment grid. feature_set selects which design matrix
/// the learner sees: "all" or "demographics" (entity attributes only, the
/// restricted expert-model configuration).
struct GridEntry {
  LearnerSpec spec;
  std::string feature_set = "all";

  /// Group id; the feature restriction is part of the identity.
  std::string group_id() const;
};

struct ExperimentConfig {
  std::string scenario;  // clinic | health_department
  std::uint64_t seed = 0;
  std::string output_dir = "runs";

  // Data source: exactly one of synthetic or csv paths.
  std::optional<SyntheticConfig> synthetic;
  std::string entities_path;
  std::string events_path;
  std::string zip_attributes_path;  // optional side table

  LabelSpec label;
  TemporalConfig temporal;
  FeatureConfig features;
  int roster_lookback_days = 365;

  std::vector<GridEntry> grid;
  SelectionRule selection;
  AuditConfig audit;
  std::vector<double> report_k_grid;  // policy-menu staffing levels

  /// Fully-resolved canonical form; the run id hashes this, so any default
  /// that changes the outcome changes the id. output_dir stays excluded: it
  /// is where artifacts live, not what they are.
  nlohmann::json canonical() const;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_file(const std::string& path);
  void validate() const;
};

struct RunOptions {
  int jobs = 1;
  bool strict_leakage = true;  // findings abort; false downgrades to warnings
};

struct RunResult {
  std::string run_id;
  std::string run_dir;
  JointSelection selection;
};

/// Executes the full pipeline: data, splits, cohorts+labels, features,
/// leakage audit, grid fit, evaluation, fairness audit, joint selection and
/// reports, persisting every stage under output_dir/run_<id>/. Completed
/// stages of an identical earlier run are reused.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options);

/// Rebuilds the report files of a completed run from its persisted CSVs.
/// Throws naming the missing stage when the run is incomplete.
std::string emit_report(const std::string& run_dir);

/// Scores the cohort at `as_of` with the selected model of the final split
/// and writes roster_<as_of>.csv (top k% with per-row top-3 risk factors).
/// Returns the file path.
std::string score_roster(const std::string& run_dir, Date as_of,
                         std::optional<double> k_override = std::nullopt);

// Internals shared with tests.
std::string run_id_for(const ExperimentConfig& config);
std::vector<Date> roster_ticks(const TemporalConfig& temporal, DateRange period);
nlohmann::json encoder_to_json(const EncoderState& e);
EncoderState encoder_from_json(const nlohmann::json& j);
std::string sanitize_filename(const std::string& name);

}  // namespace retain
