#pragma once

// Internals shared between pipeline.cpp (run driver) and report.cpp
// (report/roster emission on a persisted run).

#include <string>
#include <vector>

#include "retain/pipeline.hpp"

namespace retain {

inline const char* kCodeVersion = "retain-1";

std::string marker_path(const std::string& run_dir, const std::string& stage);
bool stage_done(const std::string& run_dir, const std::string& stage);
void mark_stage(const std::string& run_dir, const std::string& stage);
/// Throws when a required stage of a persisted run has not completed.
void require_stage(const std::string& run_dir, const std::string& stage);

/// Reloads the resolved config written into the run directory.
ExperimentConfig load_run_config(const std::string& run_dir);

/// Event log of a persisted run: the generated copy for synthetic sources,
/// the configured paths otherwise.
EventLog load_run_log(const std::string& run_dir, const ExperimentConfig& config);

struct ModelIndexRow {
  int split_id = -1;
  std::string model_group;
  std::string feature_set;
  std::string file;  // relative to run_dir
};

void write_model_index(const std::vector<ModelIndexRow>& rows, const std::string& run_dir);
std::vector<ModelIndexRow> read_model_index(const std::string& run_dir);

/// First-ranked model group from selection.csv.
std::string selected_group(const std::string& run_dir);

/// Cohort builder shared by the split loop and the roster command.
std::vector<PredictionPoint> cohort_for_period(const ExperimentConfig& config,
                                               const EventLog& log, DateRange period);

/// FeatureConfig for a grid entry's feature_set ("all" or "demographics").
FeatureConfig feature_config_for_set(const ExperimentConfig& config,
                                     const std::string& feature_set);

/// Loads the zip side table (generated copy for synthetic data, configured
/// path otherwise) into config.features so spatial columns resolve.
void attach_zip_attributes(ExperimentConfig& config, const std::string& run_dir);

}  // namespace retain
