#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "retain/cohort.hpp"
#include "retain/learners.hpp"

namespace retain {

/// Deterministic top-k%: the ⌈k_pct/100 · n⌉ rows with the highest scores,
/// ties broken by ascending entity_id then as_of so reruns and baselines with
/// constant scores always flag the same people.
std::vector<std::size_t> flagged_indices(std::span<const double> scores,
                                         std::span<const PredictionPoint> rows, double k_pct);

struct TopKResult {
  double precision = 0.0;
  std::size_t n_flagged = 0;
  std::size_t n_true = 0;  // positives among flagged
};

TopKResult precision_at_pct(std::span<const double> scores, std::span<const int> labels,
                            std::span<const PredictionPoint> rows, double k_pct);

/// Positives flagged / total positives; defined as 1.0 when there are none.
double recall_at_pct(std::span<const double> scores, std::span<const int> labels,
                     std::span<const PredictionPoint> rows, double k_pct);

struct PolicyPoint {
  double k_pct = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t n_flagged = 0;
  std::size_t n_true = 0;
};

/// Resource menu: metrics at each staffing level in k_grid, emitted in the
/// given order.
std::vector<PolicyPoint> pr_policy_curve(std::span<const double> scores,
                                         std::span<const int> labels,
                                         std::span<const PredictionPoint> rows,
                                         std::span<const double> k_grid);

struct EvalPoint {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t n_flagged = 0;
  std::size_t n_true = 0;
};

struct EvaluationRecord {
  std::string model_group;
  int split_id = -1;
  std::map<double, EvalPoint> at;  // keyed by k_pct
  double prevalence = 0.0;
};

struct SelectionRule {
  double k_pct = 10.0;
  double regret_band = 0.05;  // absolute precision subtraction
  int last_n_periods = 5;
};

/// Scores the model on the test rows and fills a record at the rule's k plus
/// any extra grid points.
EvaluationRecord evaluate_split(const TrainedModel& model, const DataView& test,
                                std::span<const int> y_test, const SelectionRule& rule,
                                std::span<const double> extra_k = {});

struct SelectionOutcome {
  std::string model_group;
  /// group → splits where it came within regret_band of the split's best.
  std::map<std::string, int> points;
  std::vector<int> window;  // calendar-ordered split ids considered
};

/// Stability rule: over the last last_n_periods splits, count per group how
/// often precision@k lands within regret_band of that split's best; most
/// points wins, ties go to higher mean precision, then lexicographic id.
SelectionOutcome select_model(std::span<const EvaluationRecord> records,
                              const SelectionRule& rule);

void export_evaluations(std::span<const EvaluationRecord> records, const std::string& path);
std::vector<EvaluationRecord> import_evaluations(const std::string& path);

}  // namespace retain
