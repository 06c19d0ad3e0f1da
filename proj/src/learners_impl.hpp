#pragma once

// Cross-file internals of the learners module. Not installed; the public
// surface is retain/learners.hpp.

#include <span>
#include <vector>

#include "retain/learners.hpp"

namespace retain {

ForestModel fit_forest_impl(const FeatureMatrix& X, std::span<const int> y,
                            const LearnerSpec& spec);
GbtModel fit_gbt_impl(const FeatureMatrix& X, std::span<const int> y, const LearnerSpec& spec);
LogisticModel fit_logistic_impl(const FeatureMatrix& X, std::span<const int> y,
                                const LearnerSpec& spec);

std::vector<double> score_forest(const ForestModel& model, const FeatureMatrix& X);
std::vector<double> score_gbt(const GbtModel& model, const FeatureMatrix& X);
std::vector<double> score_logistic(const LogisticModel& model, const FeatureMatrix& X);
std::vector<double> score_rules(const RuleModel& model, const EventLog& log,
                                std::span<const PredictionPoint> rows);
std::vector<double> score_prior(std::size_t n_rows);
std::vector<double> score_viral_load(const EventLog& log,
                                     std::span<const PredictionPoint> rows);

void validate_rules(const std::vector<Rule>& rules);

}  // namespace retain
