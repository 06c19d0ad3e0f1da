#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "retain/event_store.hpp"
#include "retain/features.hpp"

namespace retain {

enum class LearnerFamily {
  decision_tree,
  random_forest,
  gradient_boosted_trees,
  logistic_regression,
  expert_rules,
  prior_baseline,
  viral_load_ranking,
};

std::string_view to_string(LearnerFamily f);
std::optional<LearnerFamily> parse_learner_family(std::string_view s);

/// One hand-authored scoring rule over raw (pre-matrix) patient attributes.
struct Rule {
  std::string attribute;
  std::string op;  // < <= > >= == !=
  double value = 0.0;
  double weight = 1.0;
};

/// The published-style default: age under 30, under a year on ART, substance
/// abuse history, not virally suppressed; one point each.
std::vector<Rule> default_rule_table();

/// Attributes the rule engine can reference, resolved from the event log at
/// the prediction point. Unknown names are rejected at load time.
std::optional<double> raw_attribute(const EventLog& log, const PredictionPoint& point,
                                    std::string_view name);
bool is_known_raw_attribute(std::string_view name);

struct LearnerSpec {
  LearnerFamily family = LearnerFamily::decision_tree;
  std::map<std::string, double> hyper;
  std::uint64_t seed = 0;
  std::vector<Rule> rules;  // expert_rules only; empty = default table

  /// Full hyperparameter map with family defaults applied.
  std::map<std::string, double> effective_hyper() const;
  /// Canonical id, stable across splits: family(k=v,...).
  std::string model_group() const;
  void validate() const;
};

// --- fitted state per family ------------------------------------------------

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  double value = 0.0;  // mean target of the node's training samples
  int left = -1, right = -1;
  int n_samples = 0;
  double gain = 0.0;  // impurity decrease weighted by node fraction
};

struct TreeModel {
  std::vector<TreeNode> nodes;
  double predict(std::span<const double> row) const;
};

struct ForestModel {
  std::vector<TreeModel> trees;
};

struct GbtModel {
  double base_score = 0.0;  // log-odds of training prevalence
  double learning_rate = 0.1;
  std::vector<TreeModel> trees;
  std::vector<double> train_loss_trace;  // mean logistic loss after each round
};

struct LogisticModel {
  std::vector<double> means, scales;  // per-column standardization
  std::vector<double> weights;        // in standardized coordinates
  double intercept = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> train_loss_trace;
};

struct RuleModel {
  std::vector<Rule> rules;
};

struct PriorModel {};
struct ViralLoadModel {};

struct TrainedModel {
  LearnerSpec spec;
  std::vector<std::string> feature_names;
  int train_split_id = -1;
  std::variant<TreeModel, ForestModel, GbtModel, LogisticModel, RuleModel, PriorModel,
               ViralLoadModel>
      state;

  nlohmann::json to_json() const;
  static TrainedModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static TrainedModel load(const std::string& path);
};

/// Scoring/fitting context: the design matrix plus the raw event log for the
/// families that bypass the matrix (expert rules, viral-load ranking).
struct DataView {
  const FeatureMatrix* X = nullptr;
  const EventLog* log = nullptr;
};

TrainedModel fit_model(const LearnerSpec& spec, const DataView& data, std::span<const int> y,
                       int train_split_id);
/// Scores every row. Matrix-backed families require feature_names to match
/// the incoming columns exactly; the first mismatch is named in the error.
std::vector<double> score_model(const TrainedModel& model, const DataView& data);

/// (feature, weight) ranked descending. Tree families normalize to sum 1;
/// baselines return an empty list.
std::vector<std::pair<std::string, double>> feature_importances(const TrainedModel& model);

/// Per-row top positive score contributions (risk-raising features), for
/// roster explanations. Heuristic: tree-path value deltas / coefficient
/// products. Returns up to `top_n` (feature, contribution) pairs per row.
std::vector<std::vector<std::pair<std::string, double>>> top_contributions(
    const TrainedModel& model, const DataView& data, int top_n);

// --- building blocks used by several families (exposed for tests) -----------

struct TreeFitOptions {
  int max_depth = 0;  // 0 = unlimited
  int min_samples_split = 2;
  int min_samples_leaf = 1;
  int max_features = 0;  // 0 = all; otherwise per-split random subset size
  bool regression = false;  // variance criterion instead of Gini
};

class Rng;

/// Fits one CART tree on the given sample (indices may repeat for bootstrap).
/// `feature_rng` drives per-split feature subsampling when max_features > 0.
TreeModel fit_cart(const FeatureMatrix& X, std::span<const double> targets,
                   std::span<const std::size_t> sample, const TreeFitOptions& options,
                   Rng* feature_rng);

/// Mean logistic loss + (l2/2)·||w||^2 (intercept unpenalized). Writes the
/// gradient (weights then intercept) into grad, which must have size
/// n_cols + 1. Pure; the optimizer and the finite-difference tests share it.
double logistic_objective(const FeatureMatrix& X, std::span<const int> y,
                          std::span<const double> weights, double intercept, double l2_lambda,
                          std::span<double> grad);

double gini_impurity(std::span<const int> labels);

/// Rejects rules naming unknown attributes/operators or non-finite constants.
void validate_rules(const std::vector<Rule>& rules);
/// Sum of rule weights per row, reading attributes from the event log.
std::vector<double> score_rules(const RuleModel& model, const EventLog& log,
                                std::span<const PredictionPoint> rows);
/// Constant score: every entity carries the base rate.
std::vector<double> score_prior(std::size_t n_rows);
/// Last viral load copies per row; never-tested entities rank above all values.
std::vector<double> score_viral_load(const EventLog& log,
                                     std::span<const PredictionPoint> rows);

}  // namespace retain
