#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "learners_impl.hpp"
#include "retain/csv.hpp"
#include "retain/learners.hpp"

namespace retain {

namespace {

const std::map<std::string, LearnerFamily> kFamilies = {
    {"decision_tree", LearnerFamily::decision_tree},
    {"random_forest", LearnerFamily::random_forest},
    {"gradient_boosted_trees", LearnerFamily::gradient_boosted_trees},
    {"logistic_regression", LearnerFamily::logistic_regression},
    {"expert_rules", LearnerFamily::expert_rules},
    {"prior_baseline", LearnerFamily::prior_baseline},
    {"viral_load_ranking", LearnerFamily::viral_load_ranking},
};

// Family defaults. effective_hyper() starts here and overlays the configured
// values, so a model group id always names every knob that shaped the fit.
std::map<std::string, double> family_defaults(LearnerFamily f) {
  switch (f) {
    case LearnerFamily::decision_tree:
      return {{"max_depth", 0}, {"min_samples_split", 2}, {"min_samples_leaf", 1}};
    case LearnerFamily::random_forest:
      return {{"n_trees", 100},         {"max_depth", 0},    {"min_samples_split", 2},
              {"min_samples_leaf", 1},  {"max_features", 0}, {"bootstrap", 1}};
    case LearnerFamily::gradient_boosted_trees:
      return {{"n_rounds", 100},        {"learning_rate", 0.1}, {"max_depth", 3},
              {"min_samples_split", 2}, {"min_samples_leaf", 1}};
    case LearnerFamily::logistic_regression:
      return {{"l2_lambda", 0.1}, {"max_iter", 500}, {"tol", 1e-6}};
    case LearnerFamily::expert_rules:
    case LearnerFamily::prior_baseline:
    case LearnerFamily::viral_load_ranking:
      return {};
  }
  return {};
}

void require_integer(const std::string& name, double v, double lo) {
  if (v < lo || v != std::floor(v))
    throw std::invalid_argument("hyperparameter " + name + "=" + format_double(v) +
                                " must be an integer >= " + format_double(lo));
}

}  // namespace

std::string_view to_string(LearnerFamily f) {
  for (const auto& [name, fam] : kFamilies)
    if (fam == f) return name;
  return "?";
}

std::optional<LearnerFamily> parse_learner_family(std::string_view s) {
  auto it = kFamilies.find(std::string(s));
  if (it == kFamilies.end()) return std::nullopt;
  return it->second;
}

std::map<std::string, double> LearnerSpec::effective_hyper() const {
  std::map<std::string, double> out = family_defaults(family);
  for (const auto& [k, v] : hyper) {
    if (out.find(k) == out.end())
      throw std::invalid_argument("unknown hyperparameter '" + k + "' for family " +
                                  std::string(to_string(family)));
    out[k] = v;
  }
  return out;
}

std::string LearnerSpec::model_group() const {
  std::string id(to_string(family));
  id += '(';
  bool first = true;
  for (const auto& [k, v] : effective_hyper()) {
    if (!first) id += ',';
    first = false;
    id += k;
    id += '=';
    id += format_double(v);
  }
  if (family == LearnerFamily::expert_rules)
    id += rules.empty() ? "rules=default" : ("rules=custom" + std::to_string(rules.size()));
  id += ')';
  return id;
}

void LearnerSpec::validate() const {
  const auto hp = effective_hyper();  // rejects unknown names
  switch (family) {
    case LearnerFamily::decision_tree:
    case LearnerFamily::random_forest:
    case LearnerFamily::gradient_boosted_trees: {
      if (family == LearnerFamily::random_forest) {
        require_integer("n_trees", hp.at("n_trees"), 1);
        require_integer("max_features", hp.at("max_features"), 0);
        double bs = hp.at("bootstrap");
        if (bs != 0.0 && bs != 1.0)
          throw std::invalid_argument("hyperparameter bootstrap must be 0 or 1");
      }
      if (family == LearnerFamily::gradient_boosted_trees) {
        require_integer("n_rounds", hp.at("n_rounds"), 0);
        double lr = hp.at("learning_rate");
        if (!(lr >= 0.0) || !std::isfinite(lr))
          throw std::invalid_argument("hyperparameter learning_rate must be >= 0");
      }
      require_integer("max_depth", hp.at("max_depth"), 0);
      require_integer("min_samples_split", hp.at("min_samples_split"), 2);
      require_integer("min_samples_leaf", hp.at("min_samples_leaf"), 1);
      break;
    }
    case LearnerFamily::logistic_regression: {
      if (!(hp.at("l2_lambda") >= 0.0))
        throw std::invalid_argument("hyperparameter l2_lambda must be >= 0");
      require_integer("max_iter", hp.at("max_iter"), 1);
      if (!(hp.at("tol") > 0.0))
        throw std::invalid_argument("hyperparameter tol must be > 0");
      break;
    }
    case LearnerFamily::expert_rules:
      validate_rules(rules.empty() ? default_rule_table() : rules);
      break;
    case LearnerFamily::prior_baseline:
    case LearnerFamily::viral_load_ranking:
      break;
  }
}

TrainedModel fit_model(const LearnerSpec& spec, const DataView& data, std::span<const int> y,
                       int train_split_id) {
  spec.validate();
  if (data.X == nullptr) throw std::invalid_argument("fit_model: missing feature matrix");
  const FeatureMatrix& X = *data.X;
  if (X.rows.size() != y.size())
    throw std::invalid_argument("fit_model: row/label count mismatch");
  if (X.rows.empty()) throw std::invalid_argument("fit_model: empty training set");

  TrainedModel model;
  model.spec = spec;
  model.feature_names = X.columns;
  model.train_split_id = train_split_id;

  switch (spec.family) {
    case LearnerFamily::decision_tree: {
      const auto hp = spec.effective_hyper();
      TreeFitOptions opt;
      opt.max_depth = static_cast<int>(hp.at("max_depth"));
      opt.min_samples_split = static_cast<int>(hp.at("min_samples_split"));
      opt.min_samples_leaf = static_cast<int>(hp.at("min_samples_leaf"));
      std::vector<double> targets(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) targets[i] = y[i] != 0 ? 1.0 : 0.0;
      std::vector<std::size_t> all(y.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      model.state = fit_cart(X, targets, all, opt, nullptr);
      break;
    }
    case LearnerFamily::random_forest:
      model.state = fit_forest_impl(X, y, spec);
      break;
    case LearnerFamily::gradient_boosted_trees:
      model.state = fit_gbt_impl(X, y, spec);
      break;
    case LearnerFamily::logistic_regression:
      model.state = fit_logistic_impl(X, y, spec);
      break;
    case LearnerFamily::expert_rules: {
      RuleModel rm;
      rm.rules = spec.rules.empty() ? default_rule_table() : spec.rules;
      model.state = rm;
      break;
    }
    case LearnerFamily::prior_baseline:
      model.state = PriorModel{};
      break;
    case LearnerFamily::viral_load_ranking:
      model.state = ViralLoadModel{};
      break;
  }
  return model;
}

std::vector<double> score_model(const TrainedModel& model, const DataView& data) {
  if (data.X == nullptr) throw std::invalid_argument("score_model: missing feature matrix");
  const FeatureMatrix& X = *data.X;

  const bool matrix_backed = std::holds_alternative<TreeModel>(model.state) ||
                             std::holds_alternative<ForestModel>(model.state) ||
                             std::holds_alternative<GbtModel>(model.state) ||
                             std::holds_alternative<LogisticModel>(model.state);
  if (matrix_backed) {
    if (model.feature_names.size() != X.columns.size())
      throw std::invalid_argument(
          "score_model: matrix has " + std::to_string(X.columns.size()) +
          " columns, model was fitted on " + std::to_string(model.feature_names.size()));
    for (std::size_t j = 0; j < X.columns.size(); ++j)
      if (model.feature_names[j] != X.columns[j])
        throw std::invalid_argument("score_model: column " + std::to_string(j) + " is '" +
                                    X.columns[j] + "' but the model expects '" +
                                    model.feature_names[j] + "'");
  }

  if (const auto* tree = std::get_if<TreeModel>(&model.state)) {
    const std::size_t p = X.columns.size();
    std::vector<double> scores(X.rows.size());
    for (std::size_t i = 0; i < X.rows.size(); ++i)
      scores[i] = tree->predict(std::span<const double>(&X.values[i * p], p));
    return scores;
  }
  if (const auto* forest = std::get_if<ForestModel>(&model.state))
    return score_forest(*forest, X);
  if (const auto* gbt = std::get_if<GbtModel>(&model.state)) return score_gbt(*gbt, X);
  if (const auto* logit = std::get_if<LogisticModel>(&model.state))
    return score_logistic(*logit, X);

  if (std::holds_alternative<PriorModel>(model.state)) return score_prior(X.rows.size());

  if (data.log == nullptr)
    throw std::invalid_argument("score_model: family " +
                                std::string(to_string(model.spec.family)) +
                                " needs the event log");
  if (const auto* rules = std::get_if<RuleModel>(&model.state))
    return score_rules(*rules, *data.log, X.rows);
  return score_viral_load(*data.log, X.rows);
}

// --- importances -------------------------------------------------------------

namespace {

void accumulate_gains(const TreeModel& tree, std::vector<double>& gains) {
  for (const TreeNode& n : tree.nodes)
    if (n.feature >= 0) gains[static_cast<std::size_t>(n.feature)] += n.gain;
}

std::vector<std::pair<std::string, double>> ranked(const std::vector<std::string>& names,
                                                   std::vector<double> weights,
                                                   bool normalize) {
  if (normalize) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total > 0.0)
      for (double& w : weights) w /= total;
  }
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t j = 0; j < names.size(); ++j)
    if (weights[j] > 0.0) out.emplace_back(names[j], weights[j]);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

}  // namespace

std::vector<std::pair<std::string, double>> feature_importances(const TrainedModel& model) {
  const std::size_t p = model.feature_names.size();
  std::vector<double> gains(p, 0.0);
  if (const auto* tree = std::get_if<TreeModel>(&model.state)) {
    accumulate_gains(*tree, gains);
    return ranked(model.feature_names, std::move(gains), true);
  }
  if (const auto* forest = std::get_if<ForestModel>(&model.state)) {
    for (const TreeModel& t : forest->trees) accumulate_gains(t, gains);
    return ranked(model.feature_names, std::move(gains), true);
  }
  if (const auto* gbt = std::get_if<GbtModel>(&model.state)) {
    for (const TreeModel& t : gbt->trees) accumulate_gains(t, gains);
    return ranked(model.feature_names, std::move(gains), true);
  }
  if (const auto* logit = std::get_if<LogisticModel>(&model.state)) {
    for (std::size_t j = 0; j < p; ++j) gains[j] = std::abs(logit->weights[j]);
    return ranked(model.feature_names, std::move(gains), false);
  }
  return {};  // baselines carry no learned weights
}

// --- per-row contributions ---------------------------------------------------

namespace {

// Path attribution: walking root to leaf, each split hands its feature the
// change in mean target caused by taking that branch.
void tree_contributions(const TreeModel& tree, const double* row, double scale,
                        std::vector<double>& contrib) {
  int at = 0;
  while (tree.nodes[static_cast<std::size_t>(at)].feature >= 0) {
    const TreeNode& n = tree.nodes[static_cast<std::size_t>(at)];
    int next = (row[n.feature] <= n.threshold) ? n.left : n.right;
    contrib[static_cast<std::size_t>(n.feature)] +=
        scale * (tree.nodes[static_cast<std::size_t>(next)].value - n.value);
    at = next;
  }
}

}  // namespace

std::vector<std::vector<std::pair<std::string, double>>> top_contributions(
    const TrainedModel& model, const DataView& data, int top_n) {
  const FeatureMatrix& X = *data.X;
  const std::size_t n = X.rows.size(), p = X.columns.size();
  std::vector<std::vector<std::pair<std::string, double>>> out(n);

  std::vector<double> contrib(p);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(contrib.begin(), contrib.end(), 0.0);
    const double* row = n > 0 ? &X.values[i * p] : nullptr;

    if (const auto* tree = std::get_if<TreeModel>(&model.state)) {
      tree_contributions(*tree, row, 1.0, contrib);
    } else if (const auto* forest = std::get_if<ForestModel>(&model.state)) {
      if (!forest->trees.empty()) {
        double scale = 1.0 / static_cast<double>(forest->trees.size());
        for (const TreeModel& t : forest->trees) tree_contributions(t, row, scale, contrib);
      }
    } else if (const auto* gbt = std::get_if<GbtModel>(&model.state)) {
      for (const TreeModel& t : gbt->trees)
        tree_contributions(t, row, gbt->learning_rate, contrib);
    } else if (const auto* logit = std::get_if<LogisticModel>(&model.state)) {
      for (std::size_t j = 0; j < p; ++j)
        contrib[j] = logit->weights[j] * (row[j] - logit->means[j]) / logit->scales[j];
    } else if (const auto* rules = std::get_if<RuleModel>(&model.state)) {
      std::vector<std::pair<std::string, double>> fired;
      for (const Rule& r : rules->rules) {
        std::optional<double> v = raw_attribute(*data.log, X.rows[i], r.attribute);
        if (v && ((r.op == "<" && *v < r.value) || (r.op == "<=" && *v <= r.value) ||
                  (r.op == ">" && *v > r.value) || (r.op == ">=" && *v >= r.value) ||
                  (r.op == "==" && *v == r.value) || (r.op == "!=" && *v != r.value)))
          fired.emplace_back(r.attribute, r.weight);
      }
      std::sort(fired.begin(), fired.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
      });
      if (static_cast<int>(fired.size()) > top_n)
        fired.resize(static_cast<std::size_t>(top_n));
      out[i] = std::move(fired);
      continue;
    } else if (std::holds_alternative<ViralLoadModel>(model.state)) {
      std::optional<double> v = raw_attribute(*data.log, X.rows[i], "last_viral_load");
      if (v) out[i].emplace_back("last_viral_load", *v);
      continue;
    } else {
      continue;  // prior baseline: nothing to attribute
    }

    // Risk-raising features only, strongest first.
    std::vector<std::pair<std::string, double>> pos;
    for (std::size_t j = 0; j < p; ++j)
      if (contrib[j] > 0.0) pos.emplace_back(X.columns[j], contrib[j]);
    std::sort(pos.begin(), pos.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (static_cast<int>(pos.size()) > top_n) pos.resize(static_cast<std::size_t>(top_n));
    out[i] = std::move(pos);
  }
  return out;
}

// --- serialization -------------------------------------------------------------

namespace {

nlohmann::json node_to_json(const TreeModel& tree, int at) {
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(at)];
  nlohmann::json j;
  j["value"] = n.value;
  j["n_samples"] = n.n_samples;
  if (n.feature >= 0) {
    j["feature"] = n.feature;
    j["threshold"] = n.threshold;
    j["gain"] = n.gain;
    j["left"] = node_to_json(tree, n.left);
    j["right"] = node_to_json(tree, n.right);
  }
  return j;
}

int node_from_json(const nlohmann::json& j, TreeModel& tree) {
  int id = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back({});
  tree.nodes[static_cast<std::size_t>(id)].value = j.at("value").get<double>();
  tree.nodes[static_cast<std::size_t>(id)].n_samples = j.at("n_samples").get<int>();
  if (j.contains("feature")) {
    int f = j.at("feature").get<int>();
    double thr = j.at("threshold").get<double>();
    double gain = j.at("gain").get<double>();
    int left = node_from_json(j.at("left"), tree);
    int right = node_from_json(j.at("right"), tree);
    TreeNode& n = tree.nodes[static_cast<std::size_t>(id)];
    n.feature = f;
    n.threshold = thr;
    n.gain = gain;
    n.left = left;
    n.right = right;
  }
  return id;
}

nlohmann::json tree_to_json(const TreeModel& tree) { return node_to_json(tree, 0); }

TreeModel tree_from_json(const nlohmann::json& j) {
  TreeModel tree;
  node_from_json(j, tree);
  return tree;
}

}  // namespace

nlohmann::json TrainedModel::to_json() const {
  nlohmann::json j;
  j["format_version"] = 1;
  j["family"] = std::string(to_string(spec.family));
  j["hyperparameters"] = spec.effective_hyper();
  j["seed"] = spec.seed;
  j["feature_names"] = feature_names;
  j["train_split_id"] = train_split_id;

  nlohmann::json state_j;
  if (const auto* tree = std::get_if<TreeModel>(&state)) {
    state_j["tree"] = tree_to_json(*tree);
  } else if (const auto* forest = std::get_if<ForestModel>(&state)) {
    nlohmann::json arr = nlohmann::json::array();
    for (const TreeModel& t : forest->trees) arr.push_back(tree_to_json(t));
    state_j["trees"] = std::move(arr);
  } else if (const auto* gbt = std::get_if<GbtModel>(&state)) {
    state_j["base_score"] = gbt->base_score;
    state_j["learning_rate"] = gbt->learning_rate;
    state_j["train_loss_trace"] = gbt->train_loss_trace;
    nlohmann::json arr = nlohmann::json::array();
    for (const TreeModel& t : gbt->trees) arr.push_back(tree_to_json(t));
    state_j["trees"] = std::move(arr);
  } else if (const auto* logit = std::get_if<LogisticModel>(&state)) {
    state_j["means"] = logit->means;
    state_j["scales"] = logit->scales;
    state_j["weights"] = logit->weights;
    state_j["intercept"] = logit->intercept;
    state_j["converged"] = logit->converged;
    state_j["iterations"] = logit->iterations;
  } else if (const auto* rules = std::get_if<RuleModel>(&state)) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Rule& r : rules->rules)
      arr.push_back({{"attribute", r.attribute},
                     {"op", r.op},
                     {"value", r.value},
                     {"weight", r.weight}});
    state_j["rules"] = std::move(arr);
  } else {
    state_j = nlohmann::json::object();
  }
  j["state"] = std::move(state_j);
  return j;
}

TrainedModel TrainedModel::from_json(const nlohmann::json& j) {
  int version = j.at("format_version").get<int>();
  if (version != 1)
    throw std::runtime_error("unsupported model format_version " + std::to_string(version));

  TrainedModel m;
  auto fam = parse_learner_family(j.at("family").get<std::string>());
  if (!fam) throw std::runtime_error("unknown model family in file");
  m.spec.family = *fam;
  for (const auto& [k, v] : j.at("hyperparameters").items())
    m.spec.hyper[k] = v.get<double>();
  m.spec.seed = j.at("seed").get<std::uint64_t>();
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  m.train_split_id = j.at("train_split_id").get<int>();

  const nlohmann::json& s = j.at("state");
  switch (m.spec.family) {
    case LearnerFamily::decision_tree:
      m.state = tree_from_json(s.at("tree"));
      break;
    case LearnerFamily::random_forest: {
      ForestModel fm;
      for (const auto& t : s.at("trees")) fm.trees.push_back(tree_from_json(t));
      m.state = std::move(fm);
      break;
    }
    case LearnerFamily::gradient_boosted_trees: {
      GbtModel gm;
      gm.base_score = s.at("base_score").get<double>();
      gm.learning_rate = s.at("learning_rate").get<double>();
      gm.train_loss_trace = s.at("train_loss_trace").get<std::vector<double>>();
      for (const auto& t : s.at("trees")) gm.trees.push_back(tree_from_json(t));
      m.state = std::move(gm);
      break;
    }
    case LearnerFamily::logistic_regression: {
      LogisticModel lm;
      lm.means = s.at("means").get<std::vector<double>>();
      lm.scales = s.at("scales").get<std::vector<double>>();
      lm.weights = s.at("weights").get<std::vector<double>>();
      lm.intercept = s.at("intercept").get<double>();
      lm.converged = s.at("converged").get<bool>();
      lm.iterations = s.at("iterations").get<int>();
      m.state = std::move(lm);
      break;
    }
    case LearnerFamily::expert_rules: {
      RuleModel rm;
      for (const auto& r : s.at("rules"))
        rm.rules.push_back({r.at("attribute").get<std::string>(), r.at("op").get<std::string>(),
                            r.at("value").get<double>(), r.at("weight").get<double>()});
      m.spec.rules = rm.rules;
      m.state = std::move(rm);
      break;
    }
    case LearnerFamily::prior_baseline:
      m.state = PriorModel{};
      break;
    case LearnerFamily::viral_load_ranking:
      m.state = ViralLoadModel{};
      break;
  }
  return m;
}

void TrainedModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << to_json().dump(1) << '\n';
}

TrainedModel TrainedModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

}  // namespace retain
