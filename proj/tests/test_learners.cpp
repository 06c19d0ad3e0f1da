#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "doctest.h"

#include "helpers.hpp"
#include "retain/learners.hpp"
#include "retain/rng.hpp"

using namespace retain;
using retain::testing::make_entity;
using retain::testing::make_matrix;
using retain::testing::scratch_dir;

namespace {

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::vector<double> to_targets(const std::vector<int>& y) {
  std::vector<double> t(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) t[i] = y[i];
  return t;
}

TreeModel fit_simple_tree(const FeatureMatrix& X, const std::vector<int>& y,
                          TreeFitOptions opt = {}) {
  return fit_cart(X, to_targets(y), all_indices(y.size()), opt, nullptr);
}

}  // namespace

TEST_CASE("gini impurity of binary label sets") {
  CHECK(gini_impurity(std::vector<int>{0, 0, 0}) == 0.0);
  CHECK(gini_impurity(std::vector<int>{1, 1}) == 0.0);
  CHECK(gini_impurity(std::vector<int>{0, 1}) == 0.5);
  CHECK(gini_impurity(std::vector<int>{0, 0, 1, 1}) == 0.5);
  CHECK(gini_impurity(std::vector<int>{0, 1, 1, 1}) == doctest::Approx(0.375));
  CHECK(gini_impurity(std::vector<int>{}) == 0.0);
}

TEST_CASE("tree splits at the midpoint between neighbouring values") {
  FeatureMatrix X = make_matrix({"x"}, {{1}, {2}, {3}, {4}});
  TreeModel tree = fit_simple_tree(X, {0, 0, 1, 1});

  REQUIRE(tree.nodes.size() == 3);
  CHECK(tree.nodes[0].feature == 0);
  CHECK(tree.nodes[0].threshold == 2.5);
  CHECK(tree.nodes[0].n_samples == 4);
  CHECK(tree.nodes[0].gain == doctest::Approx(0.5));  // 0.5 - 0, whole sample
  CHECK(tree.predict(std::vector<double>{2.0}) == 0.0);
  CHECK(tree.predict(std::vector<double>{2.5}) == 0.0);  // <= goes left
  CHECK(tree.predict(std::vector<double>{2.6}) == 1.0);
}

TEST_CASE("equal-gain thresholds resolve to the smaller one") {
  // Splitting {0,1,1,0} after the first or before the last element both
  // decrease impurity by 1/6; the scan keeps the first maximum, 1.5.
  FeatureMatrix X = make_matrix({"x"}, {{1}, {2}, {3}, {4}});
  TreeModel tree = fit_simple_tree(X, {0, 1, 1, 0});
  REQUIRE(tree.nodes[0].feature == 0);
  CHECK(tree.nodes[0].threshold == 1.5);
}

TEST_CASE("equal-gain features resolve to the first column") {
  // Identical duplicated predictor: both columns give bitwise-equal gains,
  // and the winner must be the lexicographically first.
  FeatureMatrix X = make_matrix({"a", "b"}, {{1, 1}, {2, 2}, {3, 3}, {4, 4}});
  TreeModel tree = fit_simple_tree(X, {0, 0, 1, 1});
  CHECK(tree.nodes[0].feature == 0);
}

TEST_CASE("leaf-size, split-size and depth limits prune the tree") {
  FeatureMatrix X = make_matrix({"x"}, {{1}, {2}, {3}, {4}});

  TreeFitOptions opt;
  opt.min_samples_leaf = 2;
  TreeModel tree = fit_simple_tree(X, {0, 1, 1, 0}, opt);
  // The 1-vs-3 splits are now illegal; only the useless 2.5 boundary remains,
  // which buys nothing, so the node stays a leaf.
  CHECK(tree.nodes.size() == 1);
  CHECK(tree.nodes[0].value == 0.5);

  opt = {};
  opt.max_depth = 1;
  // Alternating labels would need depth 2 to purify; a stump stops at the
  // first-maximum boundary 1.5 and averages the mixed right child.
  TreeModel stump = fit_simple_tree(X, {0, 1, 0, 1}, opt);
  REQUIRE(stump.nodes.size() == 3);
  CHECK(stump.nodes[0].threshold == 1.5);
  CHECK(stump.predict(std::vector<double>{1.0}) == 0.0);
  CHECK(stump.predict(std::vector<double>{4.0}) == doctest::Approx(2.0 / 3.0));

  opt = {};
  opt.min_samples_split = 5;
  TreeModel unsplit = fit_simple_tree(X, {0, 0, 1, 1}, opt);
  CHECK(unsplit.nodes.size() == 1);
  CHECK(unsplit.nodes[0].value == 0.5);
}

TEST_CASE("pure nodes and constant features end growth") {
  FeatureMatrix X = make_matrix({"x"}, {{1}, {2}, {3}});
  TreeModel pure = fit_simple_tree(X, {1, 1, 1});
  REQUIRE(pure.nodes.size() == 1);
  CHECK(pure.nodes[0].feature == -1);
  CHECK(pure.nodes[0].value == 1.0);

  FeatureMatrix C = make_matrix({"x"}, {{7}, {7}, {7}, {7}});
  TreeModel flat = fit_simple_tree(C, {0, 1, 0, 1});
  CHECK(flat.nodes.size() == 1);
  CHECK(flat.nodes[0].value == 0.5);
}

TEST_CASE("cart rejects empty samples and missing rngs") {
  FeatureMatrix X = make_matrix({"x"}, {{1}});
  CHECK_THROWS_AS(fit_cart(X, std::vector<double>{1.0}, {}, {}, nullptr),
                  std::invalid_argument);
  TreeFitOptions opt;
  opt.max_features = 1;
  std::vector<std::size_t> idx = {0};
  CHECK_THROWS_AS(fit_cart(X, std::vector<double>{1.0}, idx, opt, nullptr),
                  std::invalid_argument);
}

TEST_CASE("regression criterion uses variance reduction") {
  FeatureMatrix X = make_matrix({"x"}, {{1}, {2}, {3}, {4}});
  TreeFitOptions opt;
  opt.regression = true;
  TreeModel tree =
      fit_cart(X, std::vector<double>{1.0, 1.0, 5.0, 5.0}, all_indices(4), opt, nullptr);
  REQUIRE(tree.nodes.size() >= 3);
  CHECK(tree.nodes[0].threshold == 2.5);
  CHECK(tree.predict(std::vector<double>{1.5}) == 1.0);
  CHECK(tree.predict(std::vector<double>{3.7}) == 5.0);
}

// ---------------------------------------------------------------------------
// Model facade

namespace {

LearnerSpec spec_for(LearnerFamily family, std::map<std::string, double> hyper = {},
                     std::uint64_t seed = 17) {
  LearnerSpec s;
  s.family = family;
  s.hyper = std::move(hyper);
  s.seed = seed;
  return s;
}

// Two clusters split by x0; x1 is noise.
struct Toy {
  FeatureMatrix X;
  std::vector<int> y;
};

Toy toy_data(std::uint64_t seed, std::size_t n = 200) {
  Rng rng(seed);
  std::vector<std::vector<double>> rows;
  std::vector<int> y;
  for (std::size_t i = 0; i < n; ++i) {
    double x0 = rng.uniform();
    rows.push_back({x0, rng.uniform()});
    y.push_back(rng.bernoulli(1.0 / (1.0 + std::exp(-(8.0 * x0 - 4.0)))) ? 1 : 0);
  }
  return {make_matrix({"x0", "x1"}, rows), std::move(y)};
}

}  // namespace

TEST_CASE("model groups name the family and every effective hyperparameter") {
  CHECK(spec_for(LearnerFamily::decision_tree).model_group() ==
        "decision_tree(max_depth=0,min_samples_leaf=1,min_samples_split=2)");
  CHECK(spec_for(LearnerFamily::random_forest, {{"n_trees", 50}}).model_group() ==
        "random_forest(bootstrap=1,max_depth=0,max_features=0,min_samples_leaf=1,"
        "min_samples_split=2,n_trees=50)");
  CHECK(spec_for(LearnerFamily::prior_baseline).model_group() == "prior_baseline()");
  CHECK(spec_for(LearnerFamily::expert_rules).model_group() ==
        "expert_rules(rules=default)");

  CHECK_THROWS_AS(spec_for(LearnerFamily::decision_tree, {{"bogus_knob", 1}}).model_group(),
                  std::invalid_argument);
  CHECK_THROWS_AS(spec_for(LearnerFamily::random_forest, {{"n_trees", 0}}).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(spec_for(LearnerFamily::random_forest, {{"bootstrap", 0.5}}).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      spec_for(LearnerFamily::gradient_boosted_trees, {{"learning_rate", -0.1}}).validate(),
      std::invalid_argument);
  CHECK_THROWS_AS(spec_for(LearnerFamily::logistic_regression, {{"tol", 0.0}}).validate(),
                  std::invalid_argument);
}

TEST_CASE("a 1-tree no-bootstrap full-feature forest equals the decision tree") {
  Toy toy = toy_data(808);
  DataView view{&toy.X, nullptr};

  TrainedModel tree = fit_model(spec_for(LearnerFamily::decision_tree), view, toy.y, 0);
  TrainedModel forest =
      fit_model(spec_for(LearnerFamily::random_forest,
                         {{"n_trees", 1}, {"bootstrap", 0}, {"max_features", 2}}),
                view, toy.y, 0);

  std::vector<double> st = score_model(tree, view);
  std::vector<double> sf = score_model(forest, view);
  REQUIRE(st.size() == sf.size());
  for (std::size_t i = 0; i < st.size(); ++i) CHECK(st[i] == sf[i]);
}

TEST_CASE("forest scores average the member trees") {
  // Hand-built two-stump forest; dyadic leaf values keep the means exact.
  auto stump = [](double thr, double lo, double hi) {
    TreeModel t;
    TreeNode root;
    root.feature = 0;
    root.threshold = thr;
    root.left = 1;
    root.right = 2;
    t.nodes.push_back(root);
    TreeNode l, r;
    l.value = lo;
    r.value = hi;
    t.nodes.push_back(l);
    t.nodes.push_back(r);
    return t;
  };
  ForestModel fm;
  fm.trees = {stump(0.5, 0.25, 1.0), stump(0.5, 0.75, 0.5)};

  TrainedModel model;
  model.spec.family = LearnerFamily::random_forest;
  model.feature_names = {"x"};
  model.state = fm;

  FeatureMatrix X = make_matrix({"x"}, {{0.0}, {1.0}});
  DataView view{&X, nullptr};
  CHECK(score_model(model, view) == std::vector<double>{0.5, 0.75});
}

TEST_CASE("forest fitting ignores the physical row order") {
  Toy toy = toy_data(519);
  // Same logical dataset presented in reverse physical order.
  FeatureMatrix rev = toy.X;
  std::reverse(rev.rows.begin(), rev.rows.end());
  std::vector<double> vals;
  for (std::size_t r = toy.X.n_rows(); r-- > 0;)
    for (std::size_t c = 0; c < toy.X.n_cols(); ++c) vals.push_back(toy.X.at(r, c));
  rev.values = std::move(vals);
  std::vector<int> y_rev(toy.y.rbegin(), toy.y.rend());

  LearnerSpec spec =
      spec_for(LearnerFamily::random_forest, {{"n_trees", 15}, {"max_depth", 4}}, 99);
  DataView fwd_view{&toy.X, nullptr};
  DataView rev_view{&rev, nullptr};
  TrainedModel fwd = fit_model(spec, fwd_view, toy.y, 0);
  TrainedModel bwd = fit_model(spec, rev_view, y_rev, 0);

  // Score both on the forward matrix: identical models -> identical scores.
  std::vector<double> sf = score_model(fwd, fwd_view);
  std::vector<double> sb = score_model(bwd, fwd_view);
  for (std::size_t i = 0; i < sf.size(); ++i) CHECK(sf[i] == sb[i]);
}

TEST_CASE("forest fitting is seed-deterministic and seed-sensitive") {
  Toy toy = toy_data(31);
  DataView view{&toy.X, nullptr};
  LearnerSpec spec = spec_for(LearnerFamily::random_forest, {{"n_trees", 10}}, 5);
  std::vector<double> a = score_model(fit_model(spec, view, toy.y, 0), view);
  std::vector<double> b = score_model(fit_model(spec, view, toy.y, 0), view);
  CHECK(a == b);

  spec.seed = 6;
  std::vector<double> c = score_model(fit_model(spec, view, toy.y, 0), view);
  CHECK(a != c);
}

TEST_CASE("forest recovers a planted signal") {
  Toy toy = toy_data(2024, 800);
  DataView view{&toy.X, nullptr};
  TrainedModel forest = fit_model(
      spec_for(LearnerFamily::random_forest, {{"n_trees", 200}, {"max_depth", 6}}, 7), view,
      toy.y, 0);
  std::vector<double> scores = score_model(forest, view);

  // Rank rows by score; the top decile should be dominated by positives.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t k = scores.size() / 10;
  double hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += toy.y[order[i]];
  CHECK(hits / static_cast<double>(k) >= 0.85);

  // The signal feature dominates the importances.
  auto imp = feature_importances(forest);
  REQUIRE(!imp.empty());
  CHECK(imp[0].first == "x0");
  double total = 0.0;
  for (const auto& [name, w] : imp) total += w;
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("gbt with zero rounds or zero learning rate is the base rate") {
  Toy toy = toy_data(55);
  DataView view{&toy.X, nullptr};
  double prevalence = 0.0;
  for (int v : toy.y) prevalence += v;
  prevalence /= static_cast<double>(toy.y.size());

  for (auto hyper : {std::map<std::string, double>{{"n_rounds", 0}},
                     std::map<std::string, double>{{"learning_rate", 0.0}}}) {
    TrainedModel gbt =
        fit_model(spec_for(LearnerFamily::gradient_boosted_trees, hyper), view, toy.y, 0);
    const auto& state = std::get<GbtModel>(gbt.state);
    CHECK(state.train_loss_trace.empty());
    std::vector<double> scores = score_model(gbt, view);
    for (double s : scores) CHECK(s == doctest::Approx(prevalence).epsilon(1e-9));
  }
}

TEST_CASE("gbt training loss falls on separable data") {
  FeatureMatrix X = make_matrix({"x"}, {{0}, {0}, {0}, {1}, {1}, {1}});
  std::vector<int> y = {0, 0, 0, 1, 1, 1};
  DataView view{&X, nullptr};
  TrainedModel gbt =
      fit_model(spec_for(LearnerFamily::gradient_boosted_trees,
                         {{"n_rounds", 12}, {"learning_rate", 0.5}, {"max_depth", 1}}),
                view, y, 0);

  const auto& state = std::get<GbtModel>(gbt.state);
  REQUIRE(state.train_loss_trace.size() == 12);
  for (std::size_t i = 1; i < state.train_loss_trace.size(); ++i)
    CHECK(state.train_loss_trace[i] <= state.train_loss_trace[i - 1]);
  CHECK(state.train_loss_trace.back() < 0.1);

  std::vector<double> scores = score_model(gbt, view);
  CHECK(scores[0] < 0.1);
  CHECK(scores[5] > 0.9);
}

// ---------------------------------------------------------------------------
// Logistic regression

TEST_CASE("logistic objective at zero weights has the textbook gradient") {
  FeatureMatrix X = make_matrix({"a", "b"}, {{1, 2}, {3, -1}, {0, 4}});
  std::vector<int> y = {1, 0, 1};
  std::vector<double> w = {0.0, 0.0};
  std::vector<double> grad(3);

  double loss = logistic_objective(X, y, w, 0.0, 0.0, grad);
  CHECK(loss == doctest::Approx(std::log(2.0)));
  // grad_j = mean_i (0.5 - y_i) x_ij, intercept likewise with x = 1.
  CHECK(grad[0] == doctest::Approx((-0.5 * 1 + 0.5 * 3 - 0.5 * 0) / 3.0));
  CHECK(grad[1] == doctest::Approx((-0.5 * 2 + 0.5 * (-1) - 0.5 * 4) / 3.0));
  CHECK(grad[2] == doctest::Approx((-0.5 + 0.5 - 0.5) / 3.0));

  CHECK_THROWS_AS(logistic_objective(X, y, std::vector<double>{0.0}, 0.0, 0.0, grad),
                  std::invalid_argument);
}

TEST_CASE("logistic gradient matches central finite differences") {
  Rng rng(606);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 12, p = 3;
    std::vector<std::vector<double>> rows(n, std::vector<double>(p));
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < p; ++j) rows[i][j] = rng.normal();
      y[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    FeatureMatrix X = make_matrix({"a", "b", "c"}, rows);
    std::vector<double> w(p);
    for (double& v : w) v = rng.normal() * 0.5;
    double b = rng.normal() * 0.5;
    const double l2 = 0.05;

    std::vector<double> grad(p + 1), scratch(p + 1);
    logistic_objective(X, y, w, b, l2, grad);

    const double h = 1e-6;
    for (std::size_t j = 0; j <= p; ++j) {
      auto eval = [&](double delta) {
        std::vector<double> wj = w;
        double bj = b;
        if (j < p)
          wj[j] += delta;
        else
          bj += delta;
        return logistic_objective(X, y, wj, bj, l2, scratch);
      };
      double fd = (eval(h) - eval(-h)) / (2.0 * h);
      CHECK(grad[j] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("logistic fit converges with a non-increasing loss trace") {
  Toy toy = toy_data(99, 300);
  DataView view{&toy.X, nullptr};
  TrainedModel model = fit_model(
      spec_for(LearnerFamily::logistic_regression, {{"l2_lambda", 0.01}}), view, toy.y, 0);
  const auto& state = std::get<LogisticModel>(model.state);

  CHECK(state.converged);
  REQUIRE(state.train_loss_trace.size() >= 2);
  for (std::size_t i = 1; i < state.train_loss_trace.size(); ++i)
    CHECK(state.train_loss_trace[i] <= state.train_loss_trace[i - 1]);

  // The planted direction earns a clearly positive standardized weight that
  // dwarfs the noise column.
  CHECK(state.weights[0] > 1.0);
  CHECK(std::abs(state.weights[0]) > 4.0 * std::abs(state.weights[1]));

  std::vector<double> scores = score_model(model, view);
  for (double s : scores) {
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("logistic fit handles one-sided labels and rejects bad input") {
  FeatureMatrix X = make_matrix({"x"}, {{0.0}, {1.0}, {2.0}, {3.0}});
  std::vector<int> zeros = {0, 0, 0, 0};
  DataView view{&X, nullptr};
  TrainedModel model = fit_model(
      spec_for(LearnerFamily::logistic_regression, {{"max_iter", 200}}), view, zeros, 0);
  std::vector<double> scores = score_model(model, view);
  for (double s : scores) CHECK(s < 0.2);

  FeatureMatrix bad = make_matrix({"x"}, {{std::numeric_limits<double>::quiet_NaN()}, {1.0}});
  std::vector<int> y = {0, 1};
  DataView bad_view{&bad, nullptr};
  CHECK_THROWS_AS(fit_model(spec_for(LearnerFamily::logistic_regression), bad_view, y, 0),
                  std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Clinical baselines

namespace {

// Entities with enough history to exercise every raw attribute.
EventLog baseline_log() {
  Entity a = make_entity("A");
  a.birth_date = Date(1988, 6, 1);  // 25 at the 2013-06-01 as-of
  Entity b = make_entity("B");
  b.birth_date = Date(1973, 6, 1);  // 40
  Entity c = make_entity("C");      // no demographics at all
  std::vector<Event> events = {
      {"A", EventType::medication, Date(2012, 3, 1), {}, std::optional<std::string>("art")},
      {"A", EventType::viral_load_test, Date(2013, 1, 1), 900.0, {}},
      {"A", EventType::viral_load_test, Date(2013, 4, 1), 40.0, {}},
      {"A", EventType::hiv_visit, Date(2013, 4, 1), {}, {}},
      {"B", EventType::medication, Date(2010, 1, 1), {}, std::optional<std::string>("art")},
      {"B", EventType::diagnosis, Date(2012, 1, 1), {},
       std::optional<std::string>("substance_abuse")},
      {"B", EventType::viral_load_test, Date(2013, 2, 1), 5000.0, {}},
  };
  return EventLog::build({a, b, c}, std::move(events),
                         {Date(2009, 1, 1), Date(2014, 12, 31)});
}

const Date kBaseAsOf(2013, 6, 1);

PredictionPoint pt(const char* id) {
  return {id, kBaseAsOf, CohortContext::clinic_appointment};
}

// One-column dummy matrix whose rows point at the three baseline entities.
FeatureMatrix baseline_matrix() {
  FeatureMatrix X = make_matrix({"unused"}, {{0.0}, {0.0}, {0.0}}, kBaseAsOf);
  X.rows[0].entity_id = "A";
  X.rows[1].entity_id = "B";
  X.rows[2].entity_id = "C";
  return X;
}

}  // namespace

TEST_CASE("raw attributes resolve from the event log at the as-of date") {
  EventLog log = baseline_log();
  CHECK(*raw_attribute(log, pt("A"), "age_years") == doctest::Approx(25.0).epsilon(0.01));
  CHECK_FALSE(raw_attribute(log, pt("C"), "age_years").has_value());

  CHECK(*raw_attribute(log, pt("A"), "art_years") == doctest::Approx(457.0 / 365.25));
  CHECK(*raw_attribute(log, pt("C"), "art_years") == 0.0);  // never prescribed

  CHECK(*raw_attribute(log, pt("B"), "substance_abuse") == 1.0);
  CHECK(*raw_attribute(log, pt("A"), "substance_abuse") == 0.0);

  // The latest viral load decides suppression: A's most recent is 40 (< 200).
  CHECK(*raw_attribute(log, pt("A"), "virally_suppressed") == 1.0);
  CHECK(*raw_attribute(log, pt("B"), "virally_suppressed") == 0.0);
  CHECK(*raw_attribute(log, pt("C"), "virally_suppressed") == 0.0);  // never tested

  CHECK(*raw_attribute(log, pt("A"), "last_viral_load") == 40.0);
  CHECK_FALSE(raw_attribute(log, pt("C"), "last_viral_load").has_value());

  CHECK(*raw_attribute(log, pt("A"), "days_since_last_hiv_visit") == 61.0);
  CHECK_FALSE(raw_attribute(log, pt("C"), "days_since_last_hiv_visit").has_value());

  CHECK_THROWS_AS(raw_attribute(log, pt("A"), "shoe_size"), std::invalid_argument);
  CHECK(is_known_raw_attribute("age_years"));
  CHECK_FALSE(is_known_raw_attribute("shoe_size"));
}

TEST_CASE("expert rules add one point per satisfied condition") {
  EventLog log = baseline_log();
  std::vector<PredictionPoint> rows = {pt("A"), pt("B"), pt("C")};

  RuleModel empty;
  CHECK(score_rules(empty, log, rows) == std::vector<double>{0.0, 0.0, 0.0});

  RuleModel age;
  age.rules = {{"age_years", "<", 30.0, 1.0}};
  CHECK(score_rules(age, log, rows) == std::vector<double>{1.0, 0.0, 0.0});

  // Default table. A: young (1), >1y on ART, clean history, suppressed.
  // B: substance abuse (1) and unsuppressed (1). C: no ART history (1), never
  // tested (1); the missing age never fires a rule.
  RuleModel def;
  def.rules = default_rule_table();
  CHECK(score_rules(def, log, rows) == std::vector<double>{1.0, 2.0, 2.0});

  RuleModel bad;
  bad.rules = {{"shoe_size", "<", 10.0, 1.0}};
  CHECK_THROWS_AS(validate_rules(bad.rules), std::invalid_argument);
  CHECK_THROWS_AS(score_rules(bad, log, rows), std::invalid_argument);

  RuleModel bad_op;
  bad_op.rules = {{"age_years", "~", 10.0, 1.0}};
  CHECK_THROWS_AS(validate_rules(bad_op.rules), std::invalid_argument);

  RuleModel bad_value;
  bad_value.rules = {{"age_years", "<", std::numeric_limits<double>::infinity(), 1.0}};
  CHECK_THROWS_AS(validate_rules(bad_value.rules), std::invalid_argument);
}

TEST_CASE("prior baseline scores everyone identically") {
  CHECK(score_prior(3) == std::vector<double>{1.0, 1.0, 1.0});
  CHECK(score_prior(0).empty());
}

TEST_CASE("viral load ranking puts never-tested entities on top") {
  EventLog log = baseline_log();
  std::vector<PredictionPoint> rows = {pt("A"), pt("B"), pt("C")};
  std::vector<double> scores = score_viral_load(log, rows);
  REQUIRE(scores.size() == 3);
  CHECK(scores[0] == 40.0);  // latest test value, not the earlier 900
  CHECK(scores[1] == 5000.0);
  CHECK(scores[2] == 5001.0);  // max seen + 1: above every measured value
}

TEST_CASE("baseline families flow through the common model facade") {
  EventLog log = baseline_log();
  FeatureMatrix X = baseline_matrix();
  std::vector<int> y = {1, 0, 1};
  DataView view{&X, &log};

  TrainedModel rules = fit_model(spec_for(LearnerFamily::expert_rules), view, y, 0);
  CHECK(score_model(rules, view) == std::vector<double>{1.0, 2.0, 2.0});
  TrainedModel prior = fit_model(spec_for(LearnerFamily::prior_baseline), view, y, 0);
  CHECK(score_model(prior, view) == std::vector<double>{1.0, 1.0, 1.0});
  TrainedModel vl = fit_model(spec_for(LearnerFamily::viral_load_ranking), view, y, 0);
  CHECK(score_model(vl, view)[2] == 5001.0);

  // Raw-data families need the event log at scoring time.
  DataView no_log{&X, nullptr};
  CHECK_THROWS_AS(score_model(rules, no_log), std::invalid_argument);

  CHECK(feature_importances(rules).empty());
  CHECK(feature_importances(prior).empty());
  CHECK(feature_importances(vl).empty());
}

// ---------------------------------------------------------------------------
// Importances, contributions, serialization

TEST_CASE("stump importance concentrates on its split feature") {
  FeatureMatrix X = make_matrix({"a", "b"}, {{1, 0}, {2, 0}, {3, 0}, {4, 0}});
  std::vector<int> y = {0, 0, 1, 1};
  DataView view{&X, nullptr};
  TrainedModel tree = fit_model(spec_for(LearnerFamily::decision_tree), view, y, 0);
  auto imp = feature_importances(tree);
  REQUIRE(imp.size() == 1);
  CHECK(imp[0].first == "a");
  CHECK(imp[0].second == doctest::Approx(1.0));
}

TEST_CASE("logistic importances rank by absolute standardized weight") {
  TrainedModel model;
  model.spec.family = LearnerFamily::logistic_regression;
  model.feature_names = {"f1", "f2"};
  LogisticModel lm;
  lm.means = {0.0, 0.0};
  lm.scales = {1.0, 1.0};
  lm.weights = {2.0, -4.0};
  model.state = lm;
  auto imp = feature_importances(model);
  REQUIRE(imp.size() == 2);
  CHECK(imp[0].first == "f2");
  CHECK(imp[0].second == 4.0);
  CHECK(imp[1].first == "f1");
}

TEST_CASE("per-row contributions surface risk-raising features") {
  Toy toy = toy_data(404, 300);
  DataView view{&toy.X, nullptr};
  TrainedModel forest = fit_model(
      spec_for(LearnerFamily::random_forest, {{"n_trees", 40}, {"max_depth", 4}}), view,
      toy.y, 0);
  std::vector<double> scores = score_model(forest, view);
  auto contribs = top_contributions(forest, view, 3);
  REQUIRE(contribs.size() == toy.X.n_rows());

  std::size_t top = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[top]) top = i;
  REQUIRE(!contribs[top].empty());
  CHECK(contribs[top][0].first == "x0");  // the planted signal explains the risk
  for (const auto& row : contribs) {
    CHECK(row.size() <= 3);
    for (std::size_t k = 1; k < row.size(); ++k) CHECK(row[k - 1].second >= row[k].second);
    for (const auto& [name, w] : row) CHECK(w > 0.0);
  }
}

TEST_CASE("every model family round-trips through JSON") {
  Toy toy = toy_data(123, 80);
  EventLog log = baseline_log();
  FeatureMatrix raw = baseline_matrix();
  std::vector<int> raw_y = {1, 0, 1};

  auto dir = scratch_dir("model_json");
  auto roundtrip = [&](const LearnerSpec& spec, const DataView& view,
                       const std::vector<int>& y) {
    TrainedModel fitted = fit_model(spec, view, y, 3);
    std::string path = (dir / "m.json").string();
    fitted.save(path);
    TrainedModel loaded = TrainedModel::load(path);
    CHECK(loaded.spec.model_group() == fitted.spec.model_group());
    CHECK(loaded.train_split_id == 3);
    CHECK(loaded.feature_names == fitted.feature_names);
    CHECK(score_model(loaded, view) == score_model(fitted, view));
  };

  DataView view{&toy.X, nullptr};
  roundtrip(spec_for(LearnerFamily::decision_tree, {{"max_depth", 4}}), view, toy.y);
  roundtrip(spec_for(LearnerFamily::random_forest, {{"n_trees", 8}}), view, toy.y);
  roundtrip(
      spec_for(LearnerFamily::gradient_boosted_trees, {{"n_rounds", 6}, {"max_depth", 2}}),
      view, toy.y);
  roundtrip(spec_for(LearnerFamily::logistic_regression), view, toy.y);

  DataView raw_view{&raw, &log};
  roundtrip(spec_for(LearnerFamily::expert_rules), raw_view, raw_y);
  roundtrip(spec_for(LearnerFamily::prior_baseline), raw_view, raw_y);
  roundtrip(spec_for(LearnerFamily::viral_load_ranking), raw_view, raw_y);

  // GBT metadata survives the trip.
  TrainedModel gbt = fit_model(
      spec_for(LearnerFamily::gradient_boosted_trees, {{"n_rounds", 4}}), view, toy.y, 0);
  std::string path = (dir / "gbt.json").string();
  gbt.save(path);
  TrainedModel loaded = TrainedModel::load(path);
  CHECK(std::get<GbtModel>(loaded.state).train_loss_trace ==
        std::get<GbtModel>(gbt.state).train_loss_trace);
  CHECK(std::get<GbtModel>(loaded.state).base_score ==
        std::get<GbtModel>(gbt.state).base_score);
}

TEST_CASE("scoring rejects mismatched feature columns by name") {
  Toy toy = toy_data(321, 50);
  DataView view{&toy.X, nullptr};
  TrainedModel model = fit_model(spec_for(LearnerFamily::decision_tree), view, toy.y, 0);

  FeatureMatrix renamed = toy.X;
  renamed.columns[1] = "x1_shifted";
  DataView bad{&renamed, nullptr};
  CHECK_THROWS_WITH_AS(score_model(model, bad), doctest::Contains("x1"),
                       std::invalid_argument);

  FeatureMatrix dropped = toy.X;
  dropped.columns.pop_back();
  DataView bad2{&dropped, nullptr};
  CHECK_THROWS_AS(score_model(model, bad2), std::invalid_argument);
}

TEST_CASE("fit_model validates its inputs") {
  FeatureMatrix empty = make_matrix({"x"}, {});
  std::vector<int> none;
  DataView view{&empty, nullptr};
  CHECK_THROWS_AS(fit_model(spec_for(LearnerFamily::decision_tree), view, none, 0),
                  std::invalid_argument);

  FeatureMatrix one = make_matrix({"x"}, {{1.0}});
  std::vector<int> two = {0, 1};
  DataView v2{&one, nullptr};
  CHECK_THROWS_AS(fit_model(spec_for(LearnerFamily::decision_tree), v2, two, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(fit_model(spec_for(LearnerFamily::decision_tree), DataView{}, two, 0),
                  std::invalid_argument);
}
