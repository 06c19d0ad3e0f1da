#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "retain/learners.hpp"
#include "retain/rng.hpp"

namespace retain {

namespace {

// Rows ordered by (entity_id, as_of). Bootstrap draws index into this order,
// not into raw row position, so shuffling the input rows cannot change which
// observations a tree sees.
std::vector<std::size_t> entity_order(const FeatureMatrix& X) {
  std::vector<std::size_t> order(X.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = X.rows[a];
    const auto& rb = X.rows[b];
    if (ra.entity_id != rb.entity_id) return ra.entity_id < rb.entity_id;
    return ra.as_of < rb.as_of;
  });
  return order;
}

int leaf_index(const TreeModel& tree, const double* row) {
  int at = 0;
  while (tree.nodes[static_cast<std::size_t>(at)].feature >= 0) {
    const TreeNode& n = tree.nodes[static_cast<std::size_t>(at)];
    at = (row[n.feature] <= n.threshold) ? n.left : n.right;
  }
  return at;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Numerically stable mean logistic loss of raw scores F against labels y.
double mean_log_loss(std::span<const double> F, std::span<const int> y) {
  double total = 0.0;
  for (std::size_t i = 0; i < F.size(); ++i) {
    double f = F[i];
    total += std::max(f, 0.0) + std::log1p(std::exp(-std::abs(f))) -
             (y[i] != 0 ? f : 0.0);
  }
  return total / static_cast<double>(F.size());
}

}  // namespace

ForestModel fit_forest_impl(const FeatureMatrix& X, std::span<const int> y,
                            const LearnerSpec& spec) {
  const auto hp = spec.effective_hyper();
  const std::size_t n = X.rows.size();
  if (n == 0) throw std::invalid_argument("random_forest: empty training set");

  std::vector<double> targets(n);
  for (std::size_t i = 0; i < n; ++i) targets[i] = y[i] != 0 ? 1.0 : 0.0;
  const std::vector<std::size_t> order = entity_order(X);

  TreeFitOptions opt;
  opt.max_depth = static_cast<int>(hp.at("max_depth"));
  opt.min_samples_split = static_cast<int>(hp.at("min_samples_split"));
  opt.min_samples_leaf = static_cast<int>(hp.at("min_samples_leaf"));
  opt.max_features = static_cast<int>(hp.at("max_features"));
  if (opt.max_features == 0)
    opt.max_features = std::max(
        1, static_cast<int>(std::llround(std::sqrt(static_cast<double>(X.columns.size())))));
  const bool bootstrap = hp.at("bootstrap") != 0.0;
  const int n_trees = static_cast<int>(hp.at("n_trees"));

  ForestModel forest;
  forest.trees.resize(static_cast<std::size_t>(n_trees));
  for (int t = 0; t < n_trees; ++t) {
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> sample;
    if (bootstrap) {
      sample.reserve(n);
      for (std::size_t i = 0; i < n; ++i)
        sample.push_back(order[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))]);
    } else {
      sample = order;
    }
    forest.trees[static_cast<std::size_t>(t)] = fit_cart(X, targets, sample, opt, &rng);
  }
  return forest;
}

GbtModel fit_gbt_impl(const FeatureMatrix& X, std::span<const int> y, const LearnerSpec& spec) {
  const auto hp = spec.effective_hyper();
  const std::size_t n = X.rows.size();
  if (n == 0) throw std::invalid_argument("gradient_boosted_trees: empty training set");

  GbtModel model;
  model.learning_rate = hp.at("learning_rate");
  double pos = 0.0;
  for (int v : y) pos += v != 0 ? 1.0 : 0.0;
  double pbar = std::clamp(pos / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
  model.base_score = std::log(pbar / (1.0 - pbar));

  const int n_rounds = static_cast<int>(hp.at("n_rounds"));
  if (n_rounds == 0 || model.learning_rate == 0.0) return model;

  TreeFitOptions opt;
  opt.regression = true;
  opt.max_depth = static_cast<int>(hp.at("max_depth"));
  opt.min_samples_split = static_cast<int>(hp.at("min_samples_split"));
  opt.min_samples_leaf = static_cast<int>(hp.at("min_samples_leaf"));

  std::vector<double> F(n, model.base_score);
  std::vector<double> resid(n), hess(n);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const std::size_t p = X.columns.size();

  for (int round = 0; round < n_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      double prob = sigmoid(F[i]);
      resid[i] = (y[i] != 0 ? 1.0 : 0.0) - prob;
      hess[i] = std::max(prob * (1.0 - prob), 1e-6);
    }
    TreeModel tree = fit_cart(X, resid, all, opt, nullptr);

    // Replace each leaf's mean-residual value with the Newton step
    // sum(gradient) / sum(hessian), the standard second-order leaf estimate
    // for logistic loss.
    std::vector<double> num(tree.nodes.size(), 0.0), den(tree.nodes.size(), 0.0);
    std::vector<int> leaf_of(n);
    for (std::size_t i = 0; i < n; ++i) {
      int leaf = leaf_index(tree, &X.values[i * p]);
      leaf_of[i] = leaf;
      num[static_cast<std::size_t>(leaf)] += resid[i];
      den[static_cast<std::size_t>(leaf)] += hess[i];
    }
    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
      if (tree.nodes[k].feature >= 0) continue;
      if (den[k] > 0.0) tree.nodes[k].value = std::clamp(num[k] / den[k], -4.0, 4.0);
    }
    for (std::size_t i = 0; i < n; ++i)
      F[i] += model.learning_rate *
              tree.nodes[static_cast<std::size_t>(leaf_of[i])].value;

    double loss = mean_log_loss(F, y);
    if (!std::isfinite(loss))
      throw std::runtime_error("gradient_boosted_trees: non-finite training loss at round " +
                               std::to_string(round));
    model.train_loss_trace.push_back(loss);
    model.trees.push_back(std::move(tree));
  }
  return model;
}

std::vector<double> score_forest(const ForestModel& model, const FeatureMatrix& X) {
  const std::size_t n = X.rows.size(), p = X.columns.size();
  std::vector<double> scores(n, 0.0);
  if (model.trees.empty()) return scores;
  for (const TreeModel& tree : model.trees)
    for (std::size_t i = 0; i < n; ++i)
      scores[i] += tree.predict(std::span<const double>(&X.values[i * p], p));
  for (double& s : scores) s /= static_cast<double>(model.trees.size());
  return scores;
}

std::vector<double> score_gbt(const GbtModel& model, const FeatureMatrix& X) {
  const std::size_t n = X.rows.size(), p = X.columns.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    double f = model.base_score;
    for (const TreeModel& tree : model.trees)
      f += model.learning_rate *
           tree.predict(std::span<const double>(&X.values[i * p], p));
    scores[i] = sigmoid(f);
  }
  return scores;
}

}  // namespace retain
