#include "retain/learners.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>

#include "retain/rng.hpp"

namespace retain {

double gini_impurity(std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  double pos = 0.0;
  for (int v : labels) pos += (v != 0) ? 1.0 : 0.0;
  double p = pos / static_cast<double>(labels.size());
  return 1.0 - p * p - (1.0 - p) * (1.0 - p);
}

double TreeModel::predict(std::span<const double> row) const {
  if (nodes.empty()) throw std::logic_error("predict on an empty tree");
  int at = 0;
  while (nodes[at].feature >= 0) {
    const TreeNode& n = nodes[at];
    at = (row[static_cast<std::size_t>(n.feature)] <= n.threshold) ? n.left : n.right;
  }
  return nodes[at].value;
}

namespace {

// State for one node waiting to be split. `begin/end` index into the shared
// sample-index buffer, which gets partitioned in place as the tree grows.
struct PendingNode {
  int node_id;
  std::size_t begin, end;
  int depth;
};

struct BestSplit {
  int feature = -1;
  double threshold = 0.0;
  double decrease = 0.0;
  std::size_t left_count = 0;
};

// Node impurity from target sum / sum of squares. For binary targets the
// variance p(1-p) is half the Gini index; scale so reported gains match the
// conventional definition of each criterion.
double impurity(double sum, double sum_sq, double n, bool regression) {
  double var = sum_sq / n - (sum / n) * (sum / n);
  if (var < 0.0) var = 0.0;  // guard tiny negative rounding
  return regression ? var : 2.0 * var;
}

}  // namespace

TreeModel fit_cart(const FeatureMatrix& X, std::span<const double> targets,
                   std::span<const std::size_t> sample, const TreeFitOptions& options,
                   Rng* feature_rng) {
  if (sample.empty()) throw std::invalid_argument("fit_cart: empty training sample");
  const std::size_t p = X.columns.size();
  if (options.max_features > 0 && feature_rng == nullptr)
    throw std::invalid_argument("fit_cart: feature subsampling needs an rng");

  TreeModel tree;
  std::vector<std::size_t> idx(sample.begin(), sample.end());
  const double n_total = static_cast<double>(idx.size());

  // Scratch buffers reused across nodes.
  std::vector<std::pair<double, double>> col;  // (feature value, target)
  std::vector<int> feat_order(p);
  std::iota(feat_order.begin(), feat_order.end(), 0);

  std::vector<PendingNode> stack;
  tree.nodes.push_back({});
  stack.push_back({0, 0, idx.size(), 0});

  while (!stack.empty()) {
    PendingNode cur = stack.back();
    stack.pop_back();
    const std::size_t n = cur.end - cur.begin;

    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = cur.begin; i < cur.end; ++i) {
      double t = targets[idx[i]];
      sum += t;
      sum_sq += t * t;
    }
    TreeNode& node = tree.nodes[static_cast<std::size_t>(cur.node_id)];
    node.value = sum / static_cast<double>(n);
    node.n_samples = static_cast<int>(n);

    double node_imp = impurity(sum, sum_sq, static_cast<double>(n), options.regression);
    bool at_depth = options.max_depth > 0 && cur.depth >= options.max_depth;
    if (at_depth || n < static_cast<std::size_t>(options.min_samples_split) ||
        node_imp <= 1e-12) {
      continue;  // leaf
    }

    // Candidate features, lexicographic order (columns are sorted by name) so
    // the first maximum encountered realizes the documented tie-break.
    std::span<const int> cand(feat_order);
    std::vector<int> sampled;
    if (options.max_features > 0 && static_cast<std::size_t>(options.max_features) < p) {
      sampled = feat_order;
      for (std::size_t i = 0; i < static_cast<std::size_t>(options.max_features); ++i) {
        std::size_t j = i + static_cast<std::size_t>(
                                feature_rng->uniform_int(0, static_cast<std::int64_t>(
                                                                p - i - 1)));
        std::swap(sampled[i], sampled[j]);
      }
      sampled.resize(static_cast<std::size_t>(options.max_features));
      std::sort(sampled.begin(), sampled.end());
      cand = sampled;
    }

    BestSplit best;
    const std::size_t msl = static_cast<std::size_t>(options.min_samples_leaf);
    for (int f : cand) {
      col.clear();
      for (std::size_t i = cur.begin; i < cur.end; ++i)
        col.emplace_back(X.values[idx[i] * p + static_cast<std::size_t>(f)],
                         targets[idx[i]]);
      std::sort(col.begin(), col.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      if (col.front().first == col.back().first) continue;  // constant in node

      double lsum = 0.0, lsq = 0.0;
      for (std::size_t i = 0; i + 1 < col.size(); ++i) {
        lsum += col[i].second;
        lsq += col[i].second * col[i].second;
        if (col[i].first == col[i + 1].first) continue;  // not a boundary
        std::size_t nl = i + 1, nr = col.size() - nl;
        if (nl < msl || nr < msl) continue;
        double left_imp = impurity(lsum, lsq, static_cast<double>(nl), options.regression);
        double right_imp = impurity(sum - lsum, sum_sq - lsq, static_cast<double>(nr),
                                    options.regression);
        double weighted = (static_cast<double>(nl) * left_imp +
                           static_cast<double>(nr) * right_imp) /
                          static_cast<double>(n);
        double decrease = node_imp - weighted;
        if (decrease > best.decrease) {
          best.feature = f;
          best.threshold = col[i].first + (col[i + 1].first - col[i].first) / 2.0;
          best.decrease = decrease;
          best.left_count = nl;
        }
      }
    }

    if (best.feature < 0 || best.decrease <= 1e-12) continue;  // no useful split

    // Partition the index range in place around the chosen threshold.
    std::size_t mid = static_cast<std::size_t>(
        std::partition(idx.begin() + static_cast<std::ptrdiff_t>(cur.begin),
                       idx.begin() + static_cast<std::ptrdiff_t>(cur.end),
                       [&](std::size_t r) {
                         return X.values[r * p + static_cast<std::size_t>(best.feature)] <=
                                best.threshold;
                       }) -
        idx.begin());

    TreeNode& parent = tree.nodes[static_cast<std::size_t>(cur.node_id)];
    parent.feature = best.feature;
    parent.threshold = best.threshold;
    parent.gain = best.decrease * (static_cast<double>(n) / n_total);
    parent.left = static_cast<int>(tree.nodes.size());
    parent.right = parent.left + 1;
    int left_id = parent.left, right_id = parent.right;
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    stack.push_back({right_id, mid, cur.end, cur.depth + 1});
    stack.push_back({left_id, cur.begin, mid, cur.depth + 1});
  }
  return tree;
}

}  // namespace retain
