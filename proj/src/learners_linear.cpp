#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "retain/learners.hpp"

namespace retain {

double logistic_objective(const FeatureMatrix& X, std::span<const int> y,
                          std::span<const double> weights, double intercept, double l2_lambda,
                          std::span<double> grad) {
  const std::size_t n = X.rows.size(), p = X.columns.size();
  if (weights.size() != p || grad.size() != p + 1)
    throw std::invalid_argument("logistic_objective: weight/gradient size mismatch");
  if (n == 0) throw std::invalid_argument("logistic_objective: empty matrix");

  std::fill(grad.begin(), grad.end(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &X.values[i * p];
    double z = intercept;
    for (std::size_t j = 0; j < p; ++j) z += weights[j] * row[j];
    double label = y[i] != 0 ? 1.0 : 0.0;
    loss += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - label * z;
    double resid = 1.0 / (1.0 + std::exp(-z)) - label;
    for (std::size_t j = 0; j < p; ++j) grad[j] += resid * row[j];
    grad[p] += resid;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  loss *= inv_n;
  for (std::size_t j = 0; j <= p; ++j) grad[j] *= inv_n;
  for (std::size_t j = 0; j < p; ++j) {
    loss += 0.5 * l2_lambda * weights[j] * weights[j];
    grad[j] += l2_lambda * weights[j];
  }
  return loss;
}

LogisticModel fit_logistic_impl(const FeatureMatrix& X, std::span<const int> y,
                                const LearnerSpec& spec) {
  const auto hp = spec.effective_hyper();
  const std::size_t n = X.rows.size(), p = X.columns.size();
  if (n == 0) throw std::invalid_argument("logistic_regression: empty training set");
  for (double v : X.values)
    if (!std::isfinite(v))
      throw std::invalid_argument("logistic_regression: non-finite feature value");

  // Gradient descent on raw clinical scales (viral loads run to 10^6) is
  // hopeless, so the model is fitted in standardized coordinates and carries
  // its column means/scales for scoring.
  LogisticModel model;
  model.means.assign(p, 0.0);
  model.scales.assign(p, 1.0);
  for (std::size_t j = 0; j < p; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += X.values[i * p + j];
    model.means[j] = sum / static_cast<double>(n);
  }
  for (std::size_t j = 0; j < p; ++j) {
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = X.values[i * p + j] - model.means[j];
      ss += d * d;
    }
    double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    model.scales[j] = sd > 0.0 ? sd : 1.0;
  }

  FeatureMatrix Z;
  Z.rows = X.rows;
  Z.columns = X.columns;
  Z.values.resize(n * p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j)
      Z.values[i * p + j] = (X.values[i * p + j] - model.means[j]) / model.scales[j];

  const double l2 = hp.at("l2_lambda");
  const double tol = hp.at("tol");
  const int max_iter = static_cast<int>(hp.at("max_iter"));

  std::vector<double> w(p, 0.0), grad(p + 1, 0.0), trial_w(p), trial_grad(p + 1);
  double b = 0.0;
  double loss = logistic_objective(Z, y, w, b, l2, grad);
  model.train_loss_trace.push_back(loss);

  double step = 1.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    double gnorm = 0.0, gsq = 0.0;
    for (double g : grad) {
      gnorm = std::max(gnorm, std::abs(g));
      gsq += g * g;
    }
    if (gnorm <= tol) {
      model.converged = true;
      break;
    }

    // Backtracking line search with the Armijo sufficient-decrease test.
    double accepted = -1.0;
    double trial_loss = 0.0;
    while (step > 1e-18) {
      for (std::size_t j = 0; j < p; ++j) trial_w[j] = w[j] - step * grad[j];
      double trial_b = b - step * grad[p];
      trial_loss = logistic_objective(Z, y, trial_w, trial_b, l2, trial_grad);
      if (trial_loss <= loss - 1e-4 * step * gsq) {
        accepted = step;
        w = trial_w;
        b = trial_b;
        grad = trial_grad;
        loss = trial_loss;
        break;
      }
      step *= 0.5;
    }
    if (accepted < 0.0) break;  // step underflow; keep the best iterate
    model.iterations = iter + 1;
    model.train_loss_trace.push_back(loss);
    step = std::min(accepted * 2.0, 1e6);
  }

  model.weights = std::move(w);
  model.intercept = b;
  return model;
}

std::vector<double> score_logistic(const LogisticModel& model, const FeatureMatrix& X) {
  const std::size_t n = X.rows.size(), p = X.columns.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    double z = model.intercept;
    for (std::size_t j = 0; j < p; ++j)
      z += model.weights[j] * (X.values[i * p + j] - model.means[j]) / model.scales[j];
    scores[i] = 1.0 / (1.0 + std::exp(-z));
  }
  return scores;
}

}  // namespace retain
