#include "retain/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "retain/csv.hpp"

namespace retain {

namespace {

void check_k(double k_pct) {
  if (!(k_pct > 0.0) || k_pct > 100.0)
    throw std::invalid_argument("k_pct must lie in (0, 100], got " + format_double(k_pct));
}

std::size_t flag_count(double k_pct, std::size_t n) {
  return static_cast<std::size_t>(
      std::ceil(k_pct * static_cast<double>(n) / 100.0));
}

std::size_t count_positives(std::span<const int> labels) {
  std::size_t c = 0;
  for (int v : labels) c += v != 0 ? 1 : 0;
  return c;
}

}  // namespace

std::vector<std::size_t> flagged_indices(std::span<const double> scores,
                                         std::span<const PredictionPoint> rows, double k_pct) {
  check_k(k_pct);
  if (scores.size() != rows.size())
    throw std::invalid_argument("flagged_indices: score/row count mismatch");
  if (scores.empty()) throw std::invalid_argument("flagged_indices: empty score vector");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (rows[a].entity_id != rows[b].entity_id) return rows[a].entity_id < rows[b].entity_id;
    return rows[a].as_of < rows[b].as_of;
  });
  order.resize(flag_count(k_pct, scores.size()));
  return order;
}

TopKResult precision_at_pct(std::span<const double> scores, std::span<const int> labels,
                            std::span<const PredictionPoint> rows, double k_pct) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("precision_at_pct: score/label count mismatch");
  std::vector<std::size_t> flagged = flagged_indices(scores, rows, k_pct);
  TopKResult r;
  r.n_flagged = flagged.size();
  for (std::size_t i : flagged) r.n_true += labels[i] != 0 ? 1 : 0;
  r.precision = static_cast<double>(r.n_true) / static_cast<double>(r.n_flagged);
  return r;
}

double recall_at_pct(std::span<const double> scores, std::span<const int> labels,
                     std::span<const PredictionPoint> rows, double k_pct) {
  TopKResult top = precision_at_pct(scores, labels, rows, k_pct);
  std::size_t positives = count_positives(labels);
  if (positives == 0) return 1.0;
  return static_cast<double>(top.n_true) / static_cast<double>(positives);
}

std::vector<PolicyPoint> pr_policy_curve(std::span<const double> scores,
                                         std::span<const int> labels,
                                         std::span<const PredictionPoint> rows,
                                         std::span<const double> k_grid) {
  std::vector<PolicyPoint> out;
  out.reserve(k_grid.size());
  const std::size_t positives = count_positives(labels);
  for (double k : k_grid) {
    TopKResult top = precision_at_pct(scores, labels, rows, k);
    PolicyPoint p;
    p.k_pct = k;
    p.precision = top.precision;
    p.recall = positives == 0
                   ? 1.0
                   : static_cast<double>(top.n_true) / static_cast<double>(positives);
    p.n_flagged = top.n_flagged;
    p.n_true = top.n_true;
    out.push_back(p);
  }
  return out;
}

EvaluationRecord evaluate_split(const TrainedModel& model, const DataView& test,
                                std::span<const int> y_test, const SelectionRule& rule,
                                std::span<const double> extra_k) {
  if (test.X == nullptr) throw std::invalid_argument("evaluate_split: missing feature matrix");
  if (test.X->rows.size() != y_test.size())
    throw std::invalid_argument("evaluate_split: row/label count mismatch");

  std::vector<double> scores = score_model(model, test);
  EvaluationRecord rec;
  rec.model_group = model.spec.model_group();
  rec.split_id = -1;  // filled by the caller, which knows the test split
  rec.prevalence = y_test.empty() ? 0.0
                                  : static_cast<double>(count_positives(y_test)) /
                                        static_cast<double>(y_test.size());

  std::set<double> ks(extra_k.begin(), extra_k.end());
  ks.insert(rule.k_pct);
  const std::size_t positives = count_positives(y_test);
  for (double k : ks) {
    TopKResult top = precision_at_pct(scores, y_test, test.X->rows, k);
    EvalPoint pt;
    pt.precision = top.precision;
    pt.recall = positives == 0
                    ? 1.0
                    : static_cast<double>(top.n_true) / static_cast<double>(positives);
    pt.n_flagged = top.n_flagged;
    pt.n_true = top.n_true;
    rec.at[k] = pt;
  }
  return rec;
}

SelectionOutcome select_model(std::span<const EvaluationRecord> records,
                              const SelectionRule& rule) {
  if (records.empty()) throw std::invalid_argument("select_model: no evaluation records");

  // Calendar-ordered last N available splits.
  std::set<int> split_set;
  std::set<std::string> group_set;
  for (const EvaluationRecord& r : records) {
    split_set.insert(r.split_id);
    group_set.insert(r.model_group);
  }
  std::vector<int> window(split_set.begin(), split_set.end());
  if (static_cast<int>(window.size()) > rule.last_n_periods)
    window.erase(window.begin(),
                 window.end() - static_cast<std::ptrdiff_t>(rule.last_n_periods));

  // precision@k per (group, split); every pair must be present.
  std::map<std::pair<std::string, int>, double> prec;
  for (const EvaluationRecord& r : records) {
    auto it = r.at.find(rule.k_pct);
    if (it == r.at.end()) continue;
    prec[{r.model_group, r.split_id}] = it->second.precision;
  }
  std::vector<std::string> missing;
  for (const std::string& g : group_set)
    for (int s : window)
      if (prec.find({g, s}) == prec.end())
        missing.push_back("(" + g + ", split " + std::to_string(s) + ")");
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "select_model: missing precision@" << format_double(rule.k_pct)
        << " evaluations for:";
    for (const std::string& m : missing) msg << ' ' << m;
    throw std::invalid_argument(msg.str());
  }

  SelectionOutcome out;
  out.window = window;
  for (const std::string& g : group_set) out.points[g] = 0;
  std::map<std::string, double> mean_prec;
  for (int s : window) {
    double best = 0.0;
    for (const std::string& g : group_set) best = std::max(best, prec.at({g, s}));
    for (const std::string& g : group_set) {
      double p = prec.at({g, s});
      if (p >= best - rule.regret_band) out.points[g] += 1;
      mean_prec[g] += p / static_cast<double>(window.size());
    }
  }

  std::vector<std::string> groups(group_set.begin(), group_set.end());
  std::sort(groups.begin(), groups.end(), [&](const std::string& a, const std::string& b) {
    if (out.points.at(a) != out.points.at(b)) return out.points.at(a) > out.points.at(b);
    if (mean_prec.at(a) != mean_prec.at(b)) return mean_prec.at(a) > mean_prec.at(b);
    return a < b;
  });
  out.model_group = groups.front();
  return out;
}

void export_evaluations(std::span<const EvaluationRecord> records, const std::string& path) {
  CsvWriter w(path);
  w.write_row({"model_group", "split_id", "k_pct", "precision", "recall", "n_flagged",
               "n_true", "prevalence"});
  for (const EvaluationRecord& r : records)
    for (const auto& [k, pt] : r.at)
      w.write_row({r.model_group, std::to_string(r.split_id), format_double(k),
                   format_double(pt.precision), format_double(pt.recall),
                   std::to_string(pt.n_flagged), std::to_string(pt.n_true),
                   format_double(r.prevalence)});
}

std::vector<EvaluationRecord> import_evaluations(const std::string& path) {
  CsvReader reader(path);
  reader.require_header({"model_group", "split_id", "k_pct", "precision", "recall",
                         "n_flagged", "n_true", "prevalence"});
  // Rows belonging to one (group, split) record may be spread over several
  // k lines; rebuild the map form.
  std::map<std::pair<std::string, int>, EvaluationRecord> acc;
  std::vector<std::string> row;
  while (reader.next(row)) {
    std::string group = row[0];
    int split = std::stoi(row[1]);
    EvaluationRecord& rec = acc[{group, split}];
    rec.model_group = group;
    rec.split_id = split;
    rec.prevalence = std::stod(row[7]);
    EvalPoint pt;
    pt.precision = std::stod(row[3]);
    pt.recall = std::stod(row[4]);
    pt.n_flagged = static_cast<std::size_t>(std::stoull(row[5]));
    pt.n_true = static_cast<std::size_t>(std::stoull(row[6]));
    rec.at[std::stod(row[2])] = pt;
  }
  std::vector<EvaluationRecord> out;
  out.reserve(acc.size());
  for (auto& [key, rec] : acc) out.push_back(std::move(rec));
  return out;
}

}  // namespace retain
