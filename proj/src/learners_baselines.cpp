#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "retain/learners.hpp"

namespace retain {

namespace {

constexpr std::array<std::string_view, 6> kRawAttributes = {
    "age_years",         "art_years",         "substance_abuse",
    "virally_suppressed", "last_viral_load",  "days_since_last_hiv_visit",
};

constexpr std::array<std::string_view, 6> kRuleOps = {"<", "<=", ">", ">=", "==", "!="};

bool apply_op(std::string_view op, double lhs, double rhs) {
  if (op == "<") return lhs < rhs;
  if (op == "<=") return lhs <= rhs;
  if (op == ">") return lhs > rhs;
  if (op == ">=") return lhs >= rhs;
  if (op == "==") return lhs == rhs;
  if (op == "!=") return lhs != rhs;
  throw std::invalid_argument("unknown rule operator '" + std::string(op) + "'");
}

}  // namespace

bool is_known_raw_attribute(std::string_view name) {
  return std::find(kRawAttributes.begin(), kRawAttributes.end(), name) != kRawAttributes.end();
}

std::optional<double> raw_attribute(const EventLog& log, const PredictionPoint& point,
                                    std::string_view name) {
  if (name == "age_years") {
    const Entity* e = log.find_entity(point.entity_id);
    if (e == nullptr || !e->birth_date) return std::nullopt;
    return static_cast<double>(point.as_of - *e->birth_date) / 365.25;
  }
  if (name == "art_years") {
    // Never prescribed reads as zero years on treatment, which is exactly the
    // high-risk end of the scale the rule is probing.
    for (const Event& ev : log.events_for(point.entity_id)) {
      if (ev.date > point.as_of) break;
      if (ev.type == EventType::medication)
        return static_cast<double>(point.as_of - ev.date) / 365.25;
    }
    return 0.0;
  }
  if (name == "substance_abuse") {
    for (const Event& ev : log.events_for(point.entity_id)) {
      if (ev.date > point.as_of) break;
      if (ev.type == EventType::diagnosis && ev.category_value &&
          *ev.category_value == "substance_abuse")
        return 1.0;
    }
    return 0.0;
  }
  if (name == "virally_suppressed") {
    std::optional<double> last;
    for (const Event& ev : log.events_for(point.entity_id)) {
      if (ev.date > point.as_of) break;
      if (ev.type == EventType::viral_load_test && ev.numeric_value) last = *ev.numeric_value;
    }
    return (last && *last < 200.0) ? 1.0 : 0.0;
  }
  if (name == "last_viral_load") {
    std::optional<double> last;
    for (const Event& ev : log.events_for(point.entity_id)) {
      if (ev.date > point.as_of) break;
      if (ev.type == EventType::viral_load_test && ev.numeric_value) last = *ev.numeric_value;
    }
    return last;
  }
  if (name == "days_since_last_hiv_visit") {
    std::optional<Date> last;
    for (const Event& ev : log.events_for(point.entity_id)) {
      if (ev.date > point.as_of) break;
      if (ev.type == EventType::hiv_visit) last = ev.date;
    }
    if (!last) return std::nullopt;
    return static_cast<double>(point.as_of - *last);
  }
  throw std::invalid_argument("unknown raw attribute '" + std::string(name) + "'");
}

std::vector<Rule> default_rule_table() {
  return {
      {"age_years", "<", 30.0, 1.0},
      {"art_years", "<", 1.0, 1.0},
      {"substance_abuse", "==", 1.0, 1.0},
      {"virally_suppressed", "==", 0.0, 1.0},
  };
}

void validate_rules(const std::vector<Rule>& rules) {
  for (const Rule& r : rules) {
    if (!is_known_raw_attribute(r.attribute))
      throw std::invalid_argument("rule references unknown attribute '" + r.attribute + "'");
    if (std::find(kRuleOps.begin(), kRuleOps.end(), r.op) == kRuleOps.end())
      throw std::invalid_argument("rule on '" + r.attribute + "' uses unknown operator '" +
                                  r.op + "'");
    if (!std::isfinite(r.value) || !std::isfinite(r.weight))
      throw std::invalid_argument("rule on '" + r.attribute + "' has a non-finite constant");
  }
}

std::vector<double> score_rules(const RuleModel& model, const EventLog& log,
                                std::span<const PredictionPoint> rows) {
  std::vector<double> scores(rows.size(), 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (const Rule& r : model.rules) {
      std::optional<double> v = raw_attribute(log, rows[i], r.attribute);
      if (v && apply_op(r.op, *v, r.value)) scores[i] += r.weight;
    }
  }
  return scores;
}

std::vector<double> score_prior(std::size_t n_rows) {
  return std::vector<double>(n_rows, 1.0);
}

std::vector<double> score_viral_load(const EventLog& log,
                                     std::span<const PredictionPoint> rows) {
  std::vector<double> scores(rows.size());
  std::vector<bool> missing(rows.size(), false);
  double max_seen = 0.0;
  bool any_seen = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::optional<double> last = raw_attribute(log, rows[i], "last_viral_load");
    if (last) {
      scores[i] = *last;
      max_seen = any_seen ? std::max(max_seen, *last) : *last;
      any_seen = true;
    } else {
      missing[i] = true;
    }
  }
  // Never-tested entities sort above every measured value: no lab contact is
  // treated as the highest risk tier.
  double top = any_seen ? max_seen + 1.0 : 1.0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (missing[i]) scores[i] = top;
  return scores;
}

}  // namespace retain
