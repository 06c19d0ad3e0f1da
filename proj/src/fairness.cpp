#include "retain/fairness.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "retain/csv.hpp"

namespace retain {

std::optional<double> false_omission_rate(std::span<const std::uint8_t> flagged,
                                          std::span<const int> labels,
                                          std::span<const std::uint8_t> group_mask) {
  if (flagged.size() != labels.size() || flagged.size() != group_mask.size())
    throw std::invalid_argument("false_omission_rate: vector length mismatch");
  std::size_t fn = 0, unflagged = 0;
  for (std::size_t i = 0; i < flagged.size(); ++i) {
    if (!group_mask[i] || flagged[i]) continue;
    ++unflagged;
    fn += labels[i] != 0 ? 1 : 0;
  }
  if (unflagged == 0) return std::nullopt;
  return static_cast<double>(fn) / static_cast<double>(unflagged);
}

std::optional<double> for_ratio(std::optional<double> for_group,
                                std::optional<double> for_reference) {
  if (!for_group || !for_reference) return std::nullopt;
  if (*for_reference == 0.0) {
    if (*for_group == 0.0) return 1.0;
    return std::nullopt;  // extreme disparity, no finite ratio
  }
  return *for_group / *for_reference;
}

namespace {

std::string attribute_value(const EventLog& log, const PredictionPoint& point,
                            const std::string& attribute) {
  const Entity* e = log.find_entity(point.entity_id);
  if (e == nullptr) return "missing";
  const std::optional<std::string>* v = nullptr;
  if (attribute == "race") {
    v = &e->race;
  } else if (attribute == "gender") {
    v = &e->gender;
  } else if (attribute == "transmission_category") {
    v = &e->transmission_category;
  } else if (attribute == "zip_code") {
    v = &e->zip_code;
  } else {
    throw std::invalid_argument("audit attribute '" + attribute +
                                "' is not an entity attribute");
  }
  return v->has_value() ? **v : std::string("missing");
}

}  // namespace

AuditReport audit_model(std::span<const std::uint8_t> flagged, std::span<const int> labels,
                        std::span<const PredictionPoint> rows, const EventLog& log,
                        const AuditConfig& config, const std::string& model_group,
                        int split_id) {
  if (flagged.size() != labels.size() || flagged.size() != rows.size())
    throw std::invalid_argument("audit_model: vector length mismatch");

  AuditReport report;
  for (const std::string& attribute : config.attributes) {
    std::vector<std::string> value(rows.size());
    std::map<std::string, std::size_t> sizes;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      value[i] = attribute_value(log, rows[i], attribute);
      ++sizes[value[i]];
    }

    std::size_t missing_n = sizes.count("missing") ? sizes.at("missing") : 0;
    if (missing_n * 2 > rows.size())
      report.warnings.push_back("attribute " + attribute + " is missing for " +
                                std::to_string(missing_n) + " of " +
                                std::to_string(rows.size()) + " rows");

    std::vector<std::string> groups;
    for (const auto& [g, n] : sizes) {
      if (n >= config.min_group_size) {
        groups.push_back(g);
      } else {
        report.notices.push_back("attribute " + attribute + ": group " + g + " has " +
                                 std::to_string(n) + " rows, below min_group_size " +
                                 std::to_string(config.min_group_size) + "; excluded");
      }
    }
    if (groups.empty()) continue;

    // Reference: configured value when usable, otherwise the largest group
    // (ties to the lexicographically first).
    std::string reference;
    auto cfg_ref = config.reference_groups.find(attribute);
    if (cfg_ref != config.reference_groups.end() &&
        std::find(groups.begin(), groups.end(), cfg_ref->second) != groups.end()) {
      reference = cfg_ref->second;
    } else {
      if (cfg_ref != config.reference_groups.end())
        report.notices.push_back("attribute " + attribute + ": configured reference '" +
                                 cfg_ref->second +
                                 "' absent or too small; using largest group");
      std::size_t best_n = 0;
      for (const std::string& g : groups)
        if (sizes.at(g) > best_n) {
          best_n = sizes.at(g);
          reference = g;
        }
    }

    std::map<std::string, AuditRow> by_group;
    for (const std::string& g : groups) {
      AuditRow row;
      row.model_group = model_group;
      row.split_id = split_id;
      row.attribute = attribute;
      row.group = g;
      row.n = sizes.at(g);
      row.is_reference = g == reference;
      by_group[g] = row;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto it = by_group.find(value[i]);
      if (it == by_group.end() || flagged[i]) continue;
      if (labels[i] != 0)
        ++it->second.fn;
      else
        ++it->second.tn;
    }
    for (auto& [g, row] : by_group) {
      std::size_t unflagged = row.fn + row.tn;
      if (unflagged > 0)
        row.fo_rate = static_cast<double>(row.fn) / static_cast<double>(unflagged);
    }
    const std::optional<double> ref_for = by_group.at(reference).fo_rate;
    for (auto& [g, row] : by_group) {
      row.ratio = for_ratio(row.fo_rate, ref_for);
      if (row.ratio)
        row.in_band = *row.ratio >= config.band_lo && *row.ratio <= config.band_hi;
      else if (row.fo_rate && ref_for && *ref_for == 0.0)
        row.in_band = false;  // group misses outcomes the reference never does
      report.rows.push_back(row);
    }
  }
  return report;
}

void export_audits(std::span<const AuditRow> rows, const std::string& path) {
  CsvWriter w(path);
  w.write_row({"model_group", "split_id", "attribute", "group", "n", "fn", "tn", "for",
               "ratio", "in_band"});
  for (const AuditRow& r : rows) {
    w.write_row({r.model_group, std::to_string(r.split_id), r.attribute, r.group,
                 std::to_string(r.n), std::to_string(r.fn), std::to_string(r.tn),
                 r.fo_rate ? format_double(*r.fo_rate) : "",
                 r.ratio ? format_double(*r.ratio) : "",
                 r.in_band ? (*r.in_band ? "true" : "false") : ""});
  }
}

std::vector<AuditRow> import_audits(const std::string& path) {
  CsvReader reader(path);
  reader.require_header({"model_group", "split_id", "attribute", "group", "n", "fn", "tn",
                         "for", "ratio", "in_band"});
  std::vector<AuditRow> out;
  std::vector<std::string> row;
  while (reader.next(row)) {
    AuditRow a;
    a.model_group = row[0];
    a.split_id = std::stoi(row[1]);
    a.attribute = row[2];
    a.group = row[3];
    a.n = static_cast<std::size_t>(std::stoull(row[4]));
    a.fn = static_cast<std::size_t>(std::stoull(row[5]));
    a.tn = static_cast<std::size_t>(std::stoull(row[6]));
    if (!row[7].empty()) a.fo_rate = std::stod(row[7]);
    if (!row[8].empty()) a.ratio = std::stod(row[8]);
    if (!row[9].empty()) a.in_band = row[9] == "true";
    // The reference bit is not part of the persisted schema. Leaving it false
    // is safe: a reference row re-enters joint_select as a group whose ratio
    // is identically 1.0, which can never leave the parity band.
    out.push_back(a);
  }
  return out;
}

JointSelection joint_select(std::span<const EvaluationRecord> records,
                            std::span<const AuditRow> audits, const SelectionRule& rule,
                            const AuditConfig& config) {
  if (records.empty()) throw std::invalid_argument("joint_select: no evaluation records");
  if (audits.empty()) throw std::invalid_argument("joint_select: no audit rows");

  // Performance ranking over the window comes from the stability rule; the
  // returned points cover every group.
  SelectionOutcome perf = select_model(records, rule);
  std::set<int> window(perf.window.begin(), perf.window.end());

  // Mean FOR ratio per (model, attribute, group) over the window splits.
  struct Acc {
    double sum = 0.0;
    int n = 0;
    bool saw_undefined = false;
  };
  std::map<std::string, std::map<std::pair<std::string, std::string>, Acc>> ratios;
  for (const AuditRow& a : audits) {
    if (!window.count(a.split_id) || a.is_reference) continue;
    Acc& acc = ratios[a.model_group][{a.attribute, a.group}];
    if (a.ratio) {
      acc.sum += *a.ratio;
      acc.n += 1;
    } else if (a.fo_rate) {
      // Defined FOR but no finite ratio: the reference had zero FOR while
      // this group did not. Count as out of band.
      acc.saw_undefined = true;
    }
  }

  std::vector<std::string> in_band;
  for (const auto& [group, _] : perf.points) {
    auto it = ratios.find(group);
    if (it == ratios.end()) continue;  // never audited: cannot certify parity
    bool ok = true;
    for (const auto& [key, acc] : it->second) {
      if (acc.saw_undefined) ok = false;
      if (acc.n == 0) continue;
      double mean = acc.sum / acc.n;
      if (mean < config.band_lo || mean > config.band_hi) ok = false;
    }
    if (ok) in_band.push_back(group);
  }

  // Rank by (stability points, mean precision, id); restricted to the
  // in-band set when it is non-empty.
  std::map<std::string, double> mean_prec;
  std::map<std::string, int> prec_n;
  for (const EvaluationRecord& r : records) {
    if (!window.count(r.split_id)) continue;
    auto it = r.at.find(rule.k_pct);
    if (it == r.at.end()) continue;
    mean_prec[r.model_group] += it->second.precision;
    prec_n[r.model_group] += 1;
  }
  for (auto& [g, total] : mean_prec) total /= prec_n.at(g);

  auto better = [&](const std::string& a, const std::string& b) {
    if (perf.points.at(a) != perf.points.at(b)) return perf.points.at(a) > perf.points.at(b);
    if (mean_prec.at(a) != mean_prec.at(b)) return mean_prec.at(a) > mean_prec.at(b);
    return a < b;
  };

  JointSelection out;
  out.in_band_groups = in_band;
  if (!in_band.empty()) {
    out.ranked = in_band;
    std::sort(out.ranked.begin(), out.ranked.end(), better);
    std::ostringstream msg;
    msg << out.ranked.size() << " of " << perf.points.size()
        << " model groups inside the FOR parity band [" << format_double(config.band_lo)
        << ", " << format_double(config.band_hi) << "]; ranked by stability points at k="
        << format_double(rule.k_pct) << "%";
    out.rationale = msg.str();
  } else {
    for (const auto& [g, _] : perf.points) out.ranked.push_back(g);
    std::sort(out.ranked.begin(), out.ranked.end(), better);
    out.disparity_warning = true;
    std::ostringstream msg;
    msg << "no model group inside the FOR parity band [" << format_double(config.band_lo)
        << ", " << format_double(config.band_hi)
        << "]; ranked by performance alone, disparity persists across the grid";
    out.rationale = msg.str();
  }
  return out;
}

}  // namespace retain
