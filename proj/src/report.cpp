#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pipeline_impl.hpp"
#include "retain/csv.hpp"
#include "retain/pipeline.hpp"

namespace fs = std::filesystem;

namespace retain {

namespace {

// --- tiny SVG chart writer ---------------------------------------------------

constexpr double kWidth = 760, kHeight = 440;
constexpr double kLeft = 80, kRight = 590, kTop = 50, kBottom = 390;

const char* kPalette[] = {"#1b6ca8", "#d1495b", "#2e933c", "#8e5572", "#e09f3e",
                          "#386fa4", "#59a5d8", "#a44200", "#6b4e71", "#32746d"};

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

struct Svg {
  std::ostringstream body;

  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double width = 1.0, bool dashed = false) {
    body << "<line x1='" << x1 << "' y1='" << y1 << "' x2='" << x2 << "' y2='" << y2
         << "' stroke='" << stroke << "' stroke-width='" << width << "'"
         << (dashed ? " stroke-dasharray='5,4'" : "") << "/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill,
            double opacity = 1.0) {
    body << "<rect x='" << x << "' y='" << y << "' width='" << w << "' height='" << h
         << "' fill='" << fill << "' fill-opacity='" << opacity << "'/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill) {
    body << "<circle cx='" << x << "' cy='" << y << "' r='" << r << "' fill='" << fill
         << "'/>\n";
  }
  void text(double x, double y, const std::string& s, double size = 12,
            const std::string& anchor = "start", const std::string& fill = "#222",
            double rotate = 0.0) {
    body << "<text x='" << x << "' y='" << y << "' font-size='" << size
         << "' font-family='sans-serif' text-anchor='" << anchor << "' fill='" << fill << "'";
    if (rotate != 0.0)
      body << " transform='rotate(" << rotate << ' ' << x << ' ' << y << ")'";
    body << ">" << escape_xml(s) << "</text>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    body << "<polyline fill='none' stroke='" << stroke << "' stroke-width='2' points='";
    for (const auto& [x, y] : pts) body << x << ',' << y << ' ';
    body << "'/>\n";
  }
  void save(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='"
        << kHeight << "' viewBox='0 0 " << kWidth << ' ' << kHeight << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << body.str() << "</svg>\n";
  }
};

struct Frame {
  double xmin, xmax, ymin, ymax;
  double px(double x) const {
    return xmax == xmin ? (kLeft + kRight) / 2
                        : kLeft + (x - xmin) / (xmax - xmin) * (kRight - kLeft);
  }
  double py(double y) const {
    return ymax == ymin ? (kTop + kBottom) / 2
                        : kBottom - (y - ymin) / (ymax - ymin) * (kBottom - kTop);
  }
};

void draw_axes(Svg& svg, const Frame& f, const std::string& title,
               const std::string& x_label, const std::string& y_label,
               const std::vector<std::pair<double, std::string>>& x_ticks) {
  svg.line(kLeft, kBottom, kRight, kBottom, "#444");
  svg.line(kLeft, kTop, kLeft, kBottom, "#444");
  svg.text((kLeft + kRight) / 2, 24, title, 15, "middle");
  svg.text((kLeft + kRight) / 2, kHeight - 6, x_label, 12, "middle");
  svg.text(18, (kTop + kBottom) / 2, y_label, 12, "middle", "#222", -90);
  for (int i = 0; i <= 4; ++i) {
    double y = f.ymin + (f.ymax - f.ymin) * i / 4.0;
    svg.line(kLeft - 4, f.py(y), kLeft, f.py(y), "#444");
    svg.text(kLeft - 8, f.py(y) + 4, format_double(std::round(y * 1000) / 1000), 10, "end");
  }
  for (const auto& [x, label] : x_ticks) {
    svg.line(f.px(x), kBottom, f.px(x), kBottom + 4, "#444");
    svg.text(f.px(x), kBottom + 16, label, 10, "middle");
  }
}

void draw_legend(Svg& svg, const std::vector<std::pair<std::string, std::string>>& entries) {
  double y = kTop + 6;
  for (const auto& [label, color] : entries) {
    svg.rect(kRight + 12, y - 8, 14, 4, color);
    // Long model-group ids get clipped for the legend; the CSV has them full.
    std::string shown = label.size() > 24 ? label.substr(0, 23) + "…" : label;
    svg.text(kRight + 30, y, shown, 10);
    y += 16;
  }
}

// --- shared loading ----------------------------------------------------------

struct RunData {
  ExperimentConfig config;
  std::vector<TimeSplit> splits;
  std::vector<EvaluationRecord> evaluations;
  std::vector<AuditRow> audits;
  std::string selected;
  std::vector<ModelIndexRow> index;
};

RunData load_run(const std::string& run_dir) {
  for (const char* stage : {"data", "splits", "modeling", "select"})
    require_stage(run_dir, stage);
  RunData d{load_run_config(run_dir), {}, {}, {}, {}, {}};
  d.splits = import_splits(run_dir + "/splits.csv", d.config.temporal.label_window_days);
  d.evaluations = import_evaluations(run_dir + "/evaluations.csv");
  d.audits = import_audits(run_dir + "/audits.csv");
  d.selected = selected_group(run_dir);
  d.index = read_model_index(run_dir);
  return d;
}

std::vector<int> selection_window(const RunData& d) {
  std::set<int> ids;
  for (const EvaluationRecord& r : d.evaluations) ids.insert(r.split_id);
  std::vector<int> window(ids.begin(), ids.end());
  if (static_cast<int>(window.size()) > d.config.selection.last_n_periods)
    window.erase(window.begin(),
                 window.end() - static_cast<std::ptrdiff_t>(d.config.selection.last_n_periods));
  return window;
}

}  // namespace

std::string emit_report(const std::string& run_dir) {
  RunData d = load_run(run_dir);
  const std::string dir = run_dir + "/reports";
  fs::create_directories(dir);
  const double k = d.config.selection.k_pct;
  const std::string k_label = "precision@" + format_double(k) + "%";

  std::map<int, Date> test_start;
  for (const TimeSplit& s : d.splits) test_start[s.split_id] = s.test_period.start;
  std::vector<int> split_ids;
  for (const auto& [id, date] : test_start) split_ids.push_back(id);

  std::set<std::string> group_set;
  for (const EvaluationRecord& r : d.evaluations) group_set.insert(r.model_group);
  std::vector<std::string> groups(group_set.begin(), group_set.end());

  std::map<std::pair<std::string, int>, const EvaluationRecord*> by_key;
  for (const EvaluationRecord& r : d.evaluations) by_key[{r.model_group, r.split_id}] = &r;

  // (a) precision over time, one series per model group.
  {
    CsvWriter w(dir + "/precision_over_time.csv");
    w.write_row({"model_group", "split_id", "test_start", "precision", "recall"});
    Svg svg;
    Frame f{0, static_cast<double>(split_ids.empty() ? 1 : split_ids.size() - 1), 0, 1};
    std::vector<std::pair<double, std::string>> ticks;
    for (std::size_t i = 0; i < split_ids.size(); ++i)
      ticks.emplace_back(static_cast<double>(i), test_start[split_ids[i]].to_string());
    draw_axes(svg, f, "Model group " + k_label + " per test period", "test period start",
              k_label, ticks);
    std::vector<std::pair<std::string, std::string>> legend;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const std::string color = kPalette[g % 10];
      std::vector<std::pair<double, double>> pts;
      for (std::size_t i = 0; i < split_ids.size(); ++i) {
        auto it = by_key.find({groups[g], split_ids[i]});
        if (it == by_key.end()) continue;
        auto at = it->second->at.find(k);
        if (at == it->second->at.end()) continue;
        w.write_row({groups[g], std::to_string(split_ids[i]),
                     test_start[split_ids[i]].to_string(),
                     format_double(at->second.precision), format_double(at->second.recall)});
        pts.emplace_back(f.px(static_cast<double>(i)), f.py(at->second.precision));
      }
      if (pts.size() == 1) svg.circle(pts[0].first, pts[0].second, 3, color);
      svg.polyline(pts, color);
      legend.emplace_back(groups[g], color);
    }
    draw_legend(svg, legend);
    svg.save(dir + "/precision_over_time.svg");
  }

  // (b) policy menu for the selected group on the final period.
  {
    CsvWriter w(dir + "/policy_menu.csv");
    w.write_row({"k_pct", "n_flagged", "n_true", "precision", "recall"});
    const int last = split_ids.empty() ? -1 : split_ids.back();
    Svg svg;
    Frame f{0, 100, 0, 1};
    std::vector<std::pair<double, std::string>> ticks;
    for (double x : {1.0, 10.0, 25.0, 50.0, 75.0, 100.0})
      ticks.emplace_back(x, format_double(x));
    draw_axes(svg, f,
              "Resource menu, selected model (" + k_label + " operating point marked)",
              "top k% of ranked scores flagged", "metric value", ticks);
    std::vector<std::pair<double, double>> prec_pts, rec_pts;
    auto it = by_key.find({d.selected, last});
    if (it != by_key.end()) {
      for (const auto& [kk, pt] : it->second->at) {
        w.write_row({format_double(kk), std::to_string(pt.n_flagged),
                     std::to_string(pt.n_true), format_double(pt.precision),
                     format_double(pt.recall)});
        prec_pts.emplace_back(f.px(kk), f.py(pt.precision));
        rec_pts.emplace_back(f.px(kk), f.py(pt.recall));
      }
    }
    svg.polyline(prec_pts, kPalette[0]);
    svg.polyline(rec_pts, kPalette[1]);
    svg.line(f.px(k), kTop, f.px(k), kBottom, "#777", 1, true);
    draw_legend(svg, {{"precision", kPalette[0]}, {"recall", kPalette[1]}});
    svg.save(dir + "/policy_menu.svg");
  }

  // (c) FOR ratio over time for the selected model.
  {
    CsvWriter w(dir + "/for_ratio_over_time.csv");
    w.write_row({"model_group", "split_id", "attribute", "group", "for_ratio", "in_band"});
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    double ymax = 1.3;
    for (const AuditRow& a : d.audits) {
      if (!a.ratio || a.is_reference) continue;
      w.write_row({a.model_group, std::to_string(a.split_id), a.attribute, a.group,
                   format_double(*a.ratio),
                   a.in_band ? (*a.in_band ? "true" : "false") : ""});
      if (a.model_group != d.selected) continue;
      auto pos = std::find(split_ids.begin(), split_ids.end(), a.split_id);
      if (pos == split_ids.end()) continue;
      series[a.attribute + ":" + a.group].emplace_back(
          static_cast<double>(pos - split_ids.begin()), *a.ratio);
      ymax = std::max(ymax, *a.ratio + 0.1);
    }
    Svg svg;
    Frame f{0, static_cast<double>(split_ids.empty() ? 1 : split_ids.size() - 1), 0, ymax};
    std::vector<std::pair<double, std::string>> ticks;
    for (std::size_t i = 0; i < split_ids.size(); ++i)
      ticks.emplace_back(static_cast<double>(i), test_start[split_ids[i]].to_string());
    draw_axes(svg, f, "FOR ratio per test period, selected model", "test period start",
              "false omission rate ratio vs reference", ticks);
    svg.rect(kLeft, f.py(d.config.audit.band_hi), kRight - kLeft,
             f.py(d.config.audit.band_lo) - f.py(d.config.audit.band_hi), "#2e933c", 0.12);
    svg.line(kLeft, f.py(1.0), kRight, f.py(1.0), "#777", 1, true);
    std::vector<std::pair<std::string, std::string>> legend;
    std::size_t gi = 0;
    for (const auto& [name, raw_pts] : series) {
      const std::string color = kPalette[gi++ % 10];
      std::vector<std::pair<double, double>> pts;
      for (const auto& [xi, r] : raw_pts) pts.emplace_back(f.px(xi), f.py(r));
      if (pts.size() == 1) svg.circle(pts[0].first, pts[0].second, 3, color);
      svg.polyline(pts, color);
      legend.emplace_back(name, color);
    }
    draw_legend(svg, legend);
    svg.save(dir + "/for_ratio_over_time.svg");
  }

  // (d) fairness vs performance scatter over the selection window.
  {
    CsvWriter w(dir + "/for_vs_precision.csv");
    w.write_row(
        {"model_group", "attribute", "group", "mean_precision", "mean_for_ratio", "in_band"});
    std::vector<int> window = selection_window(d);
    std::set<int> in_window(window.begin(), window.end());

    std::map<std::string, std::pair<double, int>> prec_acc;
    for (const EvaluationRecord& r : d.evaluations) {
      if (!in_window.count(r.split_id)) continue;
      auto at = r.at.find(k);
      if (at == r.at.end()) continue;
      prec_acc[r.model_group].first += at->second.precision;
      prec_acc[r.model_group].second += 1;
    }
    std::map<std::tuple<std::string, std::string, std::string>, std::pair<double, int>>
        ratio_acc;
    for (const AuditRow& a : d.audits) {
      if (!in_window.count(a.split_id) || !a.ratio || a.is_reference) continue;
      auto& acc = ratio_acc[{a.model_group, a.attribute, a.group}];
      acc.first += *a.ratio;
      acc.second += 1;
    }

    Svg svg;
    double ymax = 1.3;
    for (const auto& [key, acc] : ratio_acc)
      ymax = std::max(ymax, acc.first / acc.second + 0.1);
    Frame f{0, 1, 0, ymax};
    std::vector<std::pair<double, std::string>> ticks;
    for (double x : {0.0, 0.25, 0.5, 0.75, 1.0}) ticks.emplace_back(x, format_double(x));
    draw_axes(svg, f, "Mean FOR ratio vs mean " + k_label + " (parity band shaded)",
              k_label + " over the selection window", "mean false omission rate ratio",
              ticks);
    svg.rect(kLeft, f.py(d.config.audit.band_hi), kRight - kLeft,
             f.py(d.config.audit.band_lo) - f.py(d.config.audit.band_hi), "#2e933c", 0.12);
    std::vector<std::pair<std::string, std::string>> legend;
    std::size_t gi = 0;
    std::map<std::string, std::string> group_color;
    for (const auto& [key, acc] : ratio_acc) {
      const auto& [mg, attribute, group] = key;
      auto pa = prec_acc.find(mg);
      if (pa == prec_acc.end()) continue;
      double mean_prec = pa->second.first / pa->second.second;
      double mean_ratio = acc.first / acc.second;
      bool in_band =
          mean_ratio >= d.config.audit.band_lo && mean_ratio <= d.config.audit.band_hi;
      w.write_row({mg, attribute, group, format_double(mean_prec),
                   format_double(mean_ratio), in_band ? "true" : "false"});
      if (!group_color.count(mg)) {
        group_color[mg] = kPalette[gi++ % 10];
        legend.emplace_back(mg, group_color[mg]);
      }
      svg.circle(f.px(mean_prec), f.py(mean_ratio), 4, group_color[mg]);
    }
    draw_legend(svg, legend);
    svg.save(dir + "/for_vs_precision.svg");
  }

  // (e) top-20 importances of the selected model on the final split.
  {
    CsvWriter w(dir + "/importances_top20.csv");
    w.write_row({"rank", "feature", "weight"});
    const int last = split_ids.empty() ? -1 : split_ids.back();
    std::vector<std::pair<std::string, double>> imp;
    for (const ModelIndexRow& row : d.index) {
      if (row.split_id != last || row.model_group != d.selected) continue;
      TrainedModel model = TrainedModel::load(run_dir + "/" + row.file);
      imp = feature_importances(model);
      break;
    }
    if (imp.size() > 20) imp.resize(20);
    Svg svg;
    double wmax = imp.empty() ? 1.0 : imp.front().second;
    Frame f{0, wmax, 0, 1};
    svg.text((kLeft + kRight) / 2, 24, "Top feature importances, selected model", 15,
             "middle");
    double row_h = (kBottom - kTop) / std::max<std::size_t>(imp.size(), 1);
    for (std::size_t i = 0; i < imp.size(); ++i) {
      w.write_row({std::to_string(i + 1), imp[i].first, format_double(imp[i].second)});
      double y = kTop + row_h * static_cast<double>(i);
      svg.rect(kLeft, y + 2, (f.px(imp[i].second) - kLeft), std::max(row_h - 6, 3.0),
               kPalette[0], 0.85);
      std::string name = imp[i].first.size() > 34 ? imp[i].first.substr(0, 33) + "…"
                                                  : imp[i].first;
      svg.text(kLeft + 4, y + row_h / 2 + 3, name + "  " +
               format_double(std::round(imp[i].second * 10000) / 10000), 10);
    }
    svg.save(dir + "/importances_top20.svg");
  }

  return dir;
}

std::string score_roster(const std::string& run_dir, Date as_of,
                         std::optional<double> k_override) {
  RunData d = load_run(run_dir);
  attach_zip_attributes(d.config, run_dir);
  EventLog log = load_run_log(run_dir, d.config);

  const DateRange& coverage = log.date_range();
  if (as_of < coverage.start || as_of > coverage.end)
    throw std::runtime_error("as_of " + as_of.to_string() +
                             " is outside the feature-computable range [" +
                             coverage.start.to_string() + ", " + coverage.end.to_string() +
                             "]");
  if (d.splits.empty()) throw std::runtime_error("run has no splits");
  const TimeSplit& last = d.splits.back();

  const ModelIndexRow* chosen = nullptr;
  for (const ModelIndexRow& row : d.index)
    if (row.split_id == last.split_id && row.model_group == d.selected) chosen = &row;
  if (chosen == nullptr)
    throw std::runtime_error("no stored model for selected group '" + d.selected +
                             "' on split " + std::to_string(last.split_id));
  TrainedModel model = TrainedModel::load(run_dir + "/" + chosen->file);

  const std::string suffix =
      chosen->feature_set == "all" ? "" : "_" + chosen->feature_set;
  std::ifstream enc_in(run_dir + "/split_" + std::to_string(last.split_id) + "/encoder" +
                       suffix + ".json");
  if (!enc_in) throw std::runtime_error("missing encoder state for the selected model");
  nlohmann::json enc_j;
  enc_in >> enc_j;
  EncoderState encoder = encoder_from_json(enc_j);

  std::vector<PredictionPoint> cohort;
  if (d.config.scenario == "clinic") {
    cohort = build_clinic_cohort(log, {as_of, as_of});
  } else {
    cohort = build_roster_cohort(log, as_of, d.config.roster_lookback_days);
  }

  fs::create_directories(run_dir + "/rosters");
  const std::string path = run_dir + "/rosters/roster_" + as_of.to_string() + ".csv";
  CsvWriter w(path);
  w.write_row({"rank", "entity_id", "as_of", "score", "risk_factor_1", "weight_1",
               "risk_factor_2", "weight_2", "risk_factor_3", "weight_3"});
  if (cohort.empty()) return path;

  FeatureConfig features = feature_config_for_set(d.config, chosen->feature_set);
  FeatureMatrix X = build_feature_matrix(features, cohort, log, encoder);
  DataView view{&X, &log};
  std::vector<double> scores = score_model(model, view);
  double k = k_override.value_or(d.config.selection.k_pct);
  std::vector<std::size_t> top = flagged_indices(scores, X.rows, k);
  std::vector<std::vector<std::pair<std::string, double>>> contrib =
      top_contributions(model, view, 3);

  std::size_t rank = 1;
  for (std::size_t i : top) {
    std::vector<std::string> row{std::to_string(rank++), X.rows[i].entity_id,
                                 X.rows[i].as_of.to_string(), format_double(scores[i])};
    for (std::size_t c = 0; c < 3; ++c) {
      if (c < contrib[i].size()) {
        row.push_back(contrib[i][c].first);
        row.push_back(format_double(contrib[i][c].second));
      } else {
        row.push_back("");
        row.push_back("");
      }
    }
    w.write_row(row);
  }
  return path;
}

}  // namespace retain
