#include "retain/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pipeline_impl.hpp"
#include "retain/csv.hpp"
#include "retain/rng.hpp"

namespace fs = std::filesystem;

namespace retain {

namespace {

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

Date parse_date_field(const nlohmann::json& j, const std::string& key) {
  std::string raw = j.at(key).get<std::string>();
  std::optional<Date> d = Date::parse(raw);
  if (!d) throw std::invalid_argument("config: " + key + " is not a date: '" + raw + "'");
  return *d;
}

AggWindow parse_window(const std::string& s) {
  if (s == "183d") return AggWindow::d183;
  if (s == "365d") return AggWindow::d365;
  if (s == "1095d") return AggWindow::d1095;
  if (s == "all") return AggWindow::all_history;
  throw std::invalid_argument("config: unknown aggregate window '" + s +
                              "' (expected 183d, 365d, 1095d or all)");
}

AggFunction parse_function(const std::string& s) {
  if (s == "count") return AggFunction::count;
  if (s == "mean") return AggFunction::mean;
  if (s == "min") return AggFunction::min;
  if (s == "max") return AggFunction::max;
  if (s == "stddev") return AggFunction::stddev;
  if (s == "days_since_last") return AggFunction::days_since_last;
  throw std::invalid_argument("config: unknown aggregate function '" + s + "'");
}

nlohmann::json label_to_json(const LabelSpec& l) {
  nlohmann::json j;
  j["kind"] = l.kind == LabelKind::retention ? "retention" : "access";
  j["window_days"] = l.window_days;
  if (l.kind == LabelKind::retention) j["min_gap_days"] = l.min_gap_days;
  return j;
}

nlohmann::json temporal_to_json(const TemporalConfig& t) {
  nlohmann::json j;
  j["feature_start"] = t.feature_start.to_string();
  j["data_end"] = t.data_end.to_string();
  j["update_frequency_months"] = t.update_frequency_months;
  j["test_span_months"] = t.test_span_months;
  j["label_window_days"] = t.label_window_days;
  j["min_train_history_months"] = t.min_train_history_months;
  j["sliding_window"] = t.sliding_window;
  j["sliding_window_months"] = t.sliding_window_months;
  return j;
}

nlohmann::json features_to_json(const FeatureConfig& f) {
  nlohmann::json aggs = nlohmann::json::array();
  for (const AggregateSpec& a : f.aggregates) {
    nlohmann::json ja;
    ja["source"] = std::string(to_string(a.source));
    ja["quantity"] = std::string(to_string(a.quantity));
    ja["function"] = std::string(to_string(a.function));
    ja["window"] = std::string(to_string(a.window));
    ja["spatial"] = a.spatial == SpatialGroup::zip_code ? "zip_code" : "none";
    aggs.push_back(std::move(ja));
  }
  nlohmann::json j;
  j["aggregates"] = std::move(aggs);
  j["entity_categoricals"] = f.entity_categoricals;
  j["entity_numerics"] = f.entity_numerics;
  return j;
}

nlohmann::json grid_to_json(const std::vector<GridEntry>& grid) {
  nlohmann::json arr = nlohmann::json::array();
  for (const GridEntry& e : grid) {
    nlohmann::json je;
    je["family"] = std::string(to_string(e.spec.family));
    je["hyperparameters"] = e.spec.effective_hyper();
    je["seed"] = e.spec.seed;
    je["feature_set"] = e.feature_set;
    if (e.spec.family == LearnerFamily::expert_rules) {
      nlohmann::json rules = nlohmann::json::array();
      for (const Rule& r : e.spec.rules.empty() ? default_rule_table() : e.spec.rules)
        rules.push_back({{"attribute", r.attribute},
                         {"op", r.op},
                         {"value", r.value},
                         {"weight", r.weight}});
      je["rules"] = std::move(rules);
    }
    arr.push_back(std::move(je));
  }
  return arr;
}

std::vector<GridEntry> default_grid(const std::string& scenario, std::uint64_t seed) {
  auto entry = [&](LearnerFamily fam, std::map<std::string, double> hp, std::uint64_t idx,
                   std::string feature_set = "all") {
    GridEntry e;
    e.spec.family = fam;
    e.spec.hyper = std::move(hp);
    e.spec.seed = mix_seed(seed, idx);
    e.feature_set = std::move(feature_set);
    return e;
  };
  std::vector<GridEntry> grid;
  grid.push_back(entry(LearnerFamily::decision_tree,
                       {{"max_depth", 6}, {"min_samples_leaf", 25}}, 1));
  grid.push_back(entry(LearnerFamily::random_forest,
                       {{"n_trees", 150}, {"max_depth", 10}, {"min_samples_leaf", 25}}, 2));
  grid.push_back(entry(LearnerFamily::random_forest,
                       {{"n_trees", 150}, {"max_depth", 2}, {"min_samples_leaf", 25}}, 3));
  grid.push_back(entry(LearnerFamily::gradient_boosted_trees,
                       {{"n_rounds", 80}, {"learning_rate", 0.1}, {"max_depth", 3},
                        {"min_samples_leaf", 25}},
                       4));
  grid.push_back(entry(LearnerFamily::logistic_regression, {{"l2_lambda", 0.1}}, 5));
  if (scenario == "clinic")
    grid.push_back(entry(LearnerFamily::logistic_regression, {{"l2_lambda", 1.0}}, 6,
                         "demographics"));
  grid.push_back(entry(LearnerFamily::expert_rules, {}, 7));
  grid.push_back(entry(LearnerFamily::prior_baseline, {}, 8));
  grid.push_back(entry(LearnerFamily::viral_load_ranking, {}, 9));
  return grid;
}

void append_log(const std::string& run_dir, const std::string& line) {
  std::ofstream out(run_dir + "/run.log", std::ios::app);
  out << line << '\n';
}

}  // namespace

std::string GridEntry::group_id() const {
  std::string id = spec.model_group();
  if (feature_set != "all") id += "[" + feature_set + "]";
  return id;
}

// --- config ------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": config is not valid JSON: " + e.what());
  }
  return from_json(j);
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.scenario = j.at("scenario").get<std::string>();
  if (c.scenario != "clinic" && c.scenario != "health_department")
    throw std::invalid_argument("config: scenario must be clinic or health_department, got '" +
                                c.scenario + "'");
  const bool clinic = c.scenario == "clinic";
  c.seed = j.value("seed", std::uint64_t{17});
  c.output_dir = j.value("output_dir", std::string("runs"));

  // Data source.
  const nlohmann::json& data = j.at("data");
  if (data.contains("synthetic") == (data.contains("entities") || data.contains("events")))
    throw std::invalid_argument(
        "config: data block needs either a synthetic block or entities+events paths");
  if (data.contains("synthetic")) {
    const nlohmann::json& s = data.at("synthetic");
    SyntheticConfig sc;
    sc.n_entities = s.value("n_entities", 1000);
    if (s.contains("start") || s.contains("end"))
      sc.date_range = {parse_date_field(s, "start"), parse_date_field(s, "end")};
    sc.seed = c.seed;
    sc.base_dropout_rate = s.value("base_dropout_rate", 0.25);
    if (s.contains("dropout_signal")) {
      for (const auto& t : s.at("dropout_signal"))
        sc.dropout_signal.push_back(
            {t.at("feature").get<std::string>(), t.at("weight").get<double>()});
    }
    if (s.contains("group_bias")) {
      const nlohmann::json& g = s.at("group_bias");
      sc.group_bias = GroupBias{g.at("attribute").get<std::string>(),
                                g.at("group").get<std::string>(),
                                g.at("multiplier").get<double>()};
    }
    c.synthetic = sc;
  } else {
    c.entities_path = data.at("entities").get<std::string>();
    c.events_path = data.at("events").get<std::string>();
    c.zip_attributes_path = data.value("zip_attributes", std::string());
  }

  // Label, with scenario defaults.
  {
    nlohmann::json l = j.value("label", nlohmann::json::object());
    std::string kind = l.value("kind", clinic ? "retention" : "access");
    if (kind == "retention") {
      c.label.kind = LabelKind::retention;
    } else if (kind == "access") {
      c.label.kind = LabelKind::access;
    } else {
      throw std::invalid_argument("config: label kind must be retention or access");
    }
    c.label.window_days = l.value("window_days", 365);
    c.label.min_gap_days = l.value("min_gap_days", 90);
  }

  // Temporal frame. The label window is the label's, never set separately:
  // a mismatch there is exactly the leakage bug the splitter exists to stop.
  {
    nlohmann::json t = j.value("temporal", nlohmann::json::object());
    if (t.contains("feature_start")) {
      c.temporal.feature_start = parse_date_field(t, "feature_start");
    } else if (c.synthetic) {
      c.temporal.feature_start = c.synthetic->date_range.start.plus_months(6);
    } else {
      throw std::invalid_argument("config: temporal.feature_start required for file data");
    }
    if (t.contains("data_end")) {
      c.temporal.data_end = parse_date_field(t, "data_end");
    } else if (c.synthetic) {
      c.temporal.data_end = c.synthetic->date_range.end;
    } else {
      throw std::invalid_argument("config: temporal.data_end required for file data");
    }
    c.temporal.update_frequency_months = t.value("update_frequency_months", clinic ? 12 : 1);
    c.temporal.test_span_months =
        t.value("test_span_months", c.temporal.update_frequency_months);
    c.temporal.label_window_days = c.label.window_days;
    c.temporal.min_train_history_months = t.value("min_train_history_months", 12);
    c.temporal.sliding_window = t.value("sliding_window", false);
    c.temporal.sliding_window_months = t.value("sliding_window_months", 24);
  }

  // Features.
  if (!j.contains("features") || j.at("features") == "default") {
    c.features = default_feature_config();
  } else {
    const nlohmann::json& f = j.at("features");
    if (!f.contains("aggregates") || f.at("aggregates") == "default") {
      c.features.aggregates = default_feature_config().aggregates;
    } else {
      for (const auto& a : f.at("aggregates")) {
        AggregateSpec spec;
        std::string source = a.at("source").get<std::string>();
        std::optional<EventType> et = parse_event_type(source);
        if (!et)
          throw std::invalid_argument("config: unknown aggregate source '" + source + "'");
        spec.source = *et;
        std::string q = a.value("quantity", std::string("count"));
        if (q == "count") {
          spec.quantity = AggQuantity::count;
        } else if (q == "numeric_value") {
          spec.quantity = AggQuantity::numeric_value;
        } else {
          throw std::invalid_argument("config: unknown aggregate quantity '" + q + "'");
        }
        spec.function = parse_function(a.value("function", std::string("count")));
        spec.window = parse_window(a.value("window", std::string("365d")));
        std::string sp = a.value("spatial", std::string("none"));
        if (sp == "zip_code") {
          spec.spatial = SpatialGroup::zip_code;
        } else if (sp != "none") {
          throw std::invalid_argument("config: unknown spatial grouping '" + sp + "'");
        }
        c.features.aggregates.push_back(spec);
      }
    }
    c.features.entity_categoricals = f.value(
        "entity_categoricals", default_feature_config().entity_categoricals);
    c.features.entity_numerics =
        f.value("entity_numerics", default_feature_config().entity_numerics);
  }
  c.roster_lookback_days = j.value("roster_lookback_days", 365);

  // Grid.
  if (!j.contains("grid") || j.at("grid") == "default") {
    c.grid = default_grid(c.scenario, c.seed);
  } else {
    std::uint64_t idx = 0;
    for (const auto& e : j.at("grid")) {
      GridEntry entry;
      std::string family = e.at("family").get<std::string>();
      std::optional<LearnerFamily> fam = parse_learner_family(family);
      if (!fam) throw std::invalid_argument("config: unknown learner family '" + family + "'");
      entry.spec.family = *fam;
      if (e.contains("hyperparameters"))
        for (const auto& [k, v] : e.at("hyperparameters").items())
          entry.spec.hyper[k] = v.get<double>();
      entry.spec.seed = e.contains("seed") ? e.at("seed").get<std::uint64_t>()
                                           : mix_seed(c.seed, idx + 1);
      entry.feature_set = e.value("feature_set", std::string("all"));
      if (entry.feature_set != "all" && entry.feature_set != "demographics")
        throw std::invalid_argument("config: feature_set must be all or demographics");
      if (e.contains("rules"))
        for (const auto& r : e.at("rules"))
          entry.spec.rules.push_back({r.at("attribute").get<std::string>(),
                                      r.at("op").get<std::string>(),
                                      r.at("value").get<double>(),
                                      r.value("weight", 1.0)});
      c.grid.push_back(std::move(entry));
      ++idx;
    }
  }

  // Selection rule.
  {
    nlohmann::json s = j.value("selection", nlohmann::json::object());
    c.selection.k_pct = s.value("k_pct", clinic ? 10.0 : 1.0);
    c.selection.regret_band = s.value("regret_band", 0.05);
    c.selection.last_n_periods = s.value("last_n_periods", 5);
  }

  // Audit.
  {
    nlohmann::json a = j.value("audit", nlohmann::json::object());
    if (a.contains("attributes"))
      c.audit.attributes = a.at("attributes").get<std::vector<std::string>>();
    if (a.contains("reference_groups"))
      for (const auto& [k, v] : a.at("reference_groups").items())
        c.audit.reference_groups[k] = v.get<std::string>();
    c.audit.min_group_size = a.value("min_group_size", std::size_t{25});
    if (a.contains("band")) {
      c.audit.band_lo = a.at("band").at(0).get<double>();
      c.audit.band_hi = a.at("band").at(1).get<double>();
    }
  }

  c.report_k_grid = j.value(
      "report_k_grid", std::vector<double>{0.5, 1, 2, 5, 10, 15, 20, 30, 50, 75, 100});

  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  label.validate();
  temporal.validate();
  features.validate();
  if (grid.empty()) throw std::invalid_argument("config: learner grid is empty");
  for (const GridEntry& e : grid) e.spec.validate();
  if (!(selection.k_pct > 0.0) || selection.k_pct > 100.0)
    throw std::invalid_argument("config: selection.k_pct must lie in (0, 100]");
  if (selection.regret_band < 0.0)
    throw std::invalid_argument("config: selection.regret_band must be >= 0");
  if (selection.last_n_periods < 1)
    throw std::invalid_argument("config: selection.last_n_periods must be >= 1");
  if (audit.band_lo > audit.band_hi)
    throw std::invalid_argument("config: audit band is inverted");
  for (double k : report_k_grid)
    if (!(k > 0.0) || k > 100.0)
      throw std::invalid_argument("config: report_k_grid values must lie in (0, 100]");
  if (synthetic && synthetic->n_entities < 1)
    throw std::invalid_argument("config: synthetic.n_entities must be >= 1");
  if (roster_lookback_days < 1)
    throw std::invalid_argument("config: roster_lookback_days must be >= 1");
}

nlohmann::json ExperimentConfig::canonical() const {
  nlohmann::json j;
  j["scenario"] = scenario;
  j["seed"] = seed;
  nlohmann::json data;
  if (synthetic) {
    nlohmann::json s;
    s["n_entities"] = synthetic->n_entities;
    s["start"] = synthetic->date_range.start.to_string();
    s["end"] = synthetic->date_range.end.to_string();
    s["base_dropout_rate"] = synthetic->base_dropout_rate;
    nlohmann::json sig = nlohmann::json::array();
    for (const SignalTerm& t :
         synthetic->dropout_signal.empty() ? default_dropout_signal()
                                           : synthetic->dropout_signal)
      sig.push_back({{"feature", t.feature}, {"weight", t.weight}});
    s["dropout_signal"] = std::move(sig);
    if (synthetic->group_bias)
      s["group_bias"] = {{"attribute", synthetic->group_bias->attribute},
                         {"group", synthetic->group_bias->group},
                         {"multiplier", synthetic->group_bias->multiplier}};
    data["synthetic"] = std::move(s);
  } else {
    data["entities"] = entities_path;
    data["events"] = events_path;
    if (!zip_attributes_path.empty()) data["zip_attributes"] = zip_attributes_path;
  }
  j["data"] = std::move(data);
  j["label"] = label_to_json(label);
  j["temporal"] = temporal_to_json(temporal);
  j["features"] = features_to_json(features);
  j["roster_lookback_days"] = roster_lookback_days;
  j["grid"] = grid_to_json(grid);
  j["selection"] = {{"k_pct", selection.k_pct},
                    {"regret_band", selection.regret_band},
                    {"last_n_periods", selection.last_n_periods}};
  nlohmann::json audit_j;
  audit_j["attributes"] = audit.attributes;
  audit_j["reference_groups"] = audit.reference_groups;
  audit_j["min_group_size"] = audit.min_group_size;
  audit_j["band"] = {audit.band_lo, audit.band_hi};
  j["audit"] = std::move(audit_j);
  j["report_k_grid"] = report_k_grid;
  return j;
}

std::string run_id_for(const ExperimentConfig& config) {
  return hex64(fnv1a64(config.canonical().dump() + "|" + kCodeVersion));
}

// --- run store helpers ---------------------------------------------------------

std::string marker_path(const std::string& run_dir, const std::string& stage) {
  return run_dir + "/stages/" + stage + ".done";
}

bool stage_done(const std::string& run_dir, const std::string& stage) {
  return fs::exists(marker_path(run_dir, stage));
}

void mark_stage(const std::string& run_dir, const std::string& stage) {
  fs::create_directories(run_dir + "/stages");
  std::ofstream out(marker_path(run_dir, stage));
  out << stage << '\n';
}

void require_stage(const std::string& run_dir, const std::string& stage) {
  if (!stage_done(run_dir, stage))
    throw std::runtime_error("run at " + run_dir + " is incomplete: stage '" + stage +
                             "' has not completed");
}

ExperimentConfig load_run_config(const std::string& run_dir) {
  std::ifstream in(run_dir + "/config.json");
  if (!in) throw std::runtime_error("no config.json under " + run_dir);
  nlohmann::json j;
  in >> j;
  ExperimentConfig c = ExperimentConfig::from_json(j);
  // canonical() drops output_dir; the run directory itself is authoritative.
  c.output_dir = fs::path(run_dir).parent_path().string();
  return c;
}

EventLog load_run_log(const std::string& run_dir, const ExperimentConfig& config) {
  EventLog log =
      config.synthetic
          ? ingest_csv(run_dir + "/data/entities.csv", run_dir + "/data/events.csv")
          : ingest_csv(config.entities_path, config.events_path);
  // Ingest infers its range from the events present, but observation coverage
  // is declared by the run: a quiet final week is still observed time. Restore
  // the declared window so outcome-observability checks see true coverage.
  DateRange coverage = log.date_range();
  if (config.synthetic) {
    coverage = config.synthetic->date_range;
  } else {
    coverage.start = std::min(coverage.start, config.temporal.feature_start);
    coverage.end = std::max(coverage.end, config.temporal.data_end);
  }
  return EventLog::build(log.entities(), log.events(), coverage);
}

void write_model_index(const std::vector<ModelIndexRow>& rows, const std::string& run_dir) {
  CsvWriter w(run_dir + "/models/index.csv");
  w.write_row({"split_id", "model_group", "feature_set", "file"});
  for (const ModelIndexRow& r : rows)
    w.write_row({std::to_string(r.split_id), r.model_group, r.feature_set, r.file});
}

std::vector<ModelIndexRow> read_model_index(const std::string& run_dir) {
  CsvReader reader(run_dir + "/models/index.csv");
  reader.require_header({"split_id", "model_group", "feature_set", "file"});
  std::vector<ModelIndexRow> rows;
  std::vector<std::string> row;
  while (reader.next(row))
    rows.push_back({std::stoi(row[0]), row[1], row[2], row[3]});
  return rows;
}

std::string selected_group(const std::string& run_dir) {
  CsvReader reader(run_dir + "/selection.csv");
  std::vector<std::string> row;
  std::size_t group_col = reader.column("model_group");
  std::size_t rank_col = reader.column("rank");
  while (reader.next(row))
    if (row[rank_col] == "1") return row[group_col];
  throw std::runtime_error(run_dir + "/selection.csv has no rank-1 model group");
}

std::string sanitize_filename(const std::string& name) {
  std::string out;
  out.reserve(name.size());
  for (char c : name) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
              c == '-' || c == '.' || c == '_';
    out += ok ? c : '_';
  }
  return out;
}

std::vector<Date> roster_ticks(const TemporalConfig& temporal, DateRange period) {
  // Monthly (or configured-frequency) lattice anchored at feature_start, so
  // every split's as-of dates line up across the whole experiment.
  std::vector<Date> ticks;
  for (int m = 0;; m += temporal.update_frequency_months) {
    Date tick = temporal.feature_start.plus_months(m);
    if (tick > period.end) break;
    if (tick >= period.start) ticks.push_back(tick);
  }
  return ticks;
}

std::vector<PredictionPoint> cohort_for_period(const ExperimentConfig& config,
                                               const EventLog& log, DateRange period) {
  if (config.scenario == "clinic") return build_clinic_cohort(log, period);
  std::vector<PredictionPoint> points;
  for (Date tick : roster_ticks(config.temporal, period)) {
    std::vector<PredictionPoint> t =
        build_roster_cohort(log, tick, config.roster_lookback_days);
    points.insert(points.end(), t.begin(), t.end());
  }
  return points;
}

FeatureConfig feature_config_for_set(const ExperimentConfig& config,
                                     const std::string& feature_set) {
  if (feature_set == "all") return config.features;
  FeatureConfig demo;  // entity attributes only: the restricted expert model
  demo.entity_categoricals = config.features.entity_categoricals;
  demo.entity_numerics = config.features.entity_numerics;
  return demo;
}

void attach_zip_attributes(ExperimentConfig& config, const std::string& run_dir) {
  std::string zip_path = config.synthetic ? run_dir + "/data/zip_attributes.csv"
                                          : config.zip_attributes_path;
  if (!zip_path.empty() && fs::exists(zip_path))
    config.features.zip_attributes = ZipAttributeTable::load(zip_path);
}

// --- encoder serialization -----------------------------------------------------

nlohmann::json encoder_to_json(const EncoderState& e) {
  nlohmann::json j;
  j["impute_constants"] = e.impute_constants;
  j["vocabularies"] = e.vocabularies;
  j["degenerate_columns"] = e.degenerate_columns;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [id, days] : e.fitted_rows) rows.push_back({id, days});
  j["fitted_rows"] = std::move(rows);
  return j;
}

EncoderState encoder_from_json(const nlohmann::json& j) {
  EncoderState e;
  for (const auto& [k, v] : j.at("impute_constants").items())
    e.impute_constants[k] = v.get<double>();
  for (const auto& [k, v] : j.at("vocabularies").items())
    e.vocabularies[k] = v.get<std::vector<std::string>>();
  e.degenerate_columns = j.at("degenerate_columns").get<std::vector<std::string>>();
  for (const auto& row : j.at("fitted_rows"))
    e.fitted_rows.emplace_back(row.at(0).get<std::string>(), row.at(1).get<std::int32_t>());
  return e;
}

// --- the run driver --------------------------------------------------------------

namespace {

struct SplitComputation {
  std::vector<EvaluationRecord> evaluations;
  std::vector<AuditRow> audits;
  std::vector<ModelIndexRow> model_files;
  std::vector<std::string> messages;  // notices/warnings for the log
};

// Fits, scores, evaluates and audits the whole grid on one split.
SplitComputation process_split(const ExperimentConfig& config, const EventLog& log,
                               const TimeSplit& split, const RunOptions& options,
                               const std::string& run_dir) {
  SplitComputation result;
  const std::string split_dir = run_dir + "/split_" + std::to_string(split.split_id);
  fs::create_directories(split_dir);

  // Cohorts and labels.
  LabelMatrix train_y =
      build_label_matrix(cohort_for_period(config, log, split.train_period), log,
                         config.label);
  LabelMatrix test_y = build_label_matrix(cohort_for_period(config, log, split.test_period),
                                          log, config.label);
  if (train_y.rows.empty())
    throw std::runtime_error("split " + std::to_string(split.split_id) +
                             ": empty training cohort");
  if (test_y.rows.empty())
    throw std::runtime_error("split " + std::to_string(split.split_id) +
                             ": empty test cohort");
  export_label_matrix(train_y, split_dir + "/train_labels.csv");
  export_label_matrix(test_y, split_dir + "/test_labels.csv");

  // Feature matrices per feature set in use.
  std::set<std::string> sets;
  for (const GridEntry& e : config.grid) sets.insert(e.feature_set);
  struct SetArtifacts {
    FeatureConfig features;
    EncoderState encoder;
    FeatureMatrix train_X, test_X;
  };
  std::map<std::string, SetArtifacts> per_set;
  for (const std::string& set_name : sets) {
    SetArtifacts art;
    art.features = feature_config_for_set(config, set_name);
    art.encoder = fit_encoders(art.features, train_y.rows, log);
    art.train_X = build_feature_matrix(art.features, train_y.rows, log, art.encoder);
    art.test_X = build_feature_matrix(art.features, test_y.rows, log, art.encoder);

    const std::string suffix = set_name == "all" ? "" : "_" + set_name;
    std::ofstream enc(split_dir + "/encoder" + suffix + ".json");
    enc << encoder_to_json(art.encoder).dump(1) << '\n';
    export_feature_matrix(art.train_X, split_dir + "/train_matrix" + suffix + ".csv");
    export_feature_matrix(art.test_X, split_dir + "/test_matrix" + suffix + ".csv");

    // Leakage audit before any model sees the matrices.
    SplitArtifacts sa;
    sa.split = &split;
    sa.log = &log;
    sa.features = &art.features;
    sa.encoder = &art.encoder;
    sa.train_X = &art.train_X;
    sa.train_y = &train_y;
    sa.test_X = &art.test_X;
    sa.test_y = &test_y;
    sa.label_window_days = config.label.window_days;
    sa.recompute_sample = 150;
    std::vector<LeakageFinding> findings = check_leakage(sa);
    for (const LeakageFinding& f : findings) {
      std::string line = "leakage: split " + std::to_string(split.split_id) +
                         " feature_set " + set_name + ": " + f.detail;
      if (options.strict_leakage)
        throw std::runtime_error(line);
      result.messages.push_back("warning: " + line);
    }
    per_set[set_name] = std::move(art);
  }

  // Fit + evaluate + audit each grid entry; independent, so the worker pool
  // just carves up the entry list.
  fs::create_directories(run_dir + "/models/split_" + std::to_string(split.split_id));
  const std::size_t n_entries = config.grid.size();
  std::vector<SplitComputation> partial(n_entries);
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(n_entries);

  auto worker = [&]() {
    for (std::size_t i = next.fetch_add(1); i < n_entries; i = next.fetch_add(1)) {
      const GridEntry& entry = config.grid[i];
      try {
        const SetArtifacts& art = per_set.at(entry.feature_set);
        DataView train_view{&art.train_X, &log};
        DataView test_view{&art.test_X, &log};
        TrainedModel model = fit_model(entry.spec, train_view, train_y.labels,
                                       split.split_id);
        if (const auto* lm = std::get_if<LogisticModel>(&model.state); lm && !lm->converged)
          partial[i].messages.push_back(
              "warning: " + entry.group_id() + " split " + std::to_string(split.split_id) +
              ": gradient descent stopped after " + std::to_string(lm->iterations) +
              " iterations without reaching tolerance; keeping best iterate");

        const std::string file = "models/split_" + std::to_string(split.split_id) + "/" +
                                 sanitize_filename(entry.group_id()) + ".json";
        model.save(run_dir + "/" + file);
        partial[i].model_files.push_back(
            {split.split_id, entry.group_id(), entry.feature_set, file});

        EvaluationRecord rec =
            evaluate_split(model, test_view, test_y.labels, config.selection,
                           config.report_k_grid);
        rec.model_group = entry.group_id();
        rec.split_id = split.split_id;
        partial[i].evaluations.push_back(rec);

        std::vector<double> scores = score_model(model, test_view);
        std::vector<std::uint8_t> flagged(scores.size(), 0);
        for (std::size_t f :
             flagged_indices(scores, art.test_X.rows, config.selection.k_pct))
          flagged[f] = 1;
        AuditReport audit = audit_model(flagged, test_y.labels, art.test_X.rows, log,
                                        config.audit, entry.group_id(), split.split_id);
        partial[i].audits = std::move(audit.rows);
        for (const std::string& n : audit.notices)
          partial[i].messages.push_back("notice: " + entry.group_id() + " split " +
                                        std::to_string(split.split_id) + ": " + n);
        for (const std::string& w : audit.warnings)
          partial[i].messages.push_back("warning: " + entry.group_id() + " split " +
                                        std::to_string(split.split_id) + ": " + w);
      } catch (const std::exception& e) {
        errors[i] = entry.group_id() + ": " + e.what();
      }
    }
  };

  int jobs = std::max(1, options.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::string& err : errors)
    if (!err.empty())
      throw std::runtime_error("split " + std::to_string(split.split_id) + ": " + err);

  for (SplitComputation& p : partial) {
    result.evaluations.insert(result.evaluations.end(), p.evaluations.begin(),
                              p.evaluations.end());
    result.audits.insert(result.audits.end(), p.audits.begin(), p.audits.end());
    result.model_files.insert(result.model_files.end(), p.model_files.begin(),
                              p.model_files.end());
    result.messages.insert(result.messages.end(), p.messages.begin(), p.messages.end());
  }
  return result;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  const std::string run_id = run_id_for(config);
  const std::string run_dir = config.output_dir + "/run_" + run_id;
  fs::create_directories(run_dir);

  {
    std::ofstream cfg(run_dir + "/config.json");
    cfg << config.canonical().dump(1) << '\n';
  }

  auto stage = [&](const std::string& name, auto&& body) {
    if (stage_done(run_dir, name)) {
      append_log(run_dir, "stage " + name + ": cached");
      return;
    }
    append_log(run_dir, "stage " + name + ": start");
    try {
      body();
    } catch (const std::exception& e) {
      append_log(run_dir, "stage " + name + ": failed: " + e.what());
      throw std::runtime_error("stage " + name + ": " + e.what());
    }
    mark_stage(run_dir, name);
    append_log(run_dir, "stage " + name + ": done");
  };

  // Data.
  stage("data", [&] {
    if (!config.synthetic) {
      // File-backed data stays in place; just verify it loads.
      ingest_csv(config.entities_path, config.events_path);
      return;
    }
    fs::create_directories(run_dir + "/data");
    auto [log, truth] = generate_synthetic_cohort(*config.synthetic);
    export_csv(log, run_dir + "/data/entities.csv", run_dir + "/data/events.csv");
    export_ground_truth(truth, run_dir + "/data/ground_truth.csv");
    export_zip_attributes(log, mix_seed(config.seed, 0x5a49),
                          run_dir + "/data/zip_attributes.csv");
  });

  EventLog log = load_run_log(run_dir, config);

  // Attach the zip side table (generated for synthetic data, configured path
  // otherwise) so spatial aggregates and area-level numerics resolve.
  ExperimentConfig resolved = config;
  attach_zip_attributes(resolved, run_dir);

  // Splits.
  std::vector<TimeSplit> splits;
  stage("splits", [&] {
    splits = generate_splits(resolved.temporal);
    export_splits(splits, run_dir + "/splits.csv");
  });
  if (splits.empty())
    splits = import_splits(run_dir + "/splits.csv", resolved.temporal.label_window_days);

  // Modeling: the per-split loop covering cohorts, labels, features, leakage,
  // fits, evaluations and audits.
  std::vector<EvaluationRecord> evaluations;
  std::vector<AuditRow> audits;
  stage("modeling", [&] {
    std::vector<ModelIndexRow> index;
    for (const TimeSplit& split : splits) {
      SplitComputation sc = process_split(resolved, log, split, options, run_dir);
      evaluations.insert(evaluations.end(), sc.evaluations.begin(), sc.evaluations.end());
      audits.insert(audits.end(), sc.audits.begin(), sc.audits.end());
      index.insert(index.end(), sc.model_files.begin(), sc.model_files.end());
      for (const std::string& m : sc.messages) {
        append_log(run_dir, m);
        std::cerr << m << '\n';
      }
    }
    export_evaluations(evaluations, run_dir + "/evaluations.csv");
    export_audits(audits, run_dir + "/audits.csv");
    write_model_index(index, run_dir);
  });
  if (evaluations.empty()) evaluations = import_evaluations(run_dir + "/evaluations.csv");
  if (audits.empty()) audits = import_audits(run_dir + "/audits.csv");

  // Joint performance + fairness selection.
  JointSelection selection;
  stage("select", [&] {
    selection = joint_select(evaluations, audits, resolved.selection, resolved.audit);
    CsvWriter w(run_dir + "/selection.csv");
    w.write_row({"rank", "model_group", "in_parity_band", "rationale"});
    std::set<std::string> in_band(selection.in_band_groups.begin(),
                                  selection.in_band_groups.end());
    for (std::size_t i = 0; i < selection.ranked.size(); ++i)
      w.write_row({std::to_string(i + 1), selection.ranked[i],
                   in_band.count(selection.ranked[i]) ? "true" : "false",
                   selection.rationale});
    if (selection.disparity_warning)
      std::cerr << "warning: " << selection.rationale << '\n';
  });
  if (selection.ranked.empty())
    selection = joint_select(evaluations, audits, resolved.selection, resolved.audit);

  stage("report", [&] { emit_report(run_dir); });

  return {run_id, run_dir, selection};
}

}  // namespace retain
