#include "retain/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "retain/csv.hpp"

namespace retain {

int window_days(AggWindow w) {
  switch (w) {
    case AggWindow::d183: return 183;
    case AggWindow::d365: return 365;
    case AggWindow::d1095: return 1095;
    case AggWindow::all_history: return 0;
  }
  return 0;
}

std::string_view to_string(AggQuantity q) {
  return q == AggQuantity::count ? "count" : "numeric_value";
}

std::string_view to_string(AggFunction f) {
  switch (f) {
    case AggFunction::count: return "count";
    case AggFunction::mean: return "mean";
    case AggFunction::min: return "min";
    case AggFunction::max: return "max";
    case AggFunction::stddev: return "stddev";
    case AggFunction::days_since_last: return "days_since_last";
  }
  return "";
}

std::string_view to_string(AggWindow w) {
  switch (w) {
    case AggWindow::d183: return "183d";
    case AggWindow::d365: return "365d";
    case AggWindow::d1095: return "1095d";
    case AggWindow::all_history: return "all";
  }
  return "";
}

std::string AggregateSpec::name() const {
  std::string n;
  n += to_string(source);
  n += '_';
  n += to_string(quantity);
  n += '_';
  n += to_string(function);
  n += '_';
  n += to_string(window);
  if (spatial == SpatialGroup::zip_code) n += "_zip";
  return n;
}

void AggregateSpec::validate() const {
  const bool count_fn = function == AggFunction::count;
  const bool count_q = quantity == AggQuantity::count;
  if (count_fn != count_q && function != AggFunction::days_since_last)
    throw std::invalid_argument("aggregate '" + name() +
                                "': function=count requires quantity=count and vice versa");
}

void FeatureConfig::validate() const {
  for (const auto& spec : aggregates) spec.validate();
  for (const auto& attr : entity_categoricals)
    if (attr != "gender" && attr != "race" && attr != "transmission_category" &&
        attr != "zip_code")
      throw std::invalid_argument("unknown categorical attribute '" + attr + "'");
  for (const auto& attr : entity_numerics)
    if (attr != "age_years" && attr != "days_since_diagnosis")
      throw std::invalid_argument("unknown numeric attribute '" + attr + "'");
}

ZipAttributeTable ZipAttributeTable::load(const std::string& path) {
  CsvReader reader(path);
  ZipAttributeTable table;
  if (reader.header().empty() || reader.header()[0] != "zip_code")
    throw CsvError(path + ": first column must be zip_code");
  table.columns.assign(reader.header().begin() + 1, reader.header().end());
  std::vector<std::string> row;
  while (reader.next(row)) {
    if (row.size() != table.columns.size() + 1)
      throw CsvError(path + ":" + std::to_string(reader.line()) + ": wrong field count");
    std::vector<double> vals;
    for (std::size_t i = 1; i < row.size(); ++i) {
      try {
        vals.push_back(std::stod(row[i]));
      } catch (const std::exception&) {
        throw CsvError(path + ":" + std::to_string(reader.line()) + ": column '" +
                       table.columns[i - 1] + "': not a number: '" + row[i] + "'");
      }
    }
    table.by_zip[row[0]] = std::move(vals);
  }
  return table;
}

FeatureConfig default_feature_config() {
  FeatureConfig cfg;
  using E = EventType;
  using Q = AggQuantity;
  using F = AggFunction;
  using W = AggWindow;
  auto add = [&](E src, Q q, F f, W w, SpatialGroup s = SpatialGroup::none) {
    cfg.aggregates.push_back({src, q, f, w, s});
  };

  for (W w : {W::d183, W::d365, W::d1095, W::all_history})
    add(E::hiv_visit, Q::count, F::count, w);
  add(E::hiv_visit, Q::count, F::days_since_last, W::d365);
  add(E::hiv_visit, Q::count, F::days_since_last, W::all_history);
  add(E::hiv_visit, Q::count, F::count, W::d365, SpatialGroup::zip_code);

  add(E::other_visit, Q::count, F::count, W::d365);

  for (W w : {W::d365, W::d1095}) {
    add(E::viral_load_test, Q::numeric_value, F::mean, w);
    add(E::viral_load_test, Q::numeric_value, F::min, w);
    add(E::viral_load_test, Q::numeric_value, F::max, w);
    add(E::viral_load_test, Q::numeric_value, F::stddev, w);
  }
  add(E::viral_load_test, Q::count, F::count, W::d365);
  add(E::viral_load_test, Q::count, F::days_since_last, W::all_history);

  add(E::cd4_test, Q::numeric_value, F::mean, W::d365);
  add(E::cd4_test, Q::numeric_value, F::min, W::d1095);
  add(E::cd4_test, Q::numeric_value, F::stddev, W::d1095);
  add(E::cd4_test, Q::count, F::count, W::d365);

  add(E::diagnosis, Q::count, F::count, W::d365);
  add(E::diagnosis, Q::count, F::count, W::all_history);
  add(E::medication, Q::count, F::count, W::d365);
  add(E::medication, Q::count, F::count, W::all_history);
  add(E::medication, Q::count, F::days_since_last, W::all_history);
  add(E::opportunistic_infection, Q::count, F::count, W::d365);
  add(E::opportunistic_infection, Q::count, F::count, W::all_history);

  cfg.entity_categoricals = {"gender", "race", "transmission_category"};
  cfg.entity_numerics = {"age_years", "days_since_diagnosis"};
  return cfg;
}

// ---------------------------------------------------------------------------
// Aggregation

namespace {

struct Accumulator {
  int count = 0;
  int with_value = 0;
  double sum = 0.0, sum_sq = 0.0;
  double vmin = 0.0, vmax = 0.0;
  std::optional<Date> last_date;

  void add(Date d, const std::optional<double>& value) {
    ++count;
    if (!last_date || *last_date < d) last_date = d;
    if (value) {
      if (with_value == 0) {
        vmin = vmax = *value;
      } else {
        vmin = std::min(vmin, *value);
        vmax = std::max(vmax, *value);
      }
      ++with_value;
      sum += *value;
      sum_sq += *value * *value;
    }
  }

  std::optional<double> finish(const AggregateSpec& spec, Date as_of, bool join_known) const {
    switch (spec.function) {
      case AggFunction::count:
        if (spec.spatial == SpatialGroup::zip_code && !join_known) return std::nullopt;
        return static_cast<double>(count);
      case AggFunction::mean:
        if (with_value == 0) return std::nullopt;
        return sum / with_value;
      case AggFunction::min:
        if (with_value == 0) return std::nullopt;
        return vmin;
      case AggFunction::max:
        if (with_value == 0) return std::nullopt;
        return vmax;
      case AggFunction::stddev: {
        if (with_value < 2) return std::nullopt;
        double mean = sum / with_value;
        double var = (sum_sq - with_value * mean * mean) / (with_value - 1);
        return std::sqrt(std::max(0.0, var));
      }
      case AggFunction::days_since_last:
        if (!last_date) return std::nullopt;
        return static_cast<double>(as_of - *last_date);
    }
    return std::nullopt;
  }
};

bool in_window(const AggregateSpec& spec, Date event_date, Date as_of) {
  if (event_date > as_of) return false;
  int w = window_days(spec.window);
  return w == 0 || event_date > as_of.plus_days(-w);
}

// True when the value can be missing and therefore carries an _imputed flag.
bool imputable(const AggregateSpec& spec) {
  return spec.function != AggFunction::count || spec.spatial == SpatialGroup::zip_code;
}

std::optional<double> entity_numeric_value(const std::string& attr, const Entity& ent,
                                           Date as_of) {
  if (attr == "age_years") {
    if (!ent.birth_date) return std::nullopt;
    return (as_of - *ent.birth_date) / 365.25;
  }
  if (attr == "days_since_diagnosis") {
    if (!ent.diagnosis_date || *ent.diagnosis_date > as_of) return std::nullopt;
    return static_cast<double>(as_of - *ent.diagnosis_date);
  }
  throw std::invalid_argument("unknown numeric attribute '" + attr + "'");
}

const std::optional<std::string>& categorical_value(const std::string& attr,
                                                    const Entity& ent) {
  if (attr == "gender") return ent.gender;
  if (attr == "race") return ent.race;
  if (attr == "transmission_category") return ent.transmission_category;
  if (attr == "zip_code") return ent.zip_code;
  throw std::invalid_argument("unknown categorical attribute '" + attr + "'");
}

// Precomputed (date, value) series per zip code for one event type, so
// spatial aggregates cost a binary search per row instead of a log scan.
struct ZipSeries {
  std::vector<std::int32_t> dates;
  std::vector<std::optional<double>> values;
};

std::map<std::string, ZipSeries> index_by_zip(const EventLog& log, EventType type) {
  std::map<std::string, const Entity*> zip_of;
  for (const Entity& e : log.entities()) zip_of[e.entity_id] = &e;
  std::map<std::string, std::vector<std::pair<std::int32_t, std::optional<double>>>> tmp;
  for (const Event& e : log.events()) {
    if (e.type != type) continue;
    const Entity* ent = zip_of.at(e.entity_id);
    if (!ent->zip_code) continue;
    tmp[*ent->zip_code].push_back({e.date.epoch_days(), e.numeric_value});
  }
  std::map<std::string, ZipSeries> out;
  for (auto& [zip, rows] : tmp) {
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    ZipSeries s;
    for (auto& [d, v] : rows) {
      s.dates.push_back(d);
      s.values.push_back(v);
    }
    out[zip] = std::move(s);
  }
  return out;
}

}  // namespace

std::optional<double> compute_aggregate(const AggregateSpec& spec, const EventLog& log,
                                        const PredictionPoint& point) {
  spec.validate();
  Accumulator acc;
  bool join_known = true;
  if (spec.spatial == SpatialGroup::zip_code) {
    const Entity* ent = log.find_entity(point.entity_id);
    if (!ent || !ent->zip_code) {
      join_known = false;
    } else {
      const std::string& zip = *ent->zip_code;
      for (const Event& e : log.events()) {
        if (e.type != spec.source || !in_window(spec, e.date, point.as_of)) continue;
        const Entity* other = log.find_entity(e.entity_id);
        if (other && other->zip_code && *other->zip_code == zip) acc.add(e.date, e.numeric_value);
      }
    }
  } else {
    for (const Event& e : log.events_for(point.entity_id))
      if (e.type == spec.source && in_window(spec, e.date, point.as_of))
        acc.add(e.date, e.numeric_value);
  }
  return acc.finish(spec, point.as_of, join_known);
}

// ---------------------------------------------------------------------------
// Encoder fitting

bool EncoderState::fitted_on(const PredictionPoint& p) const {
  for (const auto& [id, days] : fitted_rows)
    if (days == p.as_of.epoch_days() && id == p.entity_id) return true;
  return false;
}

namespace {

// Raw (pre-imputation) numeric feature values for one row, keyed by column.
// Shared by fitting and matrix building so both sides agree exactly.
struct RawRowComputer {
  const FeatureConfig& config;
  const EventLog& log;
  std::map<EventType, std::map<std::string, ZipSeries>> zip_index;

  explicit RawRowComputer(const FeatureConfig& cfg, const EventLog& lg)
      : config(cfg), log(lg) {
    for (const auto& spec : cfg.aggregates)
      if (spec.spatial == SpatialGroup::zip_code && !zip_index.contains(spec.source))
        zip_index[spec.source] = index_by_zip(lg, spec.source);
  }

  std::optional<double> aggregate(const AggregateSpec& spec, const PredictionPoint& p,
                                  const Entity& ent) const {
    Accumulator acc;
    bool join_known = true;
    if (spec.spatial == SpatialGroup::zip_code) {
      if (!ent.zip_code) {
        join_known = false;
      } else {
        const auto& series_by_zip = zip_index.at(spec.source);
        auto it = series_by_zip.find(*ent.zip_code);
        if (it != series_by_zip.end()) {
          const ZipSeries& s = it->second;
          const int w = window_days(spec.window);
          const std::int32_t hi = p.as_of.epoch_days();
          const std::int32_t lo =
              w == 0 ? std::numeric_limits<std::int32_t>::min() : hi - w + 1;
          auto begin = std::lower_bound(s.dates.begin(), s.dates.end(), lo);
          auto end_it = std::upper_bound(s.dates.begin(), s.dates.end(), hi);
          for (auto d = begin; d != end_it; ++d)
            acc.add(Date(*d), s.values[d - s.dates.begin()]);
        }
      }
    } else {
      for (const Event& e : log.events_for(p.entity_id))
        if (e.type == spec.source && in_window(spec, e.date, p.as_of))
          acc.add(e.date, e.numeric_value);
    }
    return acc.finish(spec, p.as_of, join_known);
  }

  // Visits every imputable numeric column with its raw (possibly missing) value.
  template <typename Fn>
  void visit_numeric(const PredictionPoint& p, Fn&& fn) const {
    const Entity* ent = log.find_entity(p.entity_id);
    if (!ent)
      throw std::runtime_error("prediction point references unknown entity '" + p.entity_id +
                               "'");
    for (const auto& spec : config.aggregates) {
      std::optional<double> v = aggregate(spec, p, *ent);
      fn(spec.name(), v, imputable(spec));
    }
    for (const auto& attr : config.entity_numerics)
      fn(attr, entity_numeric_value(attr, *ent, p.as_of), true);
    if (config.zip_attributes) {
      const ZipAttributeTable& table = *config.zip_attributes;
      const std::vector<double>* joined = nullptr;
      if (ent->zip_code) {
        auto it = table.by_zip.find(*ent->zip_code);
        if (it != table.by_zip.end()) joined = &it->second;
      }
      for (std::size_t i = 0; i < table.columns.size(); ++i)
        fn("zip_" + table.columns[i],
           joined ? std::optional<double>((*joined)[i]) : std::nullopt, true);
    }
  }
};

}  // namespace

EncoderState fit_encoders(const FeatureConfig& config,
                          std::span<const PredictionPoint> train_rows, const EventLog& log) {
  config.validate();
  if (train_rows.empty()) throw std::invalid_argument("cannot fit encoders on zero rows");

  RawRowComputer computer(config, log);
  std::map<std::string, std::pair<double, int>> sums;  // column -> (sum, n_defined)
  std::map<std::string, bool> imputable_col;
  std::map<std::string, std::vector<std::string>> vocab_sets;

  for (const PredictionPoint& p : train_rows) {
    computer.visit_numeric(p, [&](const std::string& col, std::optional<double> v, bool imp) {
      imputable_col[col] = imp;
      auto& [sum, n] = sums[col];
      if (v) {
        sum += *v;
        ++n;
      }
    });
    const Entity* ent = log.find_entity(p.entity_id);
    for (const auto& attr : config.entity_categoricals) {
      const auto& val = categorical_value(attr, *ent);
      if (val) vocab_sets[attr].push_back(*val);
    }
  }

  EncoderState state;
  for (const auto& [col, agg] : sums) {
    if (!imputable_col[col]) continue;
    const auto& [sum, n] = agg;
    if (n == 0) {
      state.impute_constants[col] = 0.0;
      state.degenerate_columns.push_back(col);
    } else {
      state.impute_constants[col] = sum / n;
    }
  }
  for (const auto& attr : config.entity_categoricals) {
    auto& vals = vocab_sets[attr];
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    state.vocabularies[attr] = vals;
  }
  state.fitted_rows.reserve(train_rows.size());
  for (const PredictionPoint& p : train_rows)
    state.fitted_rows.push_back({p.entity_id, p.as_of.epoch_days()});
  return state;
}

// ---------------------------------------------------------------------------
// Matrix assembly

std::size_t FeatureMatrix::column_index(const std::string& name) const {
  auto it = std::lower_bound(columns.begin(), columns.end(), name);
  if (it == columns.end() || *it != name)
    throw std::out_of_range("no feature column named '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

FeatureMatrix build_feature_matrix(const FeatureConfig& config,
                                   std::span<const PredictionPoint> rows, const EventLog& log,
                                   const EncoderState& encoder) {
  config.validate();
  RawRowComputer computer(config, log);

  // Column universe: numeric columns + their _imputed flags + one-hots.
  std::vector<std::string> columns;
  std::vector<std::string> numeric_cols;
  {
    std::map<std::string, bool> imp;
    for (const auto& spec : config.aggregates) imp[spec.name()] = imputable(spec);
    for (const auto& attr : config.entity_numerics) imp[attr] = true;
    if (config.zip_attributes)
      for (const auto& c : config.zip_attributes->columns) imp["zip_" + c] = true;
    for (const auto& [col, i] : imp) {
      numeric_cols.push_back(col);
      columns.push_back(col);
      if (i) columns.push_back(col + "_imputed");
    }
  }
  for (const auto& attr : config.entity_categoricals) {
    auto it = encoder.vocabularies.find(attr);
    if (it == encoder.vocabularies.end())
      throw std::runtime_error("encoder has no vocabulary for categorical '" + attr + "'");
    for (const auto& v : it->second) columns.push_back(attr + "_" + v);
    columns.push_back(attr + "_missing");
  }
  std::sort(columns.begin(), columns.end());

  FeatureMatrix m;
  m.columns = columns;
  m.flag_column.assign(columns.size(), 0);
  for (std::size_t c = 0; c < columns.size(); ++c)
    if (columns[c].ends_with("_imputed")) m.flag_column[c] = 1;
  m.rows.assign(rows.begin(), rows.end());
  m.values.assign(rows.size() * columns.size(), 0.0);

  std::map<std::string, std::size_t> col_idx;
  for (std::size_t c = 0; c < columns.size(); ++c) col_idx[columns[c]] = c;

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const PredictionPoint& p = rows[r];
    if (!log.date_range().contains(p.as_of))
      throw std::runtime_error("row as_of " + p.as_of.to_string() +
                               " outside log date range for entity '" + p.entity_id + "'");
    double* out = m.values.data() + r * columns.size();

    computer.visit_numeric(p, [&](const std::string& col, std::optional<double> v, bool imp) {
      if (v) {
        out[col_idx.at(col)] = *v;
      } else {
        auto it = encoder.impute_constants.find(col);
        if (it == encoder.impute_constants.end())
          throw std::runtime_error("encoder has no imputation constant for column '" + col +
                                   "'");
        out[col_idx.at(col)] = it->second;
        out[col_idx.at(col + "_imputed")] = 1.0;
      }
      (void)imp;
    });

    const Entity* ent = log.find_entity(p.entity_id);
    for (const auto& attr : config.entity_categoricals) {
      const auto& val = categorical_value(attr, *ent);
      const auto& vocab = encoder.vocabularies.at(attr);
      bool matched = false;
      if (val) {
        auto it = std::lower_bound(vocab.begin(), vocab.end(), *val);
        if (it != vocab.end() && *it == *val) {
          out[col_idx.at(attr + "_" + *val)] = 1.0;
          matched = true;
        }
      }
      // Missing and unseen-in-training both land on the missing indicator.
      if (!matched) out[col_idx.at(attr + "_missing")] = 1.0;
    }
  }
  return m;
}

void export_feature_matrix(const FeatureMatrix& m, const std::string& path) {
  CsvWriter w(path);
  std::vector<std::string> header = {"entity_id", "as_of"};
  header.insert(header.end(), m.columns.begin(), m.columns.end());
  w.write_row(header);
  std::vector<std::string> row(m.columns.size() + 2);
  for (std::size_t r = 0; r < m.n_rows(); ++r) {
    row[0] = m.rows[r].entity_id;
    row[1] = m.rows[r].as_of.to_string();
    for (std::size_t c = 0; c < m.n_cols(); ++c) row[c + 2] = format_double(m.at(r, c));
    w.write_row(row);
  }
}

}  // namespace retain
