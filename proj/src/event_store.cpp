#include "retain/event_store.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "retain/csv.hpp"
#include "retain/rng.hpp"

namespace retain {

namespace {

constexpr std::string_view kEventTypeNames[] = {
    "hiv_visit",       "other_visit", "viral_load_test",        "cd4_test",
    "diagnosis",       "medication",  "opportunistic_infection",
};

bool event_order(const Event& a, const Event& b) {
  if (a.entity_id != b.entity_id) return a.entity_id < b.entity_id;
  if (a.date != b.date) return a.date < b.date;
  return static_cast<int>(a.type) < static_cast<int>(b.type);
}

}  // namespace

std::string_view to_string(EventType t) { return kEventTypeNames[static_cast<int>(t)]; }

std::optional<EventType> parse_event_type(std::string_view s) {
  for (int i = 0; i < static_cast<int>(std::size(kEventTypeNames)); ++i)
    if (kEventTypeNames[i] == s) return static_cast<EventType>(i);
  return std::nullopt;
}

EventLog EventLog::build(std::vector<Entity> entities, std::vector<Event> events,
                         DateRange range) {
  EventLog log = adopt_unchecked(std::move(entities), std::move(events), range);
  std::stable_sort(log.events_.begin(), log.events_.end(), event_order);
  log.index();

  std::vector<std::string> dangling;
  for (const Event& e : log.events_) {
    if (!log.entity_idx_.contains(e.entity_id)) {
      if (dangling.empty() || dangling.back() != e.entity_id) dangling.push_back(e.entity_id);
    }
  }
  if (!dangling.empty()) {
    std::ostringstream msg;
    msg << "events reference unknown entity ids:";
    for (const auto& id : dangling) msg << " '" << id << "'";
    throw std::runtime_error(msg.str());
  }
  return log;
}

EventLog EventLog::adopt_unchecked(std::vector<Entity> entities, std::vector<Event> events,
                                   DateRange range) {
  EventLog log;
  log.entities_ = std::move(entities);
  log.events_ = std::move(events);
  log.range_ = range;
  std::sort(log.entities_.begin(), log.entities_.end(),
            [](const Entity& a, const Entity& b) { return a.entity_id < b.entity_id; });
  log.index();
  return log;
}

void EventLog::index() {
  entity_idx_.clear();
  spans_.clear();
  for (std::size_t i = 0; i < entities_.size(); ++i) entity_idx_[entities_[i].entity_id] = i;
  std::size_t i = 0;
  while (i < events_.size()) {
    std::size_t j = i;
    while (j < events_.size() && events_[j].entity_id == events_[i].entity_id) ++j;
    spans_[events_[i].entity_id] = {i, j};
    i = j;
  }
}

const Entity* EventLog::find_entity(std::string_view id) const {
  auto it = entity_idx_.find(id);
  return it == entity_idx_.end() ? nullptr : &entities_[it->second];
}

std::span<const Event> EventLog::events_for(std::string_view entity_id) const {
  auto it = spans_.find(entity_id);
  if (it == spans_.end()) return {};
  return std::span<const Event>(events_.data() + it->second.first,
                                it->second.second - it->second.first);
}

EventLog EventLog::shift_dates(int offset_days) const {
  std::vector<Entity> ents = entities_;
  for (Entity& e : ents) {
    if (e.birth_date) e.birth_date = e.birth_date->plus_days(offset_days);
    if (e.diagnosis_date) e.diagnosis_date = e.diagnosis_date->plus_days(offset_days);
  }
  std::vector<Event> evs = events_;
  for (Event& e : evs) e.date = e.date.plus_days(offset_days);
  DateRange r{range_.start.plus_days(offset_days), range_.end.plus_days(offset_days)};
  return build(std::move(ents), std::move(evs), r);
}

// ---------------------------------------------------------------------------
// CSV ingest / export

namespace {

std::optional<std::string> opt_field(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return s;
}

Date parse_date_or_throw(const std::string& s, const CsvReader& r, const std::string& col) {
  auto d = Date::parse(s);
  if (!d)
    throw CsvError(r.path() + ":" + std::to_string(r.line()) + ": column '" + col +
                   "': unparseable date '" + s + "'");
  return *d;
}

std::optional<Date> opt_date(const std::string& s, const CsvReader& r, const std::string& col) {
  if (s.empty()) return std::nullopt;
  return parse_date_or_throw(s, r, col);
}

void expect_width(const std::vector<std::string>& row, std::size_t n, const CsvReader& r) {
  if (row.size() != n)
    throw CsvError(r.path() + ":" + std::to_string(r.line()) + ": expected " +
                   std::to_string(n) + " fields, got " + std::to_string(row.size()));
}

std::string opt_date_str(const std::optional<Date>& d) { return d ? d->to_string() : ""; }
std::string opt_str(const std::optional<std::string>& s) { return s ? *s : ""; }
std::string opt_num(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace

EventLog ingest_csv(const std::string& entities_path, const std::string& events_path) {
  CsvReader ent_reader(entities_path);
  const std::vector<std::string> ent_header = {
      "entity_id", "birth_date",           "gender",        "race",
      "zip_code",  "transmission_category", "diagnosis_date"};
  if (ent_reader.header() != ent_header)
    throw CsvError(entities_path + ": unexpected header; expected entity_id,birth_date,gender,"
                   "race,zip_code,transmission_category,diagnosis_date");

  std::vector<Entity> entities;
  std::vector<std::string> row;
  while (ent_reader.next(row)) {
    expect_width(row, 7, ent_reader);
    if (row[0].empty())
      throw CsvError(entities_path + ":" + std::to_string(ent_reader.line()) +
                     ": column 'entity_id': empty id");
    Entity e;
    e.entity_id = row[0];
    e.birth_date = opt_date(row[1], ent_reader, "birth_date");
    e.gender = opt_field(row[2]);
    e.race = opt_field(row[3]);
    e.zip_code = opt_field(row[4]);
    e.transmission_category = opt_field(row[5]);
    e.diagnosis_date = opt_date(row[6], ent_reader, "diagnosis_date");
    entities.push_back(std::move(e));
  }

  CsvReader ev_reader(events_path);
  const std::vector<std::string> ev_header = {"entity_id", "event_type", "event_date",
                                              "numeric_value", "category_value"};
  if (ev_reader.header() != ev_header)
    throw CsvError(events_path +
                   ": unexpected header; expected entity_id,event_type,event_date,"
                   "numeric_value,category_value");

  std::vector<Event> events;
  Date min_date, max_date;
  bool any = false;
  while (ev_reader.next(row)) {
    expect_width(row, 5, ev_reader);
    Event e;
    e.entity_id = row[0];
    auto type = parse_event_type(row[1]);
    if (!type)
      throw CsvError(events_path + ":" + std::to_string(ev_reader.line()) +
                     ": column 'event_type': unknown type '" + row[1] + "'");
    e.type = *type;
    e.date = parse_date_or_throw(row[2], ev_reader, "event_date");
    if (!row[3].empty()) {
      try {
        std::size_t pos = 0;
        e.numeric_value = std::stod(row[3], &pos);
        if (pos != row[3].size()) throw std::invalid_argument(row[3]);
      } catch (const std::exception&) {
        throw CsvError(events_path + ":" + std::to_string(ev_reader.line()) +
                       ": column 'numeric_value': not a number: '" + row[3] + "'");
      }
    }
    e.category_value = opt_field(row[4]);
    if (!any || e.date < min_date) min_date = e.date;
    if (!any || max_date < e.date) max_date = e.date;
    any = true;
    events.push_back(std::move(e));
  }

  DateRange range = any ? DateRange{min_date, max_date}
                        : DateRange{Date(1970, 1, 1), Date(1970, 1, 1)};
  return EventLog::build(std::move(entities), std::move(events), range);
}

void export_csv(const EventLog& log, const std::string& entities_path,
                const std::string& events_path) {
  CsvWriter ents(entities_path);
  ents.write_row({"entity_id", "birth_date", "gender", "race", "zip_code",
                  "transmission_category", "diagnosis_date"});
  for (const Entity& e : log.entities()) {
    ents.write_row({e.entity_id, opt_date_str(e.birth_date), opt_str(e.gender), opt_str(e.race),
                    opt_str(e.zip_code), opt_str(e.transmission_category),
                    opt_date_str(e.diagnosis_date)});
  }
  CsvWriter evs(events_path);
  evs.write_row({"entity_id", "event_type", "event_date", "numeric_value", "category_value"});
  for (const Event& e : log.events()) {
    evs.write_row({e.entity_id, std::string(to_string(e.type)), e.date.to_string(),
                   opt_num(e.numeric_value), opt_str(e.category_value)});
  }
}

// ---------------------------------------------------------------------------
// Validation

std::size_t ValidationReport::count(ValidationFinding::Kind k) const {
  std::size_t n = 0;
  for (const auto& f : findings)
    if (f.kind == k) ++n;
  return n;
}

ValidationReport validate_event_log(const EventLog& log) {
  ValidationReport report;
  auto add = [&](ValidationFinding::Kind k, std::string detail) {
    report.findings.push_back({k, std::move(detail)});
  };

  const auto& events = log.events();
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (event_order(events[i], events[i - 1]))
      add(ValidationFinding::Kind::unsorted,
          "event " + std::to_string(i) + " out of (entity_id, event_date) order");
  }
  for (const Event& e : events) {
    const Entity* ent = log.find_entity(e.entity_id);
    if (!ent) {
      add(ValidationFinding::Kind::dangling_reference,
          "event references unknown entity '" + e.entity_id + "'");
      continue;
    }
    if (!log.date_range().contains(e.date))
      add(ValidationFinding::Kind::out_of_range,
          "entity '" + e.entity_id + "' event on " + e.date.to_string() +
              " outside log range [" + log.date_range().start.to_string() + ", " +
              log.date_range().end.to_string() + "]");
    if (ent->birth_date && e.date < *ent->birth_date)
      add(ValidationFinding::Kind::before_birth,
          "entity '" + e.entity_id + "' event on " + e.date.to_string() + " precedes birth " +
              ent->birth_date->to_string());
    if (e.numeric_value && *e.numeric_value < 0.0)
      add(ValidationFinding::Kind::negative_value,
          "entity '" + e.entity_id + "' " + std::string(to_string(e.type)) + " on " +
              e.date.to_string() + " has negative value");
    if ((e.type == EventType::viral_load_test || e.type == EventType::cd4_test) &&
        !e.numeric_value)
      add(ValidationFinding::Kind::missing_lab_value,
          "entity '" + e.entity_id + "' " + std::string(to_string(e.type)) + " on " +
              e.date.to_string() + " lacks a numeric value");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Synthetic cohort generation

std::vector<SignalTerm> default_dropout_signal() {
  return {{"low_adherence", 1.6}, {"unsuppressed_viral_load", 0.9}};
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

struct CategoryDist {
  std::vector<std::pair<std::string, double>> categories;  // value, weight
  double missing_prob;

  std::optional<std::string> draw(Rng& rng) const {
    if (rng.bernoulli(missing_prob)) return std::nullopt;
    double total = 0.0;
    for (const auto& [_, w] : categories) total += w;
    double u = rng.uniform() * total;
    for (const auto& [v, w] : categories) {
      if (u < w) return v;
      u -= w;
    }
    return categories.back().first;
  }
};

const CategoryDist kGenderDist{{{"male", 0.72}, {"female", 0.27}}, 0.01};
const CategoryDist kRaceDist{{{"groupA", 0.50}, {"groupB", 0.33}, {"groupC", 0.13}}, 0.04};
const CategoryDist kTransmissionDist{
    {{"sexual_contact", 0.58}, {"percutaneous", 0.20}, {"perinatal", 0.05}, {"other", 0.12}},
    0.05};

// Per-entity latent covariates exposed to the drop-out signal, centered and
// scaled with fixed constants so each entity stays independent of the cohort.
struct Latents {
  double adherence;       // (0, 1), drives visit cadence and suppression
  double suppression_p;   // probability a viral load test comes back < 200
  double mean_gap_days;   // mean days between consecutive HIV visits
  double age_years;

  double covariate(const std::string& name) const {
    if (name == "low_adherence") return (0.63 - adherence) / 0.20;
    if (name == "unsuppressed_viral_load") return (0.55 - suppression_p) / 0.25;
    if (name == "young_age") return (45.0 - age_years) / 15.0;
    if (name == "sparse_visits") return (mean_gap_days - 105.0) / 75.0;
    throw std::runtime_error("unknown dropout_signal feature '" + name +
                             "'; known: low_adherence, unsuppressed_viral_load, young_age, "
                             "sparse_visits");
  }
};

std::string entity_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "E%06d", index);
  return buf;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::pair<EventLog, GroundTruth> generate_synthetic_cohort(const SyntheticConfig& config) {
  if (config.n_entities < 1) throw std::invalid_argument("n_entities must be >= 1");
  if (!config.date_range.valid() || config.date_range.span_days() < 60)
    throw std::invalid_argument("date_range must span at least 60 days");
  const std::vector<SignalTerm> signal =
      config.dropout_signal.empty() ? default_dropout_signal() : config.dropout_signal;
  for (const auto& term : signal)
    if (!std::isfinite(term.weight))
      throw std::invalid_argument("non-finite dropout_signal weight for '" + term.feature + "'");
  if (config.base_dropout_rate <= 0.0 || config.base_dropout_rate >= 1.0)
    throw std::invalid_argument("base_dropout_rate must lie in (0, 1)");

  const Date start = config.date_range.start;
  const Date end = config.date_range.end;
  const int span = config.date_range.span_days();

  std::vector<Entity> entities;
  std::vector<Event> events;
  GroundTruth truth;
  entities.reserve(config.n_entities);
  truth.rows.reserve(config.n_entities);

  for (int i = 0; i < config.n_entities; ++i) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(i)));

    Entity ent;
    ent.entity_id = entity_name(i);
    Latents lat;
    lat.age_years = static_cast<double>(rng.uniform_int(18, 75));
    Date birth = start.plus_days(-static_cast<int>(lat.age_years * 365) -
                                 static_cast<int>(rng.uniform_int(0, 364)));
    ent.birth_date = rng.bernoulli(0.02) ? std::nullopt : std::optional<Date>(birth);
    ent.gender = kGenderDist.draw(rng);
    ent.race = kRaceDist.draw(rng);
    {
      // Zip weights decay with index; a handful of zips dominate.
      int n_zips = 20;
      double total = 0.0;
      for (int z = 1; z <= n_zips; ++z) total += 1.0 / z;
      double u = rng.uniform() * total;
      int zip = n_zips;
      for (int z = 1; z <= n_zips; ++z) {
        if (u < 1.0 / z) {
          zip = z;
          break;
        }
        u -= 1.0 / z;
      }
      char buf[8];
      std::snprintf(buf, sizeof(buf), "Z%02d", zip);
      ent.zip_code = rng.bernoulli(0.03) ? std::nullopt : std::optional<std::string>(buf);
    }
    ent.transmission_category = kTransmissionDist.draw(rng);

    // Entry into care: most of the cohort is prevalent at range start, the
    // rest is diagnosed during the observation window.
    Date diagnosis, entry;
    if (rng.bernoulli(0.7)) {
      diagnosis = start.plus_days(-static_cast<int>(rng.uniform_int(30, 2000)));
      entry = start.plus_days(static_cast<int>(rng.uniform_int(0, 90)));
    } else {
      diagnosis = start.plus_days(static_cast<int>(
          rng.uniform_int(0, std::max(1, static_cast<int>(span * 0.6)))));
      entry = diagnosis.plus_days(static_cast<int>(rng.uniform_int(3, 30)));
    }
    if (entry > end.plus_days(-30)) entry = end.plus_days(-30);
    ent.diagnosis_date = rng.bernoulli(0.03) ? std::nullopt : std::optional<Date>(diagnosis);

    lat.adherence = sigmoid(rng.normal(0.6, 1.0));
    lat.suppression_p = sigmoid(2.5 * lat.adherence - 0.9 + rng.normal(0.0, 0.5));
    lat.mean_gap_days = 55.0 + (1.0 - lat.adherence) * 190.0;

    // Planted drop-out hazard: logistic in the configured covariates, with an
    // optional group multiplier on the resulting probability.
    double z = logit(config.base_dropout_rate);
    for (const auto& term : signal) z += term.weight * lat.covariate(term.feature);
    double dropout_p = sigmoid(z);
    if (config.group_bias) {
      const auto& gb = *config.group_bias;
      const std::optional<std::string>* attr = nullptr;
      if (gb.attribute == "race") attr = &ent.race;
      else if (gb.attribute == "gender") attr = &ent.gender;
      else if (gb.attribute == "transmission_category") attr = &ent.transmission_category;
      else if (gb.attribute == "zip_code") attr = &ent.zip_code;
      else
        throw std::invalid_argument("group_bias attribute must be race, gender, "
                                    "transmission_category or zip_code");
      if (!std::isfinite(gb.multiplier) || gb.multiplier < 0.0)
        throw std::invalid_argument("group_bias multiplier must be finite and non-negative");
      if (*attr && **attr == gb.group) dropout_p *= gb.multiplier;
    }
    dropout_p = std::clamp(dropout_p, 0.0, 0.97);

    std::optional<Date> dropout_date;
    if (rng.bernoulli(dropout_p)) {
      int active_span = end - entry;
      int offset = std::max(120, static_cast<int>(rng.uniform(0.25, 0.85) * active_span));
      dropout_date = entry.plus_days(std::min(offset, active_span));
    }
    const Date care_end = dropout_date ? *dropout_date : end;

    // HIV visit sequence: a renewal process whose gap reflects adherence.
    // Gaps are capped below one year so an in-care entity always has a visit
    // within any 12-month window; access failures are then driven purely by
    // the planted drop-out process.
    Date t = entry;
    while (t <= care_end && t <= end) {
      events.push_back({ent.entity_id, EventType::hiv_visit, t, std::nullopt, std::nullopt});

      if (rng.bernoulli(0.8)) {
        double vl = rng.bernoulli(lat.suppression_p)
                        ? rng.uniform(20.0, 199.0)
                        : std::exp(rng.uniform(std::log(300.0), std::log(3e5)));
        events.push_back({ent.entity_id, EventType::viral_load_test, t,
                          std::round(vl), std::nullopt});
      }
      if (rng.bernoulli(0.55)) {
        double cd4 = std::clamp(rng.normal(320.0 + 420.0 * lat.adherence, 140.0), 5.0, 1600.0);
        events.push_back({ent.entity_id, EventType::cd4_test, t, std::round(cd4), std::nullopt});
      }
      if (rng.bernoulli(0.6))
        events.push_back({ent.entity_id, EventType::medication, t, std::nullopt,
                          std::optional<std::string>("art")});
      if (rng.bernoulli(0.3)) {
        Date o = t.plus_days(static_cast<int>(rng.uniform_int(1, 20)));
        if (o <= end && o <= care_end)
          events.push_back({ent.entity_id, EventType::other_visit, o, std::nullopt,
                            std::nullopt});
      }

      int gap = static_cast<int>(std::lround(lat.mean_gap_days * rng.lognormal(0.0, 0.30)));
      t = t.plus_days(std::clamp(gap, 14, 330));
    }

    // Event-window diagnoses and infections.
    auto in_care_day = [&](int max_offset) {
      return entry.plus_days(static_cast<int>(rng.uniform_int(0, std::max(1, max_offset))));
    };
    const int care_span = std::max(1, std::min(care_end, end) - entry);
    if (rng.bernoulli(0.12 + 0.25 * (1.0 - lat.adherence)))
      events.push_back({ent.entity_id, EventType::diagnosis, in_care_day(care_span),
                        std::nullopt, std::optional<std::string>("substance_abuse")});
    if (rng.bernoulli(0.18))
      events.push_back({ent.entity_id, EventType::diagnosis, in_care_day(care_span),
                        std::nullopt, std::optional<std::string>("psychiatric_illness")});
    if (rng.bernoulli(0.15))
      events.push_back({ent.entity_id, EventType::diagnosis, in_care_day(care_span),
                        std::nullopt, std::optional<std::string>("std")});
    if (rng.bernoulli(0.25 * (1.0 - lat.suppression_p))) {
      static const char* kInfections[] = {"pneumonia", "tuberculosis", "candidiasis"};
      events.push_back({ent.entity_id, EventType::opportunistic_infection,
                        in_care_day(care_span), std::nullopt,
                        std::optional<std::string>(kInfections[rng.uniform_int(0, 2)])});
    }

    entities.push_back(std::move(ent));
    truth.rows.push_back({entity_name(i), lat.adherence, dropout_p, dropout_date});
  }

  return {EventLog::build(std::move(entities), std::move(events), config.date_range),
          std::move(truth)};
}

void export_ground_truth(const GroundTruth& gt, const std::string& path) {
  CsvWriter w(path);
  w.write_row({"entity_id", "latent_adherence", "planted_dropout_prob"});
  for (const auto& row : gt.rows)
    w.write_row({row.entity_id, format_double(row.latent_adherence),
                 format_double(row.planted_dropout_prob)});
}

void export_zip_attributes(const EventLog& log, std::uint64_t seed, const std::string& path) {
  std::vector<std::string> zips;
  for (const Entity& e : log.entities())
    if (e.zip_code) zips.push_back(*e.zip_code);
  std::sort(zips.begin(), zips.end());
  zips.erase(std::unique(zips.begin(), zips.end()), zips.end());

  CsvWriter w(path);
  w.write_row({"zip_code", "area_poverty_rate", "area_clinic_density"});
  for (const std::string& zip : zips) {
    std::uint64_t h = mix_seed(seed, fnv1a(zip));
    Rng rng(h);
    w.write_row({zip, format_double(std::round(rng.uniform(0.05, 0.45) * 1000) / 1000),
                 format_double(std::round(rng.uniform(0.1, 5.0) * 100) / 100)});
  }
}

}  // namespace retain
