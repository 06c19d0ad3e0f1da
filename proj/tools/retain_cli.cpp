#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "retain/csv.hpp"
#include "retain/event_store.hpp"
#include "retain/fairness.hpp"
#include "retain/pipeline.hpp"
#include "retain/rng.hpp"

namespace fs = std::filesystem;
using namespace retain;

namespace {

// --seed overrides the config's top-level seed before parsing so everything
// derived from it (synthetic data, per-model substreams, run id) follows.
ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": invalid JSON: " + e.what());
  }
  if (seed) j["seed"] = *seed;
  ExperimentConfig config = ExperimentConfig::from_json(j);
  config.validate();
  return config;
}

const char* kind_name(ValidationFinding::Kind k) {
  switch (k) {
    case ValidationFinding::Kind::unsorted: return "unsorted";
    case ValidationFinding::Kind::dangling_reference: return "dangling_reference";
    case ValidationFinding::Kind::out_of_range: return "out_of_range";
    case ValidationFinding::Kind::before_birth: return "before_birth";
    case ValidationFinding::Kind::negative_value: return "negative_value";
    case ValidationFinding::Kind::missing_lab_value: return "missing_lab_value";
  }
  return "unknown";
}

int cmd_generate(const std::string& config_path, std::optional<std::uint64_t> seed,
                 const std::string& out_dir) {
  ExperimentConfig config = load_config(config_path, seed);
  if (!config.synthetic)
    throw std::runtime_error("generate requires a config with a synthetic data block");
  auto [log, truth] = generate_synthetic_cohort(*config.synthetic);
  fs::create_directories(out_dir);
  export_csv(log, out_dir + "/entities.csv", out_dir + "/events.csv");
  export_ground_truth(truth, out_dir + "/ground_truth.csv");
  export_zip_attributes(log, mix_seed(config.synthetic->seed, 0x5a49),
                        out_dir + "/zip_attributes.csv");
  std::cout << "wrote " << log.entities().size() << " entities, " << log.events().size()
            << " events to " << out_dir << "/\n";
  return 0;
}

int cmd_validate(const std::string& entities_path, const std::string& events_path) {
  EventLog log = ingest_csv(entities_path, events_path);
  ValidationReport report = validate_event_log(log);
  for (const ValidationFinding& f : report.findings)
    std::cout << kind_name(f.kind) << ": " << f.detail << "\n";
  if (report.ok()) {
    std::cout << "ok: " << log.entities().size() << " entities, " << log.events().size()
              << " events, no findings\n";
    return 0;
  }
  std::cout << report.findings.size() << " finding(s)\n";
  return 1;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            const RunOptions& options) {
  ExperimentConfig config = load_config(config_path, seed);
  RunResult result = run_experiment(config, options);
  std::cout << "run " << result.run_id << " complete: " << result.run_dir << "\n";
  if (!result.selection.ranked.empty())
    std::cout << "selected model group: " << result.selection.ranked.front() << "\n";
  std::cout << result.selection.rationale << "\n";
  if (result.selection.disparity_warning)
    std::cerr << "warning: no model group satisfied the parity band; selection ranked by "
                 "performance only\n";
  return 0;
}

int cmd_audit(const std::string& run_dir) {
  std::vector<AuditRow> rows = import_audits(run_dir + "/audits.csv");
  std::cout << std::left << std::setw(34) << "model_group" << std::setw(7) << "split"
            << std::setw(24) << "attribute" << std::setw(16) << "group" << std::right
            << std::setw(7) << "n" << std::setw(7) << "fn" << std::setw(7) << "tn"
            << std::setw(9) << "for" << std::setw(9) << "ratio" << "  band\n";
  std::size_t outside = 0;
  for (const AuditRow& a : rows) {
    std::cout << std::left << std::setw(34) << a.model_group << std::setw(7) << a.split_id
              << std::setw(24) << a.attribute << std::setw(16) << a.group << std::right
              << std::setw(7) << a.n << std::setw(7) << a.fn << std::setw(7) << a.tn;
    auto opt = [](const std::optional<double>& v) {
      return v ? format_double(std::round(*v * 10000) / 10000) : std::string("-");
    };
    std::cout << std::setw(9) << opt(a.fo_rate) << std::setw(9) << opt(a.ratio) << "  ";
    if (!a.in_band)
      std::cout << "-";
    else if (*a.in_band)
      std::cout << "in";
    else {
      std::cout << "OUT";
      ++outside;
    }
    std::cout << "\n";
  }
  std::cout << rows.size() << " audit rows, " << outside << " outside the parity band\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retention-in-care risk prediction pipeline"};
  app.require_subcommand(1);

  std::string config_path, entities_path, events_path, run_dir, as_of_str, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> k_override;
  RunOptions options;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
    cmd->add_option("--seed", seed, "override the config's top-level seed");
  };

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic cohort to CSV");
  add_config(generate);
  generate->add_option("--out", out_dir, "output directory")->default_val("generated");

  CLI::App* validate =
      app.add_subcommand("validate", "check an entities/events CSV pair for violations");
  validate->add_option("--entities", entities_path, "entities.csv path")->required();
  validate->add_option("--events", events_path, "events.csv path")->required();

  CLI::App* run = app.add_subcommand("run", "execute the full experiment pipeline");
  add_config(run);
  run->add_option("--jobs", options.jobs, "worker threads for the model grid")
      ->check(CLI::PositiveNumber);
  run->add_flag("--strict-leakage,!--no-strict-leakage", options.strict_leakage,
                "abort on leakage findings (default) or downgrade them to warnings");

  CLI::App* report = app.add_subcommand("report", "rebuild report files for a finished run");
  report->add_option("--run", run_dir, "run directory")->required();

  CLI::App* roster = app.add_subcommand("roster", "score a prediction roster for a date");
  roster->add_option("--run", run_dir, "run directory")->required();
  roster->add_option("--as-of", as_of_str, "prediction date (YYYY-MM-DD)")->required();
  roster->add_option("--k", k_override, "override the flagging percentage");

  CLI::App* audit = app.add_subcommand("audit", "print the fairness audit of a finished run");
  audit->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(config_path, seed, out_dir);
    if (validate->parsed()) return cmd_validate(entities_path, events_path);
    if (run->parsed()) return cmd_run(config_path, seed, options);
    if (report->parsed()) {
      std::cout << emit_report(run_dir) << "\n";
      return 0;
    }
    if (roster->parsed()) {
      std::optional<Date> as_of = Date::parse(as_of_str);
      if (!as_of) throw std::runtime_error("--as-of: invalid date '" + as_of_str + "'");
      std::cout << score_roster(run_dir, *as_of, k_override) << "\n";
      return 0;
    }
    if (audit->parsed()) return cmd_audit(run_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
