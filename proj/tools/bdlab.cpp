// Command-line front end: run experiments, audit triggers, defend saved models,
// and re-emit report tables.

#include <atomic>
#include <fstream>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "bdlab/experiment.hpp"

namespace fs = std::filesystem;
using namespace bdlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;

std::mutex log_mutex;

void log_line(const std::string& msg) {
  std::lock_guard lock(log_mutex);
  std::cerr << msg << std::endl;
}

ExperimentConfig load_experiment(const std::string& path, std::optional<std::uint64_t> seed) {
  Config c = load_config(path);
  if (seed) c.set("experiment.seed", std::to_string(*seed));
  return experiment_from_config(c);
}

int cmd_run(const std::vector<std::string>& configs, std::optional<std::uint64_t> seed, const std::string& out,
            unsigned jobs) {
  std::vector<ExperimentConfig> exps;
  for (const auto& p : configs) exps.push_back(load_experiment(p, seed));
  const fs::path base = out.empty() ? fs::path("runs") : fs::path(out);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> any_partial{false};
  auto worker = [&] {
    for (std::size_t i = next++; i < exps.size(); i = next++) {
      RunOptions opts;
      opts.out_dir = exps.size() == 1 && !out.empty() ? base : base / exps[i].name;
      opts.log = log_line;
      const Json report = run_experiment(exps[i], opts);
      if (report["status"] != "complete") any_partial = true;
      log_line(exps[i].name + ": " + report["status"].get<std::string>() + ", wrote " + opts.out_dir.string());
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(exps.size())));
  std::vector<std::thread> pool;
  for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return any_partial ? kExitStage : kExitOk;
}

int cmd_audit(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out) {
  const auto cfg = load_experiment(config, seed);
  const auto data = prepare_data(cfg, default_data_dir(), false);
  const auto a = stealth_audit(cfg, data);
  if (out.empty()) {
    write_csv(a.table, "/dev/stdout");
  } else {
    fs::create_directories(out);
    write_csv(a.table, fs::path(out) / "stealth.csv");
  }
  log_line(a.summary.dump());
  return kExitOk;
}

int cmd_defend(const std::string& model, const std::string& defense, const std::string& config,
               std::optional<std::uint64_t> seed, const std::string& out) {
  std::optional<ExperimentConfig> cfg;
  if (!config.empty()) cfg = load_experiment(config, seed);
  const auto o = defend(model, defense, cfg);
  std::cout << o.section.dump(2) << std::endl;
  if (!out.empty()) {
    fs::create_directories(out);
    write_csv(o.table, fs::path(out) / ("defense_" + defense + ".csv"));
  }
  return kExitOk;
}

int cmd_report(const std::string& dir, const std::string& out) {
  std::ifstream in(fs::path(dir) / "report.json");
  if (!in) throw ConfigError("no report.json in " + dir);
  Json report;
  try {
    report = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("unreadable report.json: ") + e.what());
  }
  for (const auto& p : report_tables(report, out.empty() ? fs::path(dir) : fs::path(out))) std::cout << p.string() << "\n";
  return report.value("status", "") == "complete" ? kExitOk : kExitStage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor attack and defense lab"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned jobs = 1;
  app.add_option("--seed", seed, "Override experiment.seed");
  app.add_option("--out", out, "Output directory");
  app.add_option("--jobs", jobs, "Parallel experiment slots for run")->check(CLI::PositiveNumber);

  std::vector<std::string> run_configs;
  auto* run = app.add_subcommand("run", "Poison, train, audit and defend one or more configs");
  run->add_option("config", run_configs, "Experiment config files")->required();

  std::string audit_config;
  auto* audit = app.add_subcommand("audit", "Stealth audit of a config's trigger");
  audit->add_option("config", audit_config)->required();

  std::string model_path, defense_name, defend_config;
  auto* def = app.add_subcommand("defend", "Run one defense against a saved model");
  def->add_option("model", model_path)->required();
  def->add_option("defense", defense_name)->required();
  def->add_option("--config", defend_config, "Experiment config (default: the one stored in the model)");

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Write summary tables from a report directory");
  rep->add_option("dir", report_dir)->required();

  for (auto* sub : {run, audit, def, rep}) {
    sub->add_option("--seed", seed, "Override experiment.seed");
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--jobs", jobs, "Parallel experiment slots for run")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*run) return cmd_run(run_configs, seed, out, jobs);
    if (*audit) return cmd_audit(audit_config, seed, out);
    if (*def) return cmd_defend(model_path, defense_name, defend_config, seed, out);
    if (*rep) return cmd_report(report_dir, out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitOk;
}
