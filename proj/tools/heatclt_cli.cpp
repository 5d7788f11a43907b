// heatclt: run, merge and validate experiments.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure, 1 other.

#include "heatclt/config.hpp"
#include "heatclt/errors.hpp"
#include "heatclt/experiment.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

struct RunOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> replicas;
  std::optional<int> workers;
  std::optional<std::string> out;
  std::vector<std::string> overrides;
};

heatclt::ExperimentConfig resolve(const RunOptions& opt) {
  json doc = heatclt::read_config_document(opt.config);
  for (const std::string& o : opt.overrides) heatclt::apply_override(doc, o);
  if (opt.seed) heatclt::apply_override(doc, "experiment.seed=" + std::to_string(*opt.seed));
  if (opt.replicas) heatclt::apply_override(doc, "experiment.replicas=" + std::to_string(*opt.replicas));
  if (opt.workers) heatclt::apply_override(doc, "experiment.workers=" + std::to_string(*opt.workers));
  if (opt.out) doc["output"]["directory"] = *opt.out;
  return heatclt::parse_config(doc);
}

json read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw heatclt::ConfigError("merge: cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw heatclt::ConfigError("merge: '" + path + "' is not valid JSON: " + e.what());
  }
}

void add_run_flags(CLI::App* cmd, RunOptions& opt) {
  cmd->add_option("--config", opt.config, "Experiment config (JSON)")->required();
  cmd->add_option("--seed", opt.seed, "Override experiment.seed");
  cmd->add_option("--replicas", opt.replicas, "Override experiment.replicas");
  cmd->add_option("--workers", opt.workers, "Override experiment.workers");
  cmd->add_option("--out", opt.out, "Override output.directory");
  cmd->add_option("--override", opt.overrides, "KEY=VALUE, e.g. experiment.R=[4,16]")->take_all();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial-average CLT experiments for stochastic heat equations"};
  app.require_subcommand(1);

  RunOptions run_opt;
  auto* run = app.add_subcommand("run", "Run an experiment and write its report");
  add_run_flags(run, run_opt);

  RunOptions val_opt;
  auto* val = app.add_subcommand("validate", "Parse and validate a config; print its content hash");
  add_run_flags(val, val_opt);

  std::vector<std::string> merge_inputs;
  std::string merge_out = ".";
  auto* merge = app.add_subcommand("merge", "Merge reports of contiguous replica batches");
  merge->add_option("reports", merge_inputs, "Report JSON files")->required();
  merge->add_option("--out", merge_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      const heatclt::ExperimentConfig cfg = resolve(run_opt);
      const heatclt::ExperimentReport report = heatclt::run_experiment(cfg);
      heatclt::write_report(report, cfg.directory, cfg.formats);
      std::cout << report.name << ": wrote report to " << cfg.directory << "\n";
    } else if (*val) {
      const heatclt::ExperimentConfig cfg = resolve(val_opt);
      std::cout << "ok " << heatclt::config_hash(cfg) << "\n";
    } else if (*merge) {
      std::vector<json> docs;
      for (const std::string& path : merge_inputs) docs.push_back(read_report(path));
      const heatclt::ExperimentReport report = heatclt::merge_reports(docs);
      heatclt::write_report(report, merge_out, report.document.at("config").at("output").at("formats"));
      std::cout << report.name << ": merged " << docs.size() << " batches into " << merge_out << "\n";
    }
  } catch (const heatclt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const heatclt::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
