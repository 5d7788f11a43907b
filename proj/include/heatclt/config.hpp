#pragma once

#include "heatclt/model.hpp"
#include "heatclt/solver.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace heatclt {

enum class ExperimentKind { h1, covariance, rate, fclt, malliavin, oracle };

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(const std::string& s);

/// Physical and statistical defaults, in one place:
///   T = 1, dt = 1e-3, dx = 0.05, padding = 6 (units of √(2T)), M = 2000,
///   R grid {2, 4, 8, 16, 32}, seed = 1, workers = 1, output times {T}.
struct Defaults {
  static constexpr double T = 1.0;
  static constexpr double dt = 1e-3;
  static constexpr double dx = 0.05;
  static constexpr double padding = 6.0;
  static constexpr int replicas = 2000;
  static constexpr std::uint64_t seed = 1;
  static constexpr int workers = 1;
  static constexpr int eta_stride = 10;
  static constexpr int nproj = 64;
  static constexpr int bootstrap = 0;
  static constexpr double moment_p = 4.0;
  static constexpr double se_multiplier = 3.0;
  static constexpr double allowance = 0.05;
  static inline const std::vector<double> R_grid{2, 4, 8, 16, 32};
};

struct ExperimentConfig {
  int schema_version = 1;

  // model
  SigmaFamily family;
  int d = 1;
  int m = 1;

  // grid
  double T = Defaults::T;
  double dt = Defaults::dt;
  double dx = Defaults::dx;
  double padding = Defaults::padding;
  std::vector<double> output_times;  // sorted, unique, > 0

  // experiment
  ExperimentKind kind = ExperimentKind::covariance;
  std::string name;
  std::vector<double> R;  // sorted ascending
  int replicas = Defaults::replicas;
  std::uint64_t replica_offset = 0;
  std::uint64_t seed = Defaults::seed;
  int workers = Defaults::workers;
  int eta_stride = Defaults::eta_stride;  // η sampled every eta_stride steps
  int nproj = Defaults::nproj;
  int bootstrap = Defaults::bootstrap;
  double moment_p = Defaults::moment_p;
  std::vector<std::pair<double, double>> increment_pairs;  // (s, t); default consecutive output times
  std::optional<double> pairing_time;                       // default: last output time
  std::string window = "discrete";
  double se_multiplier = Defaults::se_multiplier;
  double allowance = Defaults::allowance;
  std::optional<std::string> eta_file;  // rate kind: reuse a tabulated η
  std::optional<double> pam_lambda;     // oracle kind: Volterra coupling

  // output
  std::string directory = ".";
  std::vector<std::string> formats{"json", "csv"};

  GridSpec grid_spec() const;
  DiffusionField field() const;
};

/// Parses and validates; throws ConfigError naming the offending key.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);
/// The raw JSON document at `path` (for applying overrides before parsing).
nlohmann::json read_config_document(const std::string& path);

/// Applies "a.b.c=value" (value parsed as JSON, else taken as a string).
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Canonical JSON echo of a validated config (defaults filled in).
nlohmann::json to_json(const ExperimentConfig& config);

/// Git-style blob SHA-1 of the canonical config without the fields that only
/// select a batch or a machine: replicas, replica_offset, workers, output.
std::string config_hash(const ExperimentConfig& config);

/// Full validation, including building the grid; throws ConfigError.
void validate(const ExperimentConfig& config);

}  // namespace heatclt
