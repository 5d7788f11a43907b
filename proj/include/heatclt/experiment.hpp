#pragma once

#include "heatclt/config.hpp"
#include "heatclt/malliavin.hpp"
#include "heatclt/model.hpp"
#include "heatclt/observables.hpp"
#include "heatclt/solver.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace heatclt {

// ---------------------------------------------------------------- simulation pass

/// What one pass over a replica batch records.
struct PassSpec {
  std::vector<double> output_times;  // F^R and point moments recorded here
  std::vector<double> radii;
  std::vector<double> eta_times;  // σ-products pooled here (may be empty)
  bool point_moments = true;      // pool u_i u_j at output times
  std::vector<double> pairing_radii;  // tangents at pairing_time, one window per radius
  double pairing_time = 0.0;
  WindowKind window = WindowKind::discrete;
};

/// Pooled sums of one aligned chunk of replica ids.
struct ChunkSums {
  std::uint64_t index = 0;  // replica ids [index·chunk, (index+1)·chunk)
  PooledSums eta;
  PooledSums point;
};

/// Raw per-replica records plus per-chunk pooled sums for replica ids
/// [first_replica, first_replica + replicas).
class PassResult {
 public:
  PassResult() = default;
  PassResult(const PassSpec& spec, int d, std::uint64_t first, int count);

  const PassSpec& spec() const { return spec_; }
  int d() const { return d_; }
  std::uint64_t first_replica() const { return first_; }
  int replicas() const { return count_; }

  /// M×d samples of F^R(t) for output time index a and radius index r.
  Matrix averages(std::size_t a, std::size_t r) const;
  /// Pairing matrices for pairing radius index r.
  std::vector<Matrix> pairings(std::size_t r) const;

  double& F(int replica, std::size_t a, std::size_t r, int i);
  double& P(int replica, std::size_t r, int i, int j);
  const std::vector<double>& F_data() const { return F_; }
  const std::vector<double>& P_data() const { return P_; }

  std::vector<ChunkSums>& chunks() { return chunks_; }
  const std::vector<ChunkSums>& chunks() const { return chunks_; }

  /// Chunk sums added in chunk order.
  PooledSums eta_total() const;
  PooledSums point_total() const;

  /// Monte Carlo η on spec().eta_times.
  EtaCurve eta(int m) const;
  /// Pooled E[u_i u_j] at output time index a, with standard errors.
  CovarianceEstimate point_moment(std::size_t a) const;

  /// Appends a batch that starts where this one ends. Chunk boundaries must
  /// align so the fixed reduction order is preserved.
  void append(const PassResult& next);

  nlohmann::json to_json() const;
  static PassResult from_json(const nlohmann::json& doc, const PassSpec& spec, int d);

 private:
  PassSpec spec_;
  int d_ = 0;
  std::uint64_t first_ = 0;
  int count_ = 0;
  std::vector<double> F_;  // [replica][a][r][i]
  std::vector<double> P_;  // [replica][r][i][j]
  std::vector<ChunkSums> chunks_;
};

/// Simulates replica ids [first, first + count) of `seed` and records what
/// `spec` asks for. Results do not depend on `workers`.
PassResult simulate_pass(const DiffusionField& field, const Grid& grid, const PassSpec& spec, std::uint64_t seed,
                         std::uint64_t first, int count, int workers = 1);

// ---------------------------------------------------------------- reports

/// A flat table with a header row; cells are preformatted (%.17g for reals).
struct Table {
  std::string name;  // quantity; written as <experiment>_<name>.csv
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::string csv() const;
};

std::string cell(double v);
std::string cell(long long v);
std::string cell(const std::string& v);

struct ExperimentReport {
  std::string name;
  nlohmann::json document;  // config echo, hash, results, batch data, metadata
  std::vector<Table> tables;
};

/// Runs the configured experiment. Throws ConfigError / NumericalError.
ExperimentReport run_experiment(const ExperimentConfig& config);

/// Merges reports of disjoint, contiguous replica batches of one config
/// (same content hash) and recomputes every statistic from the pooled data.
ExperimentReport merge_reports(const std::vector<nlohmann::json>& reports);

/// Writes <name>_report.json and <name>_<table>.csv into `directory`.
void write_report(const ExperimentReport& report, const std::string& directory,
                  const std::vector<std::string>& formats = {"json", "csv"});

/// The PassSpec a simulation-backed experiment uses.
PassSpec pass_spec_for(const ExperimentConfig& config, const Grid& grid);

}  // namespace heatclt
