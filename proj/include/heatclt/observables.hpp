#pragma once

#include "heatclt/model.hpp"
#include "heatclt/solver.hpp"

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace heatclt {

/// F^R = (1/√R)(Σ_window u·dx − 2R) with the lattice-aligned radius.
Vector spatial_average(const FieldState& state, const Grid& grid, double R);

/// Per-replica spatial averages at one output time.
struct AverageSample {
  std::uint64_t replica_id = 0;
  double t = 0.0;
  double R = 0.0;  // lattice-aligned radius
  Vector F;
  Vector G() const { return std::sqrt(R) * F; }
};

enum class EtaProvenance { monte_carlo, closed_form_constant, volterra_pam };

std::string to_string(EtaProvenance p);
EtaProvenance eta_provenance_from_string(const std::string& s);

/// η^(k)_ij(r) = E[σ_ik(u(r,x)) σ_jk(u(r,x))] tabulated on a time grid r_0 = 0 < … < r_q.
class EtaCurve {
 public:
  EtaCurve() = default;
  EtaCurve(std::vector<double> times, int d, int m, EtaProvenance provenance);

  int d() const { return d_; }
  int m() const { return m_; }
  EtaProvenance provenance() const { return provenance_; }
  const std::vector<double>& times() const { return times_; }
  std::size_t size() const { return times_.size(); }

  double& value(std::size_t a, int k, int i, int j) { return values_[index(a, k, i, j)]; }
  double value(std::size_t a, int k, int i, int j) const { return values_[index(a, k, i, j)]; }
  double& se(std::size_t a, int k, int i, int j) { return se_[index(a, k, i, j)]; }
  double se(std::size_t a, int k, int i, int j) const { return se_[index(a, k, i, j)]; }

  /// η^(k)(r_a) as a d×d matrix.
  Matrix matrix(std::size_t a, int k) const;

  /// Throws ConfigError unless times start at 0 and increase, entries are
  /// finite and symmetric, and each η^(k)(r) is PSD (to a small tolerance).
  void validate() const;

  void write_csv(std::ostream& out) const;
  static EtaCurve read_csv(std::istream& in);

 private:
  std::size_t index(std::size_t a, int k, int i, int j) const {
    return ((a * m_ + k) * d_ + i) * d_ + j;
  }

  std::vector<double> times_;
  int d_ = 0;
  int m_ = 0;
  EtaProvenance provenance_ = EtaProvenance::monte_carlo;
  std::vector<double> values_;
  std::vector<double> se_;
};

/// η^(k)_ij = S_ik S_jk on every time, zero standard error.
EtaCurve constant_eta(const Matrix& S, std::vector<double> times);

/// Node range and block layout used to pool stationary statistics over space:
/// interior nodes with |x| ≤ L/2, cut into blocks of width 4·√(2T).
struct PoolingLayout {
  int first = 0;
  int block_nodes = 1;
  int blocks = 1;

  static PoolingLayout for_grid(const Grid& grid);
};

/// Block-pooled moments of several series. For each series a replica
/// contributes one block mean per spatial block; sums are plain running sums
/// so batches combine exactly by add().
struct PooledSums {
  std::size_t series = 0;
  std::vector<double> count;  // block means accumulated, per series
  std::vector<double> sum;
  std::vector<double> sumsq;

  explicit PooledSums(std::size_t n = 0) : series(n), count(n, 0.0), sum(n, 0.0), sumsq(n, 0.0) {}
  void add(const PooledSums& other);
  double mean(std::size_t s) const;
  double stderr_of_mean(std::size_t s) const;
};

/// Products σ_ik σ_jk (k < m, i ≤ j) pooled over blocks. Series index is
/// eta_series_index(k, i, j, d).
void pool_sigma_products(std::span<const double> sigma_nodes, int d, int m, int nx,
                         const PoolingLayout& layout, PooledSums& out, std::size_t offset);
std::size_t eta_series_count(int d, int m);
std::size_t eta_series_index(int k, int i, int j, int d);

/// Products u_i u_j (i ≤ j) pooled over blocks; series index i·d + j.
void pool_state_products(const FieldState& state, const PoolingLayout& layout, PooledSums& out,
                         std::size_t offset);

/// Builds an EtaCurve from pooled σ-product sums laid out time-major: time a
/// occupies series [a·eta_series_count, (a+1)·eta_series_count).
EtaCurve eta_from_pooled(const std::vector<double>& times, int d, int m, const PooledSums& sums);

/// Monte Carlo η on `times` from replicas [0, M) of the given seed.
EtaCurve estimate_eta(const DiffusionField& field, const Grid& grid, const std::vector<double>& times,
                      int replicas, std::uint64_t seed, int workers = 1);

/// Quadrature value with its propagated standard error.
struct CovarianceEstimate {
  Matrix value;
  Matrix se;
};

/// ∫_0^{2R} p_s(z)(2 − z/R) dz in closed form; equals 1 at s = 0.
double window_factor(double s, double R);
/// 1 − window_factor(s, R) without cancellation.
double window_deficit(double s, double R);

/// C(t) = 2 Σ_k ∫_0^t η^(k)(r) dr by the trapezoid rule on the η grid.
CovarianceEstimate limit_covariance(const EtaCurve& eta, double t);

/// C^R(t) = 2 Σ_k ∫_0^t η^(k)(r) ∫_0^{2R} p_{2t−2r}(z)(2 − z/R) dz dr.
CovarianceEstimate prelimit_covariance(const EtaCurve& eta, double t, double R);

/// E[F^R(t) F^R(s)^T] = 2 Σ_k ∫_0^{t∧s} η^(k)(r) ∫_0^{2R} p_{t+s−2r}(z)(2 − z/R) dz dr.
CovarianceEstimate prelimit_cross_covariance(const EtaCurve& eta, double t, double s, double R);

/// E[u_i(t,x) u_j(s,x+h)] = 1 + Σ_k ∫_0^{t∧s} η^(k)_ij(r) p_{t+s−2r}(h) dr.
Matrix two_point_cov(const EtaCurve& eta, double t, double s, double h);

}  // namespace heatclt
