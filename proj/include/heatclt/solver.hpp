#pragma once

#include "heatclt/model.hpp"
#include "heatclt/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace heatclt {

/// Discretization parameters for building a Grid. Either `dx` or `nx` fixes
/// the spatial step; the half-width is the smallest admissible value covering
/// `R_max` plus `padding`·√(2T) unless `L` is given.
struct GridSpec {
  double T = 1.0;
  double dt = 1e-3;
  std::optional<double> dx = 0.05;
  std::optional<int> nx;
  std::optional<double> L;
  double R_max = 0.0;
  double padding = 6.0;
  std::vector<double> output_times;
};

/// Space-time lattice on [0, T] × [−L, L]. Interior nodes sit at
/// x = −L + (node + 1)·dx for node in [0, nx); the two boundary nodes ±L are
/// clamped. Construction enforces dt ≤ dx²/2 and the truncation margin.
class Grid {
 public:
  static Grid create(const GridSpec& spec);

  double T() const { return T_; }
  int nt() const { return nt_; }
  double dt() const { return dt_; }
  double L() const { return L_; }
  int nx() const { return nx_; }
  double dx() const { return dx_; }
  double padding() const { return padding_; }

  double x(int node) const { return -L_ + (node + 1) * dx_; }
  double time(int step) const { return step * dt_; }

  /// dt / (2 dx²): the heat generator is ½∂²_x, matching p_t of variance t.
  double diffusion_ratio() const { return dt_ / (2.0 * dx_ * dx_); }
  /// √(dt/dx): standard deviation of the per-cell white-noise increment / dx.
  double noise_scale() const { return noise_scale_; }

  const std::vector<int>& output_steps() const { return output_steps_; }
  std::vector<double> output_times() const;

  /// Step index of t; throws ConfigError when t is not a grid time.
  int step_of(double t) const;

  /// Largest radius admitted by the truncation margin, L − padding·√(2T).
  double max_radius() const;

  /// R snapped to the nearest cell boundary; throws ConfigError when R ≤ 0 or
  /// R exceeds max_radius().
  double effective_radius(double R) const;

  /// Node range [first, last) whose cells tile [−R_eff, R_eff].
  std::pair<int, int> window_nodes(double R) const;

 private:
  Grid() = default;

  double T_ = 0.0;
  int nt_ = 0;
  double dt_ = 0.0;
  double L_ = 0.0;
  int nx_ = 0;
  double dx_ = 0.0;
  double padding_ = 0.0;
  double noise_scale_ = 0.0;
  std::vector<int> output_steps_;
};

/// d components on the interior nodes plus one clamped boundary node per side.
class LatticeField {
 public:
  LatticeField() = default;
  LatticeField(int d, int nx, double boundary, double fill);

  int d() const { return d_; }
  int nx() const { return nx_; }
  double boundary() const { return boundary_; }

  std::span<double> row(int i) { return {data_.data() + offset(i), static_cast<std::size_t>(nx_)}; }
  std::span<const double> row(int i) const {
    return {data_.data() + offset(i), static_cast<std::size_t>(nx_)};
  }
  double operator()(int i, int node) const { return data_[offset(i) + node]; }
  double& operator()(int i, int node) { return data_[offset(i) + node]; }

  FieldView view() const {
    return {data_.data() + 1, d_, static_cast<std::size_t>(nx_) + 2, static_cast<std::size_t>(nx_)};
  }

  bool all_finite() const;

  friend bool operator==(const LatticeField&, const LatticeField&) = default;

 private:
  std::size_t offset(int i) const { return static_cast<std::size_t>(i) * (nx_ + 2) + 1; }

  int d_ = 0;
  int nx_ = 0;
  double boundary_ = 0.0;
  std::vector<double> data_;
};

/// Solution values u^n at time n·dt; boundary clamped to 1.
struct FieldState {
  int step = 0;
  LatticeField u;

  static FieldState initial(int d, int nx) { return {0, LatticeField(d, nx, 1.0, 1.0)}; }
  friend bool operator==(const FieldState&, const FieldState&) = default;
};

/// Linearized field Z^(source) at time n·dt; boundary clamped to 0.
struct TangentState {
  int step = 0;
  int source = 0;
  LatticeField z;

  static TangentState zero(int source, int d, int nx) { return {0, source, LatticeField(d, nx, 0.0, 0.0)}; }
};

/// Scratch buffers reused across steps of one replica.
struct StepWorkspace {
  std::vector<double> sigma;
  std::vector<double> jacobian;
  std::vector<double> tangent_next;
};

/// One explicit Euler step. `noise` holds ξ_{n,·}^j at [j * nx + node].
/// Throws NumericalError when the new state is not finite.
void step_explicit(const FieldState& state, const DiffusionField& field, const Grid& grid,
                   std::span<const double> noise, FieldState& next, StepWorkspace& work);

FieldState step_explicit(const FieldState& state, const DiffusionField& field, const Grid& grid,
                         std::span<const double> noise);

/// Advances every tangent by one step, driven by the primal state u^n and the
/// same noise slice the primal step consumed. `sources[s]` (d × nx, or empty
/// for no source) is added to tangents[s] after propagation.
void step_tangent(const FieldState& state, std::span<TangentState> tangents,
                  const DiffusionField& field, const Grid& grid, std::span<const double> noise,
                  std::span<const std::span<const double>> sources, StepWorkspace& work);

/// Drives one replica forward step by step on its own noise stream.
class ReplicaRun {
 public:
  ReplicaRun(const DiffusionField& field, const Grid& grid, std::uint64_t seed,
             std::uint64_t replica_id);

  const FieldState& state() const { return current_; }
  int step() const { return current_.step; }
  bool done() const { return current_.step >= grid_->nt(); }

  /// ξ for the current step (generated once, cached until advance()).
  std::span<const double> noise();
  void advance();

  /// σ at every interior node of the current state, laid out as in
  /// DiffusionField::sigma_nodes.
  std::span<const double> sigma_now();

 private:
  const DiffusionField* field_;
  const Grid* grid_;
  NoiseStream stream_;
  FieldState current_;
  FieldState next_;
  std::vector<double> noise_;
  bool noise_ready_ = false;
  int sigma_step_ = -1;
  StepWorkspace work_;
};

/// Full trajectory at the grid's output times; bit-identical for identical inputs.
std::vector<FieldState> simulate(const DiffusionField& field, const Grid& grid, std::uint64_t seed,
                                 std::uint64_t replica_id);

}  // namespace heatclt
