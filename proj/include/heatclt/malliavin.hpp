#pragma once

#include "heatclt/model.hpp"
#include "heatclt/solver.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace heatclt {

/// How the spatial window ∫_{−R}^{R} p_{t−s}(x − y) dx is represented on the lattice.
///  - discrete: the scheme's own propagator applied to the window indicator,
///    (A^{N−1−n} 1_{I_R})(y). With it F^R = δ(v) holds exactly on the lattice,
///    so the duality identity carries no discretization bias.
///  - continuum: kernel_window(t − (n+1)·dt, x_y, R), indicator on the last step.
enum class WindowKind { discrete, continuum };

/// Window weights w(n, node) for steps n < N = t/dt at one (t, R).
class WindowTable {
 public:
  static WindowTable build(const Grid& grid, double t, double R, WindowKind kind = WindowKind::discrete);

  int steps() const { return steps_; }  // N
  double t() const { return t_; }
  double radius() const { return radius_; }  // lattice-aligned R
  WindowKind kind() const { return kind_; }
  std::span<const double> row(int n) const {
    return {weights_.data() + static_cast<std::size_t>(n) * nx_, static_cast<std::size_t>(nx_)};
  }

 private:
  int steps_ = 0;
  int nx_ = 0;
  double t_ = 0.0;
  double radius_ = 0.0;
  WindowKind kind_ = WindowKind::discrete;
  std::vector<double> weights_;
};

/// v^R_{i,k}(n, y) = (1/√R)·σ_ik(u^n(y))·w(n, y); out[(i*m + k) * nx + node].
std::vector<double> v_weight(const FieldState& state, const DiffusionField& field, const Grid& grid,
                             const WindowTable& window);

/// Convenience overload building the window for (t, R).
std::vector<double> v_weight(const FieldState& state, const DiffusionField& field, const Grid& grid, double t,
                             double R, WindowKind kind = WindowKind::discrete);

/// One replica's pairing matrix P_ij ≈ ⟨v_i, DF_j⟩ at (t, R), with the
/// replica's own F^R(t) for duality checks.
struct PairingSample {
  std::uint64_t replica_id = 0;
  double t = 0.0;
  double R = 0.0;  // lattice-aligned
  Matrix P;
  Vector F;
};

/// Co-evolves d tangent fields per window alongside a primal ReplicaRun.
/// Call before_advance(run) before every run.advance(); a window's pairing is
/// final once the run has reached its step count.
class PairingTracker {
 public:
  PairingTracker(const DiffusionField& field, const Grid& grid, std::vector<const WindowTable*> windows);

  void before_advance(ReplicaRun& run);

  /// P for window w (in construction order); throws unless complete.
  const Matrix& pairing(std::size_t w) const;
  bool complete(std::size_t w) const;

 private:
  void contract(std::size_t slot);

  const DiffusionField* field_;
  const Grid* grid_;
  std::vector<const WindowTable*> windows_;  // sorted by steps, descending
  std::vector<std::size_t> order_;           // construction index of each sorted slot
  std::vector<TangentState> tangents_;       // d per sorted slot
  std::vector<Matrix> pairings_;             // by sorted slot
  std::vector<bool> done_;
  std::vector<double> sources_;
  std::vector<std::span<const double>> source_spans_;
  StepWorkspace work_;
};

/// Tangent-with-source evaluation of the pairing for one replica.
PairingSample pairing_tangent(const DiffusionField& field, const Grid& grid, double t, double R,
                              std::uint64_t seed, std::uint64_t replica_id,
                              WindowKind kind = WindowKind::discrete);

/// Reference evaluation: one derivative field per source point (n, y, channel).
/// Refuses grids with nt > 16 or nx > 32.
PairingSample pairing_bruteforce(const DiffusionField& field, const Grid& grid, double t, double R,
                                 std::uint64_t seed, std::uint64_t replica_id,
                                 WindowKind kind = WindowKind::discrete);

/// Constant σ = S: P = S Sᵀ·(1/R)·Σ_{n,y} w(n,y)²·dt·dx, the same for every replica.
Matrix constant_sigma_pairing(const Matrix& S, const Grid& grid, const WindowTable& window);

struct SteinEstimate {
  Matrix varhat;     // sample variance of P_ij (divisor M − 1)
  Matrix varhat_se;  // from the fourth central moment
  Matrix mean;       // sample mean of P_ij
  Matrix mean_se;
  double var_sum = 0.0;  // Σ_ij varhat_ij
  double bound = 0.0;
  Matrix CR_used;
};

/// √d·‖CR⁻¹‖·‖CR‖^{1/2}·√(Σ_ij varhat_ij). A CR with smallest eigenvalue
/// ≤ 1e-12 raises NumericalError.
SteinEstimate stein_bound(std::span<const Matrix> pairings, const Matrix& CR);

}  // namespace heatclt
