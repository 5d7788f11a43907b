#pragma once

#include "heatclt/model.hpp"
#include "heatclt/observables.hpp"
#include "heatclt/solver.hpp"

#include <iosfwd>
#include <vector>

namespace heatclt {

/// Reference laws for σ ≡ S, where F^R(t) is exactly Gaussian.
struct ConstantSigmaLaw {
  Matrix C;
  Matrix CR;
  bool exact_gaussian = true;
};

/// C = 2t·SSᵀ and C^R from prelimit_covariance on `eta_const` (which must be
/// the constant curve of S); shares the pipeline's quadrature code.
ConstantSigmaLaw constant_sigma_law(const Matrix& S, double t, double R, const EtaCurve& eta_const);

/// f(t) = E[u(t,x)²] for d = m = 1, σ(u) = λu:
///   f(t) = 1 + λ² ∫_0^t f(r)·(4π(t − r))^{−1/2} dr.
struct VolterraSolution {
  double lambda = 0.0;
  std::vector<double> times;
  std::vector<double> values;
  double error_estimate = 0.0;  // max change against the previous halving
  int steps = 0;

  /// Linear interpolation on the solution grid.
  double at(double t) const;
  /// η(r) = λ² f(r) as a one-channel curve.
  EtaCurve eta() const;
  void write_csv(std::ostream& out) const;
};

/// Product integration with exact weights against the (t − r)^{−1/2} kernel
/// and piecewise-linear f on the graded mesh t_a = T(a/n)², which resolves the
/// √t onset of f. The step count doubles from `steps` until successive
/// solutions differ by less than `tol` on the shared nodes. Throws
/// NumericalError past 2^20 steps.
VolterraSolution pam_second_moment(double lambda, double T, int steps = 64, double tol = 1e-8);

/// Var u(t, x) for σ ≡ 1, d = m = 1: √(t/π).
double additive_point_variance(double t);

/// Exact second moments of the explicit scheme itself (no sampling error):
/// E[u(t, x)²] at a node far from the boundary, for σ ≡ s (additive)
/// or σ(u) = λu, on a lattice with ratio c = dt/(2dx²).
/// These isolate the discretization bias from Monte Carlo noise.
struct LatticeMoments {
  std::vector<double> times;   // n·dt for n = 0..N
  std::vector<double> second;  // E[u²] at each step
};
LatticeMoments lattice_additive_moments(double sigma, double dt, double dx, double T);
LatticeMoments lattice_pam_moments(double lambda, double dt, double dx, double T);

/// Exact variance of F^R(t) under the scheme with constant σ = S, i.e.
/// SSᵀ·(1/R)·Σ_n Σ_y w(n,y)²·dt·dx with the discrete window.
Matrix lattice_constant_covariance(const Matrix& S, const Grid& grid, double t, double R);

}  // namespace heatclt
