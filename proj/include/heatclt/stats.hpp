#pragma once

#include "heatclt/model.hpp"
#include "heatclt/observables.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace heatclt {

// Sample matrices are M×d Eigen matrices, one row per replica.

/// Eigenpairs of a symmetric matrix, values ascending, orthonormal columns.
struct Eigenpairs {
  Vector values;
  Matrix vectors;
};

/// Throws ConfigError when A is not square or not symmetric to 1e-12 (relative).
Eigenpairs sym_eig(const Matrix& A);

/// max |λ| for symmetric input, largest singular value otherwise.
double op_norm(const Matrix& A);
double hs_norm(const Matrix& A);

/// Symmetric PSD square root. Eigenvalues in [−1e-10·max(1,‖A‖), 0) are
/// clamped to 0; anything more negative is a ConfigError.
Matrix psd_sqrt(const Matrix& A);

/// n rows of C^{1/2} z, z ~ N(0, I), reproducible from `seed`.
Matrix gaussian_sample(const Matrix& C, int n, std::uint64_t seed);

/// Bures–Wasserstein distance between N(0, C1) and N(0, C2).
double gaussian_w2(const Matrix& C1, const Matrix& C2);

/// W1 between two empirical laws on the line (∫|F_a − F_b|, exact).
double w1_empirical(std::span<const double> a, std::span<const double> b);

/// W1 between the empirical law of `x` and N(0, variance); exact piecewise
/// integral of |F_n − Φ|. variance = 0 gives the mean absolute value.
double w1_to_gaussian(std::span<const double> x, double variance);

struct SlicedW1 {
  double mean = 0.0;
  double max = 0.0;
  std::vector<double> per_direction;
};

/// Projects onto `nproj` uniform unit directions drawn from `seed` and averages
/// the 1-d W1 to N(0, θᵀCθ). A lower bound on the Wasserstein distance.
SlicedW1 sliced_w1(const Matrix& samples, const Matrix& C, int nproj, std::uint64_t seed);

/// B bootstrap resamples of row indices [0, M), reproducible from `seed`.
/// Reusing the same indices for several sample matrices gives paired resamples.
std::vector<std::vector<int>> bootstrap_indices(int M, int B, std::uint64_t seed);
Matrix take_rows(const Matrix& samples, std::span<const int> rows);

struct MardiaResult {
  double skewness_stat = 0.0;  // b_{1,d}
  double kurtosis_stat = 0.0;  // b_{2,d}
  double skew_chi2 = 0.0;      // M·b1/6 ~ χ²(d(d+1)(d+2)/6)
  double kurt_z = 0.0;         // (b2 − d(d+2)) / √(8d(d+2)/M)
  double skew_pvalue = 0.0;
  double kurt_pvalue = 0.0;
};

/// Mardia's multivariate skewness and kurtosis after whitening by the sample
/// covariance (divisor M). Needs M > d and a nonsingular sample covariance.
MardiaResult mardia(const Matrix& samples);

/// Sample covariance (divisor M − 1) with entrywise standard errors from the
/// spread of centred products.
CovarianceEstimate sample_covariance(const Matrix& samples);

/// Sample cross covariance Cov(X_i, Y_j) of paired rows with standard errors.
CovarianceEstimate sample_cross_covariance(const Matrix& X, const Matrix& Y);

/// √d·min(‖CR⁻¹‖‖CR‖^{1/2}, ‖C⁻¹‖‖C‖^{1/2})·‖CR − C‖_HS. A matrix with
/// smallest eigenvalue ≤ 1e-12 raises NumericalError naming it.
double gaussian_gap_bound(const Matrix& CR, const Matrix& C);

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least squares of log(value) on log(R); needs ≥ 3 points, all positive.
RateFit rate_fit(std::span<const std::pair<double, double>> points);

struct IncrementMoment {
  double moment = 0.0;  // max_i E|ΔG_i|^p
  double se = 0.0;
  double ratio = 0.0;   // moment / (R(t − s))^{p/2}
};

/// G_s, G_t: M×d unnormalised averages G^R at times s ≤ t.
IncrementMoment increment_moment(const Matrix& G_s, const Matrix& G_t, double s, double t, double p,
                                 double R);

struct CorrelationEstimate {
  Matrix value;
  Matrix se;
};

/// corr((F_t − F_s)_i, (F_s)_j). Entries against a zero-variance column are 0.
CorrelationEstimate increment_orthogonality(const Matrix& F_s, const Matrix& F_t);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigen_check(const Matrix& CR);

}  // namespace heatclt
