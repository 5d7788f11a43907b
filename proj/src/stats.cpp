#include "heatclt/stats.hpp"

#include "heatclt/errors.hpp"
#include "heatclt/rng.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace heatclt {

namespace {

// Stream ids for auxiliary randomness; replica streams use ids < 2^63.
constexpr std::uint64_t kStatsStream = 0x8000000000000001ull;
constexpr std::uint64_t kGaussianSubstream = 0;
constexpr std::uint64_t kDirectionSubstream = 1;
constexpr std::uint64_t kBootstrapSubstream = 2;

void require_symmetric(const Matrix& A, const char* what) {
  if (A.rows() != A.cols()) throw ConfigError(std::string(what) + ": matrix must be square");
  const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw ConfigError(std::string(what) + ": matrix must be symmetric");
  }
}

Matrix centred(const Matrix& X) { return X.rowwise() - X.colwise().mean(); }

double psi(double z) { return z * normal_cdf(z) + std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

// Φ⁻¹(k/n) for k = 1..n−1; cached per thread since bootstraps reuse one n.
const std::vector<double>& plotting_quantiles(std::size_t n) {
  thread_local std::vector<double> cache;
  thread_local std::size_t cached_n = 0;
  if (cached_n != n) {
    cache.assign(n, 0.0);
    for (std::size_t k = 1; k < n; ++k) {
      const double c = static_cast<double>(k) / static_cast<double>(n);
      cache[k] = std::numbers::sqrt2 * boost::math::erf_inv(2.0 * c - 1.0);
    }
    cached_n = n;
  }
  return cache;
}

}  // namespace

Eigenpairs sym_eig(const Matrix& A) {
  require_symmetric(A, "sym_eig");
  const Matrix S = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(S);
  if (solver.info() != Eigen::Success) throw NumericalError("sym_eig: eigensolver did not converge");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

double op_norm(const Matrix& A) {
  if (A.size() == 0) return 0.0;
  if (A.rows() == A.cols() && A.isApprox(A.transpose(), 1e-12)) {
    return sym_eig(A).values.cwiseAbs().maxCoeff();
  }
  return Eigen::JacobiSVD<Matrix>(A).singularValues()(0);
}

double hs_norm(const Matrix& A) { return A.norm(); }

Matrix psd_sqrt(const Matrix& A) {
  const Eigenpairs e = sym_eig(A);
  const double floor = -1e-10 * std::max(1.0, e.values.cwiseAbs().maxCoeff());
  Vector root(e.values.size());
  for (Eigen::Index k = 0; k < e.values.size(); ++k) {
    const double v = e.values(k);
    if (v < floor) throw ConfigError("psd_sqrt: matrix is not positive semidefinite (eigenvalue " + std::to_string(v) + ")");
    root(k) = std::sqrt(std::max(0.0, v));
  }
  return e.vectors * root.asDiagonal() * e.vectors.transpose();
}

Matrix gaussian_sample(const Matrix& C, int n, std::uint64_t seed) {
  if (n < 0) throw ConfigError("gaussian_sample: n must be nonnegative");
  const Matrix root = psd_sqrt(C);
  const Eigen::Index d = C.rows();
  Matrix z(n, d);
  std::vector<double> buf(static_cast<std::size_t>(n) * d);
  fill_normals(seed, kStatsStream, kGaussianSubstream, buf);
  for (int r = 0; r < n; ++r)
    for (Eigen::Index i = 0; i < d; ++i) z(r, i) = buf[static_cast<std::size_t>(r) * d + i];
  return z * root;
}

double gaussian_w2(const Matrix& C1, const Matrix& C2) {
  const Matrix r1 = psd_sqrt(C1);
  psd_sqrt(C2);  // validates C2
  const Matrix middle = r1 * C2 * r1;
  const Matrix cross = psd_sqrt(0.5 * (middle + middle.transpose()));
  const double sq = C1.trace() + C2.trace() - 2.0 * cross.trace();
  return std::sqrt(std::max(0.0, sq));
}

double w1_empirical(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ConfigError("w1: empty sample");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  // Sweep the merged breakpoints; between them both CDFs are constant.
  const double na = static_cast<double>(x.size()), nb = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double prev = std::min(x.front(), y.front());
  double total = 0.0;
  while (i < x.size() || j < y.size()) {
    const double next = (j == y.size() || (i < x.size() && x[i] <= y[j])) ? x[i] : y[j];
    total += std::abs(i / na - j / nb) * (next - prev);
    while (i < x.size() && x[i] == next) ++i;
    while (j < y.size() && y[j] == next) ++j;
    prev = next;
  }
  return total;
}

double w1_to_gaussian(std::span<const double> x, double variance) {
  if (x.empty()) throw ConfigError("w1: empty sample");
  if (variance < 0.0) throw ConfigError("w1: negative variance");
  if (variance == 0.0) {
    double acc = 0.0;
    for (double v : x) acc += std::abs(v);
    return acc / static_cast<double>(x.size());
  }
  const double sd = std::sqrt(variance);
  std::vector<double> z(x.begin(), x.end());
  for (double& v : z) v /= sd;
  std::sort(z.begin(), z.end());
  const std::size_t n = z.size();
  // ∫_a^b (c − Φ) dz = c(b − a) − (ψ(b) − ψ(a)), ψ' = Φ.
  auto signed_part = [](double c, double a, double b) { return c * (b - a) - (psi(b) - psi(a)); };
  const std::vector<double>& quantiles = plotting_quantiles(n);
  double total = psi(z.front()) + psi(-z.back());
  for (std::size_t k = 1; k < n; ++k) {
    const double a = z[k - 1], b = z[k];
    if (b == a) continue;
    const double c = static_cast<double>(k) / static_cast<double>(n);
    const double q = quantiles[k];
    if (q <= a) {
      total -= signed_part(c, a, b);
    } else if (q >= b) {
      total += signed_part(c, a, b);
    } else {
      total += signed_part(c, a, q) - signed_part(c, q, b);
    }
  }
  return sd * total;
}

SlicedW1 sliced_w1(const Matrix& samples, const Matrix& C, int nproj, std::uint64_t seed) {
  const Eigen::Index d = samples.cols();
  if (C.rows() != d || C.cols() != d) throw ConfigError("sliced_w1: covariance shape does not match samples");
  if (samples.rows() < 1) throw ConfigError("sliced_w1: empty sample");
  if (nproj < 1) throw ConfigError("sliced_w1: nproj must be positive");
  psd_sqrt(C);  // PSD check
  std::vector<double> raw(static_cast<std::size_t>(nproj) * d);
  fill_normals(seed, kStatsStream, kDirectionSubstream, raw);
  SlicedW1 out;
  Vector proj(samples.rows());  // Eigen-owned, so its alignment (and rounding) is fixed
  for (int p = 0; p < nproj; ++p) {
    Vector theta = Eigen::Map<const Vector>(raw.data() + static_cast<std::size_t>(p) * d, d);
    const double norm = theta.norm();
    if (norm == 0.0) throw NumericalError("sliced_w1: zero direction drawn");
    theta /= norm;
    proj.noalias() = samples * theta;
    const double w = w1_to_gaussian({proj.data(), static_cast<std::size_t>(proj.size())}, std::max(0.0, theta.dot(C * theta)));
    out.per_direction.push_back(w);
    out.mean += w;
    out.max = std::max(out.max, w);
  }
  out.mean /= nproj;
  return out;
}

std::vector<std::vector<int>> bootstrap_indices(int M, int B, std::uint64_t seed) {
  if (M < 1 || B < 0) throw ConfigError("bootstrap: need M ≥ 1 and B ≥ 0");
  std::vector<std::vector<int>> out(B, std::vector<int>(M));
  for (int b = 0; b < B; ++b) {
    CounterEngine engine(seed, kStatsStream, kBootstrapSubstream + static_cast<std::uint64_t>(b));
    boost::random::uniform_int_distribution<int> pick(0, M - 1);
    for (int& idx : out[b]) idx = pick(engine);
  }
  return out;
}

Matrix take_rows(const Matrix& samples, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), samples.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = samples.row(rows[r]);
  return out;
}

MardiaResult mardia(const Matrix& samples) {
  const Eigen::Index M = samples.rows(), d = samples.cols();
  if (M <= d) throw ConfigError("mardia: need more samples than dimensions");
  const Matrix X = centred(samples);
  const Matrix S = (X.transpose() * X) / static_cast<double>(M);
  const Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success || sym_eig(S).values(0) <= 1e-12 * std::max(1.0, S.trace())) {
    throw NumericalError("mardia: sample covariance is singular");
  }
  // Whitened rows y = L⁻¹x, so g_ij = y_i·y_j = x_iᵀ S⁻¹ x_j.
  const Matrix Y = llt.matrixL().solve(X.transpose()).transpose();
  double b1 = 0.0, b2 = 0.0;
  Vector g(M);
  for (Eigen::Index i = 0; i < M; ++i) {
    g.noalias() = Y * Y.row(i).transpose();
    b1 += g.array().cube().sum();
    b2 += g(i) * g(i);
  }
  const double m = static_cast<double>(M), dd = static_cast<double>(d);
  MardiaResult out;
  out.skewness_stat = b1 / (m * m);
  out.kurtosis_stat = b2 / m;
  out.skew_chi2 = m * out.skewness_stat / 6.0;
  const double df = dd * (dd + 1.0) * (dd + 2.0) / 6.0;
  out.skew_pvalue = boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), out.skew_chi2));
  out.kurt_z = (out.kurtosis_stat - dd * (dd + 2.0)) / std::sqrt(8.0 * dd * (dd + 2.0) / m);
  out.kurt_pvalue = 2.0 * normal_cdf(-std::abs(out.kurt_z));
  return out;
}

CovarianceEstimate sample_cross_covariance(const Matrix& X, const Matrix& Y) {
  if (X.rows() != Y.rows()) throw ConfigError("covariance: row counts differ");
  const Eigen::Index M = X.rows();
  if (M < 2) throw ConfigError("covariance: need at least two samples");
  const Matrix A = centred(X), B = centred(Y);
  const double m = static_cast<double>(M);
  CovarianceEstimate out{(A.transpose() * B) / (m - 1.0), Matrix::Zero(X.cols(), Y.cols())};
  for (Eigen::Index i = 0; i < X.cols(); ++i)
    for (Eigen::Index j = 0; j < Y.cols(); ++j) {
      const Vector prod = A.col(i).cwiseProduct(B.col(j));
      const double mu = prod.mean();
      const double var = (prod.array() - mu).square().sum() / (m - 1.0);
      out.se(i, j) = std::sqrt(var / m);
    }
  return out;
}

CovarianceEstimate sample_covariance(const Matrix& samples) {
  CovarianceEstimate out = sample_cross_covariance(samples, samples);
  out.value = (0.5 * (out.value + out.value.transpose())).eval();
  return out;
}

double gaussian_gap_bound(const Matrix& CR, const Matrix& C) {
  if (CR.rows() != C.rows() || CR.cols() != C.cols()) throw ConfigError("gaussian_gap_bound: shape mismatch");
  auto factor = [](const Matrix& A, const char* name) {
    const Eigenpairs e = sym_eig(A);
    if (!(e.values(0) > 1e-12)) {
      throw NumericalError(std::string("gaussian_gap_bound: ") + name + " is singular (min eigenvalue " +
                           std::to_string(e.values(0)) + "); (H1) fails or R is too small");
    }
    const double top = e.values.cwiseAbs().maxCoeff();
    return (1.0 / e.values(0)) * std::sqrt(top);
  };
  const double q = std::sqrt(static_cast<double>(C.rows())) * std::min(factor(CR, "C^R"), factor(C, "C"));
  return q * hs_norm(CR - C);
}

RateFit rate_fit(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) throw ConfigError("rate_fit: need at least 3 points");
  std::vector<double> x, y;
  for (const auto& [R, v] : points) {
    if (!(R > 0.0) || !(v > 0.0)) throw ConfigError("rate_fit: R and value must be positive");
    x.push_back(std::log(R));
    y.push_back(std::log(v));
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (sxx == 0.0) throw ConfigError("rate_fit: all R equal");
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ssr = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double r = y[k] - (fit.intercept + fit.slope * x[k]);
    ssr += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - ssr / syy : (ssr == 0.0 ? 1.0 : 0.0);
  return fit;
}

IncrementMoment increment_moment(const Matrix& G_s, const Matrix& G_t, double s, double t, double p,
                                 double R) {
  if (G_s.rows() != G_t.rows() || G_s.cols() != G_t.cols()) throw ConfigError("increment_moment: shape mismatch");
  if (t < s) throw ConfigError("increment_moment: need s ≤ t");
  if (!(p > 0.0) || !(R > 0.0)) throw ConfigError("increment_moment: p and R must be positive");
  IncrementMoment out;
  if (t == s) return out;
  const double m = static_cast<double>(G_s.rows());
  for (Eigen::Index i = 0; i < G_s.cols(); ++i) {
    const Eigen::ArrayXd v = (G_t.col(i) - G_s.col(i)).array().abs().pow(p);
    const double mean = v.mean();
    if (mean >= out.moment) {
      out.moment = mean;
      out.se = m > 1.0 ? std::sqrt((v - mean).square().sum() / (m - 1.0) / m) : 0.0;
    }
  }
  out.ratio = out.moment / std::pow(R * (t - s), 0.5 * p);
  return out;
}

CorrelationEstimate increment_orthogonality(const Matrix& F_s, const Matrix& F_t) {
  if (F_s.rows() != F_t.rows() || F_s.cols() != F_t.cols()) throw ConfigError("increment_orthogonality: shape mismatch");
  const Eigen::Index M = F_s.rows(), d = F_s.cols();
  if (M < 3) throw ConfigError("increment_orthogonality: need at least three samples");
  const Matrix D = centred(F_t - F_s), P = centred(F_s);
  CorrelationEstimate out{Matrix::Zero(d, d), Matrix::Zero(d, d)};
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) {
      const double sd = D.col(i).norm(), sp = P.col(j).norm();
      if (sd == 0.0 || sp == 0.0) continue;
      const double rho = std::clamp(D.col(i).dot(P.col(j)) / (sd * sp), -1.0, 1.0);
      out.value(i, j) = rho;
      out.se(i, j) = std::sqrt((1.0 - rho * rho) / static_cast<double>(M - 2));
    }
  return out;
}

double min_eigen_check(const Matrix& CR) { return sym_eig(CR).values(0); }

}  // namespace heatclt
