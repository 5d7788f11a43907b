#include "helpers.hpp"

#include "heatclt/errors.hpp"
#include "heatclt/experiment.hpp"
#include "heatclt/stats.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace heatclt;
using testing_support::mat;

namespace {

Matrix random_psd(std::mt19937_64& rng, int d, double floor = 0.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix A(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) A(i, j) = n(rng);
  return A * A.transpose() + floor * Matrix::Identity(d, d);
}

Matrix random_symmetric(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix A(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) A(i, j) = n(rng);
  return 0.5 * (A + A.transpose());
}

}  // namespace

TEST_SUITE("stats") {
  TEST_CASE("symmetric eigenproblems") {
    auto e = sym_eig(Matrix::Identity(3, 3));
    CHECK((e.values.array() - 1.0).abs().maxCoeff() < 1e-15);
    e = sym_eig(mat({{2, 0}, {0, 3}}));
    CHECK(e.values(0) == doctest::Approx(2.0));
    CHECK(e.values(1) == doctest::Approx(3.0));
    std::mt19937_64 rng(2);
    for (int k = 0; k < 200; ++k) {
      const Matrix A = random_symmetric(rng, 2);
      const double tr = A.trace(), det = A.determinant();
      const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
      const auto r = sym_eig(A);
      CHECK(std::abs(r.values(0) - (tr / 2.0 - disc)) < 1e-12 * std::max(1.0, A.norm()));
      CHECK(std::abs(r.values(1) - (tr / 2.0 + disc)) < 1e-12 * std::max(1.0, A.norm()));
    }
    for (int d = 1; d <= 8; ++d) {
      const Matrix A = random_symmetric(rng, d);
      const auto r = sym_eig(A);
      CHECK((r.vectors * r.values.asDiagonal() * r.vectors.transpose() - A).norm() <= 1e-10 * A.norm());
      CHECK(std::is_sorted(r.values.data(), r.values.data() + d));
    }
    CHECK_THROWS_AS(sym_eig(mat({{1, 2}, {0, 1}})), ConfigError);
  }

  TEST_CASE("norms") {
    CHECK(op_norm(mat({{2, 0}, {0, 3}})) == doctest::Approx(3.0));
    CHECK(hs_norm(mat({{2, 0}, {0, 3}})) == doctest::Approx(std::sqrt(13.0)));
    CHECK(op_norm(Matrix::Zero(2, 2)) == 0.0);
    CHECK(hs_norm(Matrix::Zero(2, 2)) == 0.0);
    std::mt19937_64 rng(4);
    for (int k = 0; k < 200; ++k) {
      const int d = 1 + k % 6;
      const Matrix A = random_symmetric(rng, d);
      CHECK(op_norm(A) <= hs_norm(A) * (1 + 1e-14));
      CHECK(hs_norm(A) <= std::sqrt(static_cast<double>(d)) * op_norm(A) * (1 + 1e-14));
    }
  }

  TEST_CASE("gaussian sampling") {
    CHECK(gaussian_sample(Matrix::Zero(2, 2), 10, 1).cwiseAbs().maxCoeff() == 0.0);
    const Matrix C = mat({{2.0, 0.6}, {0.6, 1.0}});
    const int n = 100000;
    const Matrix X = gaussian_sample(C, n, 7);
    const CovarianceEstimate S = sample_covariance(X);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) CHECK(std::abs(S.value(i, j) - C(i, j)) <= 4.0 * S.se(i, j));
    const Matrix Z = gaussian_sample(Matrix::Identity(1, 1), n, 8);
    const double m2 = Z.array().square().mean(), m4 = Z.array().pow(4).mean();
    CHECK(std::abs(m4 / (m2 * m2) - 3.0) < 4.0 * std::sqrt(24.0 / n));
    CHECK(gaussian_sample(C, 5, 3) == gaussian_sample(C, 5, 3));
  }

  TEST_CASE("Bures-Wasserstein distance") {
    const Matrix C = mat({{2.0, 0.3}, {0.3, 1.0}});
    CHECK(gaussian_w2(C, C) < 1e-7);
    CHECK(gaussian_w2(mat({{1.0}}), mat({{4.0}})) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(gaussian_w2(mat({{1, 0}, {0, 4}}), mat({{4, 0}, {0, 1}})) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    std::mt19937_64 rng(6);
    for (int k = 0; k < 100; ++k) {
      const int d = 1 + k % 4;
      const Matrix A = random_psd(rng, d), B = random_psd(rng, d), D = random_psd(rng, d);
      CHECK(std::abs(gaussian_w2(A, B) - gaussian_w2(B, A)) < 1e-8);
      CHECK(gaussian_w2(A, D) <= gaussian_w2(A, B) + gaussian_w2(B, D) + 1e-8);
    }
  }

  TEST_CASE("one-dimensional W1") {
    const std::vector<double> a{-1.0, 1.0}, b{0.0, 2.0};
    CHECK(w1_empirical(a, b) == doctest::Approx(1.0));
    std::mt19937_64 rng(10);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> x(1000), y(1000);
    for (double& v : x) v = n(rng);
    const double delta = 0.37;
    std::transform(x.begin(), x.end(), y.begin(), [&](double v) { return v + delta; });
    CHECK(std::abs(w1_empirical(x, y) - delta) <= 2.0 / x.size());
    // Against N(0, σ²): exact integral equals a fine Riemann sum of |F_n − Φ|.
    std::sort(x.begin(), x.end());
    double riemann = 0.0;
    const double h = 1e-4;
    for (double z = -12.0; z < 12.0; z += h) {
      const double mid = z + 0.5 * h;
      const double Fn = static_cast<double>(std::upper_bound(x.begin(), x.end(), mid) - x.begin()) / x.size();
      riemann += std::abs(Fn - normal_cdf(mid / 1.3)) * h;
    }
    CHECK(w1_to_gaussian(x, 1.69) == doctest::Approx(riemann).epsilon(1e-4));
    std::vector<double> signs{-2.0, 1.0, 3.0};
    CHECK(w1_to_gaussian(signs, 0.0) == doctest::Approx(2.0));
  }

  TEST_CASE("sliced W1: null calibration, lower bound, permutation invariance") {
    const Matrix C = mat({{2.0, 0.5}, {0.5, 1.0}});
    const Matrix X = gaussian_sample(C, 100000, 12);
    const SlicedW1 s = sliced_w1(X, C, 32, 5);
    CHECK(s.mean < 0.02 * std::sqrt(op_norm(C)));
    CHECK(s.max >= s.mean);
    CHECK(s.per_direction.size() == 32);
    const Matrix Y = gaussian_sample(mat({{1.0, 0.0}, {0.0, 4.0}}), 100000, 13);
    const double sw = sliced_w1(Y, Matrix::Identity(2, 2), 32, 5).mean;
    CHECK(sw <= gaussian_w2(sample_covariance(Y).value, Matrix::Identity(2, 2)) + 0.02);
    CHECK(sw > 0.1);
    std::vector<int> perm(1000);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(1));
    const Matrix small = Y.topRows(1000);
    CHECK(sliced_w1(small, C, 8, 2).mean == sliced_w1(take_rows(small, perm), C, 8, 2).mean);
  }

  TEST_CASE("Mardia tests") {
    const Matrix X = gaussian_sample(mat({{1.0, 0.4}, {0.4, 2.0}}), 5000, 21);
    const MardiaResult g = mardia(X);
    CHECK(std::abs(g.kurtosis_stat - 8.0) <= 4.0 * std::sqrt(64.0 / 5000.0));
    CHECK(g.skew_pvalue > 0.01);
    CHECK(g.kurt_pvalue > 0.01);
    // Centred exponential: skewness 2, strongly rejected.
    std::mt19937_64 rng(3);
    std::exponential_distribution<double> e(1.0);
    Matrix E(5000, 1);
    for (int k = 0; k < 5000; ++k) E(k, 0) = e(rng) - 1.0;
    CHECK(mardia(E).skew_pvalue < 0.01);
    std::vector<int> perm(5000);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const MardiaResult p = mardia(take_rows(X, perm));
    CHECK(p.skewness_stat == doctest::Approx(g.skewness_stat).epsilon(1e-10));
    CHECK(p.kurtosis_stat == doctest::Approx(g.kurtosis_stat).epsilon(1e-10));
  }

  TEST_CASE("sample covariance") {
    const Matrix X = mat({{1, 2}, {3, 5}, {4, 4}, {0, 1}});
    const CovarianceEstimate c = sample_covariance(X);
    Matrix Xc = X.rowwise() - X.colwise().mean();
    CHECK((c.value - Xc.transpose() * Xc / 3.0).cwiseAbs().maxCoeff() < 1e-14);
    const CovarianceEstimate x = sample_cross_covariance(X, X);
    CHECK((x.value - c.value).cwiseAbs().maxCoeff() < 1e-14);
  }

  TEST_CASE("Gaussian gap bound") {
    const Matrix C = mat({{2.0, 0.3}, {0.3, 1.0}});
    CHECK(gaussian_gap_bound(C, C) == 0.0);
    // d = 1: min(1/√1.9, 1/√2)·0.1.
    CHECK(gaussian_gap_bound(mat({{1.9}}), mat({{2.0}})) == doctest::Approx(0.1 / std::sqrt(2.0)).epsilon(1e-12));
    const Matrix D = mat({{0.1, 0.0}, {0.0, -0.1}});
    double prev = 0.0;
    for (double s : {0.1, 0.2, 0.4}) {
      const double b = gaussian_gap_bound(C + s * D, C);
      CHECK(b > prev);
      prev = b;
    }
    const Matrix singular = mat({{1.0, 1.0}, {1.0, 1.0}});
    CHECK_THROWS_WITH_AS(gaussian_gap_bound(singular, C), doctest::Contains("C^R"), NumericalError);
    CHECK_THROWS_AS(gaussian_gap_bound(C, singular), NumericalError);
  }

  TEST_CASE("rate fits") {
    std::vector<std::pair<double, double>> pts;
    for (double R : {2.0, 4.0, 8.0, 16.0, 32.0}) pts.emplace_back(R, 1.0 / R);
    RateFit f = rate_fit(pts);
    CHECK(f.slope == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(std::abs(f.r2 - 1.0) < 1e-12);
    for (auto& p : pts) p.second = 3.0;
    CHECK(std::abs(rate_fit(pts).slope) < 1e-12);
    const double eps[] = {0.05, -0.05, 0.05, -0.05, 0.05};
    for (std::size_t k = 0; k < pts.size(); ++k) pts[k].second = 2.0 / std::sqrt(pts[k].first) * (1.0 + eps[k]);
    CHECK(std::abs(rate_fit(pts).slope + 0.5) <= 0.08);
    pts.resize(2);
    CHECK_THROWS_AS(rate_fit(pts), ConfigError);
  }

  TEST_CASE("increment diagnostics on synthetic data") {
    const Matrix G = gaussian_sample(Matrix::Identity(2, 2), 100, 4);
    CHECK(increment_moment(G, G, 0.5, 0.5, 4.0, 2.0).moment == 0.0);
    const Matrix Fs = gaussian_sample(Matrix::Identity(2, 2), 4000, 5);
    const Matrix Fs0 = Matrix::Zero(4000, 2);
    const Matrix Ft = Fs + gaussian_sample(0.5 * Matrix::Identity(2, 2), 4000, 6);
    const CorrelationEstimate c = increment_orthogonality(Fs, Ft);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        CHECK(std::abs(c.value(i, j)) <= 3.0 * c.se(i, j));
        CHECK(std::abs(c.value(i, j)) <= 1.0);
      }
    const CorrelationEstimate z = increment_orthogonality(Fs0, Ft);
    CHECK(z.value.cwiseAbs().maxCoeff() == 0.0);
    // p = 2 on Gaussian increments of variance R(t − s): ratio ≈ 1.
    const double R = 4.0, s = 0.25, t = 0.75;
    const Matrix Gs = std::sqrt(R * (t - s)) * Fs;
    const Matrix Gt = Gs + gaussian_sample(R * (t - s) * Matrix::Identity(2, 2), 4000, 7);
    const IncrementMoment m = increment_moment(Gs, Gt, s, t, 2.0, R);
    CHECK(std::abs(m.ratio - 1.0) < 4.0 * m.se / (R * (t - s)));
  }

  TEST_CASE("minimum eigenvalue") {
    CHECK(min_eigen_check(Matrix::Identity(3, 3)) == doctest::Approx(1.0));
    const Matrix S = mat({{1.0, 0.5}, {1.0, 0.5}});
    const Matrix CR = 1.7 * S * S.transpose();
    CHECK(std::abs(min_eigen_check(CR)) < 1e-8 * op_norm(CR));
    std::mt19937_64 rng(8);
    for (int k = 0; k < 50; ++k) {
      const Matrix A = random_psd(rng, 3), B = random_psd(rng, 3);
      CHECK(min_eigen_check(A + B) >= min_eigen_check(A) - 1e-12);
    }
  }

  TEST_CASE("bootstrap indices are reproducible and in range") {
    const auto a = bootstrap_indices(50, 4, 9), b = bootstrap_indices(50, 4, 9);
    CHECK(a == b);
    for (const auto& row : a) {
      CHECK(row.size() == 50);
      CHECK(*std::min_element(row.begin(), row.end()) >= 0);
      CHECK(*std::max_element(row.begin(), row.end()) < 50);
    }
  }
}
