#include "helpers.hpp"

#include "heatclt/errors.hpp"
#include "heatclt/observables.hpp"
#include "heatclt/oracles.hpp"
#include "heatclt/stats.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

using namespace heatclt;
using testing_support::mat;

namespace {

// Closed form of the Volterra equation via Laplace inversion:
// f(t) = exp(a²t)·erfc(−a√t), a = λ²/2.
double pam_closed_form(double lambda, double t) {
  const double a = 0.5 * lambda * lambda;
  return std::exp(a * a * t) * std::erfc(-a * std::sqrt(t));
}

std::vector<double> uniform_times(double T, int n) {
  std::vector<double> t(n + 1);
  for (int k = 0; k <= n; ++k) t[k] = T * k / n;
  return t;
}

}  // namespace

TEST_SUITE("oracles") {
  TEST_CASE("constant sigma law") {
    const Matrix S = mat({{1.0, 0.5}, {0.0, 0.7}});
    const EtaCurve eta = constant_eta(S, uniform_times(1.0, 10));
    const ConstantSigmaLaw law = constant_sigma_law(S, 1.0, 4.0, eta);
    CHECK((law.C - 2.0 * S * S.transpose()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(law.CR == prelimit_covariance(eta, 1.0, 4.0).value);
    CHECK(law.exact_gaussian);
    // C^R sits below C and approaches it.
    CHECK(min_eigen_check(law.C - law.CR) > 0.0);
    const ConstantSigmaLaw far = constant_sigma_law(S, 1.0, 400.0, eta);
    CHECK((far.CR - far.C).cwiseAbs().maxCoeff() < 0.01);
    const EtaCurve wrong = constant_eta(Matrix::Ones(1, 1), uniform_times(1.0, 10));
    CHECK_THROWS_AS(constant_sigma_law(S, 1.0, 4.0, wrong), ConfigError);
  }

  TEST_CASE("PAM second moment: lambda = 0 is identically one") {
    const VolterraSolution v = pam_second_moment(0.0, 1.0);
    for (double f : v.values) CHECK(f == doctest::Approx(1.0).epsilon(1e-14));
  }

  TEST_CASE("PAM second moment against the closed form") {
    for (double lambda : {0.5, 1.0, 1.5}) {
      const VolterraSolution v = pam_second_moment(lambda, 1.0);
      CHECK(v.error_estimate < 1e-8);
      for (double t : {0.0, 0.01, 0.25, 0.5, 1.0}) {
        const auto it = std::lower_bound(v.times.begin(), v.times.end(), t - 1e-15);
        REQUIRE(it != v.times.end());
        if (std::abs(*it - t) > 1e-12) continue;  // only compare on mesh nodes
        const double exact = pam_closed_form(lambda, t);
        CHECK(std::abs(v.values[it - v.times.begin()] - exact) <= 1e-7 * exact);
      }
      // Interpolated values stay close too (the mesh is fine near the end).
      CHECK(std::abs(v.at(0.7) - pam_closed_form(lambda, 0.7)) <= 1e-6 * pam_closed_form(lambda, 0.7));
    }
  }

  TEST_CASE("PAM second moment: monotone in t and lambda; small-t expansion") {
    const VolterraSolution a = pam_second_moment(0.8, 1.0), b = pam_second_moment(1.2, 1.0);
    for (std::size_t k = 1; k < a.values.size(); ++k) CHECK(a.values[k] >= a.values[k - 1]);
    for (double t : {0.1, 0.5, 1.0}) CHECK(b.at(t) > a.at(t));
    // Two Picard terms: f(t) ≈ 1 + λ²√(t/π) + λ⁴t/4.
    const double lambda = 1.0, t = 0.01;
    const VolterraSolution s = pam_second_moment(lambda, t);
    const double two_term = 1.0 + lambda * lambda * std::sqrt(t / std::numbers::pi) + std::pow(lambda, 4) * t / 4.0;
    CHECK(std::abs(s.values.back() - two_term) < 1e-3);
    CHECK(s.values.back() == doctest::Approx(1.05902).epsilon(1e-5));
  }

  TEST_CASE("PAM solution is self-consistent") {
    // Re-evaluate the right-hand side with r = t − w², which removes the singularity.
    const double lambda = 1.3, t = 0.9;
    const VolterraSolution v = pam_second_moment(lambda, 1.0);
    const int n = 20000;
    double integral = 0.0;
    const double W = std::sqrt(t);
    for (int k = 0; k < n; ++k) {
      const double w = (k + 0.5) * W / n;
      integral += v.at(t - w * w) * 2.0 * w / std::sqrt(4.0 * std::numbers::pi * w * w) * (W / n);
    }
    CHECK(std::abs(1.0 + lambda * lambda * integral - v.at(t)) < 1e-5);
  }

  TEST_CASE("Volterra eta and csv") {
    const VolterraSolution v = pam_second_moment(1.0, 0.5);
    const EtaCurve eta = v.eta();
    CHECK(eta.d() == 1);
    CHECK(eta.m() == 1);
    std::ostringstream out;
    v.write_csv(out);
    CHECK(out.str().rfind("t,f\n", 0) == 0);
    CHECK_THROWS_AS(v.at(0.6), ConfigError);
    CHECK_THROWS_AS(pam_second_moment(1.0, 1.0, 64, 0.0), ConfigError);
    CHECK_THROWS_AS(pam_second_moment(1.0, 1.0, 8), ConfigError);
    CHECK_THROWS_AS(pam_second_moment(1.0, 0.0), ConfigError);
  }

  TEST_CASE("additive point variance") {
    CHECK(additive_point_variance(1.0) == doctest::Approx(1.0 / std::sqrt(std::numbers::pi)).epsilon(1e-15));
    CHECK(additive_point_variance(0.25) == doctest::Approx(0.5 / std::sqrt(std::numbers::pi)).epsilon(1e-15));
    CHECK(additive_point_variance(0.0) == 0.0);
  }

  TEST_CASE("lattice moments converge under refinement") {
    const double T = 1.0;
    const LatticeMoments coarse = lattice_additive_moments(1.0, 1e-3, 0.05, T);
    const LatticeMoments fine = lattice_additive_moments(1.0, 2.5e-4, 0.025, T);
    const double target = 1.0 + additive_point_variance(T);
    const double e0 = coarse.second.back() - target, e1 = fine.second.back() - target;
    CHECK(std::abs(e1) < std::abs(e0));
    CHECK(std::abs(e0) < 0.02);
    CHECK(coarse.second.front() == 1.0);
    CHECK(coarse.times.back() == doctest::Approx(T));
    // Additive scheme: E[u²] = 1 + s²·(lattice variance).
    const LatticeMoments doubled = lattice_additive_moments(2.0, 1e-3, 0.05, T);
    CHECK(doubled.second.back() - 1.0 == doctest::Approx(4.0 * (coarse.second.back() - 1.0)).epsilon(1e-12));

    const double lam = 1.0;
    const double pam = pam_closed_form(lam, T);
    const double p0 = lattice_pam_moments(lam, 1e-3, 0.05, T).second.back() - pam;
    const double p1 = lattice_pam_moments(lam, 2.5e-4, 0.025, T).second.back() - pam;
    CHECK(std::abs(p1) < std::abs(p0));
    CHECK(lattice_pam_moments(0.0, 1e-3, 0.05, T).second.back() == doctest::Approx(1.0).epsilon(1e-14));
  }

  TEST_CASE("lattice constant covariance is close to the continuum prelimit") {
    const Grid grid = testing_support::default_grid(1.0, 5.0);
    const Matrix S = mat({{1.0}});
    const double lattice = lattice_constant_covariance(S, grid, 1.0, 5.0)(0, 0);
    const double continuum = prelimit_covariance(constant_eta(S, uniform_times(1.0, 10)), 1.0, 5.0).value(0, 0);
    CHECK(std::abs(lattice - continuum) < 1e-3);
  }
}
