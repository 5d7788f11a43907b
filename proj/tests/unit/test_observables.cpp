#include "helpers.hpp"

#include "heatclt/errors.hpp"
#include "heatclt/observables.hpp"
#include "heatclt/oracles.hpp"
#include "heatclt/stats.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace heatclt;
using testing_support::mat;

namespace {

std::vector<double> grid_times(double T, int n) {
  std::vector<double> t;
  for (int k = 0; k <= n; ++k) t.push_back(T * k / n);
  return t;
}

EtaCurve unit_eta(double T = 1.0, int n = 1000) { return constant_eta(mat({{1.0}}), grid_times(T, n)); }

// (4 / (3√π)) t^{3/2}: the exact large-R limit of R·(C − C^R) for η ≡ 1.
double gap_constant(double t) { return 4.0 / (3.0 * std::sqrt(std::numbers::pi)) * std::pow(t, 1.5); }

}  // namespace

TEST_SUITE("observables") {
  TEST_CASE("spatial average: constant fields and affine structure") {
    const Grid g = testing_support::default_grid(1.0, 4.0);
    FieldState u = FieldState::initial(2, g.nx());
    for (double R : {0.5, 1.0, 2.0, 4.0}) CHECK(spatial_average(u, g, R).cwiseAbs().maxCoeff() < 1e-12);
    const double c = 0.37;
    FieldState shifted = u;
    for (int i = 0; i < 2; ++i)
      for (int n = 0; n < g.nx(); ++n) shifted.u(i, n) = 1.0 + c;
    for (double R : {1.0, 3.0}) CHECK(spatial_average(shifted, g, R)(0) == doctest::Approx(2.0 * c * std::sqrt(R)).epsilon(1e-12));
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(1.0, 0.5);
    FieldState a = u, b = u, sum = u;
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < g.nx(); ++k) {
        a.u(i, k) = n(rng);
        b.u(i, k) = n(rng);
        sum.u(i, k) = a.u(i, k) + b.u(i, k);
      }
    const double R = 2.0;
    const Vector lhs = spatial_average(sum, g, R);
    const Vector rhs = spatial_average(a, g, R) + spatial_average(b, g, R) + Vector::Constant(2, 2.0 * std::sqrt(R));
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(spatial_average(u, g, 100.0), ConfigError);
  }

  TEST_CASE("eta for constant sigma and at r = 0") {
    const Grid g = testing_support::default_grid(0.1, 1.0);
    const Matrix S = mat({{1.0, 0.5}, {-0.3, 2.0}});
    const EtaCurve e = estimate_eta(testing_support::constant_field(S), g, {0.0, 0.05, 0.1}, 20, 1);
    CHECK(e.provenance() == EtaProvenance::monte_carlo);
    for (std::size_t a = 0; a < e.size(); ++a)
      for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) {
            CHECK(e.value(a, k, i, j) == doctest::Approx(S(i, k) * S(j, k)).epsilon(1e-14));
            CHECK(std::abs(e.se(a, k, i, j)) < 1e-8);  // rounding in sumsq − sum²/M
          }
    const auto f = testing_support::smooth_field_2d();
    const Matrix s1 = f.sigma(Vector::Ones(2));
    const EtaCurve e0 = estimate_eta(f, g, {0.0, 0.1}, 20, 1);
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(e0.value(0, k, i, j) == doctest::Approx(s1(i, k) * s1(j, k)).epsilon(1e-14));
    CHECK_NOTHROW(e0.validate());
  }

  TEST_CASE("eta of the parabolic Anderson model matches the Volterra oracle") {
    const Grid g = testing_support::default_grid(1.0, 0.0);
    const EtaCurve e = estimate_eta(testing_support::pam_field(1.0), g, {0.5, 1.0}, 300, 4);
    const VolterraSolution v = pam_second_moment(1.0, 1.0);
    for (std::size_t a = 0; a < 2; ++a) {
      const double t = e.times()[a];
      CHECK(std::abs(e.value(a, 0, 0, 0) - v.at(t)) <= 3.0 * e.se(a, 0, 0, 0) + 0.05 * v.at(t));
    }
  }

  TEST_CASE("estimate_eta does not depend on the worker count") {
    const Grid g = testing_support::default_grid(0.1, 0.5);
    const auto f = testing_support::smooth_field_2d();
    const EtaCurve a = estimate_eta(f, g, {0.05, 0.1}, 230, 3, 1);
    const EtaCurve b = estimate_eta(f, g, {0.05, 0.1}, 230, 3, 3);
    for (std::size_t t = 0; t < 2; ++t)
      for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) {
            CHECK(a.value(t, k, i, j) == b.value(t, k, i, j));
            CHECK(a.se(t, k, i, j) == b.se(t, k, i, j));
          }
  }

  TEST_CASE("eta curve validation and columnar round trip") {
    EtaCurve e = constant_eta(mat({{1.0, 0.0}, {0.5, 1.0}}), grid_times(1.0, 4));
    CHECK_NOTHROW(e.validate());
    std::stringstream io;
    e.write_csv(io);
    const EtaCurve back = EtaCurve::read_csv(io);
    CHECK(back.d() == 2);
    CHECK(back.m() == 2);
    CHECK(back.provenance() == EtaProvenance::closed_form_constant);
    CHECK(back.times() == e.times());
    for (std::size_t a = 0; a < e.size(); ++a)
      for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) CHECK(back.value(a, k, i, j) == e.value(a, k, i, j));
    e.value(2, 0, 0, 1) += 0.1;
    CHECK_THROWS_AS(e.validate(), ConfigError);
    EtaCurve neg = constant_eta(mat({{1.0}, {1.0}}), grid_times(1.0, 2));
    neg.value(1, 0, 0, 1) = neg.value(1, 0, 1, 0) = 3.0;  // |η_01| > √(η_00 η_11): not PSD
    CHECK_THROWS_AS(neg.validate(), ConfigError);
  }

  TEST_CASE("limit covariance") {
    CHECK(limit_covariance(unit_eta(), 1.0).value(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
    const Matrix S = mat({{1.0, 0.5, 0.0}, {-0.3, 2.0, 1.0}});
    const EtaCurve e = constant_eta(S, grid_times(1.0, 1000));
    for (double t : {0.25, 0.5, 1.0}) {
      const Matrix C = limit_covariance(e, t).value;
      CHECK((C - 2.0 * t * S * S.transpose()).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((C - C.transpose()).norm() == 0.0);
      CHECK(sym_eig(C).values.minCoeff() >= 0.0);
    }
    CHECK_THROWS_AS(limit_covariance(e, 1.5), ConfigError);
  }

  TEST_CASE("prelimit covariance: regression constant, ordering and convergence") {
    // C^R(1) for η ≡ 1 at R = 5: independent 30-digit double quadrature of
    // 2∫_0^1∫_0^{10} p_{2−2r}(z)(2 − z/5) dz dr.
    const double frozen = 1.849549444387267;
    CHECK(std::abs(prelimit_covariance(unit_eta(), 1.0, 5.0).value(0, 0) - frozen) < 1e-10);
    // Coarser η grids (e.g. Monte Carlo stride) stay accurate for smooth η.
    CHECK(std::abs(prelimit_covariance(unit_eta(1.0, 100), 1.0, 5.0).value(0, 0) - frozen) < 1e-10);

    const Matrix S = mat({{1.0, 0.2}, {0.4, 0.8}});
    const EtaCurve e = constant_eta(S, grid_times(1.0, 1000));
    double prev_gap = INFINITY;
    for (double R = 0.5; R <= 64.0; R *= 2.0) {
      const Matrix CR = prelimit_covariance(e, 1.0, R).value, C = limit_covariance(e, 1.0).value;
      for (int i = 0; i < 2; ++i) CHECK(CR(i, i) <= C(i, i));
      CHECK(CR == CR.transpose());
      CHECK(sym_eig(CR).values.minCoeff() > 0.0);
      const double gap = (C - CR).cwiseAbs().maxCoeff();
      CHECK(gap < prev_gap);
      prev_gap = gap;
    }
    // The gap decays exactly like 0.752/R, so a 1e-6 gap needs R ~ 1e6.
    const double R = 1e4;
    const double gap = limit_covariance(unit_eta(), 1.0).value(0, 0) - prelimit_covariance(unit_eta(), 1.0, R).value(0, 0);
    CHECK(R * gap == doctest::Approx(gap_constant(1.0)).epsilon(1e-6));
    CHECK(std::abs(gap) > 1e-6);
    CHECK(std::abs(2.0 - prelimit_covariance(unit_eta(), 1.0, 1e6).value(0, 0)) < 1e-6);
  }

  TEST_CASE("window factor closed form against direct quadrature") {
    for (double s : {1e-4, 0.1, 1.0, 3.0})
      for (double R : {0.3, 1.0, 5.0}) {
        const double direct = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
            [&](double z) { return heat_kernel(s, z) * (2.0 - z / R); }, 0.0, 2.0 * R, 15, 1e-14);
        CHECK(std::abs(window_factor(s, R) - direct) < 1e-12);
        CHECK(std::abs(window_deficit(s, R) - (1.0 - direct)) < 1e-12);
        CHECK(window_factor(s, R) <= 1.0);
      }
    CHECK(window_factor(0.0, 1.0) == 1.0);
  }

  TEST_CASE("cross covariance reduces to the prelimit at s = t and is symmetric in (s, t)") {
    const EtaCurve e = constant_eta(mat({{1.0, 0.3}, {0.2, 0.7}}), grid_times(1.0, 1000));
    const Matrix a = prelimit_cross_covariance(e, 1.0, 1.0, 4.0).value;
    CHECK((a - prelimit_covariance(e, 1.0, 4.0).value).cwiseAbs().maxCoeff() < 1e-14);
    const Matrix st = prelimit_cross_covariance(e, 0.5, 1.0, 4.0).value;
    const Matrix ts = prelimit_cross_covariance(e, 1.0, 0.5, 4.0).value;
    CHECK((st - ts).cwiseAbs().maxCoeff() == 0.0);
    const Matrix far = prelimit_cross_covariance(e, 0.5, 1.0, 400.0).value;
    CHECK((far - limit_covariance(e, 0.5).value).cwiseAbs().maxCoeff() < 0.01);
  }

  TEST_CASE("two-point covariance") {
    const EtaCurve e = unit_eta();
    CHECK(two_point_cov(e, 1.0, 1.0, 0.0)(0, 0) == doctest::Approx(1.0 + 1.0 / std::sqrt(std::numbers::pi)).epsilon(1e-12));
    CHECK(two_point_cov(e, 1.0, 1.0, 0.0)(0, 0) == doctest::Approx(1.5642).epsilon(1e-4));
    for (double t : {0.25, 0.5}) CHECK(two_point_cov(e, t, t, 0.0)(0, 0) - 1.0 == doctest::Approx(additive_point_variance(t)).epsilon(1e-12));
    CHECK(std::abs(two_point_cov(e, 1.0, 0.7, 60.0)(0, 0) - 1.0) < 1e-12);
    CHECK(two_point_cov(e, 1.0, 0.0, 0.0)(0, 0) == 1.0);
    // Off-diagonal lag and unequal times: independent Gauss–Kronrod quadrature.
    const double direct = 1.0 + boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                                    [](double r) { return heat_kernel(1.0 + 0.6 - 2.0 * r, 0.8); }, 0.0, 0.6, 15, 1e-14);
    CHECK(two_point_cov(e, 1.0, 0.6, 0.8)(0, 0) == doctest::Approx(direct).epsilon(1e-12));
  }
}
