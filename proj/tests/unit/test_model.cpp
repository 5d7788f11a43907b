#include "helpers.hpp"

#include "heatclt/errors.hpp"
#include "heatclt/model.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/sinh_sinh.hpp>
#include <doctest.h>

#include <algorithm>
#include <numbers>
#include <numeric>
#include <random>

using namespace heatclt;
using testing_support::mat;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix A(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) A(i, j) = n(rng);
  return A;
}

Tensor3 random_tensor(std::mt19937_64& rng, int a, int b, int c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor3 T(a, b, c);
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < b; ++j)
      for (int k = 0; k < c; ++k) T(i, j, k) = n(rng);
  return T;
}

std::vector<DiffusionField> random_fields(std::mt19937_64& rng, int d, int m) {
  return {DiffusionField::from_family(ConstantSigma{random_matrix(rng, d, m)}),
          DiffusionField::from_family(AffineSigma{random_matrix(rng, d, m), random_tensor(rng, d, m, d)}),
          DiffusionField::from_family(
              BoundedSmoothSigma{random_matrix(rng, d, m), random_matrix(rng, d, m), random_tensor(rng, d, m, d)})};
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("heat kernel values, symmetry and unit mass") {
    CHECK(heat_kernel(1.0, 0.0) == doctest::Approx(0.3989423).epsilon(1e-7));
    for (double t : {0.01, 0.3, 1.0, 7.0})
      for (double x : {0.0, 0.2, 1.5, 4.0}) CHECK(heat_kernel(t, x) == heat_kernel(t, -x));
    boost::math::quadrature::sinh_sinh<double> integrator;
    for (double t : {0.1, 1.0, 4.0}) {
      const double mass = integrator.integrate([t](double x) { return heat_kernel(t, x); });
      CHECK(std::abs(mass - 1.0) < 1e-10);
    }
    CHECK_THROWS_AS(heat_kernel(0.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(heat_kernel(-1.0, 1.0), std::domain_error);
  }

  TEST_CASE("kernel window") {
    CHECK(kernel_window(1.0, 0.0, 1.0) == doctest::Approx(0.6826895).epsilon(1e-7));
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> tau(0.001, 5.0), y(-10.0, 10.0), R(0.01, 20.0);
    for (int n = 0; n < 500; ++n) {
      const double t = tau(rng), a = y(rng), b = y(rng), r = R(rng);
      const double w = kernel_window(t, a, r);
      CHECK(w == kernel_window(t, -a, r));
      CHECK(w >= 0.0);
      CHECK(w <= 1.0);
      CHECK(w + kernel_window(t, b, r) <= 2.0);
    }
    double prev = 0.0;
    for (double r = 0.1; r < 60.0; r *= 1.5) {
      const double w = kernel_window(0.7, 0.3, r);
      CHECK(w >= prev);
      prev = w;
    }
    CHECK(prev == doctest::Approx(1.0).epsilon(1e-14));
    // Closed form against direct quadrature of p_tau over [−R, R].
    for (double yy : {0.0, 0.7, -2.5}) {
      const double direct = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
          [&](double x) { return heat_kernel(0.4, x - yy); }, -1.3, 1.3, 15, 1e-14);
      CHECK(std::abs(direct - kernel_window(0.4, yy, 1.3)) < 1e-12);
    }
    CHECK_THROWS_AS(kernel_window(0.0, 0.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(kernel_window(1.0, 0.0, 0.0), std::domain_error);
  }

  TEST_CASE("check_h1 examples") {
    auto h = check_h1(testing_support::constant_field(Matrix::Identity(2, 2)));
    CHECK(h.holds);
    CHECK(h.rank == 2);
    h = check_h1(testing_support::constant_field(mat({{1, 1}, {1, 1}})));
    CHECK_FALSE(h.holds);
    CHECK(h.rank == 1);
    std::mt19937_64 rng(3);
    for (const auto& f : random_fields(rng, 2, 1)) {
      const auto r = check_h1(f);
      CHECK_FALSE(r.holds);
      CHECK(r.rank <= 1);
    }
  }

  TEST_CASE("check_h1 is invariant under column permutation and scaling") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> scale(0.1, 10.0);
    for (int trial = 0; trial < 50; ++trial) {
      const int d = 1 + trial % 3, m = d + trial % 2;
      Matrix S = random_matrix(rng, d, m);
      if (trial % 4 == 0) S.col(0) = S.col(m - 1) * 2.0;  // sometimes rank deficient
      if (trial % 5 == 0 && d > 1) S.row(1) = S.row(0);
      const auto base = check_h1(testing_support::constant_field(S));
      Matrix P = S;
      std::vector<int> perm(m);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (int j = 0; j < m; ++j) P.col(j) = S.col(perm[j]) * (trial % 2 ? scale(rng) : -scale(rng));
      const auto moved = check_h1(testing_support::constant_field(P));
      CHECK(moved.rank == base.rank);
      CHECK(moved.holds == base.holds);
    }
  }

  TEST_CASE("jacobians match finite differences") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(1.0, 0.7);
    for (int trial = 0; trial < 20; ++trial) {
      const int d = 1 + trial % 3, m = 1 + (trial / 3) % 3;
      for (const auto& f : random_fields(rng, d, m)) {
        REQUIRE(f.has_jacobian());
        Vector u(d);
        for (int k = 0; k < d; ++k) u(k) = n(rng);
        const Tensor3 J = f.jacobian(u);
        const double h = 1e-5;
        for (int k = 0; k < d; ++k) {
          Vector up = u, um = u;
          up(k) += h;
          um(k) -= h;
          const Matrix fd = (f.sigma(up) - f.sigma(um)) / (2.0 * h);
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < m; ++j) {
              const double scale = std::max(1e-3, std::abs(J(i, j, k)));
              CHECK(std::abs(fd(i, j) - J(i, j, k)) / scale < 1e-4);
            }
        }
      }
    }
  }

  TEST_CASE("lipschitz hint bounds sampled increments; sigma is finite") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 3.0);
    for (int trial = 0; trial < 10; ++trial) {
      const int d = 1 + trial % 3, m = 1 + trial % 2;
      for (const auto& f : random_fields(rng, d, m)) {
        for (int pair = 0; pair < 50; ++pair) {
          Vector u(d), v(d);
          for (int k = 0; k < d; ++k) {
            u(k) = n(rng);
            v(k) = n(rng);
          }
          const Matrix su = f.sigma(u), sv = f.sigma(v);
          CHECK(su.allFinite());
          CHECK((su - sv).norm() <= f.lipschitz_hint() * (u - v).norm() * (1.0 + 1e-12) + 1e-14);
        }
      }
    }
  }

  TEST_CASE("constant equals affine with zero slopes; affine is exactly linear") {
    std::mt19937_64 rng(13);
    const Matrix S = random_matrix(rng, 2, 3);
    const auto c = DiffusionField::from_family(ConstantSigma{S});
    const auto a = DiffusionField::from_family(AffineSigma{S, Tensor3(2, 3, 2)});
    const auto lin = DiffusionField::from_family(AffineSigma{S, random_tensor(rng, 2, 3, 2)});
    std::normal_distribution<double> n(0.0, 2.0);
    std::uniform_real_distribution<double> alpha(-1.0, 2.0);
    for (int k = 0; k < 100; ++k) {
      Vector u(2), v(2);
      u << n(rng), n(rng);
      v << n(rng), n(rng);
      CHECK(c.sigma(u) == a.sigma(u));
      const double al = alpha(rng);
      const Matrix lhs = lin.sigma(al * u + (1.0 - al) * v);
      const Matrix rhs = al * lin.sigma(u) + (1.0 - al) * lin.sigma(v);
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, rhs.cwiseAbs().maxCoeff()));
    }
  }

  TEST_CASE("node-wise evaluation agrees with pointwise sigma and jacobian") {
    const auto f = testing_support::smooth_field_2d();
    const int n = 5;
    std::vector<double> u(2 * n);
    for (int k = 0; k < 2 * n; ++k) u[k] = 0.3 * k - 1.0;
    FieldView view{u.data(), 2, static_cast<std::size_t>(n), static_cast<std::size_t>(n)};
    std::vector<double> s(2 * 2 * n), J(2 * 2 * 2 * n);
    f.sigma_nodes(view, s);
    f.jacobian_nodes(view, J);
    for (int node = 0; node < n; ++node) {
      Vector x(2);
      x << u[node], u[n + node];
      const Matrix S = f.sigma(x);
      const Tensor3 T = f.jacobian(x);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          CHECK(s[(i * 2 + j) * n + node] == doctest::Approx(S(i, j)).epsilon(1e-15));
          for (int k = 0; k < 2; ++k) CHECK(J[((i * 2 + j) * 2 + k) * n + node] == doctest::Approx(T(i, j, k)).epsilon(1e-15));
        }
    }
  }

  TEST_CASE("shape errors are configuration errors") {
    CHECK_THROWS_AS(DiffusionField::from_family(AffineSigma{Matrix::Ones(2, 2), Tensor3(2, 1, 2)}), ConfigError);
    CHECK_THROWS_AS(DiffusionField::from_family(BoundedSmoothSigma{Matrix::Ones(2, 2), Matrix::Ones(1, 2), Tensor3(2, 2, 2)}),
                    ConfigError);
    const auto custom = DiffusionField::custom(1, 1, [](const Vector& u) { return Matrix::Constant(1, 1, std::abs(u(0))); },
                                               std::nullopt, 1.0);
    CHECK_FALSE(custom.has_jacobian());
    CHECK_THROWS_AS(custom.jacobian(Vector::Ones(1)), ConfigError);
  }
}
