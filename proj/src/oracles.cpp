#include "heatclt/oracles.hpp"

#include "heatclt/errors.hpp"
#include "heatclt/malliavin.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

namespace heatclt {

ConstantSigmaLaw constant_sigma_law(const Matrix& S, double t, double R, const EtaCurve& eta_const) {
  if (eta_const.d() != S.rows() || eta_const.m() != S.cols()) {
    throw ConfigError("constant_sigma_law: eta shape does not match S");
  }
  ConstantSigmaLaw law;
  law.C = 2.0 * t * (S * S.transpose());
  law.CR = prelimit_covariance(eta_const, t, R).value;
  law.exact_gaussian = true;
  return law;
}

// ---------------------------------------------------------------- Volterra

double VolterraSolution::at(double t) const {
  if (times.empty()) throw ConfigError("volterra: empty solution");
  if (t < 0.0 || t > times.back() * (1.0 + 1e-12)) throw ConfigError("volterra: t outside the solution grid");
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.end()) return values.back();
  const std::size_t b = static_cast<std::size_t>(it - times.begin());
  const std::size_t a = b - 1;
  const double frac = (t - times[a]) / (times[b] - times[a]);
  return (1.0 - frac) * values[a] + frac * values[b];
}

EtaCurve VolterraSolution::eta() const {
  EtaCurve curve(times, 1, 1, EtaProvenance::volterra_pam);
  for (std::size_t a = 0; a < times.size(); ++a) curve.value(a, 0, 0, 0) = lambda * lambda * values[a];
  return curve;
}

void VolterraSolution::write_csv(std::ostream& out) const {
  out << "t,f\n";
  char buf[96];
  for (std::size_t a = 0; a < times.size(); ++a) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", times[a], values[a]);
    out << buf;
  }
}

namespace {

std::vector<double> graded_mesh(double T, int n) {
  std::vector<double> t(n + 1);
  for (int a = 0; a <= n; ++a) {
    const double x = static_cast<double>(a) / n;
    t[a] = T * x * x;
  }
  t[n] = T;
  return t;
}

std::vector<double> solve_volterra(double lambda, const std::vector<double>& t) {
  const std::size_t n = t.size() - 1;
  const double K = lambda * lambda / std::sqrt(4.0 * std::numbers::pi);
  std::vector<double> f(n + 1, 1.0);
  std::vector<double> root(n + 1);
  for (std::size_t k = 1; k <= n; ++k) {
    const double tn = t[k];
    double acc = 0.0;
    double diag = 0.0;
    // √(t_n − r) at the mesh points, then exact moments of s^{−1/2} against
    // the two hat functions on each cell (cancellation-free forms).
    for (std::size_t a = 0; a <= k; ++a) root[a] = std::sqrt(tn - t[a]);
    for (std::size_t a = 0; a < k; ++a) {
      const double r0 = root[a], r1 = root[a + 1];  // √s0, √s1
      const double h = t[a + 1] - t[a];
      const double gap = h / (r0 + r1);             // √s0 − √s1
      const double left = 2.0 / 3.0 * gap * gap * (r0 + 2.0 * r1) / h;
      const double right = 2.0 / 3.0 * gap * gap * (2.0 * r0 + r1) / h;
      acc += left * f[a];
      if (a + 1 < k) {
        acc += right * f[a + 1];
      } else {
        diag = right;
      }
    }
    const double denom = 1.0 - K * diag;
    if (!(denom > 0.0)) throw NumericalError("volterra: step too coarse for the coupling (1 - K*w <= 0)");
    f[k] = (1.0 + K * acc) / denom;
  }
  return f;
}

}  // namespace

VolterraSolution pam_second_moment(double lambda, double T, int steps, double tol) {
  if (!(T > 0.0)) throw ConfigError("pam_second_moment: T must be positive");
  if (steps < 16) throw ConfigError("pam_second_moment: steps must be at least 16");
  if (!(tol > 0.0)) throw ConfigError("pam_second_moment: tol must be positive");
  constexpr int kMaxSteps = 1 << 20;
  std::vector<double> times = graded_mesh(T, steps);
  std::vector<double> values = solve_volterra(lambda, times);
  for (;;) {
    if (2 * static_cast<long>(steps) > kMaxSteps) {
      throw NumericalError("pam_second_moment: no convergence to tol within 2^20 steps");
    }
    const int finer = 2 * steps;
    std::vector<double> fine_times = graded_mesh(T, finer);
    std::vector<double> fine = solve_volterra(lambda, fine_times);
    double change = 0.0;
    for (int a = 0; a <= steps; ++a) change = std::max(change, std::abs(fine[2 * a] - values[a]));
    steps = finer;
    times = std::move(fine_times);
    values = std::move(fine);
    if (change < tol) {
      return {lambda, std::move(times), std::move(values), change, steps};
    }
  }
}

double additive_point_variance(double t) {
  if (t < 0.0) throw ConfigError("additive_point_variance: t must be nonnegative");
  return std::sqrt(t / std::numbers::pi);
}

// ---------------------------------------------------------------- lattice

namespace {

// g_{n+1}(h) = Σ_k B(k) g_n(h − k) + forcing(g_n(0))·δ_{h0} on an unbounded
// lattice; B is the autocorrelation of the stencil (c, 1 − 2c, c).
template <typename Forcing>
LatticeMoments lattice_recursion(double dt, double dx, double T, double g0, Forcing forcing, double offset) {
  if (!(dt > 0.0) || !(dx > 0.0) || !(T > 0.0)) throw ConfigError("lattice moments: dt, dx, T must be positive");
  const double c = dt / (2.0 * dx * dx);
  if (c > 0.25 * (1.0 + 1e-12)) throw ConfigError("lattice moments: stability violated");
  const int N = static_cast<int>(std::lround(T / dt));
  const double B[5] = {c * c, 2.0 * c * (1.0 - 2.0 * c), (1.0 - 2.0 * c) * (1.0 - 2.0 * c) + 2.0 * c * c,
                       2.0 * c * (1.0 - 2.0 * c), c * c};
  const int width = 2 * N + 2;  // lags −width..width
  std::vector<double> g(2 * width + 1, g0), next(2 * width + 1, g0);
  LatticeMoments out;
  out.times.push_back(0.0);
  out.second.push_back(offset + g[width]);
  for (int n = 0; n < N; ++n) {
    for (int h = 2; h + 2 < static_cast<int>(g.size()); ++h) {
      next[h] = B[0] * g[h - 2] + B[1] * g[h - 1] + B[2] * g[h] + B[3] * g[h + 1] + B[4] * g[h + 2];
    }
    next[width] += forcing(g[width]);
    std::swap(g, next);
    out.times.push_back((n + 1) * dt);
    out.second.push_back(offset + g[width]);
  }
  return out;
}

}  // namespace

LatticeMoments lattice_additive_moments(double sigma, double dt, double dx, double T) {
  const double g2 = dt / dx;
  // Centred covariance starts at 0; E[u²] = 1 + g(0).
  return lattice_recursion(dt, dx, T, 0.0, [&](double) { return g2 * sigma * sigma; }, 1.0);
}

LatticeMoments lattice_pam_moments(double lambda, double dt, double dx, double T) {
  const double g2 = dt / dx;
  return lattice_recursion(dt, dx, T, 1.0, [&](double g0) { return g2 * lambda * lambda * g0; }, 0.0);
}

Matrix lattice_constant_covariance(const Matrix& S, const Grid& grid, double t, double R) {
  return constant_sigma_pairing(S, grid, WindowTable::build(grid, t, R, WindowKind::discrete));
}

}  // namespace heatclt
