#include "heatclt/observables.hpp"

#include "heatclt/errors.hpp"
#include "heatclt/parallel.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace heatclt {

Vector spatial_average(const FieldState& state, const Grid& grid, double R) {
  const double r = grid.effective_radius(R);
  const auto [first, last] = grid.window_nodes(R);
  const int d = state.u.d();
  Vector F(d);
  // Σ (u − 1)·dx equals Σ u·dx − 2R exactly on the aligned window and avoids
  // cancelling two large numbers.
  for (int i = 0; i < d; ++i) {
    const auto row = state.u.row(i);
    double acc = 0.0;
    for (int node = first; node < last; ++node) acc += row[node] - 1.0;
    F(i) = acc * grid.dx() / std::sqrt(r);
  }
  return F;
}

// ---------------------------------------------------------------- EtaCurve

std::string to_string(EtaProvenance p) {
  switch (p) {
    case EtaProvenance::monte_carlo: return "monte-carlo";
    case EtaProvenance::closed_form_constant: return "closed-form-constant";
    case EtaProvenance::volterra_pam: return "volterra-pam";
  }
  return "unknown";
}

EtaProvenance eta_provenance_from_string(const std::string& s) {
  if (s == "monte-carlo") return EtaProvenance::monte_carlo;
  if (s == "closed-form-constant") return EtaProvenance::closed_form_constant;
  if (s == "volterra-pam") return EtaProvenance::volterra_pam;
  throw ConfigError("eta: unknown provenance '" + s + "'");
}

EtaCurve::EtaCurve(std::vector<double> times, int d, int m, EtaProvenance provenance)
    : times_(std::move(times)), d_(d), m_(m), provenance_(provenance) {
  if (d < 1 || m < 1) throw ConfigError("eta: d and m must be positive");
  const std::size_t n = times_.size() * static_cast<std::size_t>(m) * d * d;
  values_.assign(n, 0.0);
  se_.assign(n, 0.0);
}

Matrix EtaCurve::matrix(std::size_t a, int k) const {
  Matrix out(d_, d_);
  for (int i = 0; i < d_; ++i)
    for (int j = 0; j < d_; ++j) out(i, j) = value(a, k, i, j);
  return out;
}

void EtaCurve::validate() const {
  if (times_.empty()) throw ConfigError("eta: empty time grid");
  if (times_.front() != 0.0) throw ConfigError("eta: time grid must start at 0");
  for (std::size_t a = 1; a < times_.size(); ++a) {
    if (!(times_[a] > times_[a - 1])) throw ConfigError("eta: time grid must be strictly increasing");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw ConfigError("eta: non-finite value");
  }
  for (std::size_t a = 0; a < times_.size(); ++a) {
    for (int k = 0; k < m_; ++k) {
      const Matrix E = matrix(a, k);
      const double scale = std::max(1.0, E.cwiseAbs().maxCoeff());
      if ((E - E.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw ConfigError("eta: matrix not symmetric at r = " + std::to_string(times_[a]));
      }
      const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(E, Eigen::EigenvaluesOnly).eigenvalues()(0);
      if (lo < -1e-10 * scale) {
        throw ConfigError("eta: matrix not positive semidefinite at r = " + std::to_string(times_[a]));
      }
    }
  }
}

void EtaCurve::write_csv(std::ostream& out) const {
  out << "# provenance=" << to_string(provenance_) << " d=" << d_ << " m=" << m_ << "\n";
  out << "r,k,i,j,value,se\n";
  char buf[160];
  for (std::size_t a = 0; a < times_.size(); ++a)
    for (int k = 0; k < m_; ++k)
      for (int i = 0; i < d_; ++i)
        for (int j = 0; j < d_; ++j) {
          std::snprintf(buf, sizeof buf, "%.17g,%d,%d,%d,%.17g,%.17g\n", times_[a], k, i, j,
                        value(a, k, i, j), se(a, k, i, j));
          out << buf;
        }
}

EtaCurve EtaCurve::read_csv(std::istream& in) {
  std::string line;
  EtaProvenance provenance = EtaProvenance::monte_carlo;
  int d = 0, m = 0;
  bool header = false;
  struct Row {
    double r;
    int k, i, j;
    double value, se;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string token;
      while (meta >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = token.substr(0, eq), val = token.substr(eq + 1);
        if (key == "provenance") provenance = eta_provenance_from_string(val);
      }
      continue;
    }
    if (!header) {
      if (line != "r,k,i,j,value,se") throw ConfigError("eta csv: expected header 'r,k,i,j,value,se'");
      header = true;
      continue;
    }
    Row row{};
    char* end = nullptr;
    const char* p = line.c_str();
    row.r = std::strtod(p, &end);
    auto next_int = [&](int& v) {
      if (*end != ',') throw ConfigError("eta csv: malformed row '" + line + "'");
      v = static_cast<int>(std::strtol(end + 1, &end, 10));
    };
    auto next_double = [&](double& v) {
      if (*end != ',') throw ConfigError("eta csv: malformed row '" + line + "'");
      v = std::strtod(end + 1, &end);
    };
    next_int(row.k);
    next_int(row.i);
    next_int(row.j);
    next_double(row.value);
    next_double(row.se);
    if (*end != '\0' && *end != '\r') throw ConfigError("eta csv: malformed row '" + line + "'");
    if (row.k < 0 || row.i < 0 || row.j < 0) throw ConfigError("eta csv: negative index");
    m = std::max(m, row.k + 1);
    d = std::max({d, row.i + 1, row.j + 1});
    rows.push_back(row);
  }
  if (!header || rows.empty()) throw ConfigError("eta csv: no data");
  std::vector<double> times;
  for (const Row& row : rows) {
    if (times.empty() || times.back() != row.r) {
      if (!times.empty() && row.r < times.back()) throw ConfigError("eta csv: times not sorted");
      times.push_back(row.r);
    }
  }
  const std::size_t expected = times.size() * static_cast<std::size_t>(m) * d * d;
  if (rows.size() != expected) throw ConfigError("eta csv: incomplete table");
  EtaCurve eta(times, d, m, provenance);
  std::size_t a = 0;
  for (const Row& row : rows) {
    while (times[a] != row.r) ++a;
    eta.value(a, row.k, row.i, row.j) = row.value;
    eta.se(a, row.k, row.i, row.j) = row.se;
  }
  return eta;
}

EtaCurve constant_eta(const Matrix& S, std::vector<double> times) {
  EtaCurve eta(std::move(times), static_cast<int>(S.rows()), static_cast<int>(S.cols()),
               EtaProvenance::closed_form_constant);
  for (std::size_t a = 0; a < eta.size(); ++a)
    for (int k = 0; k < eta.m(); ++k)
      for (int i = 0; i < eta.d(); ++i)
        for (int j = 0; j < eta.d(); ++j) eta.value(a, k, i, j) = S(i, k) * S(j, k);
  return eta;
}

// ---------------------------------------------------------------- pooling

PoolingLayout PoolingLayout::for_grid(const Grid& grid) {
  PoolingLayout layout;
  // x(node) = −L + (node+1)·dx ≥ −L/2.
  layout.first = std::max(0, static_cast<int>(std::ceil(0.5 * grid.L() / grid.dx() - 1.0 - 1e-9)));
  const int count = std::max(1, grid.nx() - 2 * layout.first);
  const int width = std::max(1, static_cast<int>(std::lround(4.0 * std::sqrt(2.0 * grid.T()) / grid.dx())));
  if (count <= width) {
    layout.block_nodes = count;
    layout.blocks = 1;
  } else {
    layout.block_nodes = width;
    layout.blocks = count / width;
  }
  // Centre the used nodes inside the pooled range.
  layout.first += (count - layout.blocks * layout.block_nodes) / 2;
  return layout;
}

void PooledSums::add(const PooledSums& other) {
  if (other.series != series) throw ConfigError("pooled sums: series count mismatch");
  for (std::size_t s = 0; s < series; ++s) {
    count[s] += other.count[s];
    sum[s] += other.sum[s];
    sumsq[s] += other.sumsq[s];
  }
}

double PooledSums::mean(std::size_t s) const { return sum[s] / count[s]; }

double PooledSums::stderr_of_mean(std::size_t s) const {
  const double n = count[s];
  if (n < 2.0) return std::numeric_limits<double>::quiet_NaN();
  const double mu = sum[s] / n;
  const double var = std::max(0.0, (sumsq[s] - n * mu * mu) / (n - 1.0));
  return std::sqrt(var / n);
}

std::size_t eta_series_count(int d, int m) {
  return static_cast<std::size_t>(m) * d * (d + 1) / 2;
}

std::size_t eta_series_index(int k, int i, int j, int d) {
  if (i > j) std::swap(i, j);
  const std::size_t pairs = static_cast<std::size_t>(d) * (d + 1) / 2;
  const std::size_t pair = static_cast<std::size_t>(i) * d - static_cast<std::size_t>(i) * (i - 1) / 2 + (j - i);
  return static_cast<std::size_t>(k) * pairs + pair;
}

namespace {

template <typename Product>
void pool_blocks(const PoolingLayout& layout, PooledSums& out, std::size_t series, Product product) {
  for (int b = 0; b < layout.blocks; ++b) {
    const int begin = layout.first + b * layout.block_nodes;
    double acc = 0.0;
    for (int node = begin; node < begin + layout.block_nodes; ++node) acc += product(node);
    const double mean = acc / layout.block_nodes;
    out.count[series] += 1.0;
    out.sum[series] += mean;
    out.sumsq[series] += mean * mean;
  }
}

}  // namespace

void pool_sigma_products(std::span<const double> sigma_nodes, int d, int m, int nx,
                         const PoolingLayout& layout, PooledSums& out, std::size_t offset) {
  auto entry = [&](int i, int k) {
    return sigma_nodes.data() + (static_cast<std::size_t>(i) * m + k) * nx;
  };
  for (int k = 0; k < m; ++k)
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) {
        const double* si = entry(i, k);
        const double* sj = entry(j, k);
        pool_blocks(layout, out, offset + eta_series_index(k, i, j, d),
                    [&](int node) { return si[node] * sj[node]; });
      }
}

void pool_state_products(const FieldState& state, const PoolingLayout& layout, PooledSums& out,
                         std::size_t offset) {
  const int d = state.u.d();
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      const auto ui = state.u.row(i);
      const auto uj = state.u.row(j);
      pool_blocks(layout, out, offset + static_cast<std::size_t>(i) * d + j,
                  [&](int node) { return ui[node] * uj[node]; });
    }
}

EtaCurve eta_from_pooled(const std::vector<double>& times, int d, int m, const PooledSums& sums) {
  const std::size_t per_time = eta_series_count(d, m);
  if (sums.series != per_time * times.size()) throw ConfigError("eta: pooled sums do not match the time grid");
  EtaCurve eta(times, d, m, EtaProvenance::monte_carlo);
  for (std::size_t a = 0; a < times.size(); ++a)
    for (int k = 0; k < m; ++k)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          const std::size_t s = a * per_time + eta_series_index(k, i, j, d);
          eta.value(a, k, i, j) = sums.mean(s);
          eta.se(a, k, i, j) = sums.stderr_of_mean(s);
        }
  return eta;
}

EtaCurve estimate_eta(const DiffusionField& field, const Grid& grid, const std::vector<double>& times,
                      int replicas, std::uint64_t seed, int workers) {
  if (replicas < 1) throw ConfigError("estimate_eta: replicas must be positive");
  std::vector<int> steps;
  for (double t : times) steps.push_back(grid.step_of(t));
  if (!std::is_sorted(steps.begin(), steps.end()) ||
      std::adjacent_find(steps.begin(), steps.end()) != steps.end()) {
    throw ConfigError("estimate_eta: times must be strictly increasing");
  }
  const int d = field.d(), m = field.m();
  const std::size_t per_time = eta_series_count(d, m);
  const PoolingLayout layout = PoolingLayout::for_grid(grid);

  std::vector<PooledSums> per_replica(replicas);
  parallel_for(static_cast<std::size_t>(replicas), workers, [&](std::size_t r) {
    PooledSums sums(per_time * steps.size());
    ReplicaRun run(field, grid, seed, r);
    for (std::size_t a = 0; a < steps.size(); ++a) {
      while (run.step() < steps[a]) run.advance();
      pool_sigma_products(run.sigma_now(), d, m, grid.nx(), layout, sums, a * per_time);
    }
    per_replica[r] = std::move(sums);
  });
  const std::size_t series = per_time * steps.size();
  const PooledSums total = chunked_reduce<PooledSums>(
      0, per_replica.size(), [&] { return PooledSums(series); },
      [&](PooledSums& acc, std::size_t r) { acc.add(per_replica[r]); },
      [](PooledSums& acc, const PooledSums& chunk) { acc.add(chunk); });
  std::vector<double> grid_times;
  for (int s : steps) grid_times.push_back(grid.time(s));
  return eta_from_pooled(grid_times, d, m, total);
}

// ---------------------------------------------------------------- quadrature

double window_deficit(double s, double R) {
  if (!(R > 0.0)) throw std::domain_error("window: R must be positive");
  if (s < 0.0) throw std::domain_error("window: negative variance");
  if (s == 0.0) return 0.0;
  // 1 − g = erfc(2R/√(2s)) + (s/R)(p_s(0) − p_s(2R)).
  const double tail = std::erfc(2.0 * R / std::sqrt(2.0 * s));
  const double moment = std::sqrt(s / (2.0 * std::numbers::pi)) / R * -std::expm1(-2.0 * R * R / s);
  return tail + moment;
}

double window_factor(double s, double R) {
  if (!(R > 0.0)) throw std::domain_error("window: R must be positive");
  if (s < 0.0) throw std::domain_error("window: negative variance");
  if (s == 0.0) return 1.0;
  const double mass = std::erf(2.0 * R / std::sqrt(2.0 * s));
  const double moment = std::sqrt(s / (2.0 * std::numbers::pi)) / R * -std::expm1(-2.0 * R * R / s);
  return mass - moment;
}

namespace {

// Product-integration weights q_a = ∫_0^upper φ_a(r)·kernel(r) dr, where φ_a
// are the hat functions of the η grid (η piecewise linear between grid
// times). Each interval is integrated in w = √(upper − r), which makes the
// √(upper − r) behaviour of the window factor at r = upper smooth. For
// kernel ≡ 1 these are the trapezoid weights.
template <typename Kernel>
std::vector<double> product_weights(const std::vector<double>& times, double upper, Kernel kernel) {
  if (times.empty()) throw ConfigError("quadrature: empty eta grid");
  const double tol = 1e-9 * std::max(1.0, times.back());
  if (upper < -tol || upper > times.back() + tol) {
    throw ConfigError("quadrature: t = " + std::to_string(upper) + " outside the eta grid [0, " +
                      std::to_string(times.back()) + "]");
  }
  upper = std::clamp(upper, 0.0, times.back());
  using Gauss = boost::math::quadrature::gauss<double, 20>;
  std::vector<double> q(times.size(), 0.0);
  for (std::size_t seg = 0; seg + 1 < times.size() && times[seg] < upper - tol; ++seg) {
    const double r0 = times[seg], span = times[seg + 1] - times[seg];
    const double r1 = std::min(times[seg + 1], upper);
    const double w_lo = std::sqrt(std::max(0.0, upper - r1)), w_hi = std::sqrt(upper - r0);
    auto part = [&](bool right) {
      return Gauss::integrate(
          [&](double w) {
            const double r = upper - w * w;
            const double phi = (r - r0) / span;
            return (right ? phi : 1.0 - phi) * kernel(r) * 2.0 * w;
          },
          w_lo, w_hi);
    };
    q[seg] += part(false);
    q[seg + 1] += part(true);
  }
  return q;
}

// 2 Σ_k ∫_0^upper η^(k)(r)·kernel(r) dr with a fully correlated SE bound.
template <typename Kernel>
CovarianceEstimate windowed_integral(const EtaCurve& eta, double upper, Kernel kernel) {
  const int d = eta.d();
  CovarianceEstimate out{Matrix::Zero(d, d), Matrix::Zero(d, d)};
  const std::vector<double> q = product_weights(eta.times(), upper, kernel);
  for (std::size_t a = 0; a < q.size(); ++a) {
    const double w = 2.0 * q[a];
    if (w == 0.0) continue;
    for (int k = 0; k < eta.m(); ++k)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          out.value(i, j) += w * eta.value(a, k, i, j);
          const double se = eta.se(a, k, i, j);
          if (std::isfinite(se)) out.se(i, j) += std::abs(w) * se;
        }
  }
  out.value = (0.5 * (out.value + out.value.transpose())).eval();
  out.se = (0.5 * (out.se + out.se.transpose())).eval();
  return out;
}

}  // namespace

CovarianceEstimate limit_covariance(const EtaCurve& eta, double t) {
  return windowed_integral(eta, t, [](double) { return 1.0; });
}

CovarianceEstimate prelimit_covariance(const EtaCurve& eta, double t, double R) {
  if (!(t > 0.0)) throw ConfigError("prelimit_covariance: t must be positive");
  if (!(R > 0.0)) throw ConfigError("prelimit_covariance: R must be positive");
  return windowed_integral(eta, t, [&](double r) { return window_factor(std::max(0.0, 2.0 * t - 2.0 * r), R); });
}

CovarianceEstimate prelimit_cross_covariance(const EtaCurve& eta, double t, double s, double R) {
  if (!(t > 0.0) || !(s > 0.0)) throw ConfigError("prelimit_cross_covariance: times must be positive");
  if (!(R > 0.0)) throw ConfigError("prelimit_cross_covariance: R must be positive");
  return windowed_integral(eta, std::min(t, s),
                           [&](double r) { return window_factor(std::max(0.0, t + s - 2.0 * r), R); });
}

Matrix two_point_cov(const EtaCurve& eta, double t, double s, double h) {
  const int d = eta.d();
  Matrix out = Matrix::Ones(d, d);
  const double a = std::min(t, s);
  if (a <= 0.0) return out;
  const auto& times = eta.times();
  if (a > times.back() * (1.0 + 1e-12)) throw ConfigError("two_point_cov: t∧s outside the eta grid");
  const double gap = t + s - 2.0 * a;
  // r = a − w²: the (t+s−2r)^(−1/2) factor becomes smooth in w. Integrate
  // piecewise between consecutive grid times so η stays linear.
  using Gauss = boost::math::quadrature::gauss<double, 20>;
  for (std::size_t seg = 0; seg + 1 < times.size() && times[seg] < a; ++seg) {
    const double r0 = times[seg], r1 = std::min(times[seg + 1], a);
    const double w_lo = std::sqrt(std::max(0.0, a - r1)), w_hi = std::sqrt(a - r0);
    const double span = times[seg + 1] - times[seg];
    for (int k = 0; k < eta.m(); ++k)
      for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
          const double e0 = eta.value(seg, k, i, j), e1 = eta.value(seg + 1, k, i, j);
          auto integrand = [&](double w) {
            const double r = a - w * w;
            const double frac = (r - r0) / span;
            const double eta_r = (1.0 - frac) * e0 + frac * e1;
            const double var = gap + 2.0 * w * w;
            return eta_r * heat_kernel(var, h) * 2.0 * w;
          };
          const double v = Gauss::integrate(integrand, w_lo, w_hi);
          out(i, j) += v;
          if (i != j) out(j, i) += v;
        }
  }
  return out;
}

}  // namespace heatclt
