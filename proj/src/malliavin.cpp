#include "heatclt/malliavin.hpp"

#include "heatclt/errors.hpp"
#include "heatclt/observables.hpp"
#include "heatclt/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace heatclt {

WindowTable WindowTable::build(const Grid& grid, double t, double R, WindowKind kind) {
  WindowTable table;
  table.steps_ = grid.step_of(t);
  if (table.steps_ < 1) throw ConfigError("window: t must be at least one time step");
  table.nx_ = grid.nx();
  table.t_ = grid.time(table.steps_);
  table.radius_ = grid.effective_radius(R);
  table.kind_ = kind;
  const auto [first, last] = grid.window_nodes(R);
  const std::size_t nx = static_cast<std::size_t>(grid.nx());
  table.weights_.assign(static_cast<std::size_t>(table.steps_) * nx, 0.0);
  auto row = [&](int n) { return table.weights_.data() + static_cast<std::size_t>(n) * nx; };

  double* last_row = row(table.steps_ - 1);
  for (int node = first; node < last; ++node) last_row[node] = 1.0;

  if (kind == WindowKind::discrete) {
    // Backward in time with the zero-boundary stencil: w_n = A w_{n+1}.
    const double c = grid.diffusion_ratio();
    for (int n = table.steps_ - 2; n >= 0; --n) {
      const double* w = row(n + 1);
      double* out = row(n);
      for (std::size_t y = 0; y < nx; ++y) {
        const double left = y > 0 ? w[y - 1] : 0.0;
        const double right = y + 1 < nx ? w[y + 1] : 0.0;
        out[y] = w[y] + c * (right - 2.0 * w[y] + left);
      }
    }
  } else {
    for (int n = 0; n + 1 < table.steps_; ++n) {
      const double tau = table.t_ - (n + 1) * grid.dt();
      double* out = row(n);
      for (std::size_t y = 0; y < nx; ++y) out[y] = kernel_window(tau, grid.x(static_cast<int>(y)), table.radius_);
    }
  }
  return table;
}

std::vector<double> v_weight(const FieldState& state, const DiffusionField& field, const Grid& grid,
                             const WindowTable& window) {
  if (state.step >= window.steps()) throw ConfigError("v_weight: state is not before t");
  const int d = field.d(), m = field.m();
  const std::size_t nx = static_cast<std::size_t>(grid.nx());
  std::vector<double> out(static_cast<std::size_t>(d) * m * nx);
  field.sigma_nodes(state.u.view(), out);
  const auto w = window.row(state.step);
  const double scale = 1.0 / std::sqrt(window.radius());
  for (std::size_t e = 0; e < static_cast<std::size_t>(d) * m; ++e)
    for (std::size_t y = 0; y < nx; ++y) out[e * nx + y] *= scale * w[y];
  return out;
}

std::vector<double> v_weight(const FieldState& state, const DiffusionField& field, const Grid& grid, double t,
                             double R, WindowKind kind) {
  return v_weight(state, field, grid, WindowTable::build(grid, t, R, kind));
}

// ---------------------------------------------------------------- tracker

PairingTracker::PairingTracker(const DiffusionField& field, const Grid& grid,
                               std::vector<const WindowTable*> windows)
    : field_(&field), grid_(&grid) {
  if (!field.has_jacobian()) {
    throw ConfigError("malliavin: sigma has no Jacobian; a differentiable family is required");
  }
  order_.resize(windows.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::stable_sort(order_.begin(), order_.end(),
                   [&](std::size_t a, std::size_t b) { return windows[a]->steps() > windows[b]->steps(); });
  for (std::size_t slot : order_) {
    if (windows[slot]->steps() > grid.nt()) throw ConfigError("malliavin: window time beyond the grid");
    windows_.push_back(windows[slot]);
  }
  const int d = field.d();
  for (std::size_t s = 0; s < windows_.size(); ++s)
    for (int i = 0; i < d; ++i) tangents_.push_back(TangentState::zero(i, d, grid.nx()));
  pairings_.assign(windows_.size(), Matrix::Zero(d, d));
  done_.assign(windows_.size(), false);
}

void PairingTracker::before_advance(ReplicaRun& run) {
  const int n = run.step();
  std::size_t active = 0;
  while (active < windows_.size() && windows_[active]->steps() > n) ++active;
  if (active == 0) return;

  const int d = field_->d(), m = field_->m();
  const std::size_t nx = static_cast<std::size_t>(grid_->nx());
  const std::span<const double> sigma = run.sigma_now();
  const double dt = grid_->dt();

  // (σσᵀ)_ij at every node, shared by all windows.
  std::vector<double>& sig2 = work_.sigma;  // reused scratch; ReplicaRun keeps its own σ
  sig2.assign(static_cast<std::size_t>(d) * d * nx, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      double* out = sig2.data() + (static_cast<std::size_t>(i) * d + j) * nx;
      for (int k = 0; k < m; ++k) {
        const double* si = sigma.data() + (static_cast<std::size_t>(i) * m + k) * nx;
        const double* sj = sigma.data() + (static_cast<std::size_t>(j) * m + k) * nx;
        for (std::size_t y = 0; y < nx; ++y) out[y] += si[y] * sj[y];
      }
      if (i != j) std::copy_n(out, nx, sig2.data() + (static_cast<std::size_t>(j) * d + i) * nx);
    }

  // Source for Z^(i) of window s: dt·(1/√R)·w(n,y)·(σσᵀ)_ij(y) on component j.
  sources_.resize(active * d * d * nx);
  source_spans_.clear();
  for (std::size_t s = 0; s < active; ++s) {
    const auto w = windows_[s]->row(n);
    const double scale = dt / std::sqrt(windows_[s]->radius());
    for (int i = 0; i < d; ++i) {
      double* src = sources_.data() + ((s * d + i) * d) * nx;
      for (int j = 0; j < d; ++j) {
        const double* q = sig2.data() + (static_cast<std::size_t>(i) * d + j) * nx;
        double* out = src + static_cast<std::size_t>(j) * nx;
        for (std::size_t y = 0; y < nx; ++y) out[y] = scale * w[y] * q[y];
      }
      source_spans_.emplace_back(src, static_cast<std::size_t>(d) * nx);
    }
  }
  step_tangent(run.state(), std::span<TangentState>(tangents_.data(), active * d), *field_, *grid_, run.noise(),
               source_spans_, work_);
  for (std::size_t s = 0; s < active; ++s) {
    if (windows_[s]->steps() == n + 1) contract(s);
  }
}

void PairingTracker::contract(std::size_t slot) {
  const int d = field_->d();
  const WindowTable& window = *windows_[slot];
  const auto [first, last] = grid_->window_nodes(window.radius());
  const double scale = grid_->dx() / std::sqrt(window.radius());
  for (int i = 0; i < d; ++i) {
    const TangentState& z = tangents_[slot * d + i];
    for (int j = 0; j < d; ++j) {
      const auto row = z.z.row(j);
      double acc = 0.0;
      for (int node = first; node < last; ++node) acc += row[node];
      pairings_[slot](i, j) = acc * scale;
    }
  }
  done_[slot] = true;
}

namespace {
std::size_t slot_of(const std::vector<std::size_t>& order, std::size_t w) {
  const auto it = std::find(order.begin(), order.end(), w);
  if (it == order.end()) throw ConfigError("malliavin: unknown window index");
  return static_cast<std::size_t>(it - order.begin());
}
}  // namespace

bool PairingTracker::complete(std::size_t w) const { return done_[slot_of(order_, w)]; }

const Matrix& PairingTracker::pairing(std::size_t w) const {
  const std::size_t slot = slot_of(order_, w);
  if (!done_[slot]) throw ConfigError("malliavin: pairing requested before its time was reached");
  return pairings_[slot];
}

// ---------------------------------------------------------------- pairings

PairingSample pairing_tangent(const DiffusionField& field, const Grid& grid, double t, double R,
                              std::uint64_t seed, std::uint64_t replica_id, WindowKind kind) {
  const WindowTable window = WindowTable::build(grid, t, R, kind);
  PairingTracker tracker(field, grid, {&window});
  ReplicaRun run(field, grid, seed, replica_id);
  while (run.step() < window.steps()) {
    tracker.before_advance(run);
    run.advance();
  }
  return {replica_id, window.t(), window.radius(), tracker.pairing(0), spatial_average(run.state(), grid, R)};
}

PairingSample pairing_bruteforce(const DiffusionField& field, const Grid& grid, double t, double R,
                                 std::uint64_t seed, std::uint64_t replica_id, WindowKind kind) {
  if (grid.nt() > 16 || grid.nx() > 32) {
    throw ConfigError("pairing_bruteforce: grid too large (needs nt <= 16 and nx <= 32)");
  }
  if (!field.has_jacobian()) {
    throw ConfigError("malliavin: sigma has no Jacobian; a differentiable family is required");
  }
  const WindowTable window = WindowTable::build(grid, t, R, kind);
  const int N = window.steps();
  const int d = field.d(), m = field.m(), nx = grid.nx();

  std::vector<FieldState> states;
  std::vector<std::vector<double>> noises;
  ReplicaRun run(field, grid, seed, replica_id);
  while (run.step() < N) {
    states.push_back(run.state());
    const auto xi = run.noise();
    noises.emplace_back(xi.begin(), xi.end());
    run.advance();
  }
  const Vector F = spatial_average(run.state(), grid, R);

  const auto [first, last] = grid.window_nodes(R);
  const double rs = 1.0 / std::sqrt(window.radius());
  const double dt = grid.dt(), dx = grid.dx();
  Matrix P = Matrix::Zero(d, d);
  StepWorkspace work;
  std::vector<double> sigma(static_cast<std::size_t>(d) * m * nx);
  for (int n = 0; n < N; ++n) {
    field.sigma_nodes(states[n].u.view(), sigma);
    auto sig = [&](int i, int k, int y) { return sigma[(static_cast<std::size_t>(i) * m + k) * nx + y]; };
    const auto w = window.row(n);
    for (int y = 0; y < nx; ++y)
      for (int k = 0; k < m; ++k) {
        // D_{n,y,k} u^{n+1} = σ_{·k}(u^n(y))/dx at node y.
        TangentState J = TangentState::zero(0, d, nx);
        J.step = n + 1;
        for (int j = 0; j < d; ++j) J.z(j, y) = sig(j, k, y) / dx;
        for (int q = n + 1; q < N; ++q) {
          step_tangent(states[q], std::span<TangentState>(&J, 1), field, grid, noises[q], {}, work);
        }
        Vector DF(d);
        for (int j = 0; j < d; ++j) {
          double acc = 0.0;
          for (int node = first; node < last; ++node) acc += J.z(j, node);
          DF(j) = rs * acc * dx;
        }
        for (int i = 0; i < d; ++i) {
          const double v = rs * sig(i, k, y) * w[y];
          for (int j = 0; j < d; ++j) P(i, j) += v * DF(j) * dt * dx;
        }
      }
  }
  return {replica_id, window.t(), window.radius(), P, F};
}

Matrix constant_sigma_pairing(const Matrix& S, const Grid& grid, const WindowTable& window) {
  double acc = 0.0;
  for (int n = 0; n < window.steps(); ++n)
    for (double w : window.row(n)) acc += w * w;
  return (S * S.transpose()) * (acc * grid.dt() * grid.dx() / window.radius());
}

SteinEstimate stein_bound(std::span<const Matrix> pairings, const Matrix& CR) {
  if (pairings.size() < 2) throw ConfigError("stein_bound: need at least two pairing samples");
  const Eigen::Index d = CR.rows();
  for (const Matrix& P : pairings) {
    if (P.rows() != d || P.cols() != d) throw ConfigError("stein_bound: pairing shape does not match C^R");
  }
  const Eigenpairs e = sym_eig(CR);
  if (!(e.values(0) > 1e-12)) {
    throw NumericalError("stein_bound: C^R is singular (min eigenvalue " + std::to_string(e.values(0)) +
                         "); (H1) fails or R is below the resolvable scale");
  }
  const double M = static_cast<double>(pairings.size());
  SteinEstimate out;
  out.CR_used = CR;
  out.mean = Matrix::Zero(d, d);
  for (const Matrix& P : pairings) out.mean += P;
  out.mean /= M;
  Matrix m2 = Matrix::Zero(d, d), m4 = Matrix::Zero(d, d);
  for (const Matrix& P : pairings) {
    const Matrix c = P - out.mean;
    m2 += c.cwiseProduct(c);
    m4 += c.cwiseProduct(c).cwiseProduct(c).cwiseProduct(c);
  }
  out.varhat = m2 / (M - 1.0);
  m2 /= M;
  m4 /= M;
  out.varhat_se = ((m4 - m2.cwiseProduct(m2)).cwiseMax(0.0) / M).cwiseSqrt();
  out.mean_se = (out.varhat / M).cwiseSqrt();
  out.var_sum = out.varhat.sum();
  const double top = e.values.cwiseAbs().maxCoeff();
  out.bound = std::sqrt(static_cast<double>(d)) * (1.0 / e.values(0)) * std::sqrt(top) * std::sqrt(out.var_sum);
  return out;
}

}  // namespace heatclt
