#include "heatclt/solver.hpp"

#include "heatclt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace heatclt {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// u^{n+1} = u + c·Δu + g·Σ_j σ_ij ξ_j on every interior node.
void explicit_update(const FieldState& state, std::span<const double> sigma, int m,
                     const Grid& grid, std::span<const double> noise, FieldState& next) {
  const int d = state.u.d();
  const std::size_t nx = static_cast<std::size_t>(grid.nx());
  const double c = grid.diffusion_ratio();
  const double g = grid.noise_scale();
  double checksum = 0.0;
  for (int i = 0; i < d; ++i) {
    const double* u = state.u.row(i).data();
    double* out = next.u.row(i).data();
    for (std::size_t node = 0; node < nx; ++node) {
      out[node] = u[node] + c * (u[node + 1] - 2.0 * u[node] + u[node - 1]);
    }
    for (int j = 0; j < m; ++j) {
      const double* s = sigma.data() + (static_cast<std::size_t>(i) * m + j) * nx;
      const double* xi = noise.data() + static_cast<std::size_t>(j) * nx;
      for (std::size_t node = 0; node < nx; ++node) out[node] += g * (s[node] * xi[node]);
    }
    for (std::size_t node = 0; node < nx; ++node) checksum += out[node];
  }
  next.step = state.step + 1;
  if (!std::isfinite(checksum)) {
    throw NumericalError("solver: non-finite state at step " + std::to_string(next.step) +
                         " (noise blowup; reduce sigma or dt)");
  }
}

void check_noise(std::span<const double> noise, int m, const Grid& grid) {
  if (noise.size() < static_cast<std::size_t>(m) * grid.nx()) {
    throw ConfigError("solver: noise slice must hold m x nx values");
  }
}

}  // namespace

// ---------------------------------------------------------------- Grid

Grid Grid::create(const GridSpec& spec) {
  if (!(spec.T > 0.0)) throw ConfigError("grid: T must be positive");
  if (!(spec.dt > 0.0)) throw ConfigError("grid: dt must be positive");
  if (!(spec.padding >= 0.0)) throw ConfigError("grid: padding must be nonnegative");
  if (!(spec.R_max >= 0.0)) throw ConfigError("grid: R_max must be nonnegative");

  Grid grid;
  grid.T_ = spec.T;
  const double steps = spec.T / spec.dt;
  grid.nt_ = static_cast<int>(std::lround(steps));
  if (grid.nt_ < 1 || std::abs(steps - grid.nt_) > 1e-9 * std::max(1.0, steps)) {
    throw ConfigError("grid: T must be an integer multiple of dt");
  }
  grid.dt_ = spec.T / grid.nt_;
  grid.padding_ = spec.padding;

  const double margin = spec.R_max + spec.padding * std::sqrt(2.0 * spec.T);
  if (spec.nx) {
    if (!spec.L) throw ConfigError("grid: nx requires an explicit half-width L");
    if (*spec.nx < 1) throw ConfigError("grid: nx must be positive");
    grid.nx_ = *spec.nx;
    grid.L_ = *spec.L;
    grid.dx_ = 2.0 * grid.L_ / (grid.nx_ + 1);
  } else {
    if (!spec.dx || !(*spec.dx > 0.0)) throw ConfigError("grid: dx must be positive");
    const double dx = *spec.dx;
    const double wanted = std::max(margin, spec.L.value_or(0.0));
    // Even node count with the origin on a cell boundary: L = (K + 1/2)·dx.
    const int half = std::max(1, static_cast<int>(std::ceil(wanted / dx - 0.5 - 1e-9)));
    grid.nx_ = 2 * half;
    grid.dx_ = dx;
    grid.L_ = (half + 0.5) * dx;
  }
  if (!(grid.L_ > 0.0)) throw ConfigError("grid: L must be positive");

  if (grid.dt_ > 0.5 * grid.dx_ * grid.dx_ * (1.0 + 1e-12)) {
    throw ConfigError("grid: stability violated, dt = " + fmt(grid.dt_) + " > dx^2/2 = " +
                      fmt(0.5 * grid.dx_ * grid.dx_));
  }
  if (grid.L_ < margin * (1.0 - 1e-12)) {
    throw ConfigError("grid: truncation violated, L = " + fmt(grid.L_) + " < R_max + padding*sqrt(2T) = " +
                      fmt(margin));
  }
  grid.noise_scale_ = std::sqrt(grid.dt_ / grid.dx_);

  std::vector<double> times = spec.output_times;
  if (times.empty()) times.push_back(spec.T);
  for (double t : times) grid.output_steps_.push_back(grid.step_of(t));
  std::sort(grid.output_steps_.begin(), grid.output_steps_.end());
  grid.output_steps_.erase(std::unique(grid.output_steps_.begin(), grid.output_steps_.end()),
                           grid.output_steps_.end());
  return grid;
}

std::vector<double> Grid::output_times() const {
  std::vector<double> times;
  times.reserve(output_steps_.size());
  for (int s : output_steps_) times.push_back(time(s));
  return times;
}

int Grid::step_of(double t) const {
  const double steps = t / dt_;
  const long n = std::lround(steps);
  if (n < 0 || n > nt_ || std::abs(steps - static_cast<double>(n)) > 1e-6) {
    throw ConfigError("grid: time " + fmt(t) + " is not a grid time (dt = " + fmt(dt_) + ")");
  }
  return static_cast<int>(n);
}

double Grid::max_radius() const { return L_ - padding_ * std::sqrt(2.0 * T_); }

double Grid::effective_radius(double R) const {
  if (!(R > 0.0)) throw ConfigError("radius must be positive");
  if (R > max_radius() + 1e-9 * std::max(1.0, L_)) {
    throw ConfigError("radius " + fmt(R) + " exceeds the truncation margin L - padding*sqrt(2T) = " +
                      fmt(max_radius()));
  }
  const long first = std::lround((L_ - R) / dx_ - 0.5);
  if (first < 0 || 2 * first >= nx_) throw ConfigError("radius " + fmt(R) + " not resolvable on the grid");
  return static_cast<double>(nx_ / 2 - first) * dx_;  // = L - (first + 1/2)dx, without cancellation
}

std::pair<int, int> Grid::window_nodes(double R) const {
  const double r = effective_radius(R);
  const int first = static_cast<int>(std::lround((L_ - r) / dx_ - 0.5));
  return {first, nx_ - first};
}

// ---------------------------------------------------------------- fields

LatticeField::LatticeField(int d, int nx, double boundary, double fill)
    : d_(d), nx_(nx), boundary_(boundary), data_(static_cast<std::size_t>(d) * (nx + 2), fill) {
  for (int i = 0; i < d; ++i) {
    data_[offset(i) - 1] = boundary;
    data_[offset(i) + nx] = boundary;
  }
}

bool LatticeField::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------- steps

void step_explicit(const FieldState& state, const DiffusionField& field, const Grid& grid,
                   std::span<const double> noise, FieldState& next, StepWorkspace& work) {
  if (state.u.d() != field.d() || state.u.nx() != grid.nx()) {
    throw ConfigError("step_explicit: state does not match field/grid");
  }
  check_noise(noise, field.m(), grid);
  if (next.u.d() != field.d() || next.u.nx() != grid.nx()) next = FieldState::initial(field.d(), grid.nx());
  work.sigma.resize(static_cast<std::size_t>(field.d()) * field.m() * grid.nx());
  field.sigma_nodes(state.u.view(), work.sigma);
  explicit_update(state, work.sigma, field.m(), grid, noise, next);
}

FieldState step_explicit(const FieldState& state, const DiffusionField& field, const Grid& grid,
                         std::span<const double> noise) {
  FieldState next = FieldState::initial(field.d(), grid.nx());
  StepWorkspace work;
  step_explicit(state, field, grid, noise, next, work);
  return next;
}

void step_tangent(const FieldState& state, std::span<TangentState> tangents,
                  const DiffusionField& field, const Grid& grid, std::span<const double> noise,
                  std::span<const std::span<const double>> sources, StepWorkspace& work) {
  if (!field.has_jacobian()) {
    throw ConfigError("step_tangent: sigma has no Jacobian; a differentiable family is required");
  }
  const int d = field.d();
  const int m = field.m();
  const std::size_t nx = static_cast<std::size_t>(grid.nx());
  if (state.u.d() != d || state.u.nx() != grid.nx()) throw ConfigError("step_tangent: state mismatch");
  check_noise(noise, m, grid);
  if (!sources.empty() && sources.size() != tangents.size()) {
    throw ConfigError("step_tangent: one source slot per tangent required");
  }

  const bool constant = field.is_constant();
  if (!constant) {
    work.jacobian.resize(static_cast<std::size_t>(d) * m * d * nx);
    field.jacobian_nodes(state.u.view(), work.jacobian);
  }
  const double c = grid.diffusion_ratio();
  const double g = grid.noise_scale();
  std::vector<double>& next = work.tangent_next;
  next.resize(static_cast<std::size_t>(d) * nx);

  for (std::size_t s = 0; s < tangents.size(); ++s) {
    TangentState& tangent = tangents[s];
    if (tangent.z.d() != d || tangent.z.nx() != grid.nx() || tangent.step != state.step) {
      throw ConfigError("step_tangent: tangent does not match the primal state");
    }
    for (int i = 0; i < d; ++i) {
      const double* z = tangent.z.row(i).data();
      double* out = next.data() + static_cast<std::size_t>(i) * nx;
      for (std::size_t node = 0; node < nx; ++node) {
        out[node] = z[node] + c * (z[node + 1] - 2.0 * z[node] + z[node - 1]);
      }
      if (!constant) {
        for (int j = 0; j < m; ++j) {
          const double* xi = noise.data() + static_cast<std::size_t>(j) * nx;
          for (int k = 0; k < d; ++k) {
            const double* jac =
                work.jacobian.data() + ((static_cast<std::size_t>(i) * m + j) * d + k) * nx;
            const double* zk = tangent.z.row(k).data();
            for (std::size_t node = 0; node < nx; ++node) {
              out[node] += g * ((jac[node] * zk[node]) * xi[node]);
            }
          }
        }
      }
      if (!sources.empty() && !sources[s].empty()) {
        if (sources[s].size() < static_cast<std::size_t>(d) * nx) {
          throw ConfigError("step_tangent: source must hold d x nx values");
        }
        const double* src = sources[s].data() + static_cast<std::size_t>(i) * nx;
        for (std::size_t node = 0; node < nx; ++node) out[node] += src[node];
      }
    }
    double checksum = 0.0;
    for (int i = 0; i < d; ++i) {
      std::span<double> row = tangent.z.row(i);
      std::copy_n(next.data() + static_cast<std::size_t>(i) * nx, nx, row.begin());
      for (double v : row) checksum += v;
    }
    if (!std::isfinite(checksum)) {
      throw NumericalError("step_tangent: non-finite tangent at step " + std::to_string(state.step + 1));
    }
    tangent.step = state.step + 1;
  }
}

// ---------------------------------------------------------------- replicas

ReplicaRun::ReplicaRun(const DiffusionField& field, const Grid& grid, std::uint64_t seed,
                       std::uint64_t replica_id)
    : field_(&field),
      grid_(&grid),
      stream_(seed, replica_id, field.m()),
      current_(FieldState::initial(field.d(), grid.nx())),
      next_(FieldState::initial(field.d(), grid.nx())),
      noise_(static_cast<std::size_t>(field.m()) * grid.nx()) {}

std::span<const double> ReplicaRun::noise() {
  if (!noise_ready_) {
    stream_.fill_step(static_cast<std::uint32_t>(current_.step), static_cast<std::size_t>(grid_->nx()),
                      noise_);
    noise_ready_ = true;
  }
  return noise_;
}

std::span<const double> ReplicaRun::sigma_now() {
  if (sigma_step_ != current_.step) {
    work_.sigma.resize(static_cast<std::size_t>(field_->d()) * field_->m() * grid_->nx());
    field_->sigma_nodes(current_.u.view(), work_.sigma);
    sigma_step_ = current_.step;
  }
  return work_.sigma;
}

void ReplicaRun::advance() {
  if (done()) throw ConfigError("ReplicaRun: already at final time");
  const std::span<const double> xi = noise();
  const std::span<const double> sigma = sigma_now();
  explicit_update(current_, sigma, field_->m(), *grid_, xi, next_);
  std::swap(current_, next_);
  noise_ready_ = false;
}

std::vector<FieldState> simulate(const DiffusionField& field, const Grid& grid, std::uint64_t seed,
                                 std::uint64_t replica_id) {
  ReplicaRun run(field, grid, seed, replica_id);
  std::vector<FieldState> out;
  out.reserve(grid.output_steps().size());
  for (int target : grid.output_steps()) {
    while (run.step() < target) run.advance();
    out.push_back(run.state());
  }
  return out;
}

}  // namespace heatclt
