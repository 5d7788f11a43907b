#include "heatclt/experiment.hpp"

#include "heatclt/errors.hpp"
#include "heatclt/oracles.hpp"
#include "heatclt/parallel.hpp"
#include "heatclt/stats.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

namespace heatclt {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<int> steps_of(const Grid& grid, const std::vector<double>& times) {
  std::vector<int> steps;
  for (double t : times) steps.push_back(grid.step_of(t));
  return steps;
}

}  // namespace

// ---------------------------------------------------------------- PassResult

PassResult::PassResult(const PassSpec& spec, int d, std::uint64_t first, int count)
    : spec_(spec), d_(d), first_(first), count_(count) {
  F_.assign(static_cast<std::size_t>(count) * spec.output_times.size() * spec.radii.size() * d, 0.0);
  P_.assign(static_cast<std::size_t>(count) * spec.pairing_radii.size() * d * d, 0.0);
}

double& PassResult::F(int replica, std::size_t a, std::size_t r, int i) {
  const std::size_t nR = spec_.radii.size();
  return F_[((static_cast<std::size_t>(replica) * spec_.output_times.size() + a) * nR + r) * d_ + i];
}

double& PassResult::P(int replica, std::size_t r, int i, int j) {
  const std::size_t nW = spec_.pairing_radii.size();
  return P_[((static_cast<std::size_t>(replica) * nW + r) * d_ + i) * d_ + j];
}

Matrix PassResult::averages(std::size_t a, std::size_t r) const {
  if (a >= spec_.output_times.size() || r >= spec_.radii.size()) throw ConfigError("pass: index out of range");
  Matrix out(count_, d_);
  auto& self = const_cast<PassResult&>(*this);
  for (int q = 0; q < count_; ++q)
    for (int i = 0; i < d_; ++i) out(q, i) = self.F(q, a, r, i);
  return out;
}

std::vector<Matrix> PassResult::pairings(std::size_t r) const {
  if (r >= spec_.pairing_radii.size()) throw ConfigError("pass: pairing index out of range");
  std::vector<Matrix> out;
  auto& self = const_cast<PassResult&>(*this);
  for (int q = 0; q < count_; ++q) {
    Matrix P(d_, d_);
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < d_; ++j) P(i, j) = self.P(q, r, i, j);
    out.push_back(std::move(P));
  }
  return out;
}

PooledSums PassResult::eta_total() const {
  PooledSums total(chunks_.empty() ? 0 : chunks_.front().eta.series);
  for (const ChunkSums& c : chunks_) total.add(c.eta);
  return total;
}

PooledSums PassResult::point_total() const {
  PooledSums total(chunks_.empty() ? 0 : chunks_.front().point.series);
  for (const ChunkSums& c : chunks_) total.add(c.point);
  return total;
}

EtaCurve PassResult::eta(int m) const {
  if (spec_.eta_times.empty()) throw ConfigError("pass: no eta times were recorded");
  return eta_from_pooled(spec_.eta_times, d_, m, eta_total());
}

CovarianceEstimate PassResult::point_moment(std::size_t a) const {
  if (!spec_.point_moments) throw ConfigError("pass: point moments were not recorded");
  const PooledSums total = point_total();
  CovarianceEstimate out{Matrix::Zero(d_, d_), Matrix::Zero(d_, d_)};
  const std::size_t base = a * static_cast<std::size_t>(d_) * d_;
  for (int i = 0; i < d_; ++i)
    for (int j = i; j < d_; ++j) {
      const std::size_t s = base + static_cast<std::size_t>(i) * d_ + j;
      out.value(i, j) = out.value(j, i) = total.mean(s);
      out.se(i, j) = out.se(j, i) = total.stderr_of_mean(s);
    }
  return out;
}

void PassResult::append(const PassResult& next) {
  if (next.d_ != d_ || next.spec_.output_times != spec_.output_times || next.spec_.radii != spec_.radii ||
      next.spec_.pairing_radii != spec_.pairing_radii || next.spec_.eta_times != spec_.eta_times) {
    throw ConfigError("merge: batches record different quantities");
  }
  if (next.first_ != first_ + static_cast<std::uint64_t>(count_)) {
    throw ConfigError("merge: batches are not contiguous (expected first replica " +
                      std::to_string(first_ + count_) + ", got " + std::to_string(next.first_) + ")");
  }
  if (next.first_ % kReductionChunk != 0) {
    throw ConfigError("merge: batch boundary " + std::to_string(next.first_) + " is not a multiple of " +
                      std::to_string(kReductionChunk) + "; the fixed reduction order needs aligned batches");
  }
  F_.insert(F_.end(), next.F_.begin(), next.F_.end());
  P_.insert(P_.end(), next.P_.begin(), next.P_.end());
  chunks_.insert(chunks_.end(), next.chunks_.begin(), next.chunks_.end());
  count_ += next.count_;
}

namespace {

json pooled_json(const PooledSums& p) { return {{"count", p.count}, {"sum", p.sum}, {"sumsq", p.sumsq}}; }

PooledSums pooled_from(const json& j) {
  PooledSums p(j.at("sum").size());
  p.count = j.at("count").get<std::vector<double>>();
  p.sum = j.at("sum").get<std::vector<double>>();
  p.sumsq = j.at("sumsq").get<std::vector<double>>();
  if (p.count.size() != p.series || p.sumsq.size() != p.series) throw ConfigError("report: malformed pooled sums");
  return p;
}

}  // namespace

json PassResult::to_json() const {
  json chunks = json::array();
  for (const ChunkSums& c : chunks_) {
    chunks.push_back({{"index", c.index}, {"eta", pooled_json(c.eta)}, {"point", pooled_json(c.point)}});
  }
  return {{"first_replica", first_}, {"replicas", count_}, {"chunk", kReductionChunk},
          {"F", F_},                 {"P", P_},            {"chunks", chunks}};
}

PassResult PassResult::from_json(const json& doc, const PassSpec& spec, int d) {
  if (doc.at("chunk").get<std::uint64_t>() != kReductionChunk) throw ConfigError("report: reduction chunk differs");
  PassResult out(spec, d, doc.at("first_replica").get<std::uint64_t>(), doc.at("replicas").get<int>());
  std::vector<double> F = doc.at("F").get<std::vector<double>>();
  std::vector<double> P = doc.at("P").get<std::vector<double>>();
  if (F.size() != out.F_.size() || P.size() != out.P_.size()) throw ConfigError("report: batch records have the wrong size");
  out.F_ = std::move(F);
  out.P_ = std::move(P);
  for (const json& c : doc.at("chunks")) {
    out.chunks_.push_back({c.at("index").get<std::uint64_t>(), pooled_from(c.at("eta")), pooled_from(c.at("point"))});
  }
  return out;
}

// ---------------------------------------------------------------- simulation

PassResult simulate_pass(const DiffusionField& field, const Grid& grid, const PassSpec& spec, std::uint64_t seed,
                         std::uint64_t first, int count, int workers) {
  if (count < 1) throw ConfigError("simulate: replica count must be positive");
  const int d = field.d(), m = field.m();
  const std::vector<int> out_steps = steps_of(grid, spec.output_times);
  const std::vector<int> eta_steps = steps_of(grid, spec.eta_times);
  for (double R : spec.radii) grid.effective_radius(R);
  if (!std::is_sorted(out_steps.begin(), out_steps.end()) || !std::is_sorted(eta_steps.begin(), eta_steps.end())) {
    throw ConfigError("simulate: times must be sorted");
  }
  std::vector<WindowTable> windows;
  for (double R : spec.pairing_radii) windows.push_back(WindowTable::build(grid, spec.pairing_time, R, spec.window));
  std::vector<const WindowTable*> window_ptrs;
  for (const WindowTable& w : windows) window_ptrs.push_back(&w);

  int last = 0;
  if (!out_steps.empty()) last = std::max(last, out_steps.back());
  if (!eta_steps.empty()) last = std::max(last, eta_steps.back());
  for (const WindowTable& w : windows) last = std::max(last, w.steps());

  const PoolingLayout layout = PoolingLayout::for_grid(grid);
  const std::size_t eta_series = eta_series_count(d, m) * eta_steps.size();
  const std::size_t point_series = spec.point_moments ? static_cast<std::size_t>(d) * d * out_steps.size() : 0;

  PassResult result(spec, d, first, count);
  struct Local {
    PooledSums eta, point;
  };

  auto run_one = [&](int q, Local& local) {
    ReplicaRun run(field, grid, seed, first + static_cast<std::uint64_t>(q));
    std::optional<PairingTracker> tracker;
    if (!windows.empty()) tracker.emplace(field, grid, window_ptrs);
    std::size_t next_eta = 0, next_out = 0;
    for (;;) {
      const int n = run.step();
      while (next_eta < eta_steps.size() && eta_steps[next_eta] == n) {
        pool_sigma_products(run.sigma_now(), d, m, grid.nx(), layout, local.eta,
                            next_eta * eta_series_count(d, m));
        ++next_eta;
      }
      while (next_out < out_steps.size() && out_steps[next_out] == n) {
        for (std::size_t r = 0; r < spec.radii.size(); ++r) {
          const Vector F = spatial_average(run.state(), grid, spec.radii[r]);
          for (int i = 0; i < d; ++i) result.F(q, next_out, r, i) = F(i);
        }
        if (spec.point_moments) {
          pool_state_products(run.state(), layout, local.point, next_out * static_cast<std::size_t>(d) * d);
        }
        ++next_out;
      }
      if (n >= last) break;
      if (tracker) tracker->before_advance(run);
      run.advance();
    }
    for (std::size_t r = 0; r < windows.size(); ++r) {
      const Matrix& P = tracker->pairing(r);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) result.P(q, r, i, j) = P(i, j);
    }
  };

  // Chunks of aligned replica ids: simulate in parallel, reduce in id order.
  int q = 0;
  while (q < count) {
    const std::uint64_t id = first + static_cast<std::uint64_t>(q);
    const std::uint64_t chunk_index = id / kReductionChunk;
    const int chunk_end = static_cast<int>(std::min<std::uint64_t>((chunk_index + 1) * kReductionChunk - first,
                                                                   static_cast<std::uint64_t>(count)));
    const int n_in = chunk_end - q;
    std::vector<Local> locals(n_in, Local{PooledSums(eta_series), PooledSums(point_series)});
    parallel_for(static_cast<std::size_t>(n_in), workers,
                 [&](std::size_t k) { run_one(q + static_cast<int>(k), locals[k]); });
    ChunkSums sums{chunk_index, PooledSums(eta_series), PooledSums(point_series)};
    for (const Local& local : locals) {
      sums.eta.add(local.eta);
      sums.point.add(local.point);
    }
    result.chunks().push_back(std::move(sums));
    q = chunk_end;
  }
  return result;
}

// ---------------------------------------------------------------- tables

std::string cell(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string cell(long long v) { return std::to_string(v); }
std::string cell(const std::string& v) { return v; }

void Table::add_row(std::vector<std::string> row) {
  if (row.size() != columns.size()) throw std::logic_error("table " + name + ": row width mismatch");
  rows.push_back(std::move(row));
}

std::string Table::csv() const {
  std::string out;
  for (std::size_t c = 0; c < columns.size(); ++c) out += (c ? "," : "") + columns[c];
  out += "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + row[c];
    out += "\n";
  }
  return out;
}

namespace {

json table_json(const Table& t) {
  json rows = json::array();
  for (const auto& row : t.rows) {
    json r = json::array();
    for (const std::string& c : row) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (!c.empty() && *end == '\0' && std::isfinite(v)) {
        r.push_back(v);
      } else {
        r.push_back(c);
      }
    }
    rows.push_back(r);
  }
  return {{"columns", t.columns}, {"rows", rows}};
}

std::string flag(bool ok) { return ok ? "1" : "0"; }

// Sequential sums: Eigen reductions over foreign buffers vectorize according to
// the buffer's alignment, which would make the last digit allocation-dependent.
double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return kNaN;
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / (static_cast<double>(v.size()) - 1.0));
}

// ---------------------------------------------------------------- analysis

struct Analysis {
  std::vector<Table> tables;
  json notes = json::object();
};

EtaCurve eta_for(const ExperimentConfig& cfg, const Grid& grid, const PassResult* pass) {
  if (const auto* c = std::get_if<ConstantSigma>(&cfg.family)) {
    std::vector<double> times;
    for (int n = 0; n <= grid.nt(); ++n) times.push_back(grid.time(n));
    return constant_eta(c->S, times);
  }
  if (!pass) throw ConfigError("eta: a non-constant family needs a simulation pass or experiment.eta_file");
  return pass->eta(cfg.m);
}

Matrix se_eta_two_point(const EtaCurve& eta, double t) {
  // Propagate η standard errors through the same quadrature (linear in η).
  EtaCurve se(eta.times(), eta.d(), eta.m(), eta.provenance());
  for (std::size_t a = 0; a < eta.size(); ++a)
    for (int k = 0; k < eta.m(); ++k)
      for (int i = 0; i < eta.d(); ++i)
        for (int j = 0; j < eta.d(); ++j) {
          const double s = eta.se(a, k, i, j);
          se.value(a, k, i, j) = std::isfinite(s) ? s : 0.0;
        }
  return two_point_cov(se, t, t, 0.0) - Matrix::Ones(eta.d(), eta.d());
}

double tolerance(const ExperimentConfig& cfg, double se_a, double se_b, double scale_ii, double scale_jj) {
  return cfg.se_multiplier * std::hypot(se_a, se_b) + cfg.allowance * std::sqrt(std::abs(scale_ii * scale_jj));
}

void add_rate_row(Table& rates, const std::string& quantity, double t, const std::vector<double>& R,
                  const std::vector<double>& values) {
  std::vector<std::pair<double, double>> pts;
  for (std::size_t k = 0; k < R.size(); ++k) {
    if (!(values[k] > 0.0) || !std::isfinite(values[k])) return;
    pts.emplace_back(R[k], values[k]);
  }
  if (pts.size() < 3) return;
  const RateFit fit = rate_fit(pts);
  rates.add_row({quantity, cell(t), cell(fit.slope), cell(fit.intercept), cell(fit.r2),
                 cell(static_cast<long long>(pts.size()))});
}

Table rates_table() { return {"rates", {"quantity", "t", "slope", "intercept", "r2", "points"}, {}}; }

Analysis analyze_simulation(const ExperimentConfig& cfg, const Grid& grid, const PassResult& pass) {
  Analysis out;
  const int d = cfg.d;
  const EtaCurve eta = eta_for(cfg, grid, &pass);
  const auto& times = pass.spec().output_times;
  std::vector<double> radii;
  for (double R : cfg.R) radii.push_back(grid.effective_radius(R));
  const int M = pass.replicas();

  Table eta_table{"eta", {"r", "k", "i", "j", "value", "se"}, {}};
  for (std::size_t a = 0; a < eta.size(); ++a)
    for (int k = 0; k < eta.m(); ++k)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          eta_table.add_row({cell(eta.times()[a]), cell(static_cast<long long>(k)), cell(static_cast<long long>(i)),
                             cell(static_cast<long long>(j)), cell(eta.value(a, k, i, j)), cell(eta.se(a, k, i, j))});
  out.notes["eta_provenance"] = to_string(eta.provenance());

  Table cov{"covariance",
            {"t", "R", "i", "j", "sample", "sample_se", "prelimit", "prelimit_se", "limit", "limit_se", "tolerance", "ok"},
            {}};
  Table dist{"distances",
             {"t", "R", "gaussian_w2", "sliced_w1_mean", "sliced_w1_max", "sliced_w1_se", "gap_bound", "hs_gap"},
             {}};
  Table steps{"sliced_w1_steps", {"t", "R_lo", "R_hi", "difference", "difference_se"}, {}};
  Table norm{"normality", {"t", "R", "skew_stat", "skew_chi2", "skew_pvalue", "kurt_stat", "kurt_z", "kurt_pvalue"}, {}};
  Table point{"point_moments", {"t", "i", "j", "sample", "sample_se", "two_point", "two_point_se", "tolerance", "ok"}, {}};
  Table rates = rates_table();

  const auto boot = cfg.bootstrap > 0 ? bootstrap_indices(M, cfg.bootstrap, cfg.seed) : std::vector<std::vector<int>>{};
  for (std::size_t a = 0; a < times.size(); ++a) {
    const double t = times[a];
    const CovarianceEstimate lim = limit_covariance(eta, t);
    std::vector<double> hs_gaps, gaps, w2s, sliced_means;
    std::vector<std::vector<double>> boot_means(radii.size());
    for (std::size_t r = 0; r < radii.size(); ++r) {
      const double R = radii[r];
      const Matrix F = pass.averages(a, r);
      const CovarianceEstimate sc = sample_covariance(F);
      const CovarianceEstimate pr = prelimit_covariance(eta, t, R);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          const double tol = tolerance(cfg, sc.se(i, j), pr.se(i, j), pr.value(i, i), pr.value(j, j));
          cov.add_row({cell(t), cell(R), cell(static_cast<long long>(i)), cell(static_cast<long long>(j)),
                       cell(sc.value(i, j)), cell(sc.se(i, j)), cell(pr.value(i, j)), cell(pr.se(i, j)),
                       cell(lim.value(i, j)), cell(lim.se(i, j)), cell(tol),
                       flag(std::abs(sc.value(i, j) - pr.value(i, j)) <= tol)});
        }
      const double w2 = gaussian_w2(sc.value, lim.value);
      const SlicedW1 sw = sliced_w1(F, lim.value, cfg.nproj, cfg.seed);
      double sw_se = kNaN;
      if (!boot.empty()) {
        for (const auto& idx : boot) boot_means[r].push_back(sliced_w1(take_rows(F, idx), lim.value, cfg.nproj, cfg.seed).mean);
        sw_se = sample_sd(boot_means[r]);
      }
      double gap = kNaN;
      try {
        gap = gaussian_gap_bound(pr.value, lim.value);
      } catch (const NumericalError& e) {
        out.notes["gap_bound"] = e.what();
      }
      const double hs = hs_norm(pr.value - lim.value);
      dist.add_row({cell(t), cell(R), cell(w2), cell(sw.mean), cell(sw.max), cell(sw_se), cell(gap), cell(hs)});
      hs_gaps.push_back(hs);
      gaps.push_back(gap);
      w2s.push_back(w2);
      sliced_means.push_back(sw.mean);

      try {
        const MardiaResult mr = mardia(F);
        norm.add_row({cell(t), cell(R), cell(mr.skewness_stat), cell(mr.skew_chi2), cell(mr.skew_pvalue),
                      cell(mr.kurtosis_stat), cell(mr.kurt_z), cell(mr.kurt_pvalue)});
      } catch (const std::exception&) {
        norm.add_row({cell(t), cell(R), "nan", "nan", "nan", "nan", "nan", "nan"});
      }
    }
    for (std::size_t r = 0; r + 1 < radii.size(); ++r) {
      double se = kNaN;
      if (!boot.empty()) {
        std::vector<double> diff(boot.size());
        for (std::size_t b = 0; b < boot.size(); ++b) diff[b] = boot_means[r][b] - boot_means[r + 1][b];
        se = sample_sd(diff);
      }
      steps.add_row({cell(t), cell(radii[r]), cell(radii[r + 1]), cell(sliced_means[r] - sliced_means[r + 1]), cell(se)});
    }
    add_rate_row(rates, "hs_gap", t, radii, hs_gaps);
    add_rate_row(rates, "gap_bound", t, radii, gaps);
    add_rate_row(rates, "gaussian_w2", t, radii, w2s);
    add_rate_row(rates, "sliced_w1", t, radii, sliced_means);

    if (pass.spec().point_moments) {
      const CovarianceEstimate pm = pass.point_moment(a);
      const Matrix theory = two_point_cov(eta, t, t, 0.0);
      const Matrix theory_se = se_eta_two_point(eta, t);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          const double tol = tolerance(cfg, pm.se(i, j), theory_se(i, j), theory(i, i), theory(j, j));
          point.add_row({cell(t), cell(static_cast<long long>(i)), cell(static_cast<long long>(j)), cell(pm.value(i, j)),
                         cell(pm.se(i, j)), cell(theory(i, j)), cell(theory_se(i, j)), cell(tol),
                         flag(std::abs(pm.value(i, j) - theory(i, j)) <= tol)});
        }
    }
  }
  // Raw F^R(t) per replica, for QQ plots and path envelopes.
  Table samples{"samples", {"replica", "t", "R", "i", "value"}, {}};
  for (std::size_t a = 0; a < times.size(); ++a)
    for (std::size_t r = 0; r < radii.size(); ++r) {
      const Matrix F = pass.averages(a, r);
      for (int k = 0; k < M; ++k)
        for (int i = 0; i < d; ++i)
          samples.add_row({cell(static_cast<long long>(pass.first_replica() + k)), cell(times[a]), cell(radii[r]),
                           cell(static_cast<long long>(i)), cell(F(k, i))});
    }
  out.tables = {cov, dist, steps, norm, point, eta_table, samples};

  if (cfg.kind == ExperimentKind::fclt) {
    Table cross{"cross_covariance",
                {"s", "t", "R", "i", "j", "sample", "sample_se", "prelimit", "prelimit_se", "limit", "limit_se",
                 "tolerance", "ok_prelimit", "ok_limit"},
                {}};
    Table orth{"orthogonality", {"s", "t", "R", "i", "j", "corr", "se"}, {}};
    Table inc{"increments", {"s", "t", "R", "p", "moment", "moment_se", "ratio"}, {}};
    for (std::size_t a = 0; a < times.size(); ++a)
      for (std::size_t b = a + 1; b < times.size(); ++b)
        for (std::size_t r = 0; r < radii.size(); ++r) {
          const Matrix Fs = pass.averages(a, r), Ft = pass.averages(b, r);
          const CovarianceEstimate sc = sample_cross_covariance(Fs, Ft);
          const CovarianceEstimate pr = prelimit_cross_covariance(eta, times[a], times[b], radii[r]);
          const CovarianceEstimate lim = limit_covariance(eta, times[a]);
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
              const double tol = tolerance(cfg, sc.se(i, j), pr.se(i, j), pr.value(i, i), pr.value(j, j));
              const double tol_lim = tolerance(cfg, sc.se(i, j), lim.se(i, j), lim.value(i, i), lim.value(j, j));
              cross.add_row({cell(times[a]), cell(times[b]), cell(radii[r]), cell(static_cast<long long>(i)),
                             cell(static_cast<long long>(j)), cell(sc.value(i, j)), cell(sc.se(i, j)),
                             cell(pr.value(i, j)), cell(pr.se(i, j)), cell(lim.value(i, j)), cell(lim.se(i, j)),
                             cell(tol), flag(std::abs(sc.value(i, j) - pr.value(i, j)) <= tol),
                             flag(std::abs(sc.value(i, j) - lim.value(i, j)) <= tol_lim)});
            }
          if (b == a + 1) {
            const CorrelationEstimate ce = increment_orthogonality(Fs, Ft);
            for (int i = 0; i < d; ++i)
              for (int j = 0; j < d; ++j)
                orth.add_row({cell(times[a]), cell(times[b]), cell(radii[r]), cell(static_cast<long long>(i)),
                              cell(static_cast<long long>(j)), cell(ce.value(i, j)), cell(ce.se(i, j))});
          }
        }
    std::vector<std::pair<double, double>> pairs = cfg.increment_pairs;
    if (pairs.empty()) {
      double prev = 0.0;
      for (double t : times) {
        pairs.emplace_back(prev, t);
        prev = t;
      }
    }
    auto index_of = [&](double t) -> std::optional<std::size_t> {
      for (std::size_t a = 0; a < times.size(); ++a)
        if (std::abs(times[a] - t) < 1e-12) return a;
      return std::nullopt;
    };
    for (const auto& [s, t] : pairs)
      for (std::size_t r = 0; r < radii.size(); ++r) {
        const double sqrtR = std::sqrt(radii[r]);
        const auto as = index_of(s);
        const Matrix Gs = as ? Matrix(sqrtR * pass.averages(*as, r)) : Matrix(Matrix::Zero(M, d));
        const Matrix Gt = sqrtR * pass.averages(*index_of(t), r);
        const IncrementMoment im = increment_moment(Gs, Gt, s, t, cfg.moment_p, radii[r]);
        inc.add_row({cell(s), cell(t), cell(radii[r]), cell(cfg.moment_p), cell(im.moment), cell(im.se), cell(im.ratio)});
      }
    out.tables.push_back(cross);
    out.tables.push_back(orth);
    out.tables.push_back(inc);
  }

  if (cfg.kind == ExperimentKind::malliavin) {
    const double tp = pass.spec().pairing_time;
    std::size_t ap = 0;
    while (std::abs(times[ap] - tp) > 1e-12) ++ap;
    Table pair{"pairing",
               {"t", "R", "i", "j", "mean_pairing", "mean_pairing_se", "mean_FF", "mean_FF_se", "difference",
                "difference_se", "varhat", "varhat_se", "ok"},
               {}};
    Table stein{"stein", {"t", "R", "var_sum", "var_sum_se", "bound", "bound_sqrtR", "min_eig_CR", "op_norm_CR"}, {}};
    std::vector<double> var_sums, bounds;
    for (std::size_t r = 0; r < radii.size(); ++r) {
      const std::vector<Matrix> Ps = pass.pairings(r);
      const Matrix F = pass.averages(ap, r);
      const CovarianceEstimate pr = prelimit_covariance(eta, tp, radii[r]);
      const SteinEstimate se = stein_bound(Ps, pr.value);
      double var_sum_se = 0.0;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          Eigen::ArrayXd p(M), ff(M);
          for (int q = 0; q < M; ++q) {
            p(q) = Ps[q](i, j);
            ff(q) = F(q, i) * F(q, j);
          }
          const Eigen::ArrayXd diff = p - ff;
          auto mean_se = [&](const Eigen::ArrayXd& v) {
            const double mu = v.mean();
            return std::pair{mu, std::sqrt((v - mu).square().sum() / (M - 1.0) / M)};
          };
          const auto [mp, mp_se] = mean_se(p);
          const auto [mf, mf_se] = mean_se(ff);
          const auto [md, md_se] = mean_se(diff);
          var_sum_se += se.varhat_se(i, j) * se.varhat_se(i, j);
          pair.add_row({cell(tp), cell(radii[r]), cell(static_cast<long long>(i)), cell(static_cast<long long>(j)),
                        cell(mp), cell(mp_se), cell(mf), cell(mf_se), cell(md), cell(md_se), cell(se.varhat(i, j)),
                        cell(se.varhat_se(i, j)), flag(std::abs(md) <= cfg.se_multiplier * md_se)});
        }
      const Eigenpairs e = sym_eig(pr.value);
      stein.add_row({cell(tp), cell(radii[r]), cell(se.var_sum), cell(std::sqrt(var_sum_se)), cell(se.bound),
                     cell(se.bound * std::sqrt(radii[r])), cell(e.values(0)), cell(e.values.cwiseAbs().maxCoeff())});
      var_sums.push_back(se.var_sum);
      bounds.push_back(se.bound);
    }
    add_rate_row(rates, "stein_var_sum", tp, radii, var_sums);
    add_rate_row(rates, "stein_bound", tp, radii, bounds);
    out.tables.push_back(pair);
    out.tables.push_back(stein);
  }
  out.tables.push_back(rates);
  return out;
}

EtaCurve deterministic_eta(const ExperimentConfig& cfg, const Grid& grid, std::string& source) {
  if (cfg.eta_file) {
    std::ifstream in(*cfg.eta_file);
    if (!in) throw ConfigError("experiment.eta_file: cannot open '" + *cfg.eta_file + "'");
    EtaCurve eta = EtaCurve::read_csv(in);
    eta.validate();
    if (eta.d() != cfg.d || eta.m() != cfg.m) throw ConfigError("experiment.eta_file: shape does not match the model");
    source = "file";
    return eta;
  }
  if (std::holds_alternative<ConstantSigma>(cfg.family)) {
    source = "closed-form-constant";
    return eta_for(cfg, grid, nullptr);
  }
  if (const auto* af = std::get_if<AffineSigma>(&cfg.family); af && cfg.d == 1 && cfg.m == 1 && af->a(0, 0) == 0.0) {
    source = "volterra-pam";
    return pam_second_moment(af->b(0, 0, 0), cfg.T).eta();
  }
  throw ConfigError("experiment.eta_file: required for this family (no closed-form eta)");
}

Analysis analyze_rate(const ExperimentConfig& cfg, const Grid& grid) {
  Analysis out;
  std::string source;
  const EtaCurve eta = deterministic_eta(cfg, grid, source);
  out.notes["eta_source"] = source;
  const double t = cfg.output_times.back();
  Table rate{"rate", {"t", "R", "hs_gap", "gap_bound", "min_eig_CR", "min_eig_C"}, {}};
  Table rates = rates_table();
  const CovarianceEstimate lim = limit_covariance(eta, t);
  std::vector<double> hs, gaps;
  for (double R : cfg.R) {
    const CovarianceEstimate pr = prelimit_covariance(eta, t, R);
    const double h = hs_norm(pr.value - lim.value);
    double g = kNaN;
    try {
      g = gaussian_gap_bound(pr.value, lim.value);
    } catch (const NumericalError& e) {
      out.notes["gap_bound"] = e.what();
    }
    rate.add_row({cell(t), cell(R), cell(h), cell(g), cell(min_eigen_check(pr.value)), cell(min_eigen_check(lim.value))});
    hs.push_back(h);
    gaps.push_back(g);
  }
  add_rate_row(rates, "hs_gap", t, cfg.R, hs);
  add_rate_row(rates, "gap_bound", t, cfg.R, gaps);
  out.tables = {rate, rates};
  return out;
}

Analysis analyze_h1(const ExperimentConfig& cfg) {
  Analysis out;
  const H1Result h = check_h1(cfg.field());
  Table t{"h1", {"holds", "rank", "d", "m"}, {}};
  t.add_row({flag(h.holds), cell(static_cast<long long>(h.rank)), cell(static_cast<long long>(cfg.d)),
             cell(static_cast<long long>(cfg.m))});
  Table sv{"singular_values", {"k", "value"}, {}};
  for (Eigen::Index k = 0; k < h.singular_values.size(); ++k) sv.add_row({cell(static_cast<long long>(k)), cell(h.singular_values(k))});
  out.notes["holds"] = h.holds;
  out.notes["rank"] = h.rank;
  out.tables = {t, sv};
  return out;
}

Analysis analyze_oracle(const ExperimentConfig& cfg, const Grid& grid) {
  Analysis out;
  Table calib{"calibration", {"quantity", "t", "continuum", "lattice", "lattice_refined", "shift", "bias"}, {}};
  auto add_calibration = [&](const std::string& what, double t, double cont, double lat, double fine) {
    calib.add_row({what, cell(t), cell(cont), cell(lat), cell(fine), cell(fine - lat), cell(lat - cont)});
  };
  const auto step = [&](const LatticeMoments& lm, double t) { return lm.second.at(static_cast<std::size_t>(std::lround(t / (lm.times[1] - lm.times[0])))); };
  if (const auto* c = std::get_if<ConstantSigma>(&cfg.family)) {
    Table cov{"covariance", {"t", "R", "i", "j", "limit", "prelimit", "prelimit_lattice"}, {}};
    const EtaCurve eta = eta_for(cfg, grid, nullptr);
    const Matrix SS = c->S * c->S.transpose();
    for (double t : cfg.output_times)
      for (double R : cfg.R) {
        const ConstantSigmaLaw law = constant_sigma_law(c->S, t, grid.effective_radius(R), eta);
        const Matrix lat = lattice_constant_covariance(c->S, grid, t, R);
        for (int i = 0; i < cfg.d; ++i)
          for (int j = 0; j < cfg.d; ++j)
            cov.add_row({cell(t), cell(grid.effective_radius(R)), cell(static_cast<long long>(i)),
                         cell(static_cast<long long>(j)), cell(law.C(i, j)), cell(law.CR(i, j)), cell(lat(i, j))});
      }
    out.tables.push_back(cov);
    const LatticeMoments coarse = lattice_additive_moments(1.0, cfg.dt, cfg.dx, cfg.T);
    const LatticeMoments fine = lattice_additive_moments(1.0, cfg.dt / 4.0, cfg.dx / 2.0, cfg.T);
    for (double t : cfg.output_times) {
      // Var u_i = (SSᵀ)_ii·√(t/π); the lattice recursion is linear in SSᵀ.
      const double s2 = SS(0, 0);
      add_calibration("point_variance_00", t, s2 * additive_point_variance(t), s2 * (step(coarse, t) - 1.0),
                      s2 * (step(fine, t) - 1.0));
    }
  }
  if (cfg.pam_lambda) {
    const VolterraSolution v = pam_second_moment(*cfg.pam_lambda, cfg.T);
    Table vt{"volterra", {"t", "f"}, {}};
    for (std::size_t a = 0; a < v.times.size(); ++a) vt.add_row({cell(v.times[a]), cell(v.values[a])});
    out.tables.push_back(vt);
    out.notes["volterra_steps"] = v.steps;
    out.notes["volterra_error_estimate"] = v.error_estimate;
    const LatticeMoments coarse = lattice_pam_moments(*cfg.pam_lambda, cfg.dt, cfg.dx, cfg.T);
    const LatticeMoments fine = lattice_pam_moments(*cfg.pam_lambda, cfg.dt / 4.0, cfg.dx / 2.0, cfg.T);
    for (double t : cfg.output_times) add_calibration("pam_second_moment", t, v.at(t), step(coarse, t), step(fine, t));
  }
  if (calib.rows.empty() && out.tables.empty()) {
    throw ConfigError("oracle: needs a constant family or experiment.pam_lambda");
  }
  out.tables.push_back(calib);
  return out;
}

ExperimentReport assemble(const ExperimentConfig& cfg, Analysis analysis, const PassResult* pass, double seconds) {
  ExperimentReport report;
  report.name = cfg.name;
  json doc;
  doc["schema_version"] = 1;
  doc["kind"] = to_string(cfg.kind);
  doc["name"] = cfg.name;
  doc["config"] = to_json(cfg);
  doc["config_hash"] = config_hash(cfg);
  json results = json::object();
  for (const Table& t : analysis.tables) {
    if (t.name == "samples") continue;  // already in batch.F; CSV only
    results[t.name] = table_json(t);
  }
  doc["results"] = results;
  doc["notes"] = analysis.notes;
  if (pass) doc["batch"] = pass->to_json();
  doc["metadata"] = {{"wall_clock_seconds", seconds},
                     {"workers", cfg.workers},
                     {"replicas", pass ? pass->replicas() : 0},
                     {"first_replica", pass ? pass->first_replica() : 0}};
  report.document = std::move(doc);
  report.tables = std::move(analysis.tables);
  return report;
}

bool needs_simulation(ExperimentKind kind) {
  return kind == ExperimentKind::covariance || kind == ExperimentKind::fclt || kind == ExperimentKind::malliavin;
}

}  // namespace

PassSpec pass_spec_for(const ExperimentConfig& cfg, const Grid& grid) {
  PassSpec spec;
  spec.output_times = cfg.output_times;
  spec.radii = cfg.R;
  spec.point_moments = true;
  if (!std::holds_alternative<ConstantSigma>(cfg.family)) {
    const int last = grid.step_of(cfg.output_times.back());
    std::vector<int> steps;
    for (int n = 0; n <= last; n += cfg.eta_stride) steps.push_back(n);
    for (double t : cfg.output_times) steps.push_back(grid.step_of(t));
    std::sort(steps.begin(), steps.end());
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
    for (int n : steps) spec.eta_times.push_back(grid.time(n));
  }
  if (cfg.kind == ExperimentKind::malliavin) {
    spec.pairing_radii = cfg.R;
    spec.pairing_time = cfg.pairing_time.value_or(cfg.output_times.back());
    spec.window = cfg.window == "continuum" ? WindowKind::continuum : WindowKind::discrete;
  }
  return spec;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  const auto start = std::chrono::steady_clock::now();
  const Grid grid = Grid::create(cfg.grid_spec());
  Analysis analysis;
  std::optional<PassResult> pass;
  switch (cfg.kind) {
    case ExperimentKind::h1: analysis = analyze_h1(cfg); break;
    case ExperimentKind::rate: analysis = analyze_rate(cfg, grid); break;
    case ExperimentKind::oracle: analysis = analyze_oracle(cfg, grid); break;
    default: {
      const DiffusionField field = cfg.field();
      pass = simulate_pass(field, grid, pass_spec_for(cfg, grid), cfg.seed, cfg.replica_offset, cfg.replicas,
                           cfg.workers);
      analysis = analyze_simulation(cfg, grid, *pass);
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return assemble(cfg, std::move(analysis), pass ? &*pass : nullptr, seconds);
}

ExperimentReport merge_reports(const std::vector<json>& reports) {
  if (reports.empty()) throw ConfigError("merge: no reports given");
  const auto start = std::chrono::steady_clock::now();
  struct Item {
    ExperimentConfig cfg;
    const json* doc;
  };
  std::vector<Item> items;
  std::string hash;
  for (const json& doc : reports) {
    if (!doc.contains("config") || !doc.contains("config_hash")) throw ConfigError("merge: not a report document");
    ExperimentConfig cfg = parse_config(doc.at("config"));
    const std::string h = config_hash(cfg);
    if (h != doc.at("config_hash").get<std::string>()) throw ConfigError("merge: report hash does not match its config");
    if (hash.empty()) hash = h;
    if (h != hash) throw ConfigError("merge: config hashes differ (" + hash + " vs " + h + ")");
    if (!needs_simulation(cfg.kind) || !doc.contains("batch")) {
      throw ConfigError("merge: only simulation reports (covariance, fclt, malliavin) carry mergeable batches");
    }
    items.push_back({std::move(cfg), &doc});
  }
  std::sort(items.begin(), items.end(),
            [](const Item& a, const Item& b) { return a.cfg.replica_offset < b.cfg.replica_offset; });
  ExperimentConfig merged = items.front().cfg;
  const Grid grid = Grid::create(merged.grid_spec());
  const PassSpec spec = pass_spec_for(merged, grid);
  PassResult pass = PassResult::from_json(items.front().doc->at("batch"), spec, merged.d);
  for (std::size_t k = 1; k < items.size(); ++k) {
    pass.append(PassResult::from_json(items[k].doc->at("batch"), spec, merged.d));
  }
  merged.replicas = pass.replicas();
  merged.replica_offset = pass.first_replica();
  Analysis analysis = analyze_simulation(merged, grid, pass);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return assemble(merged, std::move(analysis), &pass, seconds);
}

void write_report(const ExperimentReport& report, const std::string& directory, const std::vector<std::string>& formats) {
  std::filesystem::create_directories(directory);
  const std::filesystem::path dir(directory);
  auto write = [&](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("output: cannot write '" + path.string() + "'");
    out << text;
  };
  if (std::find(formats.begin(), formats.end(), "json") != formats.end()) {
    write(dir / (report.name + "_report.json"), report.document.dump(1) + "\n");
  }
  if (std::find(formats.begin(), formats.end(), "csv") != formats.end()) {
    for (const Table& t : report.tables) write(dir / (report.name + "_" + t.name + ".csv"), t.csv());
  }
}

}  // namespace heatclt
