#include "heatclt/config.hpp"
#include "heatclt/errors.hpp"
#include "heatclt/experiment.hpp"
#include "heatclt/malliavin.hpp"
#include "heatclt/model.hpp"
#include "heatclt/observables.hpp"
#include "heatclt/oracles.hpp"
#include "heatclt/stats.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

namespace py = pybind11;
using namespace heatclt;
using nlohmann::json;

namespace {

// Documents cross the boundary as JSON text; the Python side wraps json.loads/dumps.
ExperimentConfig config_from(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

py::dict report_dict(const ExperimentReport& r) {
  py::dict tables;
  for (const Table& t : r.tables) {
    py::dict tab;
    tab["columns"] = t.columns;
    tab["rows"] = t.rows;
    tables[py::str(t.name)] = tab;
  }
  py::dict out;
  out["name"] = r.name;
  out["document"] = r.document.dump();
  out["tables"] = tables;
  return out;
}

Grid grid_from(const ExperimentConfig& cfg) { return Grid::create(cfg.grid_spec()); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Stochastic heat equation CLT toolkit (native core)";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  // model
  m.def("heat_kernel", &heat_kernel, py::arg("t"), py::arg("x"));
  m.def("kernel_window", &kernel_window, py::arg("t"), py::arg("y"), py::arg("R"));
  m.def(
      "check_h1",
      [](const std::string& config) {
        const H1Result h = check_h1(config_from(config).field());
        return py::make_tuple(h.holds, h.rank, h.singular_values);
      },
      py::arg("config"), "(holds, rank, singular values) of sigma at the all-ones state");
  m.def(
      "sigma",
      [](const std::string& config, const Vector& u) { return config_from(config).field().sigma(u); },
      py::arg("config"), py::arg("u"));

  // config
  m.def(
      "validate_config", [](const std::string& config) { return config_hash(config_from(config)); },
      py::arg("config"), "Validates a config document and returns its content hash");
  m.def(
      "canonical_config", [](const std::string& config) { return to_json(config_from(config)).dump(); },
      py::arg("config"));

  // experiments
  m.def(
      "run_experiment",
      [](const std::string& config) {
        const ExperimentConfig cfg = config_from(config);
        ExperimentReport report;
        {
          py::gil_scoped_release release;
          report = run_experiment(cfg);
        }
        return report_dict(report);
      },
      py::arg("config"));
  m.def(
      "merge_reports",
      [](const std::vector<std::string>& documents) {
        std::vector<json> docs;
        for (const auto& d : documents) docs.push_back(json::parse(d));
        return report_dict(merge_reports(docs));
      },
      py::arg("documents"));
  m.def(
      "spatial_averages",
      [](const std::string& config, double t, double R, std::uint64_t seed, int count, std::uint64_t first) {
        const ExperimentConfig cfg = config_from(config);
        const Grid grid = grid_from(cfg);
        PassSpec spec;
        spec.output_times = {t};
        spec.radii = {R};
        spec.point_moments = false;
        Matrix F;
        {
          py::gil_scoped_release release;
          F = simulate_pass(cfg.field(), grid, spec, seed, first, count, cfg.workers).averages(0, 0);
        }
        return F;
      },
      py::arg("config"), py::arg("t"), py::arg("R"), py::arg("seed"), py::arg("count"), py::arg("first") = 0,
      "count x d samples of F^R(t) for replica ids [first, first + count)");

  // observables for constant sigma
  m.def(
      "limit_covariance_constant",
      [](const Matrix& S, double t) { return limit_covariance(constant_eta(S, {0.0, t}), t).value; },
      py::arg("S"), py::arg("t"));
  m.def(
      "prelimit_covariance_constant",
      [](const Matrix& S, double t, double R) { return prelimit_covariance(constant_eta(S, {0.0, t}), t, R).value; },
      py::arg("S"), py::arg("t"), py::arg("R"));
  m.def("window_factor", &window_factor, py::arg("s"), py::arg("R"));

  // stats
  m.def("gaussian_w2", &gaussian_w2, py::arg("C1"), py::arg("C2"));
  m.def("gaussian_gap_bound", &gaussian_gap_bound, py::arg("CR"), py::arg("C"));
  m.def("min_eigen_check", &min_eigen_check, py::arg("CR"));
  m.def(
      "sliced_w1",
      [](const Matrix& samples, const Matrix& C, int nproj, std::uint64_t seed) {
        const SlicedW1 s = sliced_w1(samples, C, nproj, seed);
        return py::make_tuple(s.mean, s.max);
      },
      py::arg("samples"), py::arg("C"), py::arg("nproj") = 64, py::arg("seed") = 1);
  m.def(
      "mardia",
      [](const Matrix& samples) {
        const MardiaResult r = mardia(samples);
        py::dict d;
        d["skewness"] = r.skewness_stat;
        d["kurtosis"] = r.kurtosis_stat;
        d["skew_pvalue"] = r.skew_pvalue;
        d["kurt_pvalue"] = r.kurt_pvalue;
        return d;
      },
      py::arg("samples"));
  m.def(
      "rate_fit",
      [](const std::vector<double>& R, const std::vector<double>& values) {
        if (R.size() != values.size()) throw ConfigError("rate_fit: R and values differ in length");
        std::vector<std::pair<double, double>> pts;
        for (std::size_t k = 0; k < R.size(); ++k) pts.emplace_back(R[k], values[k]);
        const RateFit f = rate_fit(pts);
        return py::make_tuple(f.slope, f.intercept, f.r2);
      },
      py::arg("R"), py::arg("values"));

  // malliavin
  auto pairing = [](bool brute) {
    return [brute](const std::string& config, double t, double R, std::uint64_t seed, std::uint64_t replica) {
      const ExperimentConfig cfg = config_from(config);
      const Grid grid = grid_from(cfg);
      const PairingSample p = brute ? pairing_bruteforce(cfg.field(), grid, t, R, seed, replica)
                                    : pairing_tangent(cfg.field(), grid, t, R, seed, replica);
      return py::make_tuple(p.P, p.F);
    };
  };
  m.def("pairing_tangent", pairing(false), py::arg("config"), py::arg("t"), py::arg("R"), py::arg("seed"),
        py::arg("replica"), "(P, F^R(t)) for one replica via tangent fields");
  m.def("pairing_bruteforce", pairing(true), py::arg("config"), py::arg("t"), py::arg("R"), py::arg("seed"),
        py::arg("replica"), "(P, F^R(t)) for one replica by direct perturbation (tiny grids only)");

  // oracles
  m.def(
      "pam_second_moment",
      [](double lambda, double T) {
        const VolterraSolution v = pam_second_moment(lambda, T);
        return py::make_tuple(v.times, v.values);
      },
      py::arg("lam"), py::arg("T"));
  m.def("additive_point_variance", &additive_point_variance, py::arg("t"));
}
