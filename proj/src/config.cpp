#include "heatclt/config.hpp"

#include "heatclt/errors.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace heatclt {

using nlohmann::json;

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::h1: return "h1";
    case ExperimentKind::covariance: return "covariance";
    case ExperimentKind::rate: return "rate";
    case ExperimentKind::fclt: return "fclt";
    case ExperimentKind::malliavin: return "malliavin";
    case ExperimentKind::oracle: return "oracle";
  }
  return "unknown";
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
  for (ExperimentKind k : {ExperimentKind::h1, ExperimentKind::covariance, ExperimentKind::rate,
                           ExperimentKind::fclt, ExperimentKind::malliavin, ExperimentKind::oracle}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("experiment.kind: unknown kind '" + s + "' (h1, covariance, rate, fclt, malliavin, oracle)");
}

namespace {

const std::set<std::string> kSections{"schema_version", "model", "grid", "experiment", "output"};
const std::set<std::string> kModelKeys{"family", "d", "m", "S", "a", "b", "c", "w"};
const std::set<std::string> kGridKeys{"T", "dt", "dx", "padding", "output_times"};
const std::set<std::string> kExperimentKeys{
    "kind", "name", "R", "replicas", "replica_offset", "seed", "workers", "eta_stride", "nproj", "bootstrap",
    "moment_p", "increment_pairs", "pairing_time", "window", "tolerance", "eta_file", "pam_lambda"};
const std::set<std::string> kOutputKeys{"directory", "formats"};

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

double get_number(const json& obj, const std::string& key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + ": must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(where + "." + key + ": must be finite");
  return x;
}

int get_int(const json& obj, const std::string& key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_number_integer()) throw ConfigError(where + "." + key + ": must be an integer");
  return v.get<int>();
}

std::uint64_t get_u64(const json& obj, const std::string& key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    throw ConfigError(where + "." + key + ": must be a nonnegative integer");
  }
  return v.get<std::uint64_t>();
}

std::vector<double> get_numbers(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": must be an array of numbers");
  std::vector<double> out;
  for (const json& x : v) {
    if (!x.is_number() || !std::isfinite(x.get<double>())) throw ConfigError(where + ": must be an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

Matrix get_matrix(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) throw ConfigError(where + ": must be a nonempty matrix (array of rows)");
  const std::size_t rows = v.size();
  const std::size_t cols = v.at(0).is_array() ? v.at(0).size() : 0;
  if (cols == 0) throw ConfigError(where + ": rows must be nonempty arrays");
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::vector<double> row = get_numbers(v.at(i), where);
    if (row.size() != cols) throw ConfigError(where + ": ragged matrix");
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = row[j];
  }
  return out;
}

Tensor3 get_tensor(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty() || !v.at(0).is_array() || v.at(0).empty()) {
    throw ConfigError(where + ": must be a nonempty d x m x d array");
  }
  const int n0 = static_cast<int>(v.size());
  const int n1 = static_cast<int>(v.at(0).size());
  const int n2 = v.at(0).at(0).is_array() ? static_cast<int>(v.at(0).at(0).size()) : 0;
  if (n2 == 0) throw ConfigError(where + ": innermost arrays must be nonempty");
  Tensor3 out(n0, n1, n2);
  for (int i = 0; i < n0; ++i) {
    if (!v.at(i).is_array() || static_cast<int>(v.at(i).size()) != n1) throw ConfigError(where + ": ragged array");
    for (int j = 0; j < n1; ++j) {
      const std::vector<double> row = get_numbers(v.at(i).at(j), where);
      if (static_cast<int>(row.size()) != n2) throw ConfigError(where + ": ragged array");
      for (int k = 0; k < n2; ++k) out(i, j, k) = row[k];
    }
  }
  return out;
}

json matrix_json(const Matrix& A) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < A.cols(); ++j) row.push_back(A(i, j));
    rows.push_back(row);
  }
  return rows;
}

json tensor_json(const Tensor3& T) {
  json out = json::array();
  for (int i = 0; i < T.dim0(); ++i) {
    json mid = json::array();
    for (int j = 0; j < T.dim1(); ++j) {
      json row = json::array();
      for (int k = 0; k < T.dim2(); ++k) row.push_back(T(i, j, k));
      mid.push_back(row);
    }
    out.push_back(mid);
  }
  return out;
}

void parse_model(const json& model, ExperimentConfig& cfg) {
  reject_unknown(model, kModelKeys, "model");
  if (!model.contains("family") || !model.at("family").is_string()) {
    throw ConfigError("model.family: required (constant, affine, bounded-smooth)");
  }
  const std::string family = model.at("family").get<std::string>();
  auto need = [&](const char* key) -> const json& {
    if (!model.contains(key)) throw ConfigError("model." + std::string(key) + ": required for family " + family);
    return model.at(key);
  };
  if (family == "constant") {
    cfg.family = ConstantSigma{get_matrix(need("S"), "model.S")};
  } else if (family == "affine") {
    cfg.family = AffineSigma{get_matrix(need("a"), "model.a"), get_tensor(need("b"), "model.b")};
  } else if (family == "bounded-smooth") {
    cfg.family = BoundedSmoothSigma{get_matrix(need("a"), "model.a"), get_matrix(need("c"), "model.c"),
                                    get_tensor(need("w"), "model.w")};
  } else {
    throw ConfigError("model.family: unknown family '" + family + "' (constant, affine, bounded-smooth)");
  }
  // Shape checks happen in DiffusionField::from_family; d and m follow the matrices.
  const DiffusionField field = DiffusionField::from_family(cfg.family);
  cfg.d = field.d();
  cfg.m = field.m();
  if (model.contains("d") && get_int(model, "d", "model") != cfg.d) {
    throw ConfigError("model.d: does not match the coefficient matrices (d = " + std::to_string(cfg.d) + ")");
  }
  if (model.contains("m") && get_int(model, "m", "model") != cfg.m) {
    throw ConfigError("model.m: does not match the coefficient matrices (m = " + std::to_string(cfg.m) + ")");
  }
}

json model_json(const ExperimentConfig& cfg) {
  json model;
  model["d"] = cfg.d;
  model["m"] = cfg.m;
  model["family"] = family_tag(cfg.family);
  std::visit(
      [&](const auto& f) {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, ConstantSigma>) {
          model["S"] = matrix_json(f.S);
        } else if constexpr (std::is_same_v<F, AffineSigma>) {
          model["a"] = matrix_json(f.a);
          model["b"] = tensor_json(f.b);
        } else {
          model["a"] = matrix_json(f.a);
          model["c"] = matrix_json(f.c);
          model["w"] = tensor_json(f.w);
        }
      },
      cfg.family);
  return model;
}

}  // namespace

GridSpec ExperimentConfig::grid_spec() const {
  GridSpec spec;
  spec.T = T;
  spec.dt = dt;
  spec.dx = dx;
  spec.padding = padding;
  spec.R_max = R.empty() ? 0.0 : R.back();
  spec.output_times = output_times;
  return spec;
}

DiffusionField ExperimentConfig::field() const { return DiffusionField::from_family(family); }

namespace {

ExperimentConfig parse_document(const json& doc) {
  reject_unknown(doc, kSections, "config");
  ExperimentConfig cfg;
  if (doc.contains("schema_version")) {
    cfg.schema_version = get_int(doc, "schema_version", "config");
    if (cfg.schema_version != 1) throw ConfigError("schema_version: only version 1 is supported");
  }
  if (!doc.contains("model")) throw ConfigError("model: section required");
  parse_model(doc.at("model"), cfg);

  const json grid = doc.value("grid", json::object());
  reject_unknown(grid, kGridKeys, "grid");
  if (grid.contains("T")) cfg.T = get_number(grid, "T", "grid");
  if (grid.contains("dt")) cfg.dt = get_number(grid, "dt", "grid");
  if (grid.contains("dx")) cfg.dx = get_number(grid, "dx", "grid");
  if (grid.contains("padding")) cfg.padding = get_number(grid, "padding", "grid");
  if (grid.contains("output_times")) {
    cfg.output_times = get_numbers(grid.at("output_times"), "grid.output_times");
  } else {
    cfg.output_times = {cfg.T};
  }

  const json exp = doc.value("experiment", json::object());
  reject_unknown(exp, kExperimentKeys, "experiment");
  if (exp.contains("kind")) {
    if (!exp.at("kind").is_string()) throw ConfigError("experiment.kind: must be a string");
    cfg.kind = experiment_kind_from_string(exp.at("kind").get<std::string>());
  }
  cfg.name = exp.contains("name") ? exp.at("name").get<std::string>() : to_string(cfg.kind);
  cfg.R = exp.contains("R") ? get_numbers(exp.at("R"), "experiment.R") : Defaults::R_grid;
  if (exp.contains("replicas")) cfg.replicas = get_int(exp, "replicas", "experiment");
  if (exp.contains("replica_offset")) cfg.replica_offset = get_u64(exp, "replica_offset", "experiment");
  if (exp.contains("seed")) cfg.seed = get_u64(exp, "seed", "experiment");
  if (exp.contains("workers")) cfg.workers = get_int(exp, "workers", "experiment");
  if (exp.contains("eta_stride")) cfg.eta_stride = get_int(exp, "eta_stride", "experiment");
  if (exp.contains("nproj")) cfg.nproj = get_int(exp, "nproj", "experiment");
  if (exp.contains("bootstrap")) cfg.bootstrap = get_int(exp, "bootstrap", "experiment");
  if (exp.contains("moment_p")) cfg.moment_p = get_number(exp, "moment_p", "experiment");
  if (exp.contains("increment_pairs")) {
    const json& pairs = exp.at("increment_pairs");
    if (!pairs.is_array()) throw ConfigError("experiment.increment_pairs: must be an array of [s, t] pairs");
    for (const json& p : pairs) {
      const std::vector<double> st = get_numbers(p, "experiment.increment_pairs");
      if (st.size() != 2) throw ConfigError("experiment.increment_pairs: each entry must be [s, t]");
      cfg.increment_pairs.emplace_back(st[0], st[1]);
    }
  }
  if (exp.contains("pairing_time")) cfg.pairing_time = get_number(exp, "pairing_time", "experiment");
  if (exp.contains("window")) cfg.window = exp.at("window").get<std::string>();
  if (exp.contains("tolerance")) {
    const json& tol = exp.at("tolerance");
    reject_unknown(tol, {"se_multiplier", "allowance"}, "experiment.tolerance");
    if (tol.contains("se_multiplier")) cfg.se_multiplier = get_number(tol, "se_multiplier", "experiment.tolerance");
    if (tol.contains("allowance")) cfg.allowance = get_number(tol, "allowance", "experiment.tolerance");
  }
  if (exp.contains("eta_file")) cfg.eta_file = exp.at("eta_file").get<std::string>();
  if (exp.contains("pam_lambda")) cfg.pam_lambda = get_number(exp, "pam_lambda", "experiment");

  const json out = doc.value("output", json::object());
  reject_unknown(out, kOutputKeys, "output");
  if (out.contains("directory")) cfg.directory = out.at("directory").get<std::string>();
  if (out.contains("formats")) cfg.formats = out.at("formats").get<std::vector<std::string>>();

  validate(cfg);
  return cfg;
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  try {
    return parse_document(doc);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: wrong value type: ") + e.what());
  }
}

json read_config_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_config_document(path)); }

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override: expected KEY=VALUE, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &doc;
  std::stringstream path(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) {
    if (part.empty()) throw ConfigError("override: empty path component in '" + key + "'");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& child = (*node)[parts[i]];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError("override: '" + parts[i] + "' is not a section");
    node = &child;
  }
  (*node)[parts.back()] = value;
}

json to_json(const ExperimentConfig& cfg) {
  json doc;
  doc["schema_version"] = cfg.schema_version;
  doc["model"] = model_json(cfg);
  doc["grid"] = {{"T", cfg.T}, {"dt", cfg.dt}, {"dx", cfg.dx}, {"padding", cfg.padding},
                 {"output_times", cfg.output_times}};
  json exp;
  exp["kind"] = to_string(cfg.kind);
  exp["name"] = cfg.name;
  exp["R"] = cfg.R;
  exp["replicas"] = cfg.replicas;
  exp["replica_offset"] = cfg.replica_offset;
  exp["seed"] = cfg.seed;
  exp["workers"] = cfg.workers;
  exp["eta_stride"] = cfg.eta_stride;
  exp["nproj"] = cfg.nproj;
  exp["bootstrap"] = cfg.bootstrap;
  exp["moment_p"] = cfg.moment_p;
  json pairs = json::array();
  for (const auto& [s, t] : cfg.increment_pairs) pairs.push_back({s, t});
  exp["increment_pairs"] = pairs;
  if (cfg.pairing_time) exp["pairing_time"] = *cfg.pairing_time;
  exp["window"] = cfg.window;
  exp["tolerance"] = {{"se_multiplier", cfg.se_multiplier}, {"allowance", cfg.allowance}};
  if (cfg.eta_file) exp["eta_file"] = *cfg.eta_file;
  if (cfg.pam_lambda) exp["pam_lambda"] = *cfg.pam_lambda;
  doc["experiment"] = exp;
  doc["output"] = {{"directory", cfg.directory}, {"formats", cfg.formats}};
  return doc;
}

std::string config_hash(const ExperimentConfig& cfg) {
  json doc = to_json(cfg);
  doc["experiment"].erase("replicas");
  doc["experiment"].erase("replica_offset");
  doc["experiment"].erase("workers");
  doc.erase("output");
  const std::string body = doc.dump();
  const std::string blob = "blob " + std::to_string(body.size()) + std::string(1, '\0') + body;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), digest);
  std::string hex;
  char buf[3];
  for (unsigned char byte : digest) {
    std::snprintf(buf, sizeof buf, "%02x", byte);
    hex += buf;
  }
  return hex;
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.replicas < 1) throw ConfigError("experiment.replicas: must be at least 1");
  if (cfg.workers < 1) throw ConfigError("experiment.workers: must be at least 1");
  if (cfg.eta_stride < 1) throw ConfigError("experiment.eta_stride: must be at least 1");
  if (cfg.nproj < 1) throw ConfigError("experiment.nproj: must be at least 1");
  if (cfg.bootstrap < 0) throw ConfigError("experiment.bootstrap: must be nonnegative");
  if (!(cfg.moment_p > 0.0)) throw ConfigError("experiment.moment_p: must be positive");
  if (!(cfg.se_multiplier >= 0.0) || !(cfg.allowance >= 0.0)) {
    throw ConfigError("experiment.tolerance: entries must be nonnegative");
  }
  if (cfg.window != "discrete" && cfg.window != "continuum") {
    throw ConfigError("experiment.window: must be 'discrete' or 'continuum'");
  }
  if (cfg.name.empty() || cfg.name.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("experiment.name: must be a nonempty file-name-safe string");
  }
  if (cfg.R.empty()) throw ConfigError("experiment.R: at least one radius required");
  for (std::size_t i = 0; i < cfg.R.size(); ++i) {
    if (!(cfg.R[i] > 0.0)) throw ConfigError("experiment.R: radii must be positive");
    if (i > 0 && !(cfg.R[i] > cfg.R[i - 1])) throw ConfigError("experiment.R: must be sorted ascending without repeats");
  }
  if (cfg.output_times.empty()) throw ConfigError("grid.output_times: at least one time required");
  for (std::size_t i = 0; i < cfg.output_times.size(); ++i) {
    if (!(cfg.output_times[i] > 0.0)) throw ConfigError("grid.output_times: times must be positive");
    if (i > 0 && !(cfg.output_times[i] > cfg.output_times[i - 1])) {
      throw ConfigError("grid.output_times: must be sorted ascending without repeats");
    }
  }
  for (const std::string& f : cfg.formats) {
    if (f != "json" && f != "csv") throw ConfigError("output.formats: entries must be 'json' or 'csv'");
  }
  // The grid carries the stability, truncation and time-alignment invariants.
  const Grid grid = Grid::create(cfg.grid_spec());
  for (double R : cfg.R) grid.effective_radius(R);
  const auto& ts = cfg.output_times;
  auto is_output = [&](double t) {
    return std::find_if(ts.begin(), ts.end(), [&](double o) { return std::abs(o - t) < 1e-12; }) != ts.end();
  };
  for (const auto& [s, t] : cfg.increment_pairs) {
    if (!(s >= 0.0) || !(t >= s)) throw ConfigError("experiment.increment_pairs: need 0 <= s <= t");
    if ((s != 0.0 && !is_output(s)) || !is_output(t)) {
      throw ConfigError("experiment.increment_pairs: times must be 0 or one of grid.output_times");
    }
  }
  if (cfg.pairing_time && !is_output(*cfg.pairing_time)) {
    throw ConfigError("experiment.pairing_time: must be one of grid.output_times");
  }
  if (cfg.kind == ExperimentKind::malliavin && !cfg.field().has_jacobian()) {
    throw ConfigError("model: the malliavin experiment needs a differentiable family");
  }
}

}  // namespace heatclt
