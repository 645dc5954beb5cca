#pragma once

// Scenario files: JSON with a versioned "schema" field.
//
//   {
//     "schema": "hermflow.scenario/1",
//     "grid":    {"n1": 32, "n2": 32, "tau": [0, 1], "k": 1, "scheme": "spectral"},
//     "bundle":  {"twists": [1, 0], "isotropy": [1, -1], "a": [{"row": 1, "col": 0, "coeff": 0.8}]},
//     "flow":    {"dt": 0, "t_max": 40, "time_scheme": "rk4", "monitor_every": 50, "stop_tol": 1e-6},
//     "initial": {"kind": "random", "seed": 11, "amplitude": 0.8, "cutoff": 2},
//     "outputs": {"trace": "trace.csv", "report": "summary.json"}
//   }

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hermflow/bundle.hpp"
#include "hermflow/flow.hpp"

namespace hermflow {

inline constexpr const char* kScenarioSchema = "hermflow.scenario/1";
inline constexpr const char* kMetricSchema = "hermflow.metric/1";

class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(std::string field, const std::string& what)
      : std::runtime_error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct GridSpec {
  int n1 = 32, n2 = 32;
  cd tau = cd(0, 1);
  int k = 1;
  Scheme scheme = Scheme::spectral;
};

struct BundleSpec {
  std::vector<int> twists{0};
  std::optional<Mat> isotropy;
  std::vector<BackgroundEntry> a;
};

enum class InitialKind { reference, random, file };

struct InitialSpec {
  InitialKind kind = InitialKind::reference;
  std::uint64_t seed = 0;
  double amplitude = 0.1;
  int cutoff = 2;
  std::string path;
};

struct OutputSpec {
  std::string trace = "trace.csv";
  std::string report = "summary.json";
  std::string final_metric;  // empty: not written
};

struct Scenario {
  std::string name;
  GridSpec grid;
  BundleSpec bundle;
  FlowConfig flow;
  InitialSpec initial;
  OutputSpec outputs;
  std::filesystem::path base_dir;  // relative paths in "initial.path" resolve against this
};

namespace detail {

using json = nlohmann::json;

inline std::string join(const std::string& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ScenarioError(path_, "expected an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* k : keys) ok = ok || it.key() == k;
      if (!ok) throw ScenarioError(join(path_, it.key()), "unknown field");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const {
    if (!j_.contains(key)) throw ScenarioError(join(path_, key), "missing required field");
    return j_.at(key);
  }
  std::string field(const char* key) const { return join(path_, key); }

  double number(const char* key, std::optional<double> def = std::nullopt) const {
    if (!has(key)) {
      if (def) return *def;
      at(key);
    }
    const json& v = j_.at(key);
    if (!v.is_number()) throw ScenarioError(field(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ScenarioError(field(key), "must be finite");
    return d;
  }

  long integer(const char* key, std::optional<long> def = std::nullopt) const {
    if (!has(key)) {
      if (def) return *def;
      at(key);
    }
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw ScenarioError(field(key), "expected an integer");
    return v.get<long>();
  }

  bool boolean(const char* key, bool def) const {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ScenarioError(field(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const char* key, std::optional<std::string> def = std::nullopt) const {
    if (!has(key)) {
      if (def) return *def;
      at(key);
    }
    const json& v = j_.at(key);
    if (!v.is_string()) throw ScenarioError(field(key), "expected a string");
    return v.get<std::string>();
  }

 private:
  const json& j_;
  std::string path_;
};

inline cd parse_complex(const json& v, const std::string& field) {
  if (v.is_number()) return cd(v.get<double>(), 0);
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) {
    const cd c(v[0].get<double>(), v[1].get<double>());
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) throw ScenarioError(field, "must be finite");
    return c;
  }
  throw ScenarioError(field, "expected a number or [re, im]");
}

inline void parse_grid(const json& j, GridSpec& g) {
  Reader r(j, "grid");
  r.allow({"n1", "n2", "tau", "k", "scheme"});
  g.n1 = int(r.integer("n1"));
  g.n2 = int(r.integer("n2", g.n1));
  if (g.n1 < 8) throw ScenarioError("grid.n1", "expected an integer >= 8");
  if (g.n2 < 8) throw ScenarioError("grid.n2", "expected an integer >= 8");
  if (r.has("tau")) g.tau = parse_complex(r.at("tau"), "grid.tau");
  if (!(g.tau.imag() > 0)) throw ScenarioError("grid.tau", "imaginary part must be positive");
  g.k = int(r.integer("k", 1));
  if (g.k != 1 && g.k != 2 && g.k != 4) throw ScenarioError("grid.k", "expected 1, 2 or 4");
  if (g.k == 2 && (g.n1 % 2 || g.n2 % 2)) throw ScenarioError("grid.k", "k = 2 needs even n1 and n2");
  if (g.k == 4 && (g.n1 != g.n2 || std::abs(g.tau - cd(0, 1)) > 1e-14))
    throw ScenarioError("grid.k", "k = 4 needs n1 == n2 and tau = i");
  try {
    g.scheme = parse_scheme(r.string("scheme", "spectral"));
  } catch (const std::invalid_argument& e) {
    throw ScenarioError("grid.scheme", e.what());
  }
}

inline void parse_bundle(const json& j, BundleSpec& b) {
  Reader r(j, "bundle");
  r.allow({"rank", "twists", "isotropy", "a"});
  const json& tw = r.at("twists");
  if (!tw.is_array() || tw.empty()) throw ScenarioError("bundle.twists", "expected a nonempty integer array");
  b.twists.clear();
  for (std::size_t i = 0; i < tw.size(); ++i) {
    if (!tw[i].is_number_integer())
      throw ScenarioError("bundle.twists[" + std::to_string(i) + "]", "expected an integer");
    b.twists.push_back(tw[i].get<int>());
  }
  const int rank = int(b.twists.size());
  if (rank > kMaxRank) throw ScenarioError("bundle.twists", "rank must be at most " + std::to_string(kMaxRank));
  if (r.has("rank") && r.integer("rank") != rank)
    throw ScenarioError("bundle.rank", "does not match the number of twists");
  if (r.has("isotropy")) {
    const json& iso = r.at("isotropy");
    if (!iso.is_array() || int(iso.size()) != rank)
      throw ScenarioError("bundle.isotropy", "expected " + std::to_string(rank) + " diagonal entries or rows");
    Mat rho = Mat::Zero(rank, rank);
    const bool rows = iso[0].is_array();
    for (int i = 0; i < rank; ++i) {
      const std::string f = "bundle.isotropy[" + std::to_string(i) + "]";
      if (rows) {
        if (!iso[i].is_array() || int(iso[i].size()) != rank) throw ScenarioError(f, "expected a row of length rank");
        for (int c = 0; c < rank; ++c) rho(i, c) = parse_complex(iso[i][c], f + "[" + std::to_string(c) + "]");
      } else {
        rho(i, i) = parse_complex(iso[i], f);
      }
    }
    b.isotropy = rho;
  }
  b.a.clear();
  if (r.has("a")) {
    const json& a = r.at("a");
    if (!a.is_array()) throw ScenarioError("bundle.a", "expected an array of {row, col, coeff}");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::string f = "bundle.a[" + std::to_string(i) + "]";
      Reader e(a[i], f);
      e.allow({"row", "col", "coeff"});
      BackgroundEntry be;
      be.row = int(e.integer("row"));
      be.col = int(e.integer("col"));
      if (be.row < 0 || be.row >= rank) throw ScenarioError(f + ".row", "out of range");
      if (be.col < 0 || be.col >= rank) throw ScenarioError(f + ".col", "out of range");
      be.coeff = parse_complex(e.at("coeff"), f + ".coeff");
      b.a.push_back(be);
    }
  }
}

inline void parse_flow(const json& j, FlowConfig& c) {
  Reader r(j, "flow");
  r.allow({"dt", "t_max", "time_scheme", "monitor_every", "stop_tol", "renormalize", "history_every",
           "converge_rows", "keep_history"});
  c.dt = r.number("dt", 0.0);
  if (c.dt < 0) throw ScenarioError("flow.dt", "must be >= 0 (0 selects the default)");
  c.t_max = r.number("t_max", c.t_max);
  if (c.t_max < 0) throw ScenarioError("flow.t_max", "must be >= 0");
  try {
    c.scheme = parse_time_scheme(r.string("time_scheme", "rk4"));
  } catch (const std::invalid_argument& e) {
    throw ScenarioError("flow.time_scheme", e.what());
  }
  c.monitor_every = int(r.integer("monitor_every", c.monitor_every));
  if (c.monitor_every < 1) throw ScenarioError("flow.monitor_every", "must be >= 1");
  c.stop_tol = r.number("stop_tol", c.stop_tol);
  if (!(c.stop_tol > 0)) throw ScenarioError("flow.stop_tol", "must be positive");
  c.renormalize = r.boolean("renormalize", c.renormalize);
  c.keep_history = r.boolean("keep_history", c.keep_history);
  c.history_every = int(r.integer("history_every", c.history_every));
  if (c.history_every < 1) throw ScenarioError("flow.history_every", "must be >= 1");
  c.converge_rows = int(r.integer("converge_rows", c.converge_rows));
  if (c.converge_rows < 1) throw ScenarioError("flow.converge_rows", "must be >= 1");
}

inline void parse_initial(const json& j, InitialSpec& s) {
  Reader r(j, "initial");
  r.allow({"kind", "seed", "amplitude", "cutoff", "path"});
  const std::string kind = r.string("kind", "reference");
  if (kind == "reference") {
    s.kind = InitialKind::reference;
  } else if (kind == "random") {
    s.kind = InitialKind::random;
  } else if (kind == "file") {
    s.kind = InitialKind::file;
  } else {
    throw ScenarioError("initial.kind", "expected reference, random or file");
  }
  const long seed = r.integer("seed", 0);
  if (seed < 0) throw ScenarioError("initial.seed", "must be >= 0");
  s.seed = std::uint64_t(seed);
  s.amplitude = r.number("amplitude", s.amplitude);
  if (s.amplitude < 0) throw ScenarioError("initial.amplitude", "must be >= 0");
  s.cutoff = int(r.integer("cutoff", s.cutoff));
  if (s.cutoff < 0 || s.cutoff > 8) throw ScenarioError("initial.cutoff", "expected 0..8");
  if (s.kind == InitialKind::file) s.path = r.string("path");
}

inline void parse_outputs(const json& j, OutputSpec& o) {
  Reader r(j, "outputs");
  r.allow({"trace", "report", "final_metric"});
  o.trace = r.string("trace", o.trace);
  o.report = r.string("report", o.report);
  o.final_metric = r.string("final_metric", "");
}

// 1-based line and column of a byte offset.
inline std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace detail

inline Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir = {}) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = detail::line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ScenarioError("", "parse error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                                ": " + e.what());
  }
  detail::Reader r(j, "");
  r.allow({"schema", "name", "grid", "bundle", "flow", "initial", "outputs"});
  const std::string schema = r.string("schema");
  if (schema != kScenarioSchema)
    throw ScenarioError("schema", "unsupported version '" + schema + "' (expected " + kScenarioSchema + ")");
  Scenario sc;
  sc.base_dir = base_dir;
  sc.name = r.string("name", "");
  detail::parse_grid(r.at("grid"), sc.grid);
  detail::parse_bundle(r.at("bundle"), sc.bundle);
  if (r.has("flow")) detail::parse_flow(r.at("flow"), sc.flow);
  if (r.has("initial")) detail::parse_initial(r.at("initial"), sc.initial);
  if (r.has("outputs")) detail::parse_outputs(r.at("outputs"), sc.outputs);
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path.parent_path());
}

inline OrbifoldGrid make_grid(const GridSpec& g) { return build_grid(g.n1, g.n2, g.tau, g.k, g.scheme); }

// Bundle construction errors are reported against the bundle block.
inline BundleData make_bundle(const Scenario& sc) {
  const OrbifoldGrid g = make_grid(sc.grid);
  try {
    return make_bundle(g, sc.bundle.twists, sc.bundle.isotropy, sc.bundle.a);
  } catch (const std::invalid_argument& e) {
    std::string field = "bundle";
    const std::string w = e.what();
    if (w.find("isotropy") != std::string::npos || w.find("k = 4") != std::string::npos) field = "bundle.isotropy";
    if (w.find("background") != std::string::npos) field = "bundle.a";
    throw ScenarioError(field, w);
  }
}

// ---- metric files -----------------------------------------------------------------

inline void write_metric(std::ostream& os, const MetricField& H, const OrbifoldGrid& g) {
  detail::json j;
  j["schema"] = kMetricSchema;
  j["rank"] = H.rank();
  j["n1"] = g.n1();
  j["n2"] = g.n2();
  std::vector<double> re, im;
  for (const cd& v : H.raw()) {
    re.push_back(v.real());
    im.push_back(v.imag());
  }
  j["re"] = re;
  j["im"] = im;
  os << j.dump() << '\n';
}

inline MetricField read_metric(const std::filesystem::path& path, const BundleData& B) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("initial.path", "cannot open " + path.string());
  detail::json j;
  try {
    j = detail::json::parse(in);
  } catch (const detail::json::parse_error& e) {
    throw ScenarioError("initial.path", std::string("metric file: ") + e.what());
  }
  if (!j.is_object() || j.value("schema", "") != std::string(kMetricSchema))
    throw ScenarioError("initial.path", std::string("metric file must declare schema ") + kMetricSchema);
  const OrbifoldGrid& g = B.grid();
  if (j.value("rank", -1) != B.rank() || j.value("n1", -1) != g.n1() || j.value("n2", -1) != g.n2())
    throw ScenarioError("initial.path", "metric file rank or grid size does not match the scenario");
  const auto re = j.at("re").get<std::vector<double>>();
  const auto im = j.at("im").get<std::vector<double>>();
  MetricField H(B.rank(), g.size());
  auto dst = H.raw();
  if (re.size() != dst.size() || im.size() != dst.size())
    throw ScenarioError("initial.path", "metric file has the wrong number of values");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = cd(re[i], im[i]);
  if (hermiticity_residual(H) > 1e-10) throw ScenarioError("initial.path", "metric is not Hermitian");
  return H;
}

// H0 = K exp(eps * random low-mode self-adjoint field), projected onto invariant fields.
inline MetricField initial_metric(const Scenario& sc, const BundleData& B) {
  switch (sc.initial.kind) {
    case InitialKind::reference: return flat_reference_metric(B);
    case InitialKind::random: {
      std::mt19937_64 rng(sc.initial.seed);
      RandomFieldOptions opt;
      opt.amplitude = sc.initial.amplitude;
      opt.cutoff = sc.initial.cutoff;
      return random_metric(B, rng, opt);
    }
    case InitialKind::file: {
      std::filesystem::path p = sc.initial.path;
      if (p.is_relative() && !sc.base_dir.empty()) p = sc.base_dir / p;
      return read_metric(p, B);
    }
  }
  return flat_reference_metric(B);
}

}  // namespace hermflow
