#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hermflow/donaldson.hpp"
#include "hermflow/flow.hpp"
#include "hermflow/scenario.hpp"
#include "hermflow/stability.hpp"
#include "hermflow/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace hermflow;

namespace {

enum Exit { ok = 0, failed = 1, bad_config = 2 };

json jnum(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json row_json(const FlowRow& r) {
  return {{"t", r.t},           {"M_K", jnum(r.M_K)},         {"sup_dev", jnum(r.sup_dev)},
          {"l2_dev", jnum(r.l2_dev)}, {"trace_int", jnum(r.trace_int)}, {"c0_s", jnum(r.c0_s)},
          {"s_l4", jnum(r.s_l4)}, {"equivariance", jnum(r.equivariance)}};
}

json probe_json(const ProbeReport& p) {
  json j = {{"status", to_string(p.status)},
            {"found", p.found},
            {"ell", jnum(p.ell)},
            {"nu", p.flag.nu},
            {"multiplicity", p.flag.multiplicity},
            {"degrees", p.degrees},
            {"best", p.best},
            {"deg_pi", jnum(p.deg_pi)},
            {"rank_pi", jnum(p.rank_pi)},
            {"mu_pi", jnum(p.mu_pi)},
            {"mu_E", jnum(p.mu_E)},
            {"W", jnum(p.W)},
            {"W_tolerance", jnum(p.W_tolerance)},
            {"weak_holo", jnum(p.weak_holo)},
            {"idempotency", jnum(p.idempotency)},
            {"constant_spectrum", p.flag.constant_spectrum},
            {"message", p.message}};
  return j;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  bool probe = false;
};

Scenario load(const Common& c) {
  Scenario sc = load_scenario(c.config);
  if (c.seed) sc.initial.seed = *c.seed;
  return sc;
}

fs::path in_out(const Common& c, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : fs::path(c.out) / q;
}

int cmd_flow(const Common& c) {
  const Scenario sc = load(c);
  const BundleData B = make_bundle(sc);
  const MetricField H0 = initial_metric(sc, B);
  const FlowTrace tr = run_flow(H0, B, sc.flow);
  fs::create_directories(c.out);

  const fs::path trace_path = in_out(c, sc.outputs.trace);
  {
    std::ofstream os(trace_path);
    if (!os) throw std::runtime_error("cannot write " + trace_path.string());
    write_csv(os, tr);
  }
  if (!sc.outputs.final_metric.empty()) {
    std::ofstream os(in_out(c, sc.outputs.final_metric));
    write_metric(os, tr.final_state, B.grid());
  }

  json summary;
  summary["schema"] = "hermflow.summary/1";
  summary["scenario"] = sc.name;
  summary["status"] = to_string(tr.status);
  summary["message"] = tr.message;
  summary["steps"] = tr.steps;
  summary["dt"] = tr.dt;
  summary["final_time"] = tr.final_time;
  summary["degree"] = B.degree();
  summary["rank"] = B.rank();
  summary["slope"] = B.slope();
  summary["trace"] = trace_path.string();
  if (!tr.rows.empty()) {
    summary["first"] = row_json(tr.rows.front());
    summary["last"] = row_json(tr.rows.back());
  }
  const MonotonicityReport mono = monotonicity(tr);
  summary["monotonicity"] = {{"max_M_increase", jnum(mono.max_M_increase)},
                             {"max_sup_increase", jnum(mono.max_sup_increase)}};
  summary["max_abs_trace"] = jnum(max_abs_trace(tr));
  summary["max_equivariance"] = jnum(max_equivariance(tr));
  const C0Fit fit = c0_control_fit(tr);
  summary["c0_fit"] = {{"C1", jnum(fit.C1)}, {"C2", jnum(fit.C2)}, {"max_violation", jnum(fit.max_violation)}};
  const ProperResult pr = properness_probe(proper_samples(tr));
  summary["properness"] = {{"proper", pr.proper}, {"C1", jnum(pr.C1)}, {"C2", jnum(pr.C2)}, {"cap", jnum(pr.cap)}};
  if (c.probe) summary["probe"] = probe_json(destabilize_probe(tr, flat_reference_metric(B), B));

  const fs::path report_path = in_out(c, sc.outputs.report);
  {
    std::ofstream os(report_path);
    if (!os) throw std::runtime_error("cannot write " + report_path.string());
    os << summary.dump(2) << '\n';
  }

  std::cout << "status " << to_string(tr.status) << " after " << tr.steps << " steps (t = " << tr.final_time
            << ", dt = " << tr.dt << ")\n";
  if (!tr.rows.empty())
    std::cout << "final l2_dev " << tr.rows.back().l2_dev << ", sup_dev " << tr.rows.back().sup_dev << ", M_K "
              << tr.rows.back().M_K << "\n";
  if (c.probe) std::cout << "probe " << summary["probe"]["status"].get<std::string>() << "\n";
  std::cout << "trace " << trace_path.string() << "\nreport " << report_path.string() << "\n";
  if (tr.status == FlowStatus::diverged) {
    std::cerr << "flow diverged: " << tr.message << "\n";
    return c.probe ? ok : failed;
  }
  return ok;
}

int cmd_degree(const Common& c) {
  const Scenario sc = load(c);
  const BundleData B = make_bundle(sc);
  const MetricField K = flat_reference_metric(B);
  const double deg = degree(B, K);
  const cd lam = lambda_constant(B);
  std::cout << std::setprecision(10) << "degree " << deg << "\nrank " << B.rank() << "\nslope " << deg / B.rank()
            << "\nlambda " << lam.real() << (lam.imag() < 0 ? " - " : " + ") << std::abs(lam.imag()) << "i\n";
  if (B.rank() > 1) {
    std::cout << "summand  twist  degree\n";
    for (int j = 0; j < B.rank(); ++j) {
      const auto L = make_bundle(B.grid(), {B.twist()[j]});
      std::cout << std::setw(7) << j << std::setw(7) << B.twist()[j] << "  " << degree(L, flat_reference_metric(L))
                << "\n";
    }
  }
  return ok;
}

int cmd_verify(const VerifyOptions& vo, const std::string& out) {
  const VerifyReport rep = run_verify(vo);
  print_verify(std::cout, rep);
  if (!out.empty()) {
    fs::create_directories(out);
    json j;
    j["schema"] = "hermflow.verify/1";
    j["profile"] = to_string(vo.profile);
    j["n"] = vo.n;
    j["seed"] = vo.seed;
    j["tol_scale"] = vo.tol_scale;
    for (const auto& r : rep.rows)
      j["checks"].push_back({{"name", r.name},
                             {"value", jnum(r.value)},
                             {"tolerance", r.tolerance},
                             {"bound", r.bound == Bound::upper ? "upper" : "lower"},
                             {"pass", r.pass},
                             {"error", r.error}});
    std::ofstream(fs::path(out) / "verify.json") << j.dump(2) << '\n';
  }
  return rep.all_pass() ? ok : failed;
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();
  CLI::App app{"Numerical lab for the Donaldson heat flow on flat-torus orbifolds"};
  app.require_subcommand(1);

  Common fc, pc, dc;
  auto add_common = [](CLI::App* s, Common& c) {
    s->add_option("--config", c.config, "scenario file")->required()->check(CLI::ExistingFile);
    s->add_option("--seed", c.seed, "override initial.seed");
    s->add_option("--out", c.out, "output directory");
  };
  auto* flow = app.add_subcommand("flow", "run the heat flow of a scenario");
  add_common(flow, fc);
  flow->add_flag("--probe", fc.probe, "attach a destabilization probe report");
  auto* probe = app.add_subcommand("probe", "alias for flow --probe");
  add_common(probe, pc);

  VerifyOptions vo;
  std::string profile = "spectral", vout;
  auto* verify = app.add_subcommand("verify", "run the invariant suite");
  verify->add_option("--profile", profile, "derivative scheme")->check(CLI::IsMember({"spectral", "fd2", "fd4"}));
  verify->add_option("--seed", vo.seed, "random seed");
  verify->add_option("--n", vo.n, "grid size n x n")->check(CLI::Range(8, 256));
  verify->add_option("--tolerance-scale", vo.tol_scale, "multiplier on every residual tolerance")
      ->check(CLI::NonNegativeNumber);
  verify->add_option("--samples", vo.samples, "random samples per check")->check(CLI::Range(1, 1000));
  verify->add_option("--out", vout, "write verify.json into this directory");

  auto* deg = app.add_subcommand("degree", "print degree, rank, slope and lambda of a scenario bundle");
  add_common(deg, dc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ok : bad_config;
  }

  try {
    if (*flow) return cmd_flow(fc);
    if (*probe) {
      pc.probe = true;
      return cmd_flow(pc);
    }
    if (*deg) return cmd_degree(dc);
    if (*verify) {
      vo.profile = parse_scheme(profile);
      return cmd_verify(vo, vout);
    }
  } catch (const ScenarioError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return bad_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return failed;
  }
  return ok;
}
