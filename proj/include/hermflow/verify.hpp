#pragma once

// Invariant suite behind `hermflow verify`: each check reports a residual against a tolerance.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "hermflow/donaldson.hpp"
#include "hermflow/flow.hpp"
#include "hermflow/relations.hpp"
#include "hermflow/spectral_calc.hpp"

namespace hermflow {

struct VerifyOptions {
  int n = 32;
  Scheme profile = Scheme::spectral;
  std::uint64_t seed = 0;
  double tol_scale = 1.0;  // multiplies every upper tolerance; 0 makes every residual check fail
  int samples = 5;
};

enum class Bound { upper, lower };

struct VerifyRow {
  std::string name;
  double value = 0;
  double tolerance = 0;
  Bound bound = Bound::upper;
  bool pass = false;
  std::string error;  // set when the check threw
  double seconds = 0;
};

struct VerifyReport {
  std::vector<VerifyRow> rows;
  double seconds = 0;
  bool all_pass() const {
    for (const auto& r : rows)
      if (!r.pass) return false;
    return !rows.empty();
  }
  int failures() const {
    int n = 0;
    for (const auto& r : rows) n += !r.pass;
    return n;
  }
};

namespace detail {

inline EndoField k_adjointed(const EndoField& r, const MetricField& K) {
  EndoField out(r.rank(), r.sites());
  for (std::size_t x = 0; x < r.sites(); ++x) {
    const SqrtPair k = hermitian_sqrt(K.at(x));
    out.set(x, k.inv_root * r.at(x) * k.root);
  }
  return out;
}

inline EndoField separated(const BundleData& B, const MetricField& K, std::mt19937_64& rng) {
  RandomFieldOptions opt;
  opt.amplitude = 0.3;
  EndoField r = random_hermitian(B, rng, opt);
  for (auto& v : r.entry(0, 0)) v -= 0.8;
  for (auto& v : r.entry(1, 1)) v += 0.8;
  return k_adjointed(r, K);
}

inline EndoField scalar_multiple(const BundleData& B, std::mt19937_64& rng, double amplitude) {
  const auto t = make_bundle(B.grid(), {0});
  RandomFieldOptions opt;
  opt.amplitude = amplitude;
  const EndoField f = random_hermitian(t, rng, opt);
  EndoField out(B.rank(), B.grid().size());
  for (int a = 0; a < B.rank(); ++a) {
    auto dst = out.entry(a, a);
    auto src = f.entry(0, 0);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

inline double chain_order(Scheme sch, const ScalarFunction& phi, int n, std::uint64_t seed) {
  auto residual = [&](int m) {
    std::mt19937_64 rng(seed);
    Mat rho = Mat::Identity(2, 2);
    rho(1, 1) = -1.0;
    const auto B = make_bundle(build_grid(m, m, cd(0.1, 1.2), 2, sch), {0, 0}, rho);
    const MetricField K = flat_reference_metric(B);
    return chain_rule_residual(phi, separated(B, K, rng), K, B).absolute;
  };
  return std::log2(residual(n) / residual(2 * n));
}

}  // namespace detail

inline VerifyReport run_verify(const VerifyOptions& opt) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  VerifyReport rep;
  const double scale = opt.tol_scale;
  auto add = [&](const std::string& name, double tol, Bound bound, const std::function<double()>& fn) {
    VerifyRow row;
    row.name = name;
    row.tolerance = bound == Bound::upper ? tol * scale : tol;
    row.bound = bound;
    const auto c0 = clock::now();
    try {
      row.value = fn();
      row.pass = std::isfinite(row.value) &&
                 (bound == Bound::upper ? row.value < row.tolerance : row.value >= row.tolerance);
    } catch (const std::exception& e) {
      row.error = e.what();
      row.pass = false;
    }
    row.seconds = std::chrono::duration<double>(clock::now() - c0).count();
    rep.rows.push_back(row);
  };

  const int n = opt.n;
  const cd tau(0.1, 1.1);
  const auto g = build_grid(n, n, tau, 1, opt.profile);
  const auto E = make_bundle(g, {1, 0}, std::nullopt, {{1, 0, 0.5}});
  RandomFieldOptions small;
  small.amplitude = 0.5;

  add("degree quantization |deg - d|", 1e-6, Bound::upper, [&] {
    std::mt19937_64 rng(opt.seed);
    double worst = 0;
    for (int d = -2; d <= 2; ++d) {
      const auto L = make_bundle(g, {d});
      worst = std::max(worst, std::abs(degree(L, random_metric(L, rng, small)) - d));
    }
    return worst;
  });

  add("HE fixed point sup|i Lambda F - i lambda|", 1e-8, Bound::upper, [&] {
    double worst = 0;
    for (int d = -2; d <= 2; ++d) {
      const auto L = make_bundle(g, {d});
      worst = std::max(worst, curvature(flat_reference_metric(L), L).sup_dev);
    }
    return worst;
  });

  if (opt.profile == Scheme::spectral) {
    add("chain rule ||dbar phi(s) - dphi(s)(dbar s)||", 1e-7, Bound::upper, [&] {
      std::mt19937_64 rng(opt.seed + 1);
      Mat rho = Mat::Identity(2, 2);
      rho(1, 1) = -1.0;
      const auto B = make_bundle(build_grid(n, n, cd(0.1, 1.2), 2, opt.profile), {0, 0}, rho);
      double worst = 0;
      for (int i = 0; i < opt.samples; ++i) {
        const MetricField K = random_metric(B, rng);
        const EndoField s = detail::separated(B, K, rng);
        for (const auto& phi : {exp_function(), square_function(), smoothed_step(0.0, 0.4)})
          worst = std::max(worst, chain_rule_residual(phi, s, K, B).absolute);
      }
      return worst;
    });

    add("curvature relation (i), general s", 1e-8, Bound::upper, [&] {
      std::mt19937_64 rng(opt.seed + 2);
      const MetricField K = random_metric(E, rng, small);
      const EndoField s = detail::k_adjointed(random_hermitian(E, rng, small), K);
      const CurvatureRelations r = curvature_relations(E, K, s);
      return std::max({r.i, r.iii_exact, r.iv_weighted, r.relative_curvature});
    });

    add("curvature relations (ii), (iv), commuting s", 1e-7, Bound::upper, [&] {
      std::mt19937_64 rng(opt.seed + 3);
      const auto B = make_bundle(g, {1, 0});
      RandomFieldOptions o;
      o.amplitude = 0.3;
      const MetricField K = random_metric(B, rng, o);
      const CurvatureRelations r = curvature_relations(B, K, detail::scalar_multiple(B, rng, 0.5));
      return std::max(r.ii, r.iv);
    });

    add("curvature relation (v) fit, a = 2, b = 0, c = -2", 1e-6, Bound::upper, [&] {
      std::mt19937_64 rng(opt.seed + 4);
      const auto B = make_bundle(g, {1, 0});
      RandomFieldOptions o;
      o.amplitude = 0.3;
      const MetricField K = random_metric(B, rng, o);
      const CurvatureRelations r = curvature_relations(B, K, detail::scalar_multiple(B, rng, 0.5));
      return std::max({std::abs(r.v_a - 2.0), std::abs(r.v_b), std::abs(r.v_c + 2.0)});
    });

    add("M_K path vs spectral (relative)", 1e-7, Bound::upper, [&] {
      std::mt19937_64 rng(opt.seed + 5);
      double worst = 0;
      for (int i = 0; i < opt.samples; ++i) {
        const MetricField K = random_metric(E, rng, small);
        RandomFieldOptions o;
        o.amplitude = 0.4 + 0.3 * i;
        const EndoField s = detail::k_adjointed(random_hermitian(E, rng, o), K);
        worst = std::max(worst, mk_both(exp_metric(K, s), K, E).residual_vs_other);
      }
      return worst;
    });

    add("first/second variation vs finite differences", 1e-6, Bound::upper, [&] {
      std::mt19937_64 rng(opt.seed + 6);
      std::uniform_real_distribution<double> ut(-1.0, 1.5);
      double worst = 0;
      for (int i = 0; i < opt.samples; ++i) {
        const MetricField K = random_metric(E, rng, small);
        RandomFieldOptions o;
        o.amplitude = 0.8;
        const EndoField s = detail::k_adjointed(random_hermitian(E, rng, o), K);
        const double t = ut(rng);
        const Variations v = variations(s, K, E, t);
        auto M = [&](double tt) { return mk_spectral_general(tt * s, K, E).value; };
        auto d1 = [&](double h) { return (M(t + h) - M(t - h)) / (2 * h); };
        auto d2 = [&](double h) { return (M(t + h) - 2 * M(t) + M(t - h)) / (h * h); };
        const double h = 0.02;
        const double f1 = (4 * d1(h / 2) - d1(h)) / 3, f2 = (4 * d2(h / 2) - d2(h)) / 3;
        worst = std::max(worst, std::abs(f1 - v.first) / std::max(1.0, std::abs(v.first)));
        worst = std::max(worst, std::abs(f2 - v.second) / std::max(1.0, std::abs(v.second)));
      }
      return worst;
    });

    add("M_K estimate margin (min)", -1e-9, Bound::lower, [&] {
      std::mt19937_64 rng(opt.seed + 7);
      std::uniform_real_distribution<double> amp(0.05, 2.0);
      double worst = std::numeric_limits<double>::infinity();
      for (int i = 0; i < 4 * opt.samples; ++i) {
        const MetricField K = random_metric(E, rng, small);
        RandomFieldOptions o;
        o.amplitude = amp(rng);
        const EndoField s = detail::k_adjointed(random_hermitian(E, rng, o), K);
        worst = std::min(worst, siu_estimate_check(s, K, E).margin);
      }
      return worst;
    });
  } else {
    const double want = opt.profile == Scheme::fd2 ? 1.9 : 3.8;
    const int base = std::max(16, n);
    for (const auto& phi : {exp_function(), square_function(), smoothed_step(0.0, 0.4)})
      add("chain rule order " + phi.tag + " (" + to_string(opt.profile) + ")", want, Bound::lower,
          [&, phi] { return detail::chain_order(opt.profile, phi, base, opt.seed + 1); });
  }

  add("Psi: positivity, diagonal 1/2, closed form", 1e-12, Bound::upper, [&] {
    std::mt19937_64 rng(opt.seed + 8);
    std::uniform_real_distribution<double> ud(-20, 20);
    double worst = std::abs(psi(0.7, 0.7) - 0.5);
    for (int i = 0; i < 10000; ++i) {
      const double u = ud(rng), v = ud(rng);
      const double p = psi(u, v);
      if (!(p > 0)) return std::numeric_limits<double>::infinity();
      const double x = v - u;
      if (std::abs(x) > 1e-2) worst = std::max(worst, std::abs(p - (std::expm1(x) - x) / (x * x)) / p);
    }
    return worst;
  });

  add("scalar bound 1/(2(1+|u|)) <= Psi(0,u), violations", 0.5, Bound::upper,
      [&] { return double(siu_scalar_scan(100000, SiuBound::linear_form).violations); });

  // Short flow for conservation, monotonicity and the heat-kernel comparison.
  FlowTrace tr;
  bool flowed = false;
  auto ensure_flow = [&] {
    if (flowed) return;
    std::mt19937_64 rng(opt.seed + 9);
    RandomFieldOptions o;
    o.amplitude = 0.8;
    FlowConfig cfg;
    cfg.t_max = 0.02;
    cfg.monitor_every = 1;
    tr = run_flow(random_metric(E, rng, o), E, cfg);
    flowed = true;
  };
  // fd operators make i Lambda F only approximately H-self-adjoint; the Hermitian projection then drifts the trace at O(dt h^2).
  const double cons_tol = opt.profile == Scheme::spectral ? 1e-9 : 1e-6;
  add("conservation max|int Tr s| / vol", cons_tol, Bound::upper, [&] {
    ensure_flow();
    return max_abs_trace(tr) / g.volume();
  });
  add("monotonicity max increase of M_K and sup_dev", 1e-9, Bound::upper, [&] {
    ensure_flow();
    const MonotonicityReport m = monotonicity(tr);
    return std::max(m.max_M_increase, m.max_sup_increase);
  });
  add("dissipation dM/dt = -||i Lambda F - i lambda||^2 (relative)", 0.05, Bound::upper, [&] {
    ensure_flow();
    return dissipation_check(tr).max_relative_error;
  });
  add("heat-kernel comparison, violations", 0.5, Bound::upper, [&] {
    ensure_flow();
    return double(heat_kernel_comparison(tr, g).violations);
  });

  rep.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return rep;
}

inline void print_verify(std::ostream& os, const VerifyReport& rep) {
  os << std::left << std::setw(64) << "check" << std::setw(14) << "value" << std::setw(14) << "tolerance"
     << "result\n";
  for (const auto& r : rep.rows) {
    os << std::left << std::setw(64) << r.name << std::setw(14) << std::setprecision(4) << std::scientific
       << r.value << (r.bound == Bound::upper ? "< " : ">= ") << std::setw(11) << r.tolerance
       << (r.pass ? "PASS" : "FAIL");
    if (!r.error.empty()) os << "  (" << r.error << ")";
    os << '\n';
  }
  os << std::defaultfloat << rep.rows.size() - rep.failures() << "/" << rep.rows.size() << " checks passed in "
     << std::fixed << std::setprecision(1) << rep.seconds << " s\n"
     << std::defaultfloat;
}

}  // namespace hermflow
