#pragma once

// Donaldson heat flow  dH/dt = -(i/2) H (Lambda F_H - lambda I)  with monitors.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <optional>
#include <random>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "hermflow/chern.hpp"
#include "hermflow/donaldson.hpp"

namespace hermflow {

enum class TimeScheme { explicit_euler, rk4, semi_implicit };

inline TimeScheme parse_time_scheme(const std::string& s) {
  if (s == "explicit-euler") return TimeScheme::explicit_euler;
  if (s == "rk4") return TimeScheme::rk4;
  if (s == "semi-implicit") return TimeScheme::semi_implicit;
  throw std::invalid_argument("unknown time scheme '" + s + "' (expected explicit-euler, rk4 or semi-implicit)");
}

inline std::string to_string(TimeScheme s) {
  switch (s) {
    case TimeScheme::explicit_euler: return "explicit-euler";
    case TimeScheme::rk4: return "rk4";
    case TimeScheme::semi_implicit: return "semi-implicit";
  }
  return "?";
}

// Applies HERMFLOW_THREADS to the OpenMP runtime, if set.
inline void configure_threads_from_env() {
#ifdef _OPENMP
  if (const char* v = std::getenv("HERMFLOW_THREADS")) {
    const int n = std::atoi(v);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

struct FlowConfig {
  double dt = 0;  // <= 0 in run_flow selects default_dt
  double t_max = 1.0;
  TimeScheme scheme = TimeScheme::rk4;
  int monitor_every = 10;
  double stop_tol = 1e-6;
  bool renormalize = false;
  bool keep_history = true;
  int history_every = 1;  // keep every n-th monitored state
  int converge_rows = 10;
};

enum class FlowStatus { converged, t_max_reached, diverged };

inline std::string to_string(FlowStatus s) {
  switch (s) {
    case FlowStatus::converged: return "converged";
    case FlowStatus::t_max_reached: return "t_max_reached";
    case FlowStatus::diverged: return "diverged";
  }
  return "?";
}

struct FlowRow {
  double t = 0;
  double M_K = 0;
  double sup_dev = 0;
  double l2_dev = 0;
  double trace_int = 0;
  double sigma_prev = 0;
  double c0_s = 0;
  double s_l4 = 0;             // || |s_t|^2 ||_{L2}^{1/2}
  double hermiticity_drift = 0;  // largest symmetrization correction since the previous row
  double equivariance = 0;       // largest equivariance residual of a step before re-projection (k > 1)
};

struct FlowTrace {
  std::vector<FlowRow> rows;
  FlowStatus status = FlowStatus::t_max_reached;
  std::vector<MetricField> history;
  std::vector<double> history_times;
  MetricField final_state;  // last valid state
  double final_time = 0;
  double dt = 0;
  long steps = 0;
  double initial_direction_residual = 0;  // non-Hermitian part of dH/dt at t = 0, relative to max |dH/dt|
  long diverged_site = -1;
  std::string message;
};

// ---- stability ------------------------------------------------------------

// Bound on the largest eigenvalue of the linearized operator, (1/4) Delta, over the entry charges.
inline double flow_stiffness(const BundleData& B) {
  double m = 0;
  for (int a = 0; a < B.rank(); ++a)
    for (int b = 0; b < B.rank(); ++b) m = std::max(m, B.grid().max_laplace_symbol(B.charge(a, b)));
  return 0.25 * m;
}

inline bool has_charged_entries(const BundleData& B) {
  for (int a = 0; a < B.rank(); ++a)
    for (int b = 0; b < B.rank(); ++b)
      if (B.charge(a, b) != 0) return true;
  return false;
}

// Bound on dt * stiffness.
inline double stability_limit(TimeScheme s, const BundleData& B) {
  switch (s) {
    case TimeScheme::explicit_euler: return 2.0;
    case TimeScheme::rk4: return 2.785;
    case TimeScheme::semi_implicit:
      return has_charged_entries(B) ? 2.0 : std::numeric_limits<double>::infinity();
  }
  return 0;
}

inline double default_dt(const BundleData& B, TimeScheme s, double safety = 0.9) {
  const double lim = stability_limit(s, B);
  const double S = flow_stiffness(B);
  return std::isinf(lim) ? 25.0 / S : safety * lim / S;
}

inline void check_stability(const BundleData& B, TimeScheme s, double dt) {
  const double S = flow_stiffness(B);
  if (dt * S > stability_limit(s, B))
    throw std::invalid_argument("dt = " + std::to_string(dt) + " exceeds the " + to_string(s) +
                                " stability bound " + std::to_string(stability_limit(s, B) / S));
}

// ---- right-hand side and steps ------------------------------------------------

inline MetricField flow_rhs(const MetricField& H, const CurvatureReport& rep, const BundleData& B) {
  const cd ilam = cd(0, 1) * lambda_constant(B);
  const int r = H.rank();
  MetricField out(r, H.sites());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < long(H.sites()); ++i) {
    const std::size_t x = std::size_t(i);
    const Mat X = cd(0, 1) * rep.lambda_F.at(x) - ilam * Mat::Identity(r, r);
    out.set(x, -0.5 * H.at(x) * X);
  }
  return out;
}

// Largest |eigenvalue| of the linearized right-hand side at H, by power iteration on finite differences.
// A varying H widens the discrete spectrum past flow_stiffness: the product H^-1 dH aliases near Nyquist.
inline double state_stiffness(const MetricField& H, const BundleData& B, int iters = 30) {
  const int r = H.rank();
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> nd;
  MetricField v(r, H.sites());
  for (std::size_t x = 0; x < H.sites(); ++x) {
    Mat m(r, r);
    for (int a = 0; a < r; ++a)
      for (int b = 0; b < r; ++b) m(a, b) = cd(nd(rng), nd(rng));
    v.set(x, m + m.adjoint());
  }
  auto l2 = [](const MetricField& f) {
    double acc = 0;
    for (const cd& z : f.raw()) acc += std::norm(z);
    return std::sqrt(acc);
  };
  const MetricField base = flow_rhs(H, curvature(H, B), B);
  const double scale = 1e-6 * H.max_abs();
  double est = 0;
  for (int it = 0; it < iters; ++it) {
    const double eps = scale / v.max_abs();
    MetricField Hp = H;
    auto hp = Hp.raw();
    auto vv = v.raw();
    for (std::size_t i = 0; i < hp.size(); ++i) hp[i] += eps * vv[i];
    MetricField w = flow_rhs(Hp, curvature(Hp, B), B);
    auto ww = w.raw();
    auto bb = base.raw();
    for (std::size_t i = 0; i < ww.size(); ++i) ww[i] = (ww[i] - bb[i]) / eps;
    const double nw = l2(w);
    if (it >= iters - 5) est = std::max(est, nw / l2(v));
    if (!(nw > 0)) break;
    v = (1.0 / nw) * w;
  }
  return est;
}

// Default dt for a flow started at H: the charge bound, raised to 1.1 times the measured spectral radius.
inline double default_dt(const MetricField& H, const BundleData& B, TimeScheme s, double safety = 0.9) {
  const double lim = stability_limit(s, B);
  const double S = std::max(flow_stiffness(B), 1.1 * state_stiffness(H, B));
  return std::isinf(lim) ? 25.0 / S : safety * lim / S;
}

namespace detail {

inline MetricField axpy(const MetricField& H, double h, const MetricField& k) {
  MetricField out = H;
  auto o = out.raw();
  auto kk = k.raw();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += h * kk[i];
  return out;
}

// (1 + c Delta)^{-1} on a periodic entry.
inline void resolvent_inplace(const OrbifoldGrid& g, std::span<cd> f, double c) {
  std::vector<cd> w(f.begin(), f.end());
  g.fft2(w, true);
  const double norm = 1.0 / double(g.size());
  for (int j = 0; j < g.n2(); ++j)
    for (int i = 0; i < g.n1(); ++i) w[std::size_t(j) * g.n1() + i] *= norm / (1.0 + c * g.laplace_symbol(i, j));
  g.fft2(w, false);
  std::copy(w.begin(), w.end(), f.begin());
}

inline MetricField step_from(const MetricField& H, const CurvatureReport& rep0, const BundleData& B, double dt,
                             TimeScheme scheme) {
  const MetricField k1 = flow_rhs(H, rep0, B);
  switch (scheme) {
    case TimeScheme::explicit_euler: return axpy(H, dt, k1);
    case TimeScheme::rk4: {
      const MetricField H2 = axpy(H, 0.5 * dt, k1);
      const MetricField k2 = flow_rhs(H2, curvature(H2, B), B);
      const MetricField H3 = axpy(H, 0.5 * dt, k2);
      const MetricField k3 = flow_rhs(H3, curvature(H3, B), B);
      const MetricField H4 = axpy(H, dt, k3);
      const MetricField k4 = flow_rhs(H4, curvature(H4, B), B);
      MetricField out = H;
      auto o = out.raw();
      auto a = k1.raw(), b = k2.raw(), c = k3.raw(), d = k4.raw();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] += dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]);
      return out;
    }
    case TimeScheme::semi_implicit: {
      // Linear part -(1/4) Delta taken implicitly on charge-0 entries, the rest explicitly.
      const OrbifoldGrid& g = B.grid();
      MetricField out = axpy(H, dt, k1);
      for (int a = 0; a < H.rank(); ++a)
        for (int b = 0; b < H.rank(); ++b) {
          if (B.charge(a, b) != 0) continue;
          const auto lap = laplacian(g, H.entry(a, b));
          auto e = out.entry(a, b);
          for (std::size_t x = 0; x < e.size(); ++x) e[x] += 0.25 * dt * lap[x];
          resolvent_inplace(g, e, 0.25 * dt);
        }
      return out;
    }
  }
  return H;
}

// Hermitian part in place; returns the largest removed anti-Hermitian entry.
inline double symmetrize(MetricField& H) {
  double drift = 0;
  for (std::size_t x = 0; x < H.sites(); ++x) {
    const Mat h = H.at(x);
    drift = std::max(drift, 0.5 * (h - h.adjoint()).cwiseAbs().maxCoeff());
    H.set(x, hermitian_part(h));
  }
  return drift;
}

struct PositivityCheck {
  bool ok = true;
  long site = -1;
  double cond = 0;
  double min_eig = 0;
};

inline PositivityCheck check_positive(const MetricField& H, double max_cond = 1e12) {
  PositivityCheck out;
  for (std::size_t x = 0; x < H.sites(); ++x) {
    Eigen::SelfAdjointEigenSolver<Mat> es(H.at(x), Eigen::EigenvaluesOnly);
    const RVec ev = es.eigenvalues();
    const double lo = ev.minCoeff(), hi = ev.maxCoeff();
    const double c = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
    out.cond = std::max(out.cond, c);
    if (!(lo > 0) || c > max_cond || !std::isfinite(hi)) {
      out.ok = false;
      out.site = long(x);
      out.min_eig = lo;
      return out;
    }
  }
  return out;
}

}  // namespace detail

inline MetricField heat_step(const MetricField& H, const BundleData& B, double dt,
                             TimeScheme scheme = TimeScheme::rk4) {
  if (!(dt >= 0)) throw std::invalid_argument("heat_step: dt must be positive");
  if (dt == 0) return H;
  MetricField out = detail::step_from(H, curvature(H, B), B, dt, scheme);
  detail::symmetrize(out);
  if (B.grid().k() > 1) out = group_project(out, B);
  return out;
}

// ---- monitors ---------------------------------------------------------------

struct MonitorContext {
  MetricField K;
  EndoField lambda_FK;
};

inline FlowRow monitor_row(double t, const MetricField& H, const CurvatureReport& rep, const MonitorContext& ctx,
                           const BundleData& B) {
  const OrbifoldGrid& g = B.grid();
  FlowRow row;
  row.t = t;
  row.sup_dev = rep.sup_dev;
  row.l2_dev = rep.l2_dev;
  const EndoField s = relate_metrics(H, ctx.K);
  row.M_K = mk_spectral_general(s, ctx.K, ctx.lambda_FK, B).value;
  row.trace_int = trace_integral(g, s).real();
  row.c0_s = norm(g, s, 0.0, ctx.K);
  double acc = 0;
  for (double v : pointwise_norm2(s, ctx.K)) acc += v * v;
  row.s_l4 = std::pow(acc * g.volume() / double(g.size()), 0.25);
  row.equivariance = equivariance_residual(H, B);
  return row;
}

// Shifts s_t by a constant multiple of the identity so that int Tr s_t = 0.
inline MetricField renormalize_trace(const MetricField& H, const MetricField& K, const BundleData& B) {
  const OrbifoldGrid& g = B.grid();
  const double c = trace_integral(g, relate_metrics(H, K)).real() / (B.rank() * g.volume());
  return (std::exp(-c) * H);
}

inline FlowTrace run_flow(const MetricField& H0, const BundleData& B, FlowConfig cfg,
                          const std::optional<MetricField>& K_ref = std::nullopt) {
  if (cfg.monitor_every < 1) throw std::invalid_argument("run_flow: monitor_every must be >= 1");
  if (!(cfg.t_max >= 0)) throw std::invalid_argument("run_flow: t_max must be nonnegative");
  if (cfg.dt <= 0) cfg.dt = default_dt(H0, B, cfg.scheme);
  check_stability(B, cfg.scheme, cfg.dt);

  FlowTrace tr;
  tr.dt = cfg.dt;
  MonitorContext ctx{K_ref ? *K_ref : flat_reference_metric(B), {}};
  ctx.lambda_FK = curvature(ctx.K, B).lambda_F;

  MetricField H = H0;
  if (const auto pc = detail::check_positive(H); !pc.ok)
    throw std::invalid_argument("run_flow: initial metric is not positive definite at site " +
                                std::to_string(pc.site));
  const double vol = B.grid().volume();
  double t = 0, drift = 0, eq_drift = 0;
  long n = 0;
  int below = 0;
  std::optional<MetricField> prev_row_state;
  bool first = true;

  auto record = [&](const CurvatureReport& rep) {
    FlowRow row = monitor_row(t, H, rep, ctx, B);
    row.sigma_prev = prev_row_state ? sigma_distance(*prev_row_state, H) : 0.0;
    row.hermiticity_drift = drift;
    row.equivariance = std::max(row.equivariance, eq_drift);
    drift = 0;
    eq_drift = 0;
    if (cfg.keep_history && (tr.rows.size() % std::size_t(std::max(1, cfg.history_every)) == 0)) {
      tr.history.push_back(H);
      tr.history_times.push_back(t);
    }
    prev_row_state = H;
    tr.rows.push_back(row);
    below = row.l2_dev < cfg.stop_tol ? below + 1 : 0;
  };

  while (true) {
    const CurvatureReport rep = curvature(H, B);
    if (first) {
      const MetricField d = flow_rhs(H, rep, B);
      tr.initial_direction_residual = hermiticity_residual(d) / std::max(d.max_abs(), 1e-300);
    }
    const bool at_end = t >= cfg.t_max - 1e-12 * std::max(1.0, cfg.t_max);
    if (n % cfg.monitor_every == 0 || at_end) {
      record(rep);
      // sup_dev is nonincreasing, so sup_dev * sqrt(vol) < stop_tol at the start certifies convergence.
      if (below >= cfg.converge_rows || (first && rep.sup_dev * std::sqrt(vol) < cfg.stop_tol)) {
        tr.status = FlowStatus::converged;
        break;
      }
    }
    first = false;
    if (at_end) {
      tr.status = FlowStatus::t_max_reached;
      break;
    }
    const double h = std::min(cfg.dt, cfg.t_max - t);
    MetricField next = detail::step_from(H, rep, B, h, cfg.scheme);
    drift = std::max(drift, detail::symmetrize(next));
    if (B.grid().k() > 1) {
      eq_drift = std::max(eq_drift, equivariance_residual(next, B));
      next = group_project(next, B);
    }
    if (cfg.renormalize) next = renormalize_trace(next, ctx.K, B);
    if (const auto pc = detail::check_positive(next); !pc.ok) {
      tr.status = FlowStatus::diverged;
      tr.diverged_site = pc.site;
      tr.message = "metric lost positivity or exceeded condition number 1e12 at site " + std::to_string(pc.site) +
                   " after t = " + std::to_string(t);
      if (tr.rows.empty() || tr.rows.back().t != t) record(rep);
      break;
    }
    H = std::move(next);
    t += h;
    ++n;
  }
  tr.final_state = H;
  tr.final_time = t;
  tr.steps = n;
  return tr;
}

// ---- trace analysis ------------------------------------------------------------

struct MonotonicityReport {
  double max_M_increase = 0;
  double max_sup_increase = 0;
};

inline MonotonicityReport monotonicity(const FlowTrace& tr) {
  MonotonicityReport out;
  for (std::size_t i = 1; i < tr.rows.size(); ++i) {
    out.max_M_increase = std::max(out.max_M_increase, tr.rows[i].M_K - tr.rows[i - 1].M_K);
    out.max_sup_increase = std::max(out.max_sup_increase, tr.rows[i].sup_dev - tr.rows[i - 1].sup_dev);
  }
  return out;
}

// Compares (M_{i+1} - M_i) / dt with the trapezoid of -l2_dev^2 over consecutive rows.
struct DissipationReport {
  double max_relative_error = 0;
  int compared = 0;
};

inline DissipationReport dissipation_check(const FlowTrace& tr, double floor = 1e-8) {
  DissipationReport out;
  for (std::size_t i = 1; i < tr.rows.size(); ++i) {
    const auto& a = tr.rows[i - 1];
    const auto& b = tr.rows[i];
    const double dt = b.t - a.t;
    if (dt <= 0) continue;
    const double rate = (b.M_K - a.M_K) / dt;
    const double pred = -0.5 * (a.l2_dev * a.l2_dev + b.l2_dev * b.l2_dev);
    if (std::abs(pred) < floor) continue;
    out.max_relative_error = std::max(out.max_relative_error, std::abs(rate - pred) / std::abs(pred));
    ++out.compared;
  }
  return out;
}

// sup|s_t| <= C1 + C2 || |s_t|^2 ||^{1/2}_{L2}: least-squares C2 (clamped >= 0), C1 the upper envelope.
struct C0Fit {
  double C1 = 0;
  double C2 = 0;
  double max_violation = 0;
};

inline C0Fit c0_control_fit(const FlowTrace& tr) {
  C0Fit out;
  const std::size_t n = tr.rows.size();
  if (n == 0) return out;
  double mx = 0, my = 0;
  for (const auto& r : tr.rows) {
    mx += r.s_l4;
    my += r.c0_s;
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (const auto& r : tr.rows) {
    sxy += (r.s_l4 - mx) * (r.c0_s - my);
    sxx += (r.s_l4 - mx) * (r.s_l4 - mx);
  }
  out.C2 = sxx > 1e-24 * std::max(1.0, mx * mx) ? std::max(0.0, sxy / sxx) : 0.0;
  out.C1 = -std::numeric_limits<double>::infinity();
  for (const auto& r : tr.rows) out.C1 = std::max(out.C1, r.c0_s - out.C2 * r.s_l4);
  out.C1 = std::max(out.C1, 0.0);
  out.max_violation = -std::numeric_limits<double>::infinity();
  for (const auto& r : tr.rows) out.max_violation = std::max(out.max_violation, r.c0_s - out.C1 - out.C2 * r.s_l4);
  return out;
}

inline std::vector<ProperSample> proper_samples(const FlowTrace& tr) {
  std::vector<ProperSample> out;
  for (const auto& r : tr.rows) out.push_back({r.t, r.c0_s, r.M_K});
  return out;
}

// sup sigma^tau(t + t') <= c(t') int sigma^tau(t), sigma^tau(t) = sigma(H_t, H_{t+tau}), on the
// retained history (times assumed increasing). Index offsets a (tau) and b (t') range over `offsets`.
struct HeatKernelReport {
  long checks = 0;
  long violations = 0;
  double worst_ratio = 0;  // max of sup / (c int), over checks with int > 0
};

inline HeatKernelReport heat_kernel_comparison(const FlowTrace& tr, const OrbifoldGrid& g,
                                               const std::vector<int>& offsets = {1, 2, 4, 8},
                                               int start_stride = 4) {
  HeatKernelReport out;
  const auto& Hs = tr.history;
  const auto& ts = tr.history_times;
  const std::size_t n = Hs.size();
  const double dA = g.volume() / double(g.size());
  for (std::size_t i = 0; i < n; i += std::size_t(std::max(1, start_stride))) {
    for (int a : offsets) {
      if (i + a >= n) continue;
      const auto s0 = sigma_field(Hs[i], Hs[i + a]);
      double integral = 0;
      for (double v : s0) integral += v * dA;
      for (int b : offsets) {
        if (i + a + b >= n) continue;
        const double tp = ts[i + b] - ts[i];
        if (!(tp > 0)) continue;
        const double sup = sigma_distance(Hs[i + b], Hs[i + a + b]);
        const double bound = heat_kernel_sup(g, tp) * integral;
        ++out.checks;
        if (sup > bound + 1e-14) ++out.violations;
        if (bound > 0) out.worst_ratio = std::max(out.worst_ratio, sup / bound);
      }
    }
  }
  return out;
}

inline double max_equivariance(const FlowTrace& tr) {
  double m = 0;
  for (const auto& r : tr.rows) m = std::max(m, r.equivariance);
  return m;
}

inline double max_abs_trace(const FlowTrace& tr) {
  double m = 0;
  for (const auto& r : tr.rows) m = std::max(m, std::abs(r.trace_int));
  return m;
}

// Fixed-header CSV of the monitor rows.
inline void write_csv(std::ostream& os, const FlowTrace& tr) {
  os << "t,M_K,sup_dev,l2_dev,trace_int,sigma_prev,c0_s\n";
  os.precision(17);
  for (const auto& r : tr.rows)
    os << r.t << ',' << r.M_K << ',' << r.sup_dev << ',' << r.l2_dev << ',' << r.trace_int << ',' << r.sigma_prev
       << ',' << r.c0_s << '\n';
}

}  // namespace hermflow
