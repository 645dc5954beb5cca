#pragma once

// Destabilization probe: normalized blow-up direction u = s / l, its eigenprojection
// flag, weak holomorphy of the projections and the telescoping slope test
//   W = nu_r deg(E) - sum_a (nu_{a+1} - nu_a) deg(pi_a)  <=  0.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hermflow/chern.hpp"
#include "hermflow/flow.hpp"
#include "hermflow/spectral_calc.hpp"

namespace hermflow {

struct Normalized {
  EndoField u;
  double ell = 0;  // || |s|_K^2 ||_{L2}^{1/2}
};

inline double l4_scale(const EndoField& s, const MetricField& K, const OrbifoldGrid& g) {
  double acc = 0;
  for (double v : pointwise_norm2(s, K)) acc += v * v;
  return std::pow(acc * g.volume() / double(g.size()), 0.25);
}

inline Normalized normalize(const EndoField& s, const MetricField& K, const OrbifoldGrid& g) {
  Normalized out;
  out.ell = l4_scale(s, K, g);
  if (!(out.ell > 0)) throw std::invalid_argument("normalize: s vanishes identically");
  out.u = (1.0 / out.ell) * s;
  return out;
}

// Logistic ramp with p = 1 - 1e-9 at center - width/2 and 1e-9 at center + width/2.
inline ScalarFunction flag_step(double center, double width) {
  return smoothed_step(center, width / (2.0 * std::log(1e9)));
}

struct FlagProjection {
  EndoField pi;
  double center = 0, width = 0;  // of the step p_a
  double rank = 0;               // int Tr(pi) / vol
  double idempotency = 0;        // || pi^2 - pi ||_{L2_K}
  double self_adjoint = 0;       // || pi - pi^{*K} ||_{L2_K}
  double weak_holo = 0;          // || (I - pi) dbar pi ||_{L2_K}
  double weak_phi_agreement = 0; // || (I - pi) dbar pi - Phi_a(u)(dbar u) ||_{L2_K}
};

struct Flag {
  std::vector<double> nu;          // site-averaged eigenvalues, ascending (merged groups)
  std::vector<double> dispersion;  // max site deviation per group
  std::vector<int> multiplicity;
  std::vector<FlagProjection> projections;  // pi_1 .. pi_{G-1}
  bool separated = false;
  bool constant_spectrum = false;  // max dispersion < 5% of the smallest retained gap
  int merged = 0;                  // eigenvalue pairs merged for gap < gap_tol
  double trace_integral = 0;       // int Tr(u)
  double nesting = 0;              // max_{a<b} || pi_a pi_b - pi_a ||_{L2}
  double telescoping = 0;          // || u - (nu_G I - sum (nu_{a+1}-nu_a) pi_a) ||_{L2_K}
  std::string message;
};

namespace detail {

inline EndoField site_product(const EndoField& A, const EndoField& B) {
  EndoField out(A.rank(), A.sites(), B.degree());
  for (std::size_t x = 0; x < A.sites(); ++x) out.set(x, A.at(x) * B.at(x));
  return out;
}

}  // namespace detail

inline Flag eigen_flag(const EndoField& u, const MetricField& K, const BundleData& B, double gap_tol = 1e-3) {
  const OrbifoldGrid& g = B.grid();
  const int r = u.rank();
  const std::size_t n = u.sites();
  Flag fl;
  std::vector<RVec> lam(n);
  RVec mean = RVec::Zero(r);
  for (std::size_t x = 0; x < n; ++x) {
    lam[x] = k_eigen(u.at(x), K.at(x)).lambda;
    mean += lam[x];
  }
  mean /= double(n);
  fl.trace_integral = trace_integral(g, u).real();

  // Group consecutive averaged eigenvalues closer than gap_tol.
  std::vector<std::pair<int, int>> groups;  // [begin, end)
  int start = 0;
  for (int i = 1; i <= r; ++i)
    if (i == r || mean(i) - mean(i - 1) >= gap_tol) {
      groups.push_back({start, i});
      start = i;
    }
  fl.merged = r - int(groups.size());
  for (const auto& [b, e] : groups) {
    double nu = 0;
    for (int i = b; i < e; ++i) nu += mean(i);
    nu /= (e - b);
    double disp = 0;
    for (std::size_t x = 0; x < n; ++x)
      for (int i = b; i < e; ++i) disp = std::max(disp, std::abs(lam[x](i) - nu));
    fl.nu.push_back(nu);
    fl.dispersion.push_back(disp);
    fl.multiplicity.push_back(e - b);
  }
  const int G = int(groups.size());
  fl.separated = G > 1;
  if (!fl.separated) {
    fl.message = "no separation";
    return fl;
  }
  double min_gap = std::numeric_limits<double>::infinity(), max_disp = 0;
  for (int a = 0; a + 1 < G; ++a) min_gap = std::min(min_gap, fl.nu[a + 1] - fl.nu[a]);
  for (double d : fl.dispersion) max_disp = std::max(max_disp, d);
  fl.constant_spectrum = max_disp < 0.05 * min_gap;

  const EndoField I = identity_field(r, n);
  const EndoField du = dbar_end(u, B);
  for (int a = 0; a + 1 < G; ++a) {
    FlagProjection fp;
    fp.center = 0.5 * (fl.nu[a] + fl.nu[a + 1]);
    fp.width = 0.25 * (fl.nu[a + 1] - fl.nu[a]);
    const ScalarFunction p = flag_step(fp.center, fp.width);
    fp.pi = phi_of_s(p, u, K);
    fp.rank = trace_integral(g, fp.pi).real() / g.volume();
    fp.idempotency = norm(g, detail::site_product(fp.pi, fp.pi) - fp.pi, 2.0, K);
    fp.self_adjoint = norm(g, fp.pi - adjoint_wrt(fp.pi, K), 2.0, K);
    const EndoField lhs = detail::site_product(I - fp.pi, dbar_end(fp.pi, B));
    fp.weak_holo = norm(g, lhs, 2.0, K);
    const BivariateFunction dp = diff_quotient(p);
    const BivariateFunction Phi{[p, dp](double x, double y) { return (1.0 - p(y)) * dp(x, y); }, "weakPhi"};
    fp.weak_phi_agreement = norm(g, lhs - Phi_of_s(Phi, u, du, K), 2.0, K);
    fl.projections.push_back(std::move(fp));
  }
  for (std::size_t a = 0; a < fl.projections.size(); ++a)
    for (std::size_t b = a + 1; b < fl.projections.size(); ++b) {
      const EndoField& pa = fl.projections[a].pi;
      fl.nesting = std::max(fl.nesting, norm(g, detail::site_product(pa, fl.projections[b].pi) - pa, 2.0, K));
    }
  EndoField rec = fl.nu.back() * I;
  for (int a = 0; a + 1 < G; ++a) rec -= (fl.nu[a + 1] - fl.nu[a]) * fl.projections[a].pi;
  fl.telescoping = norm(g, u - rec, 2.0, K);
  return fl;
}

struct WeakHolo {
  double residual = 0;  // || (I - pi) dbar pi ||_{L2_K}
};

inline WeakHolo weak_holo_residual(const EndoField& pi, const MetricField& K, const BundleData& B) {
  const EndoField I = identity_field(pi.rank(), pi.sites());
  return {norm(B.grid(), detail::site_product(I - pi, dbar_end(pi, B)), 2.0, K)};
}

// ---- probe ----------------------------------------------------------------------

enum class ProbeStatus { found, not_destabilizing, no_separation, flow_converged, insufficient_growth };

inline std::string to_string(ProbeStatus s) {
  switch (s) {
    case ProbeStatus::found: return "found";
    case ProbeStatus::not_destabilizing: return "not_destabilizing";
    case ProbeStatus::no_separation: return "no_separation";
    case ProbeStatus::flow_converged: return "flow_converged";
    case ProbeStatus::insufficient_growth: return "insufficient_growth";
  }
  return "?";
}

struct ProbeOptions {
  double ell_threshold = 10.0;
  double gap_tol = 1e-3;
};

struct ProbeReport {
  ProbeStatus status = ProbeStatus::no_separation;
  bool found = false;
  double ell = 0;
  Flag flag;
  std::vector<double> degrees;  // deg(pi_a)
  int best = -1;                // index of the slope-maximising pi_a
  double deg_pi = 0, rank_pi = 0, mu_pi = 0, mu_E = 0;
  double W = 0;
  double W_tolerance = 0;
  double weak_holo = 0;
  double idempotency = 0;
  std::string message;
};

// Probe of the blow-up direction of s = log(K^{-1} H) for the late-time metric H.
inline ProbeReport destabilize_probe(const MetricField& H, const MetricField& K, const BundleData& B,
                                     const ProbeOptions& opt = {}) {
  const OrbifoldGrid& g = B.grid();
  ProbeReport rep;
  rep.mu_E = B.slope();
  rep.W_tolerance = 1e-3 * std::max(1.0, std::abs(double(B.degree())));
  const EndoField s = relate_metrics(H, K);
  rep.ell = l4_scale(s, K, g);
  if (rep.ell < opt.ell_threshold) {
    rep.status = ProbeStatus::insufficient_growth;
    rep.message = "blow-up scale " + std::to_string(rep.ell) + " below threshold " +
                  std::to_string(opt.ell_threshold);
    return rep;
  }
  const Normalized nz = normalize(s, K, g);
  rep.flag = eigen_flag(nz.u, K, B, opt.gap_tol);
  if (!rep.flag.separated) {
    rep.status = ProbeStatus::no_separation;
    rep.message = "no separation: blow-up direction has constant spectrum";
    return rep;
  }
  const auto& nu = rep.flag.nu;
  rep.W = nu.back() * B.degree();
  double best_mu = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < rep.flag.projections.size(); ++a) {
    const auto& fp = rep.flag.projections[a];
    const double d = projection_degree(fp.pi, K, B).degree;
    rep.degrees.push_back(d);
    rep.W -= (nu[a + 1] - nu[a]) * d;
    const double rk = std::max(std::round(fp.rank), 1.0);
    if (d / rk > best_mu) {
      best_mu = d / rk;
      rep.best = int(a);
      rep.deg_pi = d;
      rep.rank_pi = rk;
    }
  }
  rep.mu_pi = best_mu;
  rep.weak_holo = rep.flag.projections[rep.best].weak_holo;
  rep.idempotency = rep.flag.projections[rep.best].idempotency;
  rep.found = rep.W <= rep.W_tolerance && rep.mu_pi >= rep.mu_E - rep.W_tolerance;
  rep.status = rep.found ? ProbeStatus::found : ProbeStatus::not_destabilizing;
  if (!rep.flag.constant_spectrum) rep.message = "eigenvalue dispersion exceeds 5% of the smallest gap";
  return rep;
}

inline ProbeReport destabilize_probe(const FlowTrace& tr, const MetricField& K, const BundleData& B,
                                     const ProbeOptions& opt = {}) {
  if (tr.status == FlowStatus::converged) {
    ProbeReport rep;
    rep.status = ProbeStatus::flow_converged;
    rep.mu_E = B.slope();
    rep.message = "flow converged";
    return rep;
  }
  return destabilize_probe(tr.final_state, K, B, opt);
}

}  // namespace hermflow
