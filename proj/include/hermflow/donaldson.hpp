#pragma once

// Donaldson functional M_K(H) for H = K e^s, evaluated two ways:
//   path:     M = int_0^1 [2i int Tr(s Lambda F_t) - 2i lambda int Tr s] dt along H_t = K e^{ts},
//   spectral: M = 2i int Tr(s Lambda F_K) - 2i lambda int Tr s
//               + 2 int sum_ij |(dbar s)~_ij|^2 Psi(lambda_j, lambda_i)   (form norm included),
// plus its first and second variations along H_t, the Siu-type L^1 estimate and
// the properness probe over a recorded flow history.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hermflow/chern.hpp"
#include "hermflow/spectral_calc.hpp"

namespace hermflow {

struct MkEvaluation {
  double value = 0;
  double imag = 0;  // imaginary part of the assembled integral (should vanish)
  std::string method;
  int path_points = 0;
  double error_estimate = 0;  // path: |Q_n - Q_{n/2}|
  double residual_vs_other = std::numeric_limits<double>::quiet_NaN();
};

// Gauss-Legendre nodes and weights on [0, 1] (Golub-Welsch).
struct Quadrature {
  std::vector<double> nodes, weights;
};

inline Quadrature gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: need at least one node");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = k / std::sqrt(4.0 * k * k - 1.0);
    J(k, k - 1) = J(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  Quadrature q;
  for (int i = 0; i < n; ++i) {
    const double v0 = es.eigenvectors()(0, i);
    q.nodes.push_back(0.5 * (es.eigenvalues()(i) + 1.0));
    q.weights.push_back(v0 * v0);  // 2 v0^2 on [-1, 1], halved for [0, 1]
  }
  return q;
}

namespace detail {

// 2i int Tr(s Lambda F) - 2i lambda int Tr s, complex.
inline cd first_variation_from(const EndoField& s, const EndoField& lambda_F, const BundleData& B) {
  const OrbifoldGrid& g = B.grid();
  cd tr = 0, trs = 0;
  for (std::size_t x = 0; x < g.size(); ++x) {
    const Mat sx = s.at(x);
    tr += (sx * lambda_F.at(x)).trace();
    trs += sx.trace();
  }
  const double dA = g.volume() / double(g.size());
  const cd I(0, 1);
  return 2.0 * I * tr * dA - 2.0 * I * lambda_constant(B) * trs * dA;
}

inline cd first_variation_integrand(const EndoField& s, const MetricField& H, const BundleData& B) {
  return first_variation_from(s, curvature(H, B).lambda_F, B);
}

inline cd path_quadrature(const EndoField& s, const MetricField& K, const BundleData& B, int n) {
  const Quadrature q = gauss_legendre(n);
  cd sum = 0;
  for (int i = 0; i < n; ++i)
    sum += q.weights[i] * first_variation_integrand(s, exp_metric(K, s, q.nodes[i]), B);
  return sum;
}

}  // namespace detail

inline MkEvaluation mk_path(const MetricField& H, const MetricField& K, const BundleData& B, int path_points = 16,
                            bool estimate_error = true) {
  const EndoField s = relate_metrics(H, K);
  MkEvaluation out;
  out.method = "path";
  out.path_points = path_points;
  if (s.max_abs() <= 64 * std::numeric_limits<double>::epsilon()) return out;  // H = K up to rounding
  const cd v = detail::path_quadrature(s, K, B, path_points);
  out.value = v.real();
  out.imag = v.imag();
  if (estimate_error && path_points >= 2)
    out.error_estimate = std::abs(v - detail::path_quadrature(s, K, B, path_points / 2));
  return out;
}

// Spectral second term 2 int sum |(dbar s)~_ij|^2 Psi(lambda_j, lambda_i) * 2 (form norm).
inline double mk_quadratic_term(const EndoField& s, const MetricField& K, const BundleData& B) {
  const OrbifoldGrid& g = B.grid();
  const EndoField dbs = dbar_end(s, B);
  const BivariateFunction Psi = psi_function();
  double acc = 0;
  for (std::size_t x = 0; x < g.size(); ++x) {
    const KFrame fr = k_eigen(s.at(x), K.at(x));
    const Mat At = fr.E_inv * dbs.at(x) * fr.E;
    const Mat W = pair_weights(Psi, fr.lambda);  // W(i, j) = Psi(lambda_j, lambda_i)
    for (int i = 0; i < At.rows(); ++i)
      for (int j = 0; j < At.cols(); ++j) acc += std::norm(At(i, j)) * W(i, j).real();
  }
  return 2.0 * form_norm_factor(FormDegree::zero_one) * acc * g.volume() / double(g.size());
}

// No trace precondition: includes the -2i lambda int Tr s term. lambda_FK = Lambda F_K.
inline MkEvaluation mk_spectral_general(const EndoField& s, const MetricField& K, const EndoField& lambda_FK,
                                        const BundleData& B) {
  MkEvaluation out;
  out.method = "spectral";
  const cd lin = detail::first_variation_from(s, lambda_FK, B);
  out.value = lin.real() + mk_quadratic_term(s, K, B);
  out.imag = lin.imag();
  return out;
}

inline MkEvaluation mk_spectral_general(const EndoField& s, const MetricField& K, const BundleData& B) {
  return mk_spectral_general(s, K, curvature(K, B).lambda_F, B);
}

inline MkEvaluation mk_spectral(const EndoField& s, const MetricField& K, const BundleData& B) {
  const cd tr = trace_integral(B.grid(), s);
  if (std::abs(tr) > 1e-8)
    throw std::invalid_argument("mk_spectral: s must have vanishing trace integral (got " +
                                std::to_string(std::abs(tr)) + ")");
  return mk_spectral_general(s, K, B);
}

inline MkEvaluation mk_both(const MetricField& H, const MetricField& K, const BundleData& B, int path_points = 16) {
  MkEvaluation p = mk_path(H, K, B, path_points);
  const MkEvaluation sp = mk_spectral_general(relate_metrics(H, K), K, B);
  p.residual_vs_other = std::abs(p.value - sp.value) / std::max(1.0, std::abs(p.value));
  return p;
}

struct Variations {
  double first = 0;   // d/dt M_K(K e^{ts})
  double second = 0;  // d^2/dt^2 M_K(K e^{ts}) = 2 int |dbar s|^2_{H_t}
  double first_imag = 0;
};

inline Variations variations(const EndoField& s, const MetricField& K, const BundleData& B, double t) {
  const MetricField Ht = exp_metric(K, s, t);
  Variations out;
  const cd f = detail::first_variation_integrand(s, Ht, B);
  out.first = f.real();
  out.first_imag = f.imag();
  double acc = 0;
  for (double v : pointwise_norm2(dbar_end(s, B), Ht)) acc += v;
  out.second = 2.0 * acc * B.grid().volume() / double(B.grid().size());
  return out;
}

// ---- Siu-type estimate -----------------------------------------------------------

struct SiuCheck {
  double lhs = 0;  // (int |D_K s|)^2
  double rhs = 0;  // 2 (sqrt 2 ||s||_{L1} + vol) (M_K(K e^s) - 2i int Tr(s Lambda F_K))
  double margin = 0;
};

inline SiuCheck siu_estimate_check(const EndoField& s, const MetricField& K, const BundleData& B) {
  const OrbifoldGrid& g = B.grid();
  const double tr = std::abs(trace_integral(g, s));
  if (tr > 1e-8) throw std::invalid_argument("siu_estimate_check: s must have vanishing trace integral");
  const EndoField thK = chern_connection(K, B);
  const auto a = pointwise_norm2(del_conn(s, thK, B), K);
  const auto b = pointwise_norm2(dbar_end(s, B), K);
  const double dA = g.volume() / double(g.size());
  double l1 = 0;
  for (std::size_t x = 0; x < g.size(); ++x) l1 += std::sqrt(a[x] + b[x]) * dA;
  SiuCheck out;
  out.lhs = l1 * l1;
  out.rhs = 2.0 * (std::sqrt(2.0) * norm(g, s, 1.0, K) + g.volume()) * mk_quadratic_term(s, K, B);
  out.margin = out.rhs - out.lhs;
  return out;
}

// Scalar lower bounds for (e^u - u - 1) / u^2 on n uniform samples of [lo, hi].
//   sqrt form:  1 / (2 sqrt(u^2 + 1)). Fails on roughly (-0.81, 0), where the left side is
//               1/2 - u^2/4 + ... and the right side 1/2 + u/6 + ...
//   linear form: 1 / (2 (1 + |u|)). Holds everywhere and gives the same L^1 estimate, since
//               |lambda_a - lambda_b| <= sqrt 2 |s|_K.
enum class SiuBound { sqrt_form, linear_form };

struct ScalarInequalityScan {
  long samples = 0;
  long violations = 0;
  double min_gap = std::numeric_limits<double>::infinity();
  double worst_u = 0;
  double violation_lo = std::numeric_limits<double>::infinity();  // range of violating samples
  double violation_hi = -std::numeric_limits<double>::infinity();
};

inline double siu_lower_bound(double u, SiuBound b) {
  return b == SiuBound::sqrt_form ? 1.0 / (2.0 * std::sqrt(u * u + 1.0)) : 1.0 / (2.0 * (1.0 + std::abs(u)));
}

inline ScalarInequalityScan siu_scalar_scan(long n, SiuBound bound = SiuBound::sqrt_form, double lo = -50.0,
                                            double hi = 50.0) {
  ScalarInequalityScan out;
  out.samples = n;
  for (long i = 0; i < n; ++i) {
    const double u = lo + (hi - lo) * (double(i) + 0.5) / double(n);
    const double gap = psi(0.0, u) - siu_lower_bound(u, bound);
    if (gap < out.min_gap) {
      out.min_gap = gap;
      out.worst_u = u;
    }
    if (gap < 0) {
      ++out.violations;
      out.violation_lo = std::min(out.violation_lo, u);
      out.violation_hi = std::max(out.violation_hi, u);
    }
  }
  return out;
}

// ---- properness ---------------------------------------------------------------

struct ProperSample {
  double t = 0;
  double sup_s = 0;  // sup_X |s_t|_K
  double M = 0;      // M_K(K e^{s_t})
};

struct ProperResult {
  double C1 = 0;
  double C2 = 0;
  double cap = 0;  // largest C1 regarded as feasible
  bool proper = false;
};

// Minimises C1 = max_i (S_i - C2 M_i) over C2 >= 0 and compares with the cap
// 1.05 * max sup|s| over the first half of the history.
inline ProperResult properness_probe(const std::vector<ProperSample>& hist) {
  ProperResult out;
  if (hist.empty()) return out;
  auto c1_of = [&](double c2) {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& h : hist) m = std::max(m, h.sup_s - c2 * h.M);
    return std::max(m, 0.0);
  };
  std::vector<double> cands{0.0};
  for (std::size_t i = 0; i < hist.size(); ++i)
    for (std::size_t j = i + 1; j < hist.size(); ++j) {
      const double dM = hist[i].M - hist[j].M;
      if (std::abs(dM) < 1e-300) continue;
      const double c2 = (hist[i].sup_s - hist[j].sup_s) / dM;
      if (c2 > 0 && std::isfinite(c2)) cands.push_back(c2);
    }
  bool all_nonneg = true;
  for (const auto& h : hist) all_nonneg = all_nonneg && h.M >= 0;
  if (all_nonneg) cands.push_back(1e12);
  out.C1 = std::numeric_limits<double>::infinity();
  for (double c2 : cands) {
    const double c1 = c1_of(c2);
    if (c1 < out.C1 - 1e-15 || (std::abs(c1 - out.C1) <= 1e-15 && c2 < out.C2)) {
      out.C1 = c1;
      out.C2 = c2;
    }
  }
  const double t_half = 0.5 * hist.back().t;
  double early = 0;
  for (const auto& h : hist)
    if (h.t <= t_half + 1e-12) early = std::max(early, h.sup_s);
  out.cap = 1.05 * early + 1e-6;
  out.proper = out.C1 <= out.cap;
  return out;
}

}  // namespace hermflow
