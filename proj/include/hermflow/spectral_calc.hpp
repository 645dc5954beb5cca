#pragma once

// Functional calculus for K-self-adjoint endomorphism fields: phi(s) applied
// to eigenvalues, and the pair transform Phi(s)(A) which weights the entry of A
// mapping the eigenvector of lambda_a to that of lambda_b by Phi(lambda_a, lambda_b).

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "hermflow/bundle.hpp"
#include "hermflow/chern.hpp"

namespace hermflow {

struct ScalarFunction {
  std::function<double(double)> f;
  std::function<double(double)> df;  // required by diff_quotient
  std::string tag;

  double operator()(double x) const { return f(x); }
};

struct BivariateFunction {
  std::function<double(double, double)> f;
  std::string tag;

  double operator()(double u, double v) const { return f(u, v); }
};

inline ScalarFunction identity_function() {
  return {[](double x) { return x; }, [](double) { return 1.0; }, "identity"};
}

inline ScalarFunction exp_function() {
  return {[](double x) { return std::exp(x); }, [](double x) { return std::exp(x); }, "exp"};
}

inline ScalarFunction square_function() {
  return {[](double x) { return x * x; }, [](double x) { return 2 * x; }, "square"};
}

inline ScalarFunction constant_function(double c) {
  return {[c](double) { return c; }, [](double) { return 0.0; }, "constant"};
}

// Decreasing logistic ramp: ~1 below center, ~0 above, with length scale w.
inline ScalarFunction smoothed_step(double center, double w) {
  if (!(w > 0)) throw std::invalid_argument("smoothed_step: scale must be positive");
  auto f = [center, w](double x) {
    const double z = (x - center) / w;
    return z > 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
  };
  auto df = [center, w](double x) {
    const double z = std::abs(x - center) / w;
    const double e = std::exp(-z);
    return -e / ((1.0 + e) * (1.0 + e) * w);
  };
  return {f, df, "smoothed_step"};
}

inline BivariateFunction constant_bivariate(double c) {
  return {[c](double, double) { return c; }, "constant"};
}

// d phi(u, v) = (phi(u) - phi(v)) / (u - v), phi'(midpoint) near the diagonal.
inline BivariateFunction diff_quotient(const ScalarFunction& phi) {
  if (!phi.df) throw std::invalid_argument("diff_quotient: derivative required");
  return {[phi](double u, double v) {
            const double h = u - v;
            if (std::abs(h) < 1e-5 * std::max(1.0, std::abs(u) + std::abs(v)))
              return phi.df(0.5 * (u + v));
            return (phi.f(u) - phi.f(v)) / h;
          },
          "d" + phi.tag};
}

// Psi(u, v) = (e^x - x - 1) / x^2 with x = v - u; 1/2 on the diagonal.
inline double psi(double u, double v) {
  const double x = v - u;
  if (std::abs(x) < 1e-4) return 0.5 + x / 6.0 + x * x / 24.0 + x * x * x / 120.0 + x * x * x * x / 720.0;
  return (std::expm1(x) - x) / (x * x);
}

inline double psi_scaled(double l, double u, double v) { return l * psi(l * u, l * v); }

inline BivariateFunction psi_function() { return {[](double u, double v) { return psi(u, v); }, "psi"}; }

// ---- field transforms -------------------------------------------------------

inline EndoField phi_of_s(const ScalarFunction& phi, const EndoField& s, const MetricField& K) {
  EndoField out(s.rank(), s.sites(), FormDegree::zero);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < long(s.sites()); ++i) {
    const KFrame fr = k_eigen(s.at(i), K.at(i));
    out.set(std::size_t(i), apply_spectral(fr, [&](double x) { return phi.f(x); }));
  }
  return out;
}

// Replaces eigenvalues in clusters with gaps below tol by the cluster mean.
inline RVec merge_clusters(const RVec& lam, double tol = 1e-6) {
  RVec out = lam;
  int start = 0;
  const int n = int(lam.size());
  for (int i = 1; i <= n; ++i) {
    if (i == n || lam(i) - lam(i - 1) >= tol) {
      double mean = 0;
      for (int j = start; j < i; ++j) mean += lam(j);
      mean /= (i - start);
      for (int j = start; j < i; ++j) out(j) = mean;
      start = i;
    }
  }
  return out;
}

// Matrix of weights W(b, a) = Phi(lambda_a, lambda_b) in the K-eigenframe.
inline Mat pair_weights(const BivariateFunction& Phi, const RVec& lam) {
  const RVec m = merge_clusters(lam);
  const int r = int(lam.size());
  Mat W(r, r);
  for (int b = 0; b < r; ++b)
    for (int a = 0; a < r; ++a) W(b, a) = Phi.f(m(a), m(b));
  return W;
}

inline Mat Phi_at_site(const BivariateFunction& Phi, const KFrame& fr, const Mat& A) {
  const Mat At = fr.E_inv * A * fr.E;
  const Mat W = pair_weights(Phi, fr.lambda);
  return fr.E * W.cwiseProduct(At) * fr.E_inv;
}

inline EndoField Phi_of_s(const BivariateFunction& Phi, const EndoField& s, const EndoField& A,
                          const MetricField& K) {
  EndoField out(A.rank(), A.sites(), A.degree());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < long(s.sites()); ++i) {
    const KFrame fr = k_eigen(s.at(i), K.at(i));
    out.set(std::size_t(i), Phi_at_site(Phi, fr, A.at(i)));
  }
  return out;
}

struct HolderCheck {
  double lhs = 0;  // ||Phi(s)(A)||_{L^p}
  double rhs = 0;  // C ||s||_{L^r} ||A||_{L^q}
  double C = 0;    // sup over sites of max |Phi(lambda_i, lambda_j)| / |s|_K
  double r = 0;
};

// ||Phi(s)(A)||_p <= C ||s||_r ||A||_q with 1/p = 1/q + 1/r.
inline HolderCheck holder_norm_check(const BivariateFunction& Phi, const EndoField& s, const EndoField& A,
                                     double p, double q, const MetricField& K, const OrbifoldGrid& g) {
  if (!(p >= 1) || !(p < q)) throw std::invalid_argument("holder_norm_check: needs 1 <= p < q");
  HolderCheck out;
  out.r = std::isinf(q) ? p : 1.0 / (1.0 / p - 1.0 / q);
  for (std::size_t i = 0; i < s.sites(); ++i) {
    const KFrame fr = k_eigen(s.at(i), K.at(i));
    const double w = pair_weights(Phi, fr.lambda).cwiseAbs().maxCoeff();
    const double sn = std::sqrt(std::max(0.0, k_norm2(s.at(i), K.at(i))));
    if (w == 0) continue;
    out.C = std::max(out.C, sn > 0 ? w / sn : std::numeric_limits<double>::infinity());
  }
  const EndoField T = Phi_of_s(Phi, s, A, K);
  out.lhs = norm(g, T, p, K);
  const double an = norm(g, A, std::isinf(q) ? 0.0 : q, K);
  out.rhs = an == 0 ? 0.0 : out.C * norm(g, s, out.r, K) * an;
  return out;
}

// ||dbar_E phi(s) - dphi(s)(dbar_E s)||_{L2_K}, absolute and relative to ||dbar_E phi(s)||.
struct ChainRuleResidual {
  double absolute = 0;
  double relative = 0;
};

inline ChainRuleResidual chain_rule_residual(const ScalarFunction& phi, const EndoField& s, const MetricField& K,
                                             const BundleData& B) {
  const OrbifoldGrid& g = B.grid();
  const EndoField lhs = dbar_end(phi_of_s(phi, s, K), B);
  const EndoField rhs = Phi_of_s(diff_quotient(phi), s, dbar_end(s, B), K);
  ChainRuleResidual out;
  out.absolute = norm(g, lhs - rhs, 2.0, K);
  out.relative = out.absolute / std::max(norm(g, lhs, 2.0, K), 1e-300);
  return out;
}

}  // namespace hermflow
