#pragma once

// Curvature relations between two metrics H = K e^s, evaluated on the grid.
//
// Laplacians on End(E): Delta_dK = dK* dK and Delta_dbar = dbar* dbar with the
// Kahler adjoints dK*(c dz) = -2 dbar_E c and dbar*(b dzbar) = -2 dK b.
// On functions Delta is the positive de Rham Laplacian d*d.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "hermflow/chern.hpp"

namespace hermflow {

inline EndoField laplace_dK(const EndoField& s, const EndoField& theta_K, const BundleData& B) {
  EndoField out = dbar_end(del_conn(s, theta_K, B), B);  // (1,1) coefficient -(dbar_E c)
  out.set_degree(FormDegree::zero);
  out *= cd(2.0);
  return out;
}

inline EndoField laplace_dbar(const EndoField& s, const EndoField& theta_K, const BundleData& B) {
  EndoField out = del_conn(dbar_end(s, B), theta_K, B);  // (1,1) coefficient +dK b
  out.set_degree(FormDegree::zero);
  out *= cd(-2.0);
  return out;
}

struct CurvatureRelations {
  double i = 0;           // max |(dbar s)^{*K} - dK s| / max |dK s|
  double ii = 0;          // ||Delta_dK s - D||_{L2} / ||D||_{L2}, D = i Lambda (F_H - F_K)
  double iii = 0;         // ||Delta_dbar s - D + [i Lambda F_K, s]||_{L2} / ||D||_{L2}
  double iii_exact = 0;   // ||Delta_dbar s - Delta_dK s + [i Lambda F_K, s]||_{L2} / ||Delta_dK s||_{L2}
  double iv_lhs = 0;      // ||dK s||^2_{L2_K}
  double iv_rhs = 0;      // <D, s>_{L2_K}
  double iv = 0;          // |lhs - rhs| / max(|rhs|, tiny)
  double iv_weighted = 0; // <D, s> against the (1 - e^-x)/x weighted form of ||dK s||^2, relative
  double relative_curvature = 0;  // ||F_H - F_K - dbar(h^-1 dK h)||_{L2} / ||F_H - F_K||_{L2}
  // Least-squares fit Delta |s|^2 = a <2 i Lambda (F_H - F_K), s> + b <i Lambda F_K s, s> + c |d_K s|^2.
  double v_a = 0, v_b = 0, v_c = 0, v_fit_residual = 0;
};

namespace detail {

inline double l2(const OrbifoldGrid& g, const EndoField& A, const MetricField& K) { return norm(g, A, 2.0, K); }

inline double rel(double num, double den) { return num / std::max(den, 1e-300); }

}  // namespace detail

inline CurvatureRelations curvature_relations(const BundleData& B, const MetricField& K, const EndoField& s) {
  const OrbifoldGrid& g = B.grid();
  CurvatureRelations out;
  const MetricField H = exp_metric(K, s);
  const CurvatureReport cK = curvature(K, B), cH = curvature(H, B);
  const EndoField& thK = cK.theta;
  const cd I(0, 1);

  const EndoField dKs = del_conn(s, thK, B);
  const EndoField dbs = dbar_end(s, B);
  const EndoField adj = adjoint_wrt(dbs, K);
  {
    double num = 0, den = 0;
    for (std::size_t x = 0; x < g.size(); ++x) {
      num = std::max(num, (adj.at(x) - dKs.at(x)).cwiseAbs().maxCoeff());
      den = std::max(den, dKs.at(x).cwiseAbs().maxCoeff());
    }
    out.i = detail::rel(num, den);
  }

  EndoField D = cH.lambda_F - cK.lambda_F;
  D *= I;
  EndoField iLFK = cK.lambda_F;
  iLFK *= I;
  const EndoField comm = commutator(iLFK, s, FormDegree::zero);
  const EndoField Ldk = laplace_dK(s, thK, B);
  const EndoField Ldb = laplace_dbar(s, thK, B);
  const double nD = detail::l2(g, D, K);
  out.ii = detail::rel(detail::l2(g, Ldk - D, K), nD);
  out.iii = detail::rel(detail::l2(g, Ldb - D + comm, K), nD);
  out.iii_exact = detail::rel(detail::l2(g, Ldb - Ldk + comm, K), detail::l2(g, Ldk, K));

  out.iv_lhs = std::pow(detail::l2(g, dKs, K), 2);
  out.iv_rhs = l2_inner(g, D, s, K).real();
  out.iv = detail::rel(std::abs(out.iv_lhs - out.iv_rhs), std::abs(out.iv_rhs));

  // <D, s> = 2 int sum |(dK s)~_ij|^2 (1 - e^{-x_ij}) / x_ij, x_ij = lambda_i - lambda_j, in a K-unitary eigenframe.
  {
    double acc = 0;
    for (std::size_t x = 0; x < g.size(); ++x) {
      const KFrame fr = k_eigen(s.at(x), K.at(x));
      const Mat At = fr.E_inv * dKs.at(x) * fr.E;
      for (int a = 0; a < At.rows(); ++a)
        for (int b = 0; b < At.cols(); ++b) {
          const double d = fr.lambda(a) - fr.lambda(b);
          const double w = std::abs(d) < 1e-6 ? 1.0 - d / 2.0 + d * d / 6.0 : -std::expm1(-d) / d;
          acc += std::norm(At(a, b)) * w;
        }
    }
    const double weighted = 2.0 * acc * g.volume() / double(g.size());
    out.iv_weighted = detail::rel(std::abs(weighted - out.iv_rhs), std::abs(out.iv_rhs));
  }

  // F_H - F_K = dbar(h^{-1} dK h) with h = e^s.
  {
    EndoField hh(s.rank(), s.sites());
    EndoField hinv(s.rank(), s.sites());
    for (std::size_t x = 0; x < g.size(); ++x) {
      const KFrame fr = k_eigen(s.at(x), K.at(x));
      hh.set(x, apply_spectral(fr, [](double v) { return std::exp(v); }));
      hinv.set(x, apply_spectral(fr, [](double v) { return std::exp(-v); }));
    }
    EndoField c = multiply(hinv, del_conn(hh, thK, B), FormDegree::one_zero);
    const EndoField rhs = dbar_end(c, B);
    const EndoField lhs = cH.F - cK.F;
    out.relative_curvature = detail::rel(detail::l2(g, lhs - rhs, K), detail::l2(g, lhs, K));
  }

  // Clause (v): fit the three coefficients over all sites.
  {
    std::vector<cd> n2(g.size());
    for (std::size_t x = 0; x < g.size(); ++x) n2[x] = k_norm2(s.at(x), K.at(x));
    const std::vector<cd> lap = laplacian(g, n2);
    const auto dk2 = pointwise_norm2(dKs, K);
    const auto db2 = pointwise_norm2(dbs, K);
    Eigen::MatrixXd A(g.size(), 3);
    Eigen::VectorXd y(g.size());
    for (std::size_t x = 0; x < g.size(); ++x) {
      const Mat Kx = K.at(x), sx = s.at(x);
      const Mat sadj = Kx.inverse() * sx.adjoint() * Kx;
      A(x, 0) = std::real((2.0 * D.at(x) * sadj).trace());
      A(x, 1) = std::real((iLFK.at(x) * sx * sadj).trace());
      A(x, 2) = dk2[x] + db2[x];
      y(x) = lap[x].real();
    }
    const Eigen::Vector3d coef = A.colPivHouseholderQr().solve(y);
    out.v_a = coef(0);
    out.v_b = coef(1);
    out.v_c = coef(2);
    out.v_fit_residual = detail::rel((A * coef - y).norm(), y.norm());
  }
  return out;
}

}  // namespace hermflow
