#pragma once

// Chern connection and curvature of a metric on a BundleData, Lambda-contracted
// curvature, Chern-Weil degree, the Hermitian-Einstein constant, and the
// two-term degree of a projection field.
//
// Fields are End(E)-valued with entry (a, b) of seam charge d_a - d_b.
// The holomorphic structure is dbar_E = dbar_0 + a, where dbar_0 is the
// reference (unitary, constant curvature) operator of the twist factors.
// All forms are stored as coefficients of dz, dzbar or dz^dzbar.

#include <cmath>
#include <complex>
#include <iostream>
#include <numbers>
#include <stdexcept>

#include "hermflow/bundle.hpp"

namespace hermflow {

// ---- covariant derivatives on End(E) ---------------------------------------

// Reference d_0 / dbar_0 applied entrywise. On 0-forms the result is a
// (1,0)- resp. (0,1)-form; on (0,1)- resp. (1,0)-forms a (1,1)-form with the
// wedge sign folded in.
inline EndoField del0(const EndoField& T, const BundleData& B) {
  FormDegree out_deg;
  if (T.degree() == FormDegree::zero) out_deg = FormDegree::one_zero;
  else if (T.degree() == FormDegree::zero_one) out_deg = FormDegree::one_one;
  else throw std::invalid_argument("del0: needs a 0-form or (0,1)-form");
  EndoField out(T.rank(), T.sites(), out_deg);
  for (int a = 0; a < T.rank(); ++a)
    for (int b = 0; b < T.rank(); ++b) B.grid().dz(T.entry(a, b), B.charge(a, b), out.entry(a, b));
  return out;
}

inline EndoField dbar0(const EndoField& T, const BundleData& B) {
  FormDegree out_deg;
  double sign = 1.0;
  if (T.degree() == FormDegree::zero) out_deg = FormDegree::zero_one;
  else if (T.degree() == FormDegree::one_zero) { out_deg = FormDegree::one_one; sign = -1.0; }
  else throw std::invalid_argument("dbar0: needs a 0-form or (1,0)-form");
  EndoField out(T.rank(), T.sites(), out_deg);
  for (int a = 0; a < T.rank(); ++a)
    for (int b = 0; b < T.rank(); ++b) B.grid().dzbar(T.entry(a, b), B.charge(a, b), out.entry(a, b));
  if (sign < 0) out *= cd(-1.0);
  return out;
}

// dbar_E = dbar_0 + [a, .] (graded for 1-forms).
inline EndoField dbar_end(const EndoField& T, const BundleData& B) {
  EndoField out = dbar0(T, B);
  const auto& a = B.background_a();
  if (!a) return out;
  const double sign = T.degree() == FormDegree::zero ? 1.0 : -1.0;
  for (std::size_t s = 0; s < T.sites(); ++s) {
    const Mat am = a->at(s), t = T.at(s);
    out.set(s, out.at(s) + sign * (am * t - t * am));
  }
  return out;
}

// d_K = d_0 + [theta, .] for the (1,0) part theta of a Chern connection.
inline EndoField del_conn(const EndoField& T, const EndoField& theta, const BundleData& B) {
  EndoField out = del0(T, B);
  for (std::size_t s = 0; s < T.sites(); ++s) {
    const Mat th = theta.at(s), t = T.at(s);
    out.set(s, out.at(s) + (th * t - t * th));
  }
  return out;
}

// Coefficient matrix of the conjugate form: (c dzbar)^dagger = c^dagger dz.
inline EndoField dagger(const EndoField& A) {
  EndoField out(A.rank(), A.sites(), conjugate_degree(A.degree()));
  for (std::size_t s = 0; s < A.sites(); ++s) out.set(s, A.at(s).adjoint());
  return out;
}

// ---- Chern connection and curvature ------------------------------------------

// theta = H^{-1}(d_0 H - a^dagger H): the (1,0) part relative to the reference
// connection, so that D' = d_0 + theta and D'' = dbar_0 + a preserve H.
inline EndoField chern_connection(const MetricField& H, const BundleData& B) {
  EndoField dH = del0(H.as<EndoTag>(), B);
  const auto& a = B.background_a();
  EndoField theta(H.rank(), H.sites(), FormDegree::one_zero);
  for (std::size_t s = 0; s < H.sites(); ++s) {
    const Mat h = H.at(s);
    Mat rhs = dH.at(s);
    if (a) rhs -= a->at(s).adjoint() * h;
    theta.set(s, h.partialPivLu().solve(rhs));
  }
  return theta;
}

// Reference curvature coefficient F_A[z zbar] = pi d / Im tau on each factor.
inline EndoField reference_curvature(const BundleData& B) {
  EndoField F(B.rank(), B.grid().size(), FormDegree::one_one);
  const double c = std::numbers::pi / B.grid().volume();
  for (int j = 0; j < B.rank(); ++j)
    for (auto& v : F.entry(j, j)) v = c * B.twist()[j];
  return F;
}

// F[z zbar] = F_A + d_0 a - dbar_0 theta + theta a - a theta.
inline EndoField curvature_form(const EndoField& theta, const BundleData& B) {
  EndoField F = reference_curvature(B);
  F += dbar0(theta, B);  // already carries the minus sign
  const auto& a = B.background_a();
  if (a) {
    F += del0(*a, B);
    for (std::size_t s = 0; s < F.sites(); ++s) {
      const Mat th = theta.at(s), am = a->at(s);
      F.set(s, F.at(s) + th * am - am * th);
    }
  }
  return F;
}

inline EndoField lambda_contract(const EndoField& F) {
  if (F.degree() != FormDegree::one_one) throw std::invalid_argument("lambda_contract: needs (1,1)");
  EndoField out = F;
  out.set_degree(FormDegree::zero);
  out *= cd(0, -2);
  return out;
}

// lambda = -2 pi i mu(E) / vol(X).
inline cd lambda_constant(const BundleData& B) {
  return cd(0, -2.0 * std::numbers::pi * B.slope() / B.grid().volume());
}

struct CurvatureReport {
  EndoField F;         // (1,1) coefficient of dz^dzbar
  EndoField lambda_F;  // Lambda F
  EndoField theta;     // (1,0) connection part
  double sup_dev = 0;  // sup_x |i Lambda F - i lambda I|_H
  double l2_dev = 0;   // L^2_H norm of the same
};

// |X|_H^2 for X self-adjoint w.r.t. H equals Tr(X^2).
inline CurvatureReport curvature(const MetricField& H, const BundleData& B) {
  CurvatureReport rep;
  rep.theta = chern_connection(H, B);
  rep.F = curvature_form(rep.theta, B);
  rep.lambda_F = lambda_contract(rep.F);
  const cd ilam = cd(0, 1) * lambda_constant(B);
  const OrbifoldGrid& g = B.grid();
  double sup2 = 0, sum2 = 0;
  for (std::size_t s = 0; s < H.sites(); ++s) {
    Mat X = cd(0, 1) * rep.lambda_F.at(s);
    X -= ilam * Mat::Identity(H.rank(), H.rank());
    const double v = std::abs(std::real((X * X).trace()));
    sup2 = std::max(sup2, v);
    sum2 += v;
  }
  rep.sup_dev = std::sqrt(sup2);
  rep.l2_dev = std::sqrt(sum2 * g.volume() / double(g.size()));
  return rep;
}

// deg = (i / 2 pi) int Tr(Lambda F_H).
inline double degree(const BundleData& B, const MetricField& H) {
  const CurvatureReport rep = curvature(H, B);
  const cd v = cd(0, 1) / (2.0 * std::numbers::pi) * integrate(B.grid(), trace_field(rep.lambda_F));
  return v.real();
}

inline double slope(const BundleData& B, const MetricField& H) { return degree(B, H) / B.rank(); }

struct ProjectionDegree {
  double degree = 0;
  double curvature_term = 0;  // (i / 2 pi) int Tr(Pi Lambda F_K)
  double second_fundamental = 0;  // (1 / 2 pi) int |dbar Pi|_K^2
  double idempotency_residual = 0;
  double self_adjoint_residual = 0;
};

// deg(Pi) = (i / 2 pi) int Tr(Pi Lambda F_K) - (1 / 2 pi) int |dbar Pi|_K^2.
inline ProjectionDegree projection_degree(const EndoField& Pi, const MetricField& K, const BundleData& B) {
  const OrbifoldGrid& g = B.grid();
  ProjectionDegree out;
  const CurvatureReport rep = curvature(K, B);
  cd tr = 0;
  for (std::size_t s = 0; s < Pi.sites(); ++s) {
    const Mat p = Pi.at(s);
    tr += (p * rep.lambda_F.at(s)).trace();
    out.idempotency_residual = std::max(out.idempotency_residual, (p * p - p).cwiseAbs().maxCoeff());
  }
  tr *= g.volume() / double(g.size());
  out.self_adjoint_residual = self_adjoint_residual(Pi, K);
  out.curvature_term = (cd(0, 1) / (2.0 * std::numbers::pi) * tr).real();
  const EndoField dP = dbar_end(Pi, B);
  double sq = 0;
  for (double v : pointwise_norm2(dP, K)) sq += v;
  out.second_fundamental = sq * g.volume() / double(g.size()) / (2.0 * std::numbers::pi);
  out.degree = out.curvature_term - out.second_fundamental;
  if (out.idempotency_residual > 1e-3)
    std::clog << "projection_degree: idempotency residual " << out.idempotency_residual
              << " exceeds 1e-3; degree unreliable\n";
  return out;
}

// Left-hand minus right-hand side of  d<xi,eta>_H = <D'xi, eta>_H + <xi, D''eta>_H
// for sections xi, eta of E (component j carries charge d_j); returns the max abs residual.
inline double compatibility_residual(const MetricField& H, const BundleData& B,
                                     const std::vector<std::vector<cd>>& xi,
                                     const std::vector<std::vector<cd>>& eta) {
  const OrbifoldGrid& g = B.grid();
  const int r = B.rank();
  const std::size_t n = g.size();
  const EndoField theta = chern_connection(H, B);
  const auto& a = B.background_a();
  std::vector<std::vector<cd>> dxi(r, std::vector<cd>(n)), dbeta(r, std::vector<cd>(n));
  for (int j = 0; j < r; ++j) {
    g.dz(xi[j], B.twist()[j], dxi[j]);
    g.dzbar(eta[j], B.twist()[j], dbeta[j]);
  }
  std::vector<cd> pair(n);
  for (std::size_t s = 0; s < n; ++s) {
    CVec x(r), e(r);
    for (int j = 0; j < r; ++j) { x(j) = xi[j][s]; e(j) = eta[j][s]; }
    pair[s] = e.dot(H.at(s) * x);  // eta^dagger H xi
  }
  std::vector<cd> lhs(n);
  g.dz(pair, 0, lhs);
  double res = 0;
  for (std::size_t s = 0; s < n; ++s) {
    CVec x(r), e(r), dx(r), de(r);
    for (int j = 0; j < r; ++j) {
      x(j) = xi[j][s]; e(j) = eta[j][s]; dx(j) = dxi[j][s]; de(j) = dbeta[j][s];
    }
    const Mat h = H.at(s);
    const CVec Dx = dx + theta.at(s) * x;
    CVec De = de;
    if (a) De += a->at(s) * e;
    // <D'' eta> enters conjugated: its dzbar coefficient becomes a dz coefficient.
    const cd rhs = e.dot(h * Dx) + De.dot(h * x);
    res = std::max(res, std::abs(lhs[s] - rhs));
  }
  return res;
}

}  // namespace hermflow
