#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <unsupported/Eigen/MatrixFunctions>

#include "hermflow/spectral_calc.hpp"
#include "test_support.hpp"

using namespace hermflow;
namespace ht = hermflow::testing;

namespace {

BundleData equivariant_pair(int n, Scheme sch = Scheme::spectral) {
  Mat rho = Mat::Identity(2, 2);
  rho(1, 1) = -1.0;
  return make_bundle(build_grid(n, n, cd(0.1, 1.2), 2, sch), {0, 0}, rho);
}

// K-self-adjoint field with eigenvalues near -0.8 and 0.8 at every site.
EndoField separated_field(const BundleData& B, const MetricField& K, std::mt19937_64& rng) {
  RandomFieldOptions opt;
  opt.amplitude = 0.3;
  EndoField r = random_hermitian(B, rng, opt);
  for (auto& v : r.entry(0, 0)) v -= 0.8;
  for (auto& v : r.entry(1, 1)) v += 0.8;
  return ht::k_self_adjoint(r, K);
}

Mat random_unitary(int r, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Mat A(r, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) A(i, j) = cd(nd(rng), nd(rng));
  Eigen::HouseholderQR<Mat> qr(A);
  return qr.householderQ() * Mat::Identity(r, r);
}

}  // namespace

TEST(SpectralCalc, PsiValues) {
  EXPECT_DOUBLE_EQ(psi(0.3, 0.3), 0.5);
  EXPECT_DOUBLE_EQ(psi(-7.0, -7.0), 0.5);
  EXPECT_NEAR(psi(0.0, 1.0), std::numbers::e - 2.0, 1e-15);
  // Continuity across the series branch.
  for (double h : {0.99e-4, 1.01e-4, -0.99e-4, -1.01e-4}) {
    const double x = h;
    const double closed = (std::exp(x) - x - 1) / (x * x);
    EXPECT_NEAR(psi(0.0, h), closed, 1e-7);
  }
  EXPECT_NEAR(psi(0.0, 1e-4), psi(0.0, 1.0000001e-4), 1e-11);
}

TEST(SpectralCalc, PsiScaledMonotoneLimit) {
  double prev = 0;
  for (double l : {1.0, 10.0, 100.0, 1000.0}) {
    const double v = psi_scaled(l, 1.0, 0.0);
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_NEAR(prev, 1.0, 2e-3);
  EXPECT_NEAR(psi_scaled(1e6, 2.0, 0.5), 1.0 / 1.5, 1e-5);
  // u <= v: unbounded growth.
  EXPECT_GT(psi_scaled(100.0, 0.0, 0.5), 1e15);
  EXPECT_GT(psi_scaled(1000.0, 0.2, 0.2), psi_scaled(10.0, 0.2, 0.2));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ud(-3, 3);
  for (int i = 0; i < 200; ++i) {
    double u = ud(rng), v = ud(rng);
    if (u < v) std::swap(u, v);
    double last = 0;
    for (double l = 0.5; l < 200; l *= 1.3) {
      const double val = psi_scaled(l, u, v);
      EXPECT_GE(val, last * (1 - 1e-12));
      last = val;
    }
  }
}

TEST(SpectralCalc, DiffQuotientExamples) {
  const auto d_id = diff_quotient(identity_function());
  const auto d_sq = diff_quotient(square_function());
  const auto d_c = diff_quotient(constant_function(3.0));
  for (auto [u, v] : {std::pair{0.3, -1.2}, std::pair{2.0, 2.0}, std::pair{1.0, 1.0 + 1e-9}}) {
    EXPECT_NEAR(d_id(u, v), 1.0, 1e-12);
    EXPECT_NEAR(d_sq(u, v), u + v, 1e-10);
    EXPECT_EQ(d_c(u, v), 0.0);
  }
  const auto d_exp = diff_quotient(exp_function());
  const auto step = smoothed_step(0.1, 0.3);
  const auto d_step = diff_quotient(step);
  for (double u : {-2.0, -0.1, 0.0, 0.4, 3.0}) {
    EXPECT_NEAR(d_exp(u, u), std::exp(u), 1e-10 * std::exp(u));
    const double h = 1e-6;
    const double fd = (step(u + h) - step(u - h)) / (2 * h);
    EXPECT_NEAR(d_step(u, u), fd, 1e-8);
  }
  EXPECT_THROW(diff_quotient(ScalarFunction{[](double x) { return x; }, {}, "nodf"}), std::invalid_argument);
}

TEST(SpectralCalc, PhiOfSBasics) {
  std::mt19937_64 rng(2);
  const auto B = ht::trivial_bundle(8, 3);
  RandomFieldOptions opt;
  opt.amplitude = 1.5;
  const MetricField K = random_metric(B, rng, opt);
  const EndoField s = ht::k_self_adjoint(random_hermitian(B, rng, opt), K);
  EXPECT_LT((phi_of_s(identity_function(), s, K) - s).max_abs(), 1e-12);
  const EndoField e0 = phi_of_s(exp_function(), EndoField(3, B.grid().size()), K);
  EXPECT_LT((e0 - identity_field(3, B.grid().size())).max_abs(), 1e-13);
  const EndoField es = phi_of_s(exp_function(), s, K);
  double err = 0;
  for (std::size_t x = 0; x < B.grid().size(); ++x) {
    const Eigen::MatrixXcd m = Eigen::MatrixXcd(s.at(x));
    const Eigen::MatrixXcd ref = m.exp();
    err = std::max(err, (Eigen::MatrixXcd(es.at(x)) - ref).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(err, 1e-10);
  EXPECT_LT(self_adjoint_residual(es, K), 1e-11);
}

TEST(SpectralCalc, PhiOfSIsFrameIndependentOnDegenerateSpectra) {
  std::mt19937_64 rng(3);
  const auto g = build_grid(8, 8, cd(0, 1), 1, Scheme::spectral);
  EndoField s(3, g.size());
  EndoField want(3, g.size());
  const auto step = smoothed_step(1.5, 0.2);
  for (std::size_t x = 0; x < g.size(); ++x) {
    const Mat U = random_unitary(3, rng);
    RVec d(3);
    d << 1.0, 1.0, 2.0;
    s.set(x, U * d.cast<cd>().asDiagonal() * U.adjoint());
    RVec p(3);
    p << step(1.0), step(1.0), step(2.0);
    want.set(x, U * p.cast<cd>().asDiagonal() * U.adjoint());
  }
  const MetricField K = identity_field(3, g.size()).as<MetricTag>();
  EXPECT_LT((phi_of_s(step, s, K) - want).max_abs(), 1e-12);
  // Near-degenerate cluster: Phi_of_s uses the cluster value, so a perturbation below the
  // merge gap gives the same transform as the exactly degenerate field.
  EndoField A(3, g.size());
  std::normal_distribution<double> nd;
  for (std::size_t x = 0; x < g.size(); ++x)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) A(a, b, x) = cd(nd(rng), nd(rng));
  EndoField s2 = s;
  for (std::size_t x = 0; x < g.size(); ++x) {
    const KFrame fr = k_eigen_flat(s.at(x));
    RVec d = fr.lambda;
    d(0) -= 2e-8;
    s2.set(x, fr.E * d.cast<cd>().asDiagonal() * fr.E_inv);
  }
  const auto dstep = diff_quotient(step);
  EXPECT_LT((Phi_of_s(dstep, s, A, K) - Phi_of_s(dstep, s2, A, K)).max_abs(), 1e-7);
}

TEST(SpectralCalc, PhiOfSExamples) {
  std::mt19937_64 rng(4);
  const auto B = ht::trivial_bundle(8, 2);
  const std::size_t n = B.grid().size();
  EndoField s(2, n), A(2, n);
  for (std::size_t x = 0; x < n; ++x) {
    s(0, 0, x) = -0.5;
    s(1, 1, x) = 1.5;
    A(1, 0, x) = 1.0;  // maps the lambda_0 eigenvector to the lambda_1 eigenvector
  }
  const MetricField K = flat_reference_metric(B);
  const BivariateFunction Phi{[](double u, double v) { return 3 * u + v * v; }, "test"};
  const EndoField T = Phi_of_s(Phi, s, A, K);
  EXPECT_NEAR(std::abs(T(1, 0, 3) - cd(3 * -0.5 + 1.5 * 1.5)), 0, 1e-14);
  EXPECT_NEAR(std::abs(T(0, 1, 3)), 0, 1e-14);
  EXPECT_LT((Phi_of_s(constant_bivariate(1.0), s, A, K) - A).max_abs(), 1e-14);

  // Commuting A: Phi = dphi acts as phi'(s) A.
  RandomFieldOptions opt;
  const MetricField Kr = random_metric(B, rng, opt);
  const EndoField sr = ht::k_self_adjoint(random_hermitian(B, rng, opt), Kr);
  const EndoField Ac = phi_of_s(square_function(), sr, Kr);
  const EndoField lhs = Phi_of_s(diff_quotient(exp_function()), sr, Ac, Kr);
  const EndoField rhs = multiply(phi_of_s(exp_function(), sr, Kr), Ac);
  EXPECT_LT((lhs - rhs).max_abs(), 1e-10);
  // Linearity in A.
  const EndoField B2 = phi_of_s(exp_function(), sr, Kr);
  const auto dq = diff_quotient(smoothed_step(0.0, 0.4));
  const EndoField lin = Phi_of_s(dq, sr, 2.0 * A + B2, Kr);
  const EndoField sep = 2.0 * Phi_of_s(dq, sr, A, Kr) + Phi_of_s(dq, sr, B2, Kr);
  EXPECT_LT((lin - sep).max_abs(), 1e-12);
}

TEST(SpectralCalc, DexpChainRule) {
  std::mt19937_64 rng(5);
  const auto B = equivariant_pair(32);
  RandomFieldOptions opt;
  opt.amplitude = 0.5;
  const MetricField K = random_metric(B, rng, opt);
  const EndoField s = ht::k_self_adjoint(random_hermitian(B, rng, opt), K);
  const EndoField lhs = dbar_end(phi_of_s(exp_function(), s, K), B);
  const EndoField rhs = Phi_of_s(diff_quotient(exp_function()), s, dbar_end(s, B), K);
  EXPECT_LT((lhs - rhs).max_abs(), 1e-8);
}

TEST(SpectralCalc, ChainRuleSpectral) {
  std::mt19937_64 rng(6);
  const auto B = equivariant_pair(32);
  for (int trial = 0; trial < 5; ++trial) {
    const MetricField K = random_metric(B, rng);
    const EndoField s = separated_field(B, K, rng);
    EXPECT_LT(equivariance_residual(s, B), 1e-12);
    for (const auto& phi : {exp_function(), square_function(), smoothed_step(0.0, 0.4)}) {
      const auto r = chain_rule_residual(phi, s, K, B);
      EXPECT_LT(r.absolute, 1e-7) << phi.tag;
    }
  }
}

TEST(SpectralCalc, ChainRuleFd2Order) {
  auto residual = [](int n) {
    std::mt19937_64 rng(7);
    const auto B = equivariant_pair(n, Scheme::fd2);
    const MetricField K = flat_reference_metric(B);
    const EndoField s = separated_field(B, K, rng);
    return chain_rule_residual(exp_function(), s, K, B).absolute;
  };
  const double order = std::log2(residual(32) / residual(64));
  EXPECT_GT(order, 1.9);
}

TEST(SpectralCalc, TraceRule) {
  std::mt19937_64 rng(8);
  const auto B = equivariant_pair(16);
  const MetricField K = random_metric(B, rng);
  const EndoField s = separated_field(B, K, rng);
  const EndoField A = dbar_end(s, B);
  const auto dphi = diff_quotient(exp_function());
  const BivariateFunction other{[](double u, double v) {
                                  return std::exp(0.5 * (u + v)) + 4.0 * (u - v) * std::sin(u * v);
                                },
                                "other"};
  const auto t1 = trace_field(Phi_of_s(dphi, s, A, K));
  const auto t2 = trace_field(Phi_of_s(other, s, A, K));
  double err = 0;
  for (std::size_t x = 0; x < t1.size(); ++x) err = std::max(err, std::abs(t1[x] - t2[x]));
  EXPECT_LT(err, 1e-10);
}

TEST(SpectralCalc, HolderBound) {
  std::mt19937_64 rng(9);
  const auto B = ht::trivial_bundle(8, 2);
  const OrbifoldGrid& g = B.grid();
  const MetricField K = flat_reference_metric(B);
  EXPECT_THROW(holder_norm_check(constant_bivariate(1.0), EndoField(2, g.size()), EndoField(2, g.size()), 2, 2, K, g),
               std::invalid_argument);
  RandomFieldOptions opt;
  const EndoField s0 = random_hermitian(B, rng, opt);
  const auto zero = holder_norm_check(diff_quotient(exp_function()), s0, EndoField(2, g.size()), 1, 2, K, g);
  EXPECT_EQ(zero.lhs, 0.0);
  EXPECT_EQ(zero.rhs, 0.0);
  int violations = 0;
  std::uniform_real_distribution<double> amp(0.05, 3.0);
  for (int i = 0; i < 1000; ++i) {
    opt.amplitude = amp(rng);
    const EndoField s = random_hermitian(B, rng, opt);
    EndoField A = random_hermitian(B, rng, opt);
    A.set_degree(FormDegree::zero_one);
    const auto phi = i % 2 ? psi_function() : diff_quotient(smoothed_step(0.0, 0.5));
    const auto h = holder_norm_check(phi, s, A, 1, 2, K, g);
    if (h.lhs > h.rhs * (1 + 1e-12)) ++violations;
  }
  EXPECT_EQ(violations, 0);
}
