#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hermflow/grid.hpp"

using namespace hermflow;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<cd> mode(const OrbifoldGrid& g, int p, int q) {
  std::vector<cd> f(g.size());
  for (std::size_t s = 0; s < g.size(); ++s) f[s] = std::polar(1.0, 2 * kPi * (p * g.x1(s) + q * g.x2(s)));
  return f;
}

double max_diff(std::span<const cd> a, std::span<const cd> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Coincident-point heat kernel of d/dt - (1/4) Laplacian from the image sum over lattice translates.
double heat_kernel_images(cd tau, double t) {
  double sum = 0;
  for (int a = -30; a <= 30; ++a)
    for (int b = -30; b <= 30; ++b) sum += std::exp(-std::norm(cd(a) + double(b) * tau) / t);
  return sum / (kPi * t);
}

}  // namespace

TEST(Grid, RejectsInvalidParameters) {
  EXPECT_THROW(build_grid(4, 16, cd(0, 1), 1, Scheme::spectral), std::invalid_argument);
  EXPECT_THROW(build_grid(16, 16, cd(0.3, -1), 1, Scheme::spectral), std::invalid_argument);
  EXPECT_THROW(build_grid(16, 16, cd(0, 1), 3, Scheme::spectral), std::invalid_argument);
  EXPECT_THROW(build_grid(15, 16, cd(0, 1), 2, Scheme::spectral), std::invalid_argument);
  EXPECT_THROW(build_grid(16, 16, cd(0.2, 1), 4, Scheme::spectral), std::invalid_argument);
  EXPECT_NO_THROW(build_grid(16, 16, cd(0, 1), 4, Scheme::spectral));
  EXPECT_THROW(parse_scheme("fd3"), std::invalid_argument);
}

TEST(Grid, VolumeAndQuadrature) {
  const auto g = build_grid(16, 24, cd(0.3, 1.7), 1, Scheme::spectral);
  EXPECT_DOUBLE_EQ(g.volume(), 1.7);
  std::vector<cd> one(g.size(), 1.0);
  EXPECT_NEAR(std::abs(integrate(g, one) - cd(1.7)), 0, 1e-13);
  EXPECT_NEAR(std::abs(integrate(g, mode(g, 2, -3))), 0, 1e-13);
}

TEST(Grid, SpectralDerivativesOfFourierModes) {
  const cd tau(0.3, 1.2);
  const auto g = build_grid(32, 32, tau, 1, Scheme::spectral);
  for (auto [p, q] : {std::pair{1, 0}, std::pair{0, 1}, std::pair{3, -2}, std::pair{-5, 7}}) {
    const auto f = mode(g, p, q);
    std::vector<cd> dz(g.size()), dzb(g.size());
    g.dz(f, 0, dz);
    g.dzbar(f, 0, dzb);
    // d/dz = -(i / 2 Im tau)(d_2 - conj(tau) d_1) on x-coordinates.
    const cd k1(0, 2 * kPi * p), k2(0, 2 * kPi * q);
    const cd cz = cd(0, -1) / (2 * tau.imag()) * (k2 - std::conj(tau) * k1);
    const cd czb = cd(0, 1) / (2 * tau.imag()) * (k2 - tau * k1);
    std::vector<cd> ez(g.size()), ezb(g.size());
    for (std::size_t s = 0; s < g.size(); ++s) {
      ez[s] = cz * f[s];
      ezb[s] = czb * f[s];
    }
    EXPECT_LT(max_diff(dz, ez), 1e-10) << p << "," << q;
    EXPECT_LT(max_diff(dzb, ezb), 1e-10) << p << "," << q;
  }
}

TEST(Grid, DzbarInCartesianCoordinates) {
  // x1 = x - (Re tau / Im tau) y and d/dzbar = (d/dx + i d/dy) / 2.
  const cd tau(0.25, 1.0);
  const auto g = build_grid(32, 32, tau, 1, Scheme::spectral);
  std::vector<cd> u(g.size()), out(g.size());
  for (std::size_t s = 0; s < g.size(); ++s) u[s] = std::cos(2 * kPi * g.x1(s));
  g.dzbar(u, 0, out);
  const cd dx1_dzbar = 0.5 * (1.0 - cd(0, 1) * tau.real() / tau.imag());
  double err = 0;
  for (std::size_t s = 0; s < g.size(); ++s)
    err = std::max(err, std::abs(out[s] - dx1_dzbar * (-2 * kPi * std::sin(2 * kPi * g.x1(s)))));
  EXPECT_LT(err, 1e-10);
}

TEST(Grid, ChargedFieldDerivativeRespectsSeam) {
  // f = exp(2 pi i m x1 x2) g(x2) with g periodic is charge m; its x1-derivative is
  // 2 pi i m x2 f, which the Bloch-twisted transform must reproduce without seam artefacts.
  const auto g = build_grid(32, 32, cd(0, 1), 1, Scheme::spectral);
  for (int m : {-2, -1, 1, 3}) {
    std::vector<cd> f(g.size()), d1(g.size()), d2(g.size());
    for (std::size_t s = 0; s < g.size(); ++s)
      f[s] = std::polar(1.0, 2 * kPi * m * g.x1(s) * g.x2(s)) * (2.0 + std::sin(2 * kPi * g.x2(s)));
    g.torus_gradient(f, m, d1, d2);
    double err = 0;
    for (std::size_t s = 0; s < g.size(); ++s)
      err = std::max(err, std::abs(d1[s] - cd(0, 2 * kPi * m * g.x2(s)) * f[s]));
    EXPECT_LT(err, 1e-9) << m;
  }
}

TEST(Grid, LaplacianAndGreenSolve) {
  const auto g = build_grid(32, 32, cd(0.4, 1.3), 1, Scheme::spectral);
  std::vector<cd> rhs(g.size());
  for (std::size_t s = 0; s < g.size(); ++s)
    rhs[s] = std::cos(2 * kPi * g.x1(s)) + 0.5 * std::sin(2 * kPi * (g.x1(s) - 2 * g.x2(s))) + 0.7;
  const auto sol = green_solve(g, rhs);
  EXPECT_NEAR(sol.removed_mean.real(), 0.7, 1e-12);
  EXPECT_LT(std::abs(integrate(g, sol.u)), 1e-12);
  const auto back = laplacian(g, sol.u);
  std::vector<cd> centred(rhs);
  for (auto& v : centred) v -= 0.7;
  EXPECT_LT(max_diff(back, centred), 1e-11);
  // Delta = -4 d/dz d/dzbar on functions.
  std::vector<cd> a(g.size()), b(g.size());
  g.dzbar(sol.u, 0, a);
  g.dz(a, 0, b);
  for (auto& v : b) v *= -4.0;
  EXPECT_LT(max_diff(b, centred), 1e-10);
}

TEST(Grid, FiniteDifferenceOrder) {
  const cd tau(0.2, 1.1);
  auto err_at = [&](int n, Scheme sch) {
    const auto g = build_grid(n, n, tau, 1, sch);
    std::vector<cd> f(g.size()), out(g.size());
    for (std::size_t s = 0; s < g.size(); ++s) f[s] = std::exp(std::sin(2 * kPi * g.x1(s)) + std::cos(2 * kPi * g.x2(s)));
    g.dzbar(f, 0, out);
    double err = 0;
    for (std::size_t s = 0; s < g.size(); ++s) {
      const double x1 = g.x1(s), x2 = g.x2(s);
      const cd d1 = 2 * kPi * std::cos(2 * kPi * x1) * f[s];
      const cd d2 = -2 * kPi * std::sin(2 * kPi * x2) * f[s];
      err = std::max(err, std::abs(out[s] - cd(0, 1) / (2 * tau.imag()) * (d2 - tau * d1)));
    }
    return err;
  };
  const double o2 = std::log2(err_at(32, Scheme::fd2) / err_at(64, Scheme::fd2));
  const double o4 = std::log2(err_at(32, Scheme::fd4) / err_at(64, Scheme::fd4));
  EXPECT_GT(o2, 1.9);
  EXPECT_GT(o4, 3.8);
  EXPECT_LT(err_at(32, Scheme::spectral), 1e-9);
}

TEST(Grid, HeatKernelMatchesImageSum) {
  for (cd tau : {cd(0, 1), cd(0.3, 1.4), cd(-0.5, 0.9)}) {
    for (double t : {0.05, 0.3, 1.0, 4.0}) {
      const double a = heat_kernel_sup(tau, t), b = heat_kernel_images(tau, t);
      EXPECT_NEAR(a / b, 1.0, 1e-10) << tau << " t=" << t;
    }
  }
  EXPECT_NEAR(heat_kernel_sup(cd(0, 2), 50.0), 0.5, 1e-8);
  EXPECT_THROW(heat_kernel_sup(cd(0, 1), 0.0), std::invalid_argument);
}

TEST(Grid, LambdaContraction) {
  const auto g = build_grid(8, 8, cd(0, 1), 1, Scheme::spectral);
  ScalarField F{std::vector<cd>(g.size(), cd(3.0, 1.0)), FormDegree::one_one, 0};
  const auto L = lambda_contract(F);
  EXPECT_EQ(L.degree, FormDegree::zero);
  EXPECT_NEAR(std::abs(L.values[5] - cd(0, -2) * cd(3.0, 1.0)), 0, 1e-15);
  ScalarField f{std::vector<cd>(g.size()), FormDegree::zero, 0};
  EXPECT_THROW(lambda_contract(f), std::invalid_argument);
}

TEST(Grid, RotationAndProjection) {
  const auto g2 = build_grid(16, 16, cd(0.3, 1.1), 2, Scheme::spectral);
  auto f = mode(g2, 1, 2);
  for (std::size_t s = 0; s < g2.size(); ++s) f[s] += 0.3 * std::cos(2 * kPi * g2.x2(s));
  const auto r = g2.rotate(f, 0, 1);
  // f(-x) for a single mode is its conjugate mode.
  EXPECT_NEAR(std::abs(r[g2.site(3, 5)] - f[g2.site(-3, -5)]), 0, 1e-14);
  for (int w : {0, 1}) {
    const auto P = group_project(g2, f, 0, w);
    EXPECT_LT(equivariance_residual(g2, P, 0, w), 1e-13) << w;
  }
  // Charged fields: projecting a charge-1 Gaussian mode keeps the seam law.
  std::vector<cd> h(g2.size());
  for (std::size_t s = 0; s < g2.size(); ++s) {
    cd acc = 0;
    for (int n = -5; n <= 5; ++n) {
      const double t = g2.x2(s) + n;
      acc += std::exp(-2 * kPi * (t - 0.2) * (t - 0.2)) * std::polar(1.0, 2 * kPi * t * g2.x1(s));
    }
    h[s] = acc;
  }
  const auto Ph = group_project(g2, h, 1, 0);
  EXPECT_LT(equivariance_residual(g2, Ph, 1, 0), 1e-13);
  EXPECT_GT(equivariance_residual(g2, h, 1, 0), 1e-3);

  const auto g4 = build_grid(16, 16, cd(0, 1), 4, Scheme::spectral);
  const auto f4 = mode(g4, 1, 2);
  for (int w : {-1, 0, 1}) EXPECT_LT(equivariance_residual(g4, group_project(g4, f4, 0, w), 0, w), 1e-13);
  EXPECT_THROW(g4.rotate(f4, 1, 1), std::invalid_argument);
}

TEST(Grid, RotationCommutesWithDerivativeWeights) {
  // d/dzbar of an invariant function has rotation weight +1 (dzbar -> conj(zeta) dzbar).
  const auto g = build_grid(16, 16, cd(0, 1), 4, Scheme::spectral);
  auto f = group_project(g, mode(g, 1, 2), 0, 0);
  std::vector<cd> out(g.size());
  g.dzbar(f, 0, out);
  EXPECT_LT(equivariance_residual(g, out, 0, rotation_weight(FormDegree::zero_one)), 1e-11);
  g.dz(f, 0, out);
  EXPECT_LT(equivariance_residual(g, out, 0, rotation_weight(FormDegree::one_zero)), 1e-11);
}
