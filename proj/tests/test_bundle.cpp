#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "hermflow/bundle.hpp"
#include "test_support.hpp"

using namespace hermflow;
using hermflow::testing::trivial_bundle;

namespace {

Mat diag2(cd a, cd b) {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

}  // namespace

TEST(Bundle, ConstructionValidation) {
  const auto g = build_grid(16, 16, cd(0, 1), 2, Scheme::spectral);
  EXPECT_THROW(make_bundle(g, {}), std::invalid_argument);
  EXPECT_THROW(make_bundle(g, {0, 0, 0, 0, 0}), std::invalid_argument);
  Mat notunitary = diag2(2.0, 1.0);
  EXPECT_THROW(make_bundle(g, {0, 0}, notunitary), std::invalid_argument);
  Mat order4 = diag2(cd(0, 1), 1.0);  // rho^2 != I for k = 2
  EXPECT_THROW(make_bundle(g, {0, 0}, order4), std::invalid_argument);
  Mat mixing = Mat::Zero(2, 2);
  mixing(0, 1) = mixing(1, 0) = 1.0;
  EXPECT_THROW(make_bundle(g, {1, 0}, mixing), std::invalid_argument);
  EXPECT_NO_THROW(make_bundle(g, {0, 0}, mixing));
  const auto g4 = build_grid(16, 16, cd(0, 1), 4, Scheme::spectral);
  EXPECT_THROW(make_bundle(g4, {1}), std::invalid_argument);
  EXPECT_THROW(make_bundle(g, {2, 0}, std::nullopt, {{1, 0, 0.5}}), std::invalid_argument);
  EXPECT_THROW(make_bundle(g, {1, 0}, std::nullopt, {{2, 0, 0.5}}), std::invalid_argument);
  // The theta factor is even, so a (0,1)-form entry needs an odd isotropy sign on k = 2.
  EXPECT_THROW(make_bundle(g, {1, 0}, std::nullopt, {{1, 0, 0.5}}), std::invalid_argument);
  EXPECT_NO_THROW(make_bundle(g, {1, 0}, diag2(1.0, -1.0), {{1, 0, 0.5}}));
}

TEST(Bundle, DegreeSlopeAndSeams) {
  const auto g = build_grid(16, 16, cd(0.2, 1.5), 1, Scheme::spectral);
  const auto B = make_bundle(g, {2, -1, 0});
  EXPECT_EQ(B.degree(), 1);
  EXPECT_DOUBLE_EQ(B.slope(), 1.0 / 3.0);
  EXPECT_EQ(B.charge(0, 1), 3);
  EXPECT_LT(B.cocycle_residual(), 1e-14);
  const Mat S = B.seam_1(0.25);
  EXPECT_NEAR(std::abs(S(0, 0) - std::polar(1.0, std::numbers::pi)), 0, 1e-14);
}

TEST(Bundle, ThetaSectionsAreHolomorphic) {
  const auto g = build_grid(32, 32, cd(0.3, 1.1), 1, Scheme::spectral);
  for (int d : {1, 2, 3}) {
    for (int r = 0; r < d; ++r) {
      const auto th = theta_section(g, d, r);
      const auto db = apply_dbar(g, th);
      double m = 0, scale = 0;
      for (std::size_t s = 0; s < g.size(); ++s) {
        m = std::max(m, std::abs(db.values[s]));
        scale = std::max(scale, std::abs(th.values[s]));
      }
      EXPECT_LT(m / scale, 1e-9) << d << "/" << r;
    }
  }
}

TEST(Bundle, ThetaSectionSeamLaw) {
  // Evaluate the defining series off-grid at (x1 + 1, x2) and compare with the phase e^{2 pi i d x2}.
  const cd tau(0.3, 1.1);
  const int d = 2;
  auto theta = [&](double x1, double x2) {
    cd sum = 0;
    for (int n = -40; n <= 40; n += d) {
      const double y = n + d * x2;
      sum += std::exp(cd(0, std::numbers::pi) * tau * (y * y / d)) * std::polar(1.0, 2 * std::numbers::pi * n * x1);
    }
    return std::polar(1.0, 2 * std::numbers::pi * d * x1 * x2) * sum;
  };
  for (double x2 : {0.1, 0.45, 0.8}) {
    const cd a = theta(1.3, x2), b = theta(0.3, x2);
    EXPECT_NEAR(std::abs(a - std::polar(1.0, 2 * std::numbers::pi * d * x2) * b), 0, 1e-12);
    EXPECT_NEAR(std::abs(theta(0.3, x2 + 1.0) - b), 0, 1e-12);
  }
  const auto g = build_grid(16, 16, tau, 1, Scheme::spectral);
  const auto th = theta_section(g, d, 0);
  EXPECT_NEAR(std::abs(th.values[g.site(3, 5)] - theta(3.0 / 16, 5.0 / 16)), 0, 1e-12);
}

TEST(Bundle, BackgroundDeformationIsEquivariantAndNormalized) {
  const auto g = build_grid(16, 16, cd(0, 1), 2, Scheme::spectral);
  const auto B = make_bundle(g, {1, 0}, diag2(1.0, -1.0), {{1, 0, 0.5}});
  ASSERT_TRUE(B.background_a().has_value());
  const EndoField& a = *B.background_a();
  EXPECT_EQ(a.degree(), FormDegree::zero_one);
  EXPECT_LT(equivariance_residual(a, B), 1e-12);
  double l2 = 0;
  for (const auto& v : a.entry(1, 0)) l2 += std::norm(v);
  EXPECT_NEAR(l2 / g.size(), 0.25, 1e-12);
  EXPECT_EQ(a.max_abs() > 0, true);
  EXPECT_EQ(std::abs(a(0, 1, 3)), 0.0);
}

TEST(Bundle, RelateAndExponentiateRoundTrip) {
  std::mt19937_64 rng(7);
  const auto B = trivial_bundle(16, 3);
  RandomFieldOptions opt;
  opt.amplitude = 0.8;
  const MetricField K = random_metric(B, rng, opt);
  const EndoField s = hermflow::testing::k_self_adjoint(random_hermitian(B, rng, opt), K);
  EXPECT_LT(self_adjoint_residual(s, K), 1e-12);
  const MetricField H = exp_metric(K, s);
  EXPECT_LT(hermiticity_residual(H), 1e-12);
  const EndoField back = relate_metrics(H, K);
  EXPECT_LT((back - s).max_abs(), 1e-11);
  EXPECT_LT(sigma_distance(K, K), 1e-13);
  EXPECT_GT(sigma_distance(H, K), 0.0);
  EXPECT_NEAR(sigma_distance(H, K), sigma_distance(K, H), 1e-12);
}

TEST(Bundle, SigmaMatchesEigenvalueFormula) {
  // sigma(K, K e^s) = sum_i (e^{l_i} + e^{-l_i} - 2) = sum 4 sinh^2(l_i / 2).
  std::mt19937_64 rng(3);
  const auto B = trivial_bundle(8, 2);
  EndoField s = random_hermitian(B, rng);
  const MetricField K = flat_reference_metric(B);
  const auto sig = sigma_field(K, exp_metric(K, s));
  for (std::size_t x = 0; x < 10; ++x) {
    Eigen::SelfAdjointEigenSolver<Mat> es(s.at(x));
    double want = 0;
    for (int i = 0; i < 2; ++i) want += 4 * std::pow(std::sinh(es.eigenvalues()(i) / 2), 2);
    EXPECT_NEAR(sig[x], want, 1e-12);
  }
}

TEST(Bundle, RandomFieldsRespectOptions) {
  std::mt19937_64 rng(11);
  const auto g = build_grid(16, 16, cd(0, 1), 2, Scheme::spectral);
  const auto B = make_bundle(g, {1, 0}, diag2(1.0, -1.0));
  RandomFieldOptions opt;
  opt.amplitude = 0.37;
  const EndoField s = random_hermitian(B, rng, opt);
  EXPECT_LT(equivariance_residual(s, B), 1e-12);
  EXPECT_LT(std::abs(trace_integral(g, s)), 1e-13);
  EXPECT_LT(self_adjoint_residual(s, flat_reference_metric(B)), 1e-14);
  double sup = 0;
  for (std::size_t x = 0; x < g.size(); ++x) sup = std::max(sup, s.at(x).norm());
  EXPECT_NEAR(sup, 0.37, 1e-12);
  std::mt19937_64 rng2(11);
  EXPECT_EQ((random_hermitian(B, rng2, opt) - s).max_abs(), 0.0);
}

TEST(Bundle, NormsAndInnerProducts) {
  std::mt19937_64 rng(5);
  const auto B = trivial_bundle(16, 2);
  const OrbifoldGrid& g = B.grid();
  const MetricField K = random_metric(B, rng);
  const EndoField s = hermflow::testing::k_self_adjoint(random_hermitian(B, rng), K);
  const double n2 = norm(g, s, 2.0, K);
  EXPECT_NEAR(l2_inner(g, s, s, K).real(), n2 * n2, 1e-12);
  EXPECT_NEAR(l2_inner(g, s, s, K).imag(), 0.0, 1e-12);
  EXPECT_LE(norm(g, s, 1.0, K), std::sqrt(g.volume()) * n2 + 1e-12);
  EXPECT_LE(n2, std::sqrt(g.volume()) * norm(g, s, 0.0, K) + 1e-12);
  EndoField form = s;
  form.set_degree(FormDegree::zero_one);
  EXPECT_NEAR(norm(g, form, 2.0, K), std::sqrt(2.0) * n2, 1e-12);
}
