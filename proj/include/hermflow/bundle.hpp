#pragma once

// Holomorphic bundle data over an OrbifoldGrid: a direct sum of theta line
// bundles L_{d_1} + ... + L_{d_r} written in the unitary frame of the
// constant-curvature reference metric, optionally with its dbar operator
// deformed by an End(E)-valued (0,1)-form a. Also metric and endomorphism
// field utilities: H = K e^s, K-adjoints, norms, sigma.

#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hermflow/field.hpp"
#include "hermflow/grid.hpp"

namespace hermflow {

struct BackgroundEntry {
  int row = 0, col = 0;
  cd coeff = 0;
};

// Holomorphic section of L_d in the unitary frame (residue r mod d, d >= 1):
// exp(2 pi i d x1 x2) * sum_{n = r mod d} exp(pi i tau (n + d x2)^2 / d) exp(2 pi i n x1).
inline ScalarField theta_section(const OrbifoldGrid& g, int d, int r) {
  if (d < 1) throw std::invalid_argument("theta_section: degree must be positive");
  ScalarField out{std::vector<cd>(g.size()), FormDegree::zero, d};
  const double pi = std::numbers::pi;
  const cd tau = g.tau();
  const int span = int(std::ceil(10.0 * std::sqrt(double(d)))) + d + 2;
  for (std::size_t s = 0; s < g.size(); ++s) {
    const double x1 = g.x1(s), x2 = g.x2(s);
    cd sum = 0;
    for (int n = -span; n <= span; ++n) {
      if (((n - r) % d + d) % d != 0) continue;
      const double y = n + d * x2;
      sum += std::exp(cd(0, pi) * tau * (y * y / d)) * std::polar(1.0, 2 * pi * n * x1);
    }
    out.values[s] = std::polar(1.0, 2 * pi * d * x1 * x2) * sum;
  }
  return out;
}

// Smooth charge-m field sum_n f(x2 + n) exp(2 pi i (m (x2 + n) + p) x1) with a
// Gaussian profile f(t) = exp(-2 pi (t - c)^2) exp(2 pi i q t). For m = 0 this
// is replaced by a plain Fourier mode exp(2 pi i (p x1 + q x2)).
inline std::vector<cd> charged_mode(const OrbifoldGrid& g, int m, int p, int q, double c) {
  std::vector<cd> out(g.size());
  const double pi = std::numbers::pi;
  for (std::size_t s = 0; s < g.size(); ++s) {
    const double x1 = g.x1(s), x2 = g.x2(s);
    if (m == 0) {
      out[s] = std::polar(1.0, 2 * pi * (p * x1 + q * x2));
      continue;
    }
    cd sum = 0;
    for (int n = -6; n <= 6; ++n) {
      const double t = x2 + n;
      const double env = std::exp(-2 * pi * (t - c) * (t - c));
      sum += env * std::polar(1.0, 2 * pi * (q * t + (m * t + p) * x1));
    }
    out[s] = sum;
  }
  return out;
}

class BundleData {
 public:
  BundleData(OrbifoldGrid grid, std::vector<int> twist, Mat isotropy,
             std::vector<BackgroundEntry> a_entries)
      : grid_(std::move(grid)), twist_(std::move(twist)), isotropy_(std::move(isotropy)),
        a_entries_(std::move(a_entries)) {}

  const OrbifoldGrid& grid() const { return grid_; }
  int rank() const { return int(twist_.size()); }
  const std::vector<int>& twist() const { return twist_; }
  const Mat& isotropy() const { return isotropy_; }
  const std::vector<BackgroundEntry>& a_entries() const { return a_entries_; }
  const std::optional<EndoField>& background_a() const { return a_; }
  void set_background(EndoField a) { a_ = std::move(a); }

  int charge(int a, int b) const { return twist_[a] - twist_[b]; }
  int degree() const {
    int d = 0;
    for (int t : twist_) d += t;
    return d;
  }
  double slope() const { return double(degree()) / rank(); }

  // Seam phases: seam_1(x2) = diag(exp(2 pi i d_j x2)), seam_tau = identity.
  Mat seam_1(double x2) const {
    Mat m = Mat::Zero(rank(), rank());
    for (int j = 0; j < rank(); ++j) m(j, j) = std::polar(1.0, 2 * std::numbers::pi * twist_[j] * x2);
    return m;
  }
  Mat seam_tau() const { return Mat::Identity(rank(), rank()); }

  // Mismatch of the two seam compositions around the fundamental-domain corner.
  double cocycle_residual() const {
    double res = 0;
    for (double x2 : {0.0, 0.25, 0.5, 0.75}) {
      const Mat lhs = seam_1(x2 + 1.0) * seam_tau();
      const Mat rhs = seam_tau() * seam_1(x2);
      res = std::max(res, (lhs - rhs).cwiseAbs().maxCoeff());
    }
    return res;
  }

 private:
  OrbifoldGrid grid_;
  std::vector<int> twist_;
  Mat isotropy_;
  std::vector<BackgroundEntry> a_entries_;
  std::optional<EndoField> a_;
};

// ---- equivariance of End(E)-valued fields -------------------------------

// P T(x) = (1/k) sum_p zeta^(-w p) rho^(-p) T(zeta^p x) rho^p.
template <class Tag>
MatrixField<Tag> group_project(const MatrixField<Tag>& T, const BundleData& B) {
  const OrbifoldGrid& g = B.grid();
  if (g.k() == 1) return T;
  const int r = T.rank();
  const int w = rotation_weight(T.degree());
  MatrixField<Tag> out = T;
  std::vector<std::vector<cd>> rot(std::size_t(r) * r);
  Mat rho_p = Mat::Identity(r, r);
  for (int p = 1; p < g.k(); ++p) {
    rho_p = rho_p * B.isotropy();
    const Mat rho_p_inv = rho_p.adjoint();
    for (int a = 0; a < r; ++a)
      for (int b = 0; b < r; ++b) rot[a * r + b] = g.rotate(T.entry(a, b), B.charge(a, b), p);
    const cd ph = std::pow(g.zeta(), -w * p);
    for (std::size_t s = 0; s < T.sites(); ++s) {
      Mat m(r, r);
      for (int a = 0; a < r; ++a)
        for (int b = 0; b < r; ++b) m(a, b) = rot[a * r + b][s];
      out.set(s, out.at(s) + ph * (rho_p_inv * m * rho_p));
    }
  }
  out *= cd(1.0 / g.k());
  return out;
}

// max_x |T(zeta x) - zeta^w rho T(x) rho^{-1}|.
template <class Tag>
double equivariance_residual(const MatrixField<Tag>& T, const BundleData& B) {
  const OrbifoldGrid& g = B.grid();
  if (g.k() == 1) return 0.0;
  const int r = T.rank();
  const cd ph = std::pow(g.zeta(), rotation_weight(T.degree()));
  std::vector<std::vector<cd>> rot(std::size_t(r) * r);
  for (int a = 0; a < r; ++a)
    for (int b = 0; b < r; ++b) rot[a * r + b] = g.rotate(T.entry(a, b), B.charge(a, b), 1);
  const Mat& rho = B.isotropy();
  double res = 0;
  for (std::size_t s = 0; s < T.sites(); ++s) {
    Mat m(r, r);
    for (int a = 0; a < r; ++a)
      for (int b = 0; b < r; ++b) m(a, b) = rot[a * r + b][s];
    res = std::max(res, (m - ph * (rho * T.at(s) * rho.adjoint())).cwiseAbs().maxCoeff());
  }
  return res;
}

// ---- construction ------------------------------------------------------

inline BundleData make_bundle(const OrbifoldGrid& g, const std::vector<int>& twist,
                              std::optional<Mat> isotropy = std::nullopt,
                              const std::vector<BackgroundEntry>& a_entries = {}) {
  const int r = int(twist.size());
  if (r < 1 || r > kMaxRank) throw std::invalid_argument("rank must be in [1, 4]");
  Mat rho = isotropy.value_or(Mat::Identity(r, r));
  if (rho.rows() != r || rho.cols() != r) throw std::invalid_argument("isotropy must be r x r");
  if ((rho * rho.adjoint() - Mat::Identity(r, r)).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("isotropy must be unitary");
  Mat pw = Mat::Identity(r, r);
  for (int p = 0; p < g.k(); ++p) pw = pw * rho;
  if ((pw - Mat::Identity(r, r)).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("isotropy^k must be the identity");
  bool twisted = false;
  for (int a = 0; a < r; ++a) {
    if (twist[a] != 0) twisted = true;
    for (int b = 0; b < r; ++b)
      if (twist[a] != twist[b] && std::abs(rho(a, b)) > 1e-14)
        throw std::invalid_argument("isotropy must preserve the twist grading");
  }
  if (g.k() == 4 && twisted)
    throw std::invalid_argument("k = 4 is supported only for untwisted bundles");

  BundleData B(g, twist, rho, a_entries);
  if (!a_entries.empty()) {
    EndoField a(r, g.size(), FormDegree::zero_one);
    std::optional<std::vector<cd>> theta_bar;
    for (const auto& e : a_entries) {
      if (e.row < 0 || e.row >= r || e.col < 0 || e.col >= r)
        throw std::invalid_argument("background_a entry out of range");
      const int m = twist[e.row] - twist[e.col];
      auto dst = a.entry(e.row, e.col);
      if (m == 0) {
        for (auto& v : dst) v += e.coeff;
      } else if (m == -1) {
        if (!theta_bar) {
          const ScalarField th = theta_section(g, 1, 0);
          double l2 = 0;
          for (const auto& v : th.values) l2 += std::norm(v);
          const double scale = 1.0 / std::sqrt(l2 / double(g.size()));
          theta_bar.emplace(g.size());
          for (std::size_t s = 0; s < g.size(); ++s) (*theta_bar)[s] = std::conj(th.values[s]) * scale;
        }
        for (std::size_t s = 0; s < g.size(); ++s) dst[s] += e.coeff * (*theta_bar)[s];
      } else {
        std::ostringstream msg;
        msg << "background_a entry (" << e.row << "," << e.col << ") has seam charge " << m
            << "; only charges 0 and -1 are supported";
        throw std::invalid_argument(msg.str());
      }
    }
    const double res = equivariance_residual(a, B);
    if (res > 1e-9) {
      std::ostringstream msg;
      msg << "background_a is not equivariant under the isotropy (residual " << res << ")";
      throw std::invalid_argument(msg.str());
    }
    B.set_background(std::move(a));
  }
  const double cres = B.cocycle_residual();
  if (cres > 1e-12) {
    std::ostringstream msg;
    msg << "seam cocycle violated (residual " << cres << ")";
    throw std::invalid_argument(msg.str());
  }
  return B;
}

// Constant-curvature reference metric: the identity in the unitary frame.
inline MetricField flat_reference_metric(const BundleData& B) {
  return identity_field(B.rank(), B.grid().size()).as<MetricTag>();
}

// ---- metrics and endomorphisms ------------------------------------------

// s with H = K e^s, s self-adjoint for K (K-symmetrized logarithm of K^{-1} H).
inline EndoField relate_metrics(const MetricField& H, const MetricField& K) {
  EndoField s(H.rank(), H.sites());
  for (std::size_t i = 0; i < H.sites(); ++i) {
    const SqrtPair k = hermitian_sqrt(K.at(i));
    const Mat m = hermitian_part(k.inv_root * H.at(i) * k.inv_root);
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    const RVec mu = es.eigenvalues();
    if (mu.minCoeff() <= 0) throw std::domain_error("relate_metrics: K^-1 H has non-positive spectrum");
    RVec lg = mu.array().log().matrix();
    const Mat& V = es.eigenvectors();
    s.set(i, k.inv_root * V * lg.cast<cd>().asDiagonal() * V.adjoint() * k.root);
  }
  return s;
}

// K e^s for s self-adjoint with respect to K.
inline MetricField exp_metric(const MetricField& K, const EndoField& s, double t = 1.0) {
  MetricField H(K.rank(), K.sites());
  for (std::size_t i = 0; i < K.sites(); ++i) {
    const Mat k = K.at(i);
    const KFrame f = k_eigen(s.at(i), k);
    H.set(i, hermitian_part(k * apply_spectral(f, [t](double x) { return std::exp(t * x); })));
  }
  return H;
}

template <class Tag>
MatrixField<Tag> adjoint_wrt(const MatrixField<Tag>& A, const MetricField& K) {
  MatrixField<Tag> out(A.rank(), A.sites(), conjugate_degree(A.degree()));
  for (std::size_t i = 0; i < A.sites(); ++i) {
    const Mat k = K.at(i);
    out.set(i, k.inverse() * A.at(i).adjoint() * k);
  }
  return out;
}

// Pointwise |A|_K^2 including the form-norm factor.
inline std::vector<double> pointwise_norm2(const EndoField& A, const MetricField& K) {
  std::vector<double> out(A.sites());
  const double c = form_norm_factor(A.degree());
  for (std::size_t i = 0; i < A.sites(); ++i) out[i] = c * k_norm2(A.at(i), K.at(i));
  return out;
}

// L^p norm with respect to K; p <= 0 selects the sup norm.
inline double norm(const OrbifoldGrid& g, const EndoField& A, double p, const MetricField& K) {
  const auto n2 = pointwise_norm2(A, K);
  if (p <= 0 || std::isinf(p)) {
    double m = 0;
    for (double v : n2) m = std::max(m, std::sqrt(v));
    return m;
  }
  double sum = 0;
  for (double v : n2) sum += std::pow(v, p / 2.0);
  return std::pow(sum * g.volume() / double(g.size()), 1.0 / p);
}

// Integrated pairing  int c * Tr(A B^{*K})  (c = form-norm factor).
inline cd l2_inner(const OrbifoldGrid& g, const EndoField& A, const EndoField& B, const MetricField& K) {
  const double c = form_norm_factor(A.degree());
  cd sum = 0;
  for (std::size_t i = 0; i < A.sites(); ++i) {
    const Mat k = K.at(i);
    sum += (A.at(i) * k.inverse() * B.at(i).adjoint() * k).trace();
  }
  return c * sum * (g.volume() / double(g.size()));
}

inline std::vector<double> sigma_field(const MetricField& H1, const MetricField& H2) {
  std::vector<double> out(H1.sites());
  const int r = H1.rank();
  for (std::size_t i = 0; i < H1.sites(); ++i) {
    const Mat a = H1.at(i), b = H2.at(i);
    const double v = std::real((a.inverse() * b).trace() + (b.inverse() * a).trace()) - 2.0 * r;
    out[i] = std::max(v, 0.0);
  }
  return out;
}

inline double sigma_distance(const MetricField& H1, const MetricField& H2) {
  double m = 0;
  for (double v : sigma_field(H1, H2)) m = std::max(m, v);
  return m;
}

inline double hermiticity_residual(const MetricField& H) {
  double m = 0;
  for (std::size_t i = 0; i < H.sites(); ++i) {
    const Mat h = H.at(i);
    m = std::max(m, (h - h.adjoint()).cwiseAbs().maxCoeff());
  }
  return m;
}

// max_x |s - s^{*K}|.
inline double self_adjoint_residual(const EndoField& s, const MetricField& K) {
  double m = 0;
  for (std::size_t i = 0; i < s.sites(); ++i) {
    const Mat k = K.at(i);
    const Mat v = s.at(i);
    m = std::max(m, (v - k.inverse() * v.adjoint() * k).cwiseAbs().maxCoeff());
  }
  return m;
}

inline cd trace_integral(const OrbifoldGrid& g, const EndoField& s) {
  return integrate(g, trace_field(s));
}

// ---- random fields -------------------------------------------------------

struct RandomFieldOptions {
  double amplitude = 0.1;  // sup over sites of the Frobenius norm
  int cutoff = 2;          // Fourier / Gaussian-profile mode cutoff
  bool trace_free = true;  // remove the integrated trace
  bool equivariant = true; // project onto Z_k-invariant fields
};

// Smooth random Hermitian endomorphism field (self-adjoint for the reference metric).
inline EndoField random_hermitian(const BundleData& B, std::mt19937_64& rng,
                                  const RandomFieldOptions& opt = {}) {
  const OrbifoldGrid& g = B.grid();
  const int r = B.rank();
  std::normal_distribution<double> nd(0.0, 1.0);
  EndoField s(r, g.size());
  const int M = opt.cutoff;
  for (int a = 0; a < r; ++a) {
    for (int b = a; b < r; ++b) {
      const int m = B.charge(a, b);
      std::vector<cd> acc(g.size(), cd(0));
      auto add = [&](const std::vector<cd>& mode, double weight) {
        const cd c(nd(rng) * weight, nd(rng) * weight);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += c * mode[i];
      };
      if (m == 0) {
        for (int p = -M; p <= M; ++p)
          for (int q = -M; q <= M; ++q)
            add(charged_mode(g, 0, p, q, 0.0), 1.0 / (1.0 + p * p + q * q));
      } else {
        for (int p = 0; p < std::abs(m); ++p)
          for (int q = -M; q <= M; ++q)
            for (double c : {0.0, 0.5})
              add(charged_mode(g, m, p, q, c), 1.0 / (1.0 + q * q));
      }
      auto dst = s.entry(a, b);
      if (a == b) {
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] = acc[i].real();
      } else {
        auto mir = s.entry(b, a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          dst[i] = acc[i];
          mir[i] = std::conj(acc[i]);
        }
      }
    }
  }
  if (opt.equivariant && g.k() > 1) s = group_project(s, B);
  if (opt.trace_free) {
    const cd mean = trace_integral(g, s) / (double(r) * g.volume());
    for (int a = 0; a < r; ++a)
      for (auto& v : s.entry(a, a)) v -= mean.real();
  }
  double sup = 0;
  for (std::size_t i = 0; i < g.size(); ++i) sup = std::max(sup, s.at(i).norm());
  if (sup > 0) s *= cd(opt.amplitude / sup);
  return s;
}

// Random metric K0 * exp(s) with s from random_hermitian.
inline MetricField random_metric(const BundleData& B, std::mt19937_64& rng,
                                 const RandomFieldOptions& opt = {}) {
  return exp_metric(flat_reference_metric(B), random_hermitian(B, rng, opt));
}

}  // namespace hermflow
