#pragma once

// Discretized flat torus C/(Z + tau Z) with an optional cyclic rotation
// action, Fourier-symbol derivatives for (possibly seam-twisted) fields,
// Lambda contraction, quadrature, Green solves and heat-kernel bounds.
//
// Conventions: coordinates z = x1 + tau*x2 with (x1, x2) in [0,1)^2,
// omega = dx^dy so volume = Im tau, Lambda(F dz^dzbar) = -2i F,
// |dz|^2 = |dzbar|^2 = 2. A field of seam charge m obeys
//   f(x1 + 1, x2) = exp(2 pi i m x2) f(x1, x2),   f(x1, x2 + 1) = f(x1, x2),
// which is the unitary-gauge description of a section of a degree-m
// line bundle with the constant-curvature reference metric.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hermflow/fft.hpp"

namespace hermflow {

enum class Scheme { spectral, fd2, fd4 };
enum class FormDegree { zero, one_zero, zero_one, one_one };

inline Scheme parse_scheme(const std::string& s) {
  if (s == "spectral") return Scheme::spectral;
  if (s == "fd2") return Scheme::fd2;
  if (s == "fd4") return Scheme::fd4;
  throw std::invalid_argument("unknown derivative scheme '" + s + "'");
}

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::spectral: return "spectral";
    case Scheme::fd2: return "fd2";
    case Scheme::fd4: return "fd4";
  }
  return "?";
}

// Exponent w in f(zeta x) = zeta^w f(x) for an invariant form component.
inline int rotation_weight(FormDegree d) {
  switch (d) {
    case FormDegree::one_zero: return -1;
    case FormDegree::zero_one: return 1;
    default: return 0;
  }
}

// Factor c with |form|^2 = c * |coefficient|^2.
inline double form_norm_factor(FormDegree d) {
  switch (d) {
    case FormDegree::one_zero:
    case FormDegree::zero_one: return 2.0;
    case FormDegree::one_one: return 4.0;
    default: return 1.0;
  }
}

inline FormDegree conjugate_degree(FormDegree d) {
  if (d == FormDegree::one_zero) return FormDegree::zero_one;
  if (d == FormDegree::zero_one) return FormDegree::one_zero;
  return d;
}

struct ScalarField {
  std::vector<cd> values;
  FormDegree degree = FormDegree::zero;
  int charge = 0;
};

class OrbifoldGrid {
 public:
  OrbifoldGrid(int n1, int n2, cd tau, int k, Scheme scheme)
      : n1_(n1), n2_(n2), tau_(tau), k_(k), scheme_(scheme) {
    if (n1 < 8 || n2 < 8) throw std::invalid_argument("grid sizes must be >= 8");
    if (tau.imag() <= 0) throw std::invalid_argument("Im tau must be positive");
    if (k != 1 && k != 2 && k != 4)
      throw std::invalid_argument("orbifold order k must be 1, 2 or 4");
    if (k == 2 && (n1 % 2 != 0 || n2 % 2 != 0))
      throw std::invalid_argument("k = 2 requires even grid sizes");
    if (k == 4) {
      if (n1 != n2) throw std::invalid_argument("k = 4 requires n1 = n2");
      if (std::abs(tau - cd(0, 1)) > 1e-14) throw std::invalid_argument("k = 4 requires tau = i");
    }
    plans_ = std::make_shared<const FftPlans>(n1, n2);
    sym1_ = make_symbols(n1);
    sym2_ = make_symbols(n2);
    phase_tables_.resize(2 * kCachedCharge + 1);
    for (int m = -kCachedCharge; m <= kCachedCharge; ++m)
      phase_tables_[m + kCachedCharge] = make_phase_table(m);
  }

  int n1() const { return n1_; }
  int n2() const { return n2_; }
  std::size_t size() const { return static_cast<std::size_t>(n1_) * n2_; }
  cd tau() const { return tau_; }
  int k() const { return k_; }
  Scheme scheme() const { return scheme_; }
  double volume() const { return tau_.imag(); }
  double x1(std::size_t site) const { return double(site % n1_) / n1_; }
  double x2(std::size_t site) const { return double(site / n1_) / n2_; }
  std::size_t site(int i, int j) const {
    return static_cast<std::size_t>(((j % n2_) + n2_) % n2_) * n1_ + ((i % n1_) + n1_) % n1_;
  }

  // Derivatives along the torus coordinates x1, x2 of a charge-m field.
  void torus_gradient(std::span<const cd> f, int charge, std::span<cd> d1,
                      std::span<cd> d2) const {
    const std::size_t n = size();
    const double two_pi = 2.0 * std::numbers::pi;
    const std::vector<cd>* table = charge == 0 ? nullptr : phase_table(charge);
    std::vector<cd> own;
    if (charge != 0 && table == nullptr) {
      own = make_phase_table(charge);
      table = &own;
    }
    if (charge == 0) {
      std::copy(f.begin(), f.end(), d1.begin());
    } else {
      for (std::size_t s = 0; s < n; ++s) d1[s] = f[s] * std::conj((*table)[s]);
    }
    plans_->rows(d1.data(), true);
    for (int j = 0; j < n2_; ++j) {
      const double theta = two_pi * charge * double(j) / n2_;
      for (int i = 0; i < n1_; ++i) {
        const double mult = (2 * i == n1_) ? 0.0 : sym1_[i] + theta;
        d1[std::size_t(j) * n1_ + i] *= cd(0, mult / n1_);
      }
    }
    plans_->rows(d1.data(), false);
    if (charge != 0)
      for (std::size_t s = 0; s < n; ++s) d1[s] *= (*table)[s];

    std::copy(f.begin(), f.end(), d2.begin());
    plans_->cols(d2.data(), true);
    for (int j = 0; j < n2_; ++j) {
      const cd mult(0, (2 * j == n2_) ? 0.0 : sym2_[j] / n2_);
      for (int i = 0; i < n1_; ++i) d2[std::size_t(j) * n1_ + i] *= mult;
    }
    plans_->cols(d2.data(), false);
  }

  // Covariant d/dz and d/dzbar of a charge-m field (reference connection of
  // the twist included), written into out.
  void dz(std::span<const cd> f, int charge, std::span<cd> out) const {
    std::vector<cd> d1(size()), d2(size());
    torus_gradient(f, charge, d1, d2);
    const cd c = cd(0, -1) / (2.0 * tau_.imag());
    const cd tb = std::conj(tau_);
    for (std::size_t s = 0; s < size(); ++s)
      out[s] = c * (d2[s] - tb * d1[s]) - landau(charge, s) * f[s];
  }

  void dzbar(std::span<const cd> f, int charge, std::span<cd> out) const {
    std::vector<cd> d1(size()), d2(size());
    torus_gradient(f, charge, d1, d2);
    const cd c = cd(0, 1) / (2.0 * tau_.imag());
    for (std::size_t s = 0; s < size(); ++s)
      out[s] = c * (d2[s] - tau_ * d1[s]) + landau(charge, s) * f[s];
  }

  // Coefficient of the reference (0,1) connection on a charge-m field.
  double landau(int charge, std::size_t s) const {
    return charge == 0 ? 0.0 : std::numbers::pi * charge * x1(s) / tau_.imag();
  }

  // Symbol of Delta = dbar* dbar + d* d on periodic fields for mode (i, j).
  double laplace_symbol(int i, int j) const {
    const double s1 = (2 * i == n1_) ? 0.0 : sym1_[i];
    const double s2 = (2 * j == n2_) ? 0.0 : sym2_[j];
    const double sy = (s2 - tau_.real() * s1) / tau_.imag();
    return s1 * s1 + sy * sy;
  }

  // Largest Laplace symbol on the grid (stiffness estimate).
  double max_laplace_symbol() const {
    double m = 0;
    for (int j = 0; j < n2_; ++j)
      for (int i = 0; i < n1_; ++i) m = std::max(m, laplace_symbol(i, j));
    return m;
  }

  // Bound on Delta for charge-m fields: the Bloch shift widens the x1 multipliers by
  // 2 pi |m| (n2 - 1) / n2 and the Landau term adds pi |m| / Im tau to |d/dz|.
  double max_laplace_symbol(int charge) const {
    double s1 = 0, s2 = 0;
    for (int i = 0; i < n1_; ++i)
      if (2 * i != n1_) s1 = std::max(s1, std::abs(sym1_[i]));
    for (int j = 0; j < n2_; ++j)
      if (2 * j != n2_) s2 = std::max(s2, std::abs(sym2_[j]));
    if (charge == 0) return max_laplace_symbol();
    s1 += 2.0 * std::numbers::pi * std::abs(charge) * double(n2_ - 1) / n2_;
    const double sy = (s2 + std::abs(tau_.real()) * s1) / tau_.imag();
    const double dz = 0.5 * std::sqrt(s1 * s1 + sy * sy) + std::numbers::pi * std::abs(charge) / tau_.imag();
    return 4.0 * dz * dz;
  }

  // 2-D forward / backward transforms of periodic data.
  void fft2(std::span<cd> data, bool forward) const {
    plans_->rows(data.data(), forward);
    plans_->cols(data.data(), forward);
  }

  // Values of f(zeta^power x) at every site, with seam phases for charge m.
  std::vector<cd> rotate(std::span<const cd> f, int charge, int power) const {
    power = ((power % k_) + k_) % k_;
    std::vector<cd> cur(f.begin(), f.end());
    for (int p = 0; p < power; ++p) cur = rotate_once(cur, charge);
    return cur;
  }

  cd zeta() const { return std::polar(1.0, 2.0 * std::numbers::pi / k_); }

 private:
  static constexpr int kCachedCharge = 8;

  std::vector<double> make_symbols(int n) const {
    std::vector<double> sym(n);
    const double two_pi = 2.0 * std::numbers::pi;
    for (int idx = 0; idx < n; ++idx) {
      const int kk = idx <= n / 2 - (n % 2 == 0 ? 1 : 0) ? idx : idx - n;
      const double kappa = two_pi * kk / n;
      switch (scheme_) {
        case Scheme::spectral: sym[idx] = two_pi * kk; break;
        case Scheme::fd2: sym[idx] = n * std::sin(kappa); break;
        case Scheme::fd4: sym[idx] = n * (8.0 * std::sin(kappa) - std::sin(2 * kappa)) / 6.0; break;
      }
    }
    return sym;
  }

  std::vector<cd> make_phase_table(int charge) const {
    std::vector<cd> t(size());
    for (std::size_t s = 0; s < size(); ++s)
      t[s] = std::polar(1.0, 2.0 * std::numbers::pi * charge * x2(s) * x1(s));
    return t;
  }

  const std::vector<cd>* phase_table(int charge) const {
    if (std::abs(charge) > kCachedCharge) return nullptr;
    return &phase_tables_[charge + kCachedCharge];
  }

  std::vector<cd> rotate_once(const std::vector<cd>& f, int charge) const {
    std::vector<cd> out(size());
    for (int j = 0; j < n2_; ++j) {
      for (int i = 0; i < n1_; ++i) {
        const std::size_t dst = std::size_t(j) * n1_ + i;
        if (k_ == 2) {
          // f(-x1, -x2) through the x1 seam when -x1 leaves [0, 1).
          const std::size_t src = site(-i, -j);
          cd ph = 1.0;
          if (i != 0 && charge != 0)
            ph = std::polar(1.0, 2.0 * std::numbers::pi * charge * double(j) / n2_);
          out[dst] = ph * f[src];
        } else if (k_ == 4) {
          if (charge != 0) throw std::invalid_argument("k = 4 rotation needs untwisted fields");
          // z -> i z on the square torus: (x1, x2) -> (-x2, x1).
          out[dst] = f[site(-j, i)];
        } else {
          out[dst] = f[dst];
        }
      }
    }
    return out;
  }

  int n1_, n2_;
  cd tau_;
  int k_;
  Scheme scheme_;
  std::shared_ptr<const FftPlans> plans_;
  std::vector<double> sym1_, sym2_;
  std::vector<std::vector<cd>> phase_tables_;
};

inline OrbifoldGrid build_grid(int n1, int n2, cd tau, int k, Scheme scheme) {
  return OrbifoldGrid(n1, n2, tau, k, scheme);
}

inline ScalarField apply_dbar(const OrbifoldGrid& g, const ScalarField& f) {
  ScalarField out{std::vector<cd>(g.size()), FormDegree::zero_one, f.charge};
  if (f.degree == FormDegree::zero) {
    g.dzbar(f.values, f.charge, out.values);
  } else if (f.degree == FormDegree::one_zero) {
    g.dzbar(f.values, f.charge, out.values);
    for (auto& v : out.values) v = -v;  // dbar(c dz) = -(dzbar c) dz^dzbar
    out.degree = FormDegree::one_one;
  } else {
    throw std::invalid_argument("apply_dbar: needs a 0-form or (1,0)-form");
  }
  return out;
}

inline ScalarField apply_partial(const OrbifoldGrid& g, const ScalarField& f) {
  ScalarField out{std::vector<cd>(g.size()), FormDegree::one_zero, f.charge};
  if (f.degree == FormDegree::zero) {
    g.dz(f.values, f.charge, out.values);
  } else if (f.degree == FormDegree::zero_one) {
    g.dz(f.values, f.charge, out.values);
    out.degree = FormDegree::one_one;
  } else {
    throw std::invalid_argument("apply_partial: needs a 0-form or (0,1)-form");
  }
  return out;
}

inline ScalarField lambda_contract(const ScalarField& F) {
  if (F.degree != FormDegree::one_one)
    throw std::invalid_argument("lambda_contract: needs a (1,1)-form");
  ScalarField out{F.values, FormDegree::zero, F.charge};
  for (auto& v : out.values) v *= cd(0, -2);
  return out;
}

inline cd integrate(const OrbifoldGrid& g, std::span<const cd> f) {
  cd sum = 0;
  for (const cd& v : f) sum += v;
  return sum * (g.volume() / double(g.size()));
}

inline cd integrate(const OrbifoldGrid& g, const ScalarField& f) { return integrate(g, f.values); }

// Delta = dbar* dbar + d* d applied to a periodic scalar (symbol form).
inline std::vector<cd> laplacian(const OrbifoldGrid& g, std::span<const cd> f) {
  std::vector<cd> w(f.begin(), f.end());
  g.fft2(w, true);
  const double norm = 1.0 / double(g.size());
  for (int j = 0; j < g.n2(); ++j)
    for (int i = 0; i < g.n1(); ++i) w[std::size_t(j) * g.n1() + i] *= g.laplace_symbol(i, j) * norm;
  g.fft2(w, false);
  return w;
}

struct GreenSolution {
  std::vector<cd> u;
  cd removed_mean = 0;  // mean of rhs projected out before solving
};

// Solves Delta u = rhs with integrate(u) = 0 on periodic scalars.
inline GreenSolution green_solve(const OrbifoldGrid& g, std::span<const cd> rhs) {
  GreenSolution out;
  out.removed_mean = integrate(g, rhs) / g.volume();
  std::vector<cd> w(rhs.begin(), rhs.end());
  g.fft2(w, true);
  const double norm = 1.0 / double(g.size());
  for (int j = 0; j < g.n2(); ++j) {
    for (int i = 0; i < g.n1(); ++i) {
      const double sym = g.laplace_symbol(i, j);
      cd& v = w[std::size_t(j) * g.n1() + i];
      v = sym > 1e-12 ? v * (norm / sym) : cd(0);
    }
  }
  g.fft2(w, false);
  out.u = std::move(w);
  return out;
}

// Supremum c(t) of the heat kernel of d/dt - (1/4) * flat Laplacian on the
// torus, i.e. the kernel at coincident points, by Fourier summation.
inline double heat_kernel_sup(cd tau, double t) {
  if (!(t > 0)) throw std::invalid_argument("heat_kernel_sup: t must be positive");
  const double two_pi = 2.0 * std::numbers::pi;
  const double vol = tau.imag();
  auto term = [&](int k1, int k2) {
    const double xi_x = two_pi * k1;
    const double xi_y = two_pi * (k2 - tau.real() * k1) / vol;
    return std::exp(-(xi_x * xi_x + xi_y * xi_y) * t / 4.0);
  };
  double sum = 0;
  for (int k1 = 0;; ++k1) {
    double col = 0;
    // For fixed k1 the exponent is a convex quadratic in k2; sum outward from its minimum.
    const int centre = int(std::lround(tau.real() * k1));
    for (int sgn : {1, -1}) {
      for (int k2 = (sgn > 0 ? centre : centre - 1);; k2 += sgn) {
        const double v = term(k1, k2);
        col += v;
        if (v < 1e-18 * std::max(col, 1.0)) break;
      }
    }
    sum += (k1 == 0 ? 1.0 : 2.0) * col;
    if (col < 1e-18 * sum) break;
  }
  return sum / vol;
}

inline double heat_kernel_sup(const OrbifoldGrid& g, double t) { return heat_kernel_sup(g.tau(), t); }

// Average of f over the Z_k orbit with the phase of the given weight:
// P f(x) = (1/k) sum_p zeta^(-w p) f(zeta^p x).
inline std::vector<cd> group_project(const OrbifoldGrid& g, std::span<const cd> f, int charge,
                                     int weight) {
  std::vector<cd> out(f.begin(), f.end());
  if (g.k() == 1) return out;
  const cd z = g.zeta();
  for (int p = 1; p < g.k(); ++p) {
    const auto r = g.rotate(f, charge, p);
    const cd ph = std::pow(z, -weight * p);
    for (std::size_t s = 0; s < out.size(); ++s) out[s] += ph * r[s];
  }
  for (auto& v : out) v /= double(g.k());
  return out;
}

inline ScalarField group_project(const OrbifoldGrid& g, const ScalarField& f) {
  return {group_project(g, f.values, f.charge, rotation_weight(f.degree)), f.degree, f.charge};
}

// max_x |f(zeta x) - zeta^w f(x)|.
inline double equivariance_residual(const OrbifoldGrid& g, std::span<const cd> f, int charge,
                                    int weight) {
  if (g.k() == 1) return 0.0;
  const auto r = g.rotate(f, charge, 1);
  const cd ph = std::pow(g.zeta(), weight);
  double res = 0;
  for (std::size_t s = 0; s < r.size(); ++s) res = std::max(res, std::abs(r[s] - ph * f[s]));
  return res;
}

}  // namespace hermflow
