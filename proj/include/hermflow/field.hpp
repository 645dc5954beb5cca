#pragma once

// Per-site r x r complex matrix fields. Storage is entry-major so that every
// matrix entry is a contiguous scalar field (what the derivative kernels want);
// per-site work gathers a small fixed-capacity Eigen matrix.

#include <cassert>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "hermflow/grid.hpp"

namespace hermflow {

inline constexpr int kMaxRank = 4;

using Mat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxRank, kMaxRank>;
using RVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxRank, 1>;
using CVec = Eigen::Matrix<cd, Eigen::Dynamic, 1, 0, kMaxRank, 1>;

struct EndoTag {};
struct MetricTag {};

template <class Tag>
class MatrixField {
 public:
  MatrixField() = default;
  MatrixField(int rank, std::size_t sites, FormDegree degree = FormDegree::zero)
      : rank_(rank), sites_(sites), degree_(degree),
        data_(static_cast<std::size_t>(rank) * rank * sites, cd(0)) {
    if (rank < 1 || rank > kMaxRank) throw std::invalid_argument("rank must be in [1, 4]");
  }

  int rank() const { return rank_; }
  std::size_t sites() const { return sites_; }
  FormDegree degree() const { return degree_; }
  void set_degree(FormDegree d) { degree_ = d; }

  std::span<cd> entry(int a, int b) {
    return {data_.data() + (std::size_t(a) * rank_ + b) * sites_, sites_};
  }
  std::span<const cd> entry(int a, int b) const {
    return {data_.data() + (std::size_t(a) * rank_ + b) * sites_, sites_};
  }

  cd& operator()(int a, int b, std::size_t s) { return data_[(std::size_t(a) * rank_ + b) * sites_ + s]; }
  cd operator()(int a, int b, std::size_t s) const {
    return data_[(std::size_t(a) * rank_ + b) * sites_ + s];
  }

  Mat at(std::size_t s) const {
    Mat m(rank_, rank_);
    for (int a = 0; a < rank_; ++a)
      for (int b = 0; b < rank_; ++b) m(a, b) = (*this)(a, b, s);
    return m;
  }

  void set(std::size_t s, const Mat& m) {
    for (int a = 0; a < rank_; ++a)
      for (int b = 0; b < rank_; ++b) (*this)(a, b, s) = m(a, b);
  }

  std::span<cd> raw() { return data_; }
  std::span<const cd> raw() const { return data_; }

  MatrixField& operator+=(const MatrixField& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  MatrixField& operator-=(const MatrixField& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  MatrixField& operator*=(cd c) {
    for (auto& v : data_) v *= c;
    return *this;
  }
  friend MatrixField operator+(MatrixField a, const MatrixField& b) { return a += b; }
  friend MatrixField operator-(MatrixField a, const MatrixField& b) { return a -= b; }
  friend MatrixField operator*(cd c, MatrixField a) { return a *= c; }
  friend MatrixField operator*(double c, MatrixField a) { return a *= cd(c); }

  // Converts between the endomorphism and metric views of the same storage.
  template <class Other>
  MatrixField<Other> as() const {
    MatrixField<Other> out(rank_, sites_, degree_);
    std::copy(data_.begin(), data_.end(), out.raw().begin());
    return out;
  }

  double max_abs() const {
    double m = 0;
    for (const auto& v : data_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  void check_same(const MatrixField& o) const {
    if (o.rank_ != rank_ || o.sites_ != sites_) throw std::invalid_argument("field shape mismatch");
  }

  int rank_ = 0;
  std::size_t sites_ = 0;
  FormDegree degree_ = FormDegree::zero;
  std::vector<cd> data_;
};

using EndoField = MatrixField<EndoTag>;
using MetricField = MatrixField<MetricTag>;

template <class Tag, class Fn>
MatrixField<Tag> map_sites(const MatrixField<Tag>& in, Fn&& fn) {
  MatrixField<Tag> out(in.rank(), in.sites(), in.degree());
#pragma omp parallel for schedule(static)
  for (long s = 0; s < long(in.sites()); ++s) out.set(std::size_t(s), fn(in.at(std::size_t(s)), std::size_t(s)));
  return out;
}

inline EndoField identity_field(int rank, std::size_t sites) {
  EndoField out(rank, sites);
  for (int a = 0; a < rank; ++a)
    for (auto& v : out.entry(a, a)) v = 1.0;
  return out;
}

// Site-wise product A * B; degrees combine as forms (at most one factor may be a form
// unless the caller tracks the wedge order itself).
template <class T1, class T2>
EndoField multiply(const MatrixField<T1>& A, const MatrixField<T2>& B,
                   FormDegree degree = FormDegree::zero) {
  EndoField out(A.rank(), A.sites(), degree);
  for (std::size_t s = 0; s < A.sites(); ++s) out.set(s, A.at(s) * B.at(s));
  return out;
}

inline EndoField commutator(const EndoField& A, const EndoField& B, FormDegree degree) {
  EndoField out(A.rank(), A.sites(), degree);
  for (std::size_t s = 0; s < A.sites(); ++s) {
    const Mat a = A.at(s), b = B.at(s);
    out.set(s, a * b - b * a);
  }
  return out;
}

inline std::vector<cd> trace_field(const EndoField& A) {
  std::vector<cd> out(A.sites(), cd(0));
  for (int a = 0; a < A.rank(); ++a) {
    const auto e = A.entry(a, a);
    for (std::size_t s = 0; s < A.sites(); ++s) out[s] += e[s];
  }
  return out;
}

inline Mat hermitian_part(const Mat& m) { return 0.5 * (m + m.adjoint()); }

// Hermitian positive-definite square root and inverse square root.
struct SqrtPair {
  Mat root, inv_root;
};

inline SqrtPair hermitian_sqrt(const Mat& K) {
  Eigen::SelfAdjointEigenSolver<Mat> es(hermitian_part(K));
  const RVec ev = es.eigenvalues();
  if (ev.minCoeff() <= 0) throw std::domain_error("metric is not positive definite");
  const Mat& V = es.eigenvectors();
  RVec r = ev.cwiseSqrt();
  RVec ir = r.cwiseInverse();
  return {V * r.cast<cd>().asDiagonal() * V.adjoint(), V * ir.cast<cd>().asDiagonal() * V.adjoint()};
}

// Spectral data of a K-self-adjoint endomorphism s: s = E diag(lambda) E^{-1}
// with the columns of E orthonormal for <xi, eta>_K = eta^dagger K xi.
struct KFrame {
  RVec lambda;
  Mat E, E_inv;
};

inline KFrame k_eigen(const Mat& s, const Mat& K) {
  const SqrtPair k = hermitian_sqrt(K);
  const Mat sym = hermitian_part(k.root * s * k.inv_root);
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  return {es.eigenvalues(), k.inv_root * es.eigenvectors(), es.eigenvectors().adjoint() * k.root};
}

inline KFrame k_eigen_flat(const Mat& s) {
  Eigen::SelfAdjointEigenSolver<Mat> es(hermitian_part(s));
  return {es.eigenvalues(), es.eigenvectors(), es.eigenvectors().adjoint()};
}

template <class Fn>
Mat apply_spectral(const KFrame& f, Fn&& phi) {
  RVec v(f.lambda.size());
  for (int i = 0; i < f.lambda.size(); ++i) v(i) = phi(f.lambda(i));
  return f.E * v.cast<cd>().asDiagonal() * f.E_inv;
}

// Pointwise |A|_K^2 = Tr(A A^{*K}) for the matrix part (no form factor).
inline double k_norm2(const Mat& A, const Mat& K) {
  return std::real((A * K.inverse() * A.adjoint() * K).trace());
}

}  // namespace hermflow
