#pragma once

#include <complex>
#include <mutex>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

namespace hermflow {

using cd = std::complex<double>;

// Batched in-place 1-D transforms along the two lattice directions of an
// n1 x n2 array stored with x1 fastest (site = j * n1 + i).
class FftPlans {
 public:
  FftPlans(int n1, int n2) : n1_(n1), n2_(n2) {
    std::lock_guard<std::mutex> lock(planner_mutex());
    std::vector<cd> scratch(static_cast<std::size_t>(n1) * n2);
    auto* p = reinterpret_cast<fftw_complex*>(scratch.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    int len1[] = {n1};
    int len2[] = {n2};
    row_fwd_ = fftw_plan_many_dft(1, len1, n2, p, nullptr, 1, n1, p, nullptr, 1, n1,
                                  FFTW_FORWARD, flags);
    row_bwd_ = fftw_plan_many_dft(1, len1, n2, p, nullptr, 1, n1, p, nullptr, 1, n1,
                                  FFTW_BACKWARD, flags);
    col_fwd_ = fftw_plan_many_dft(1, len2, n1, p, nullptr, n1, 1, p, nullptr, n1, 1,
                                  FFTW_FORWARD, flags);
    col_bwd_ = fftw_plan_many_dft(1, len2, n1, p, nullptr, n1, 1, p, nullptr, n1, 1,
                                  FFTW_BACKWARD, flags);
    if (!row_fwd_ || !row_bwd_ || !col_fwd_ || !col_bwd_)
      throw std::runtime_error("fftw planning failed");
  }

  FftPlans(const FftPlans&) = delete;
  FftPlans& operator=(const FftPlans&) = delete;

  ~FftPlans() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(row_fwd_);
    fftw_destroy_plan(row_bwd_);
    fftw_destroy_plan(col_fwd_);
    fftw_destroy_plan(col_bwd_);
  }

  // Unnormalized: a forward/backward pair multiplies by the transform length.
  void rows(cd* data, bool forward) const {
    auto* p = reinterpret_cast<fftw_complex*>(data);
    fftw_execute_dft(forward ? row_fwd_ : row_bwd_, p, p);
  }
  void cols(cd* data, bool forward) const {
    auto* p = reinterpret_cast<fftw_complex*>(data);
    fftw_execute_dft(forward ? col_fwd_ : col_bwd_, p, p);
  }

  int n1() const { return n1_; }
  int n2() const { return n2_; }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  int n1_, n2_;
  fftw_plan row_fwd_{}, row_bwd_{}, col_fwd_{}, col_bwd_{};
};

}  // namespace hermflow
