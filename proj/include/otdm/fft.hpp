#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include <fftw3.h>

namespace otdm::detail {

// FFTW planning is not thread-safe; execution of an existing plan on new
// arrays is. Plans are created once per (size, direction) and kept for the
// lifetime of the process.
class FftPlanCache {
public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  fftw_plan plan(std::size_t n, int sign) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto key = std::make_pair(n, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<std::complex<double>> in(n), out(n);
    fftw_plan p = fftw_plan_dft_1d(static_cast<int>(n),
                                   reinterpret_cast<fftw_complex*>(in.data()),
                                   reinterpret_cast<fftw_complex*>(out.data()),
                                   sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, p);
    return p;
  }

  FftPlanCache(const FftPlanCache&) = delete;
  FftPlanCache& operator=(const FftPlanCache&) = delete;

private:
  FftPlanCache() = default;
  ~FftPlanCache() {
    for (auto& [key, p] : plans_) fftw_destroy_plan(p);
  }

  std::mutex mutex_;
  std::map<std::pair<std::size_t, int>, fftw_plan> plans_;
};

/// Unnormalized DFT, X[k] = sum_n x[n] exp(-+ j 2 pi k n / N).
inline std::vector<std::complex<double>> dft(std::span<const std::complex<double>> x,
                                             bool inverse) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> in(x.begin(), x.end());
  std::vector<std::complex<double>> out(n);
  if (n == 0) return out;
  fftw_plan p = FftPlanCache::instance().plan(n, inverse ? FFTW_BACKWARD : FFTW_FORWARD);
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

}  // namespace otdm::detail
