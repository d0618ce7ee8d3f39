#include "fft.h"

#include <fftw3.h>

#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace hybridsep::fft {

namespace {

struct Plans {
  int64_t n = 0;
  double* real = nullptr;
  fftw_complex* cplx = nullptr;
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;

  explicit Plans(int64_t size) : n(size) {
    real = fftw_alloc_real(static_cast<size_t>(n));
    cplx = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
    forward = fftw_plan_dft_r2c_1d(static_cast<int>(n), real, cplx, FFTW_ESTIMATE);
    inverse = fftw_plan_dft_c2r_1d(static_cast<int>(n), cplx, real, FFTW_ESTIMATE);
  }
  ~Plans() {
    fftw_destroy_plan(forward);
    fftw_destroy_plan(inverse);
    fftw_free(real);
    fftw_free(cplx);
  }
};

// Plans and their scratch buffers are per thread; FFTW planning itself is
// serialised because the planner is not thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

Plans& plans_for(int64_t n) {
  thread_local std::map<int64_t, std::unique_ptr<Plans>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return *it->second;
  std::lock_guard<std::mutex> lock(planner_mutex());
  auto [pos, inserted] = cache.emplace(n, std::make_unique<Plans>(n));
  return *pos->second;
}

}  // namespace

void rfft(std::span<const double> in, std::span<std::complex<double>> out) {
  const int64_t n = static_cast<int64_t>(in.size());
  if (n <= 0 || static_cast<int64_t>(out.size()) != n / 2 + 1) throw std::invalid_argument("rfft: size mismatch");
  Plans& p = plans_for(n);
  std::copy(in.begin(), in.end(), p.real);
  fftw_execute(p.forward);
  for (int64_t k = 0; k <= n / 2; ++k) out[k] = {p.cplx[k][0], p.cplx[k][1]};
}

void irfft_unnormalized(std::span<const std::complex<double>> in, std::span<double> out) {
  const int64_t n = static_cast<int64_t>(out.size());
  if (n <= 0 || static_cast<int64_t>(in.size()) != n / 2 + 1) throw std::invalid_argument("irfft: size mismatch");
  Plans& p = plans_for(n);
  for (int64_t k = 0; k <= n / 2; ++k) {
    p.cplx[k][0] = in[k].real();
    p.cplx[k][1] = in[k].imag();
  }
  // c2r destroys its input array; it is rewritten on every call.
  fftw_execute(p.inverse);
  std::copy(p.real, p.real + n, out.begin());
}

}  // namespace hybridsep::fft
