#include "condisr/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>

namespace condisr::fft {
namespace {

std::mutex plan_mutex;

// FFTW planning is not thread safe; execution via the new-array interface
// is. FFTW_UNALIGNED keeps cached plans valid for arbitrary caller buffers.
fftw_plan plan_d(long h, long w, bool inverse) {
  static std::map<std::tuple<long, long, bool>, fftw_plan> cache;
  std::lock_guard<std::mutex> lock(plan_mutex);
  auto key = std::make_tuple(h, w, inverse);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  fftw_complex* tmp = fftw_alloc_complex(static_cast<std::size_t>(h * w));
  fftw_plan p = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), tmp, tmp,
                                 inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  fftw_free(tmp);
  cache.emplace(key, p);
  return p;
}

fftwf_plan plan_f(long h, long w, bool inverse) {
  static std::map<std::tuple<long, long, bool>, fftwf_plan> cache;
  std::lock_guard<std::mutex> lock(plan_mutex);
  auto key = std::make_tuple(h, w, inverse);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  fftwf_complex* tmp = fftwf_alloc_complex(static_cast<std::size_t>(h * w));
  fftwf_plan p = fftwf_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), tmp, tmp,
                                   inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
  fftwf_free(tmp);
  cache.emplace(key, p);
  return p;
}

}  // namespace

void dft2d(double* data, long h, long w, bool inverse) {
  fftw_plan p = plan_d(h, w, inverse);
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(data),
                   reinterpret_cast<fftw_complex*>(data));
}

void dft2d(float* data, long h, long w, bool inverse) {
  fftwf_plan p = plan_f(h, w, inverse);
  fftwf_execute_dft(p, reinterpret_cast<fftwf_complex*>(data),
                    reinterpret_cast<fftwf_complex*>(data));
}

}  // namespace condisr::fft
