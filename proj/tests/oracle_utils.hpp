#pragma once

#include <complex>
#include <functional>
#include <vector>

#include "condisr/rng.hpp"
#include "condisr/tensor.hpp"

// Test-only oracles, independent of the implementation paths they check.

namespace oracle {

/// O(N^4) discrete Fourier transform of a real h x w array.
inline std::vector<std::complex<double>> brute_dft2d(const double* x, long h, long w) {
  std::vector<std::complex<double>> out(static_cast<std::size_t>(h * w));
  for (long u = 0; u < h; ++u)
    for (long v = 0; v < w; ++v) {
      std::complex<double> acc(0, 0);
      for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j) {
          double phase = -2.0 * M_PI * (double(u * i) / h + double(v * j) / w);
          acc += x[i * w + j] * std::complex<double>(std::cos(phase), std::sin(phase));
        }
      out[static_cast<std::size_t>(u * w + v)] = acc;
    }
  return out;
}

/// Brute-force low-frequency amplitude swap built directly on brute_dft2d.
/// Mirrors the documented contract: centered window of side
/// floor(beta*min(h,w)), reference amplitude, source phase, conjugate-mirror
/// bins rescaled alike, real part of the inverse, clipped.
inline condisr::Tensor<double> fda_oracle(const condisr::Tensor<double>& src,
                                          const condisr::Tensor<double>& ref, double beta) {
  long c = src.dim(0), h = src.dim(1), w = src.dim(2);
  long window = static_cast<long>(std::floor(beta * std::min(h, w)));
  condisr::Tensor<double> out(src.dims());
  if (window < 1) {
    out = src;
    return out;
  }
  long ch_shift = (h + 1) / 2, cw_shift = (w + 1) / 2;
  long ch = h / 2, cw = w / 2;
  long r0 = ch - window / 2, c0 = cw - window / 2;
  for (long chn = 0; chn < c; ++chn) {
    auto fs = brute_dft2d(src.data() + chn * h * w, h, w);
    auto fr = brute_dft2d(ref.data() + chn * h * w, h, w);
    std::vector<char> touched(static_cast<std::size_t>(h * w));
    auto swap_bin = [&](long u, long v) {
      if (touched[static_cast<std::size_t>(u * w + v)]) return;
      touched[static_cast<std::size_t>(u * w + v)] = 1;
      std::complex<double>& s = fs[static_cast<std::size_t>(u * w + v)];
      double amp_ref = std::abs(fr[static_cast<std::size_t>(u * w + v)]);
      double amp_src = std::abs(s);
      s = amp_src > 1e-30 ? s * (amp_ref / amp_src) : std::complex<double>(amp_ref, 0.0);
    };
    for (long i = r0; i < r0 + window; ++i)
      for (long j = c0; j < c0 + window; ++j) {
        long u = (i + ch_shift) % h, v = (j + cw_shift) % w;
        swap_bin(u, v);
        swap_bin((h - u) % h, (w - v) % w);
      }
    // inverse via conjugation trick, normalized
    for (long u = 0; u < h; ++u)
      for (long v = 0; v < w; ++v) {
        std::complex<double> acc(0, 0);
        for (long i = 0; i < h; ++i)
          for (long j = 0; j < w; ++j) {
            double phase = 2.0 * M_PI * (double(u * i) / h + double(v * j) / w);
            acc += fs[static_cast<std::size_t>(i * w + j)] *
                   std::complex<double>(std::cos(phase), std::sin(phase));
          }
        double val = acc.real() / static_cast<double>(h * w);
        out[chn * h * w + u * w + v] = std::clamp(val, 0.0, 1.0);
      }
  }
  return out;
}

/// Central-difference derivative of f with respect to x[i].
inline double central_diff(const std::function<double()>& f, double& x, double eps = 1e-5) {
  double saved = x;
  x = saved + eps;
  double fp = f();
  x = saved - eps;
  double fm = f();
  x = saved;
  return (fp - fm) / (2.0 * eps);
}

inline double rel_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline condisr::Tensor<double> random_tensor(std::vector<long> dims, condisr::Rng& rng,
                                             double lo = -1.0, double hi = 1.0) {
  condisr::Tensor<double> t(std::move(dims));
  for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace oracle
