#pragma once

#include <array>

#include "condisr/fft.hpp"
#include "condisr/rng.hpp"
#include "condisr/tensor.hpp"

// Input-space style augmentations: monotone Bezier intensity remapping and
// low-frequency Fourier amplitude replacement. Both operate on (C,H,W)
// images with values in [0,1]; make_triplet lifts them to batches.

namespace condisr {

struct BezierParams {
  double p1x = 1.0 / 3, p1y = 1.0 / 3;
  double p2x = 2.0 / 3, p2y = 2.0 / 3;
  bool invert = false;
};

struct FdaParams {
  double beta = 0.1;  // fraction of min(W,H) defining the low-frequency window
};

struct BezierConfig {
  double invert_prob = 0.5;
  bool per_channel = false;
};

struct FdaConfig {
  double beta_min = 0.05;
  double beta_max = 0.15;
};

inline BezierParams sample_bezier_params(Rng& rng, double invert_prob) {
  if (invert_prob < 0.0 || invert_prob > 1.0)
    throw std::invalid_argument("invert_prob must lie in [0,1]");
  BezierParams p;
  p.p1x = rng.uniform();
  p.p1y = rng.uniform();
  p.p2x = rng.uniform();
  p.p2y = rng.uniform();
  if (p.p1x > p.p2x) {
    std::swap(p.p1x, p.p2x);
    std::swap(p.p1y, p.p2y);
  }
  p.invert = rng.uniform() < invert_prob;
  return p;
}

/// 1024-entry lookup table of the cubic Bezier through (0,0), p1, p2, (1,1),
/// sampled over the curve parameter. The sorted control-point x coordinates
/// make x(t) monotone, so the table can be inverted by binary search.
class BezierLut {
 public:
  static constexpr int kEntries = 1024;

  explicit BezierLut(const BezierParams& p) : invert_(p.invert) {
    if (p.p1x > p.p2x) throw std::invalid_argument("bezier: control points not x-sorted");
    for (double v : {p.p1x, p.p1y, p.p2x, p.p2y})
      if (v < 0.0 || v > 1.0) throw std::invalid_argument("bezier: control point outside [0,1]");
    for (int i = 0; i < kEntries; ++i) {
      double t = static_cast<double>(i) / (kEntries - 1);
      double u = 1.0 - t;
      double b1 = 3.0 * u * u * t, b2 = 3.0 * u * t * t, b3 = t * t * t;
      xs_[i] = b1 * p.p1x + b2 * p.p2x + b3;
      ys_[i] = b1 * p.p1y + b2 * p.p2y + b3;
    }
  }

  double map(double v) const {
    // binary search for the last entry with xs <= v
    int lo = 0, hi = kEntries - 1;
    while (hi - lo > 1) {
      int mid = (lo + hi) / 2;
      if (xs_[mid] <= v)
        lo = mid;
      else
        hi = mid;
    }
    double dx = xs_[hi] - xs_[lo];
    double y = dx > 1e-12 ? ys_[lo] + (ys_[hi] - ys_[lo]) * (v - xs_[lo]) / dx : ys_[lo];
    y = std::clamp(y, 0.0, 1.0);
    return invert_ ? 1.0 - y : y;
  }

 private:
  std::array<double, kEntries> xs_{}, ys_{};
  bool invert_ = false;
};

/// Remaps every pixel through the Bezier intensity curve; identical mapping
/// for all channels. Rejects inputs outside [0,1].
template <typename T>
Tensor<T> bezier_transform(const Tensor<T>& x, const BezierParams& params) {
  BezierLut lut(params);
  Tensor<T> y(x.dims());
  for (long i = 0; i < x.numel(); ++i) {
    double v = static_cast<double>(x[i]);
    if (v < 0.0 || v > 1.0) throw std::invalid_argument("bezier_transform: pixel outside [0,1]");
    y[i] = static_cast<T>(lut.map(v));
  }
  return y;
}

/// Replaces the source amplitude by the reference amplitude inside the
/// centered square window of side floor(beta*min(W,H)) around the DC bin,
/// keeping the source phase. The conjugate-mirror bin of every window bin is
/// rescaled by the same factor so the spectrum of a real image stays
/// Hermitian and the inverse transform is real up to roundoff. Real part of
/// the inverse, clipped to [0,1].
template <typename T>
Tensor<T> fda_low_freq_swap(const Tensor<T>& x_src, const Tensor<T>& x_ref,
                            const FdaParams& params) {
  if (!x_src.same_shape(x_ref)) throw std::invalid_argument("fda: shape mismatch");
  if (params.beta < 0.0 || params.beta > 0.5)
    throw std::invalid_argument("fda: beta outside [0, 0.5]");
  long c = x_src.dim(0), h = x_src.dim(1), w = x_src.dim(2);
  long window = static_cast<long>(std::floor(params.beta * static_cast<double>(std::min(h, w))));
  Tensor<T> out(x_src.dims());
  if (window < 1) {
    out = x_src;
    return out;
  }
  long ch_shift = (h + 1) / 2, cw_shift = (w + 1) / 2;  // shifted -> unshifted offset
  long ch = h / 2, cw = w / 2;                          // DC position after centering
  long r0 = ch - window / 2, c0 = cw - window / 2;
  std::vector<T> src(2 * h * w), ref(2 * h * w);
  std::vector<char> touched(static_cast<std::size_t>(h * w));
  for (long chn = 0; chn < c; ++chn) {
    const T* xs = x_src.data() + chn * h * w;
    const T* xr = x_ref.data() + chn * h * w;
    for (long i = 0; i < h * w; ++i) {
      src[2 * i] = xs[i];
      src[2 * i + 1] = T(0);
      ref[2 * i] = xr[i];
      ref[2 * i + 1] = T(0);
    }
    fft::dft2d(src.data(), h, w, false);
    fft::dft2d(ref.data(), h, w, false);
    std::fill(touched.begin(), touched.end(), char(0));
    auto swap_bin = [&](long u, long v) {
      if (touched[static_cast<std::size_t>(u * w + v)]) return;
      touched[static_cast<std::size_t>(u * w + v)] = 1;
      long idx = 2 * (u * w + v);
      double re = src[idx], im = src[idx + 1];
      double amp_src = std::sqrt(re * re + im * im);
      double amp_ref = std::sqrt(static_cast<double>(ref[idx]) * ref[idx] +
                                 static_cast<double>(ref[idx + 1]) * ref[idx + 1]);
      if (amp_src > 1e-30) {
        double scale = amp_ref / amp_src;
        src[idx] = static_cast<T>(re * scale);
        src[idx + 1] = static_cast<T>(im * scale);
      } else {
        src[idx] = static_cast<T>(amp_ref);  // zero source phase
        src[idx + 1] = T(0);
      }
    };
    for (long i = r0; i < r0 + window; ++i) {
      for (long j = c0; j < c0 + window; ++j) {
        long u = (i + ch_shift) % h, v = (j + cw_shift) % w;
        swap_bin(u, v);
        swap_bin((h - u) % h, (w - v) % w);  // conjugate mirror
      }
    }
    fft::dft2d(src.data(), h, w, true);
    T* dst = out.data() + chn * h * w;
    T norm = T(1) / static_cast<T>(h * w);
    for (long i = 0; i < h * w; ++i)
      dst[i] = std::clamp(src[2 * i] * norm, T(0), T(1));
  }
  return out;
}

template <typename T>
struct Triplet {
  Tensor<T> source;   // x^s: the input batch unchanged
  Tensor<T> bezier;   // x^a
  Tensor<T> fda;      // x^b
  bool fda_fallback = false;  // batch of one: no reference available
};

namespace detail {
template <typename T>
Tensor<T> batch_slice(const Tensor<T>& batch, long i) {
  Tensor<T> img({batch.c(), batch.h(), batch.w()});
  const T* src = batch.data() + i * img.numel();
  std::copy(src, src + img.numel(), img.data());
  return img;
}

template <typename T>
void batch_store(Tensor<T>& batch, long i, const Tensor<T>& img) {
  T* dst = batch.data() + i * img.numel();
  std::copy(img.data(), img.data() + img.numel(), dst);
}
}  // namespace detail

/// Builds (x^s, x^a, x^b) from a batch: fresh Bezier params per sample,
/// FDA against a shuffled in-batch reference with beta drawn per sample.
template <typename T>
Triplet<T> make_triplet(const Tensor<T>& batch, Rng& rng, const BezierConfig& bezier_cfg,
                        const FdaConfig& fda_cfg) {
  long n = batch.n(), c = batch.c();
  if (n < 1) throw std::invalid_argument("make_triplet: empty batch");
  Triplet<T> t;
  t.source = batch;
  t.bezier = Tensor<T>(batch.dims());
  t.fda = Tensor<T>(batch.dims());
  for (long i = 0; i < n; ++i) {
    Tensor<T> img = detail::batch_slice(batch, i);
    if (bezier_cfg.per_channel) {
      Tensor<T> out(img.dims());
      long hw = img.dim(1) * img.dim(2);
      for (long ch = 0; ch < c; ++ch) {
        BezierParams p = sample_bezier_params(rng, bezier_cfg.invert_prob);
        BezierLut lut(p);
        for (long j = 0; j < hw; ++j) {
          double v = static_cast<double>(img[ch * hw + j]);
          if (v < 0.0 || v > 1.0)
            throw std::invalid_argument("bezier_transform: pixel outside [0,1]");
          out[ch * hw + j] = static_cast<T>(lut.map(v));
        }
      }
      detail::batch_store(t.bezier, i, out);
    } else {
      BezierParams p = sample_bezier_params(rng, bezier_cfg.invert_prob);
      detail::batch_store(t.bezier, i, bezier_transform(img, p));
    }
  }
  if (n == 1) {
    t.fda = batch;
    t.fda_fallback = true;
    return t;
  }
  std::vector<int> perm = rng.permutation(static_cast<int>(n));
  for (long i = 0; i < n; ++i) {
    FdaParams fp;
    fp.beta = rng.uniform(fda_cfg.beta_min, fda_cfg.beta_max);
    Tensor<T> src = detail::batch_slice(batch, i);
    Tensor<T> ref = detail::batch_slice(batch, perm[i]);
    detail::batch_store(t.fda, i, fda_low_freq_swap(src, ref, fp));
  }
  return t;
}

}  // namespace condisr
