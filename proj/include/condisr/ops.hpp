#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "condisr/blas.hpp"
#include "condisr/tensor.hpp"

// Raw forward/backward kernels. Tensors are NCHW; convolution weights are
// (C_out, C_in * kh * kw) so each sample reduces to one GEMM against its
// im2col buffer (the caffe recipe).

namespace condisr::ops {

inline long conv_out_size(long in, long k, long stride, long pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// im2col with an explicit destination row stride, so the patches of a whole
// batch can share one matrix (columns of sample i start at offset i*oh*ow).
template <typename T>
void im2col(const T* x, long c_in, long h, long w, long k, long stride, long pad, T* col,
            long ld) {
  long oh = conv_out_size(h, k, stride, pad);
  long ow = conv_out_size(w, k, stride, pad);
  for (long c = 0; c < c_in; ++c) {
    for (long ki = 0; ki < k; ++ki) {
      for (long kj = 0; kj < k; ++kj) {
        T* dst = col + ((c * k + ki) * k + kj) * ld;
        for (long i = 0; i < oh; ++i) {
          long src_i = i * stride - pad + ki;
          if (src_i < 0 || src_i >= h) {
            std::fill(dst + i * ow, dst + (i + 1) * ow, T(0));
            continue;
          }
          const T* src_row = x + (c * h + src_i) * w;
          if (stride == 1 && kj >= pad && kj - pad + ow <= w) {
            // fully interior fast path for stride 1
            std::copy(src_row + kj - pad, src_row + kj - pad + ow, dst + i * ow);
            continue;
          }
          for (long j = 0; j < ow; ++j) {
            long src_j = j * stride - pad + kj;
            dst[i * ow + j] = (src_j >= 0 && src_j < w) ? src_row[src_j] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, long c_in, long h, long w, long k, long stride, long pad, T* dx,
                long ld) {
  long oh = conv_out_size(h, k, stride, pad);
  long ow = conv_out_size(w, k, stride, pad);
  for (long c = 0; c < c_in; ++c) {
    for (long ki = 0; ki < k; ++ki) {
      for (long kj = 0; kj < k; ++kj) {
        const T* src = col + ((c * k + ki) * k + kj) * ld;
        for (long i = 0; i < oh; ++i) {
          long dst_i = i * stride - pad + ki;
          if (dst_i < 0 || dst_i >= h) continue;
          T* dst_row = dx + (c * h + dst_i) * w;
          for (long j = 0; j < ow; ++j) {
            long dst_j = j * stride - pad + kj;
            if (dst_j >= 0 && dst_j < w) dst_row[dst_j] += src[i * ow + j];
          }
        }
      }
    }
  }
}

namespace detail {
// (c, n*p) <-> (n, c, p) block transposes via contiguous row copies.
template <typename T>
void scatter_rows(const T* src, long n, long c, long p, T* dst) {
  for (long ch = 0; ch < c; ++ch)
    for (long i = 0; i < n; ++i)
      std::copy(src + ch * n * p + i * p, src + ch * n * p + (i + 1) * p,
                dst + (i * c + ch) * p);
}
template <typename T>
void gather_rows(const T* src, long n, long c, long p, T* dst) {
  for (long ch = 0; ch < c; ++ch)
    for (long i = 0; i < n; ++i)
      std::copy(src + (i * c + ch) * p, src + (i * c + ch) * p + p,
                dst + ch * n * p + i * p);
}
}  // namespace detail

// weight: (c_out, c_in*k*k), bias optional (c_out). The whole batch reduces
// to a single GEMM against a shared column matrix; scratch grows on demand.
template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                    long k, long stride, long pad, Tensor<T>& y, std::vector<T>& scratch) {
  long n = x.n(), c_in = x.c(), h = x.h(), w = x.w();
  long c_out = weight.dim(0);
  long oh = conv_out_size(h, k, stride, pad);
  long ow = conv_out_size(w, k, stride, pad);
  long patch = c_in * k * k;
  long cols = n * oh * ow;
  scratch.resize(static_cast<std::size_t>((patch + c_out) * cols));
  T* col = scratch.data();
  T* yt = scratch.data() + patch * cols;  // (c_out, n*oh*ow)
  for (long i = 0; i < n; ++i)
    im2col(x.data() + i * c_in * h * w, c_in, h, w, k, stride, pad, col + i * oh * ow, cols);
  gemm(false, false, static_cast<int>(c_out), static_cast<int>(cols), static_cast<int>(patch),
       T(1), weight.data(), static_cast<int>(patch), col, static_cast<int>(cols), T(0), yt,
       static_cast<int>(cols));
  detail::scatter_rows(yt, n, c_out, oh * ow, y.data());
  if (bias) {
    for (long i = 0; i < n; ++i)
      for (long c = 0; c < c_out; ++c) {
        T b = (*bias)[c];
        T* dst = y.data() + (i * c_out + c) * oh * ow;
        for (long p = 0; p < oh * ow; ++p) dst[p] += b;
      }
  }
}

// Accumulates into dw/db; dx (if non-null) is accumulated as well.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                     long k, long stride, long pad, Tensor<T>& dw, Tensor<T>* db, Tensor<T>* dx,
                     std::vector<T>& scratch) {
  long n = x.n(), c_in = x.c(), h = x.h(), w = x.w();
  long c_out = weight.dim(0);
  long oh = dy.h(), ow = dy.w();
  long patch = c_in * k * k;
  long cols = n * oh * ow;
  scratch.resize(static_cast<std::size_t>((patch + c_out) * cols));
  T* col = scratch.data();  // reused for both the patches and dcol
  T* dyt = scratch.data() + patch * cols;  // (c_out, n*oh*ow)
  detail::gather_rows(dy.data(), n, c_out, oh * ow, dyt);
  for (long i = 0; i < n; ++i)
    im2col(x.data() + i * c_in * h * w, c_in, h, w, k, stride, pad, col + i * oh * ow, cols);
  gemm(false, true, static_cast<int>(c_out), static_cast<int>(patch), static_cast<int>(cols),
       T(1), dyt, static_cast<int>(cols), col, static_cast<int>(cols), T(1), dw.data(),
       static_cast<int>(patch));
  if (db) {
    for (long c = 0; c < c_out; ++c) {
      T s = 0;
      const T* src = dyt + c * cols;
      for (long p = 0; p < cols; ++p) s += src[p];
      (*db)[c] += s;
    }
  }
  if (dx) {
    gemm(true, false, static_cast<int>(patch), static_cast<int>(cols), static_cast<int>(c_out),
         T(1), weight.data(), static_cast<int>(patch), dyt, static_cast<int>(cols), T(0), col,
         static_cast<int>(cols));
    for (long i = 0; i < n; ++i)
      col2im_add(col + i * oh * ow, c_in, h, w, k, stride, pad, dx->data() + i * c_in * h * w,
                 cols);
  }
}

// Per-channel batch statistics over (N,H,W). Saves mean and 1/sqrt(var+eps).
// Per-slice partial sums in T keep the inner loops vectorizable; the combine
// happens in double.
template <typename T>
void batchnorm_stats(const Tensor<T>& x, T eps, Tensor<T>& mean, Tensor<T>& invstd) {
  long n = x.n(), c = x.c(), hw = x.h() * x.w();
  long m = n * hw;
  for (long ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (long i = 0; i < n; ++i) {
      const T* p = x.data() + (i * c + ch) * hw;
      T s0 = 0, s1 = 0;
      for (long j = 0; j < hw; ++j) {
        s0 += p[j];
        s1 += p[j] * p[j];
      }
      sum += s0;
      sq += s1;
    }
    double mu = sum / m;
    double var = sq / m - mu * mu;
    if (var < 0) var = 0;
    mean[ch] = static_cast<T>(mu);
    invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
  }
}

template <typename T>
void batchnorm_apply(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& invstd,
                     const Tensor<T>& gamma, const Tensor<T>& beta, bool relu, Tensor<T>& y) {
  long n = x.n(), c = x.c(), hw = x.h() * x.w();
  for (long i = 0; i < n; ++i) {
    for (long ch = 0; ch < c; ++ch) {
      const T* src = x.data() + (i * c + ch) * hw;
      T* dst = y.data() + (i * c + ch) * hw;
      T a = gamma[ch] * invstd[ch];
      T b = beta[ch] - mean[ch] * a;
      if (relu) {
        for (long j = 0; j < hw; ++j) dst[j] = std::max(T(0), a * src[j] + b);
      } else {
        for (long j = 0; j < hw; ++j) dst[j] = a * src[j] + b;
      }
    }
  }
}

// Backward through (optionally relu-fused) batch normalization using batch
// statistics. `y` is the forward output (used only for the relu mask).
template <typename T>
void batchnorm_backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy_in,
                        const Tensor<T>& mean, const Tensor<T>& invstd, const Tensor<T>& gamma,
                        bool relu, bool batch_stats, Tensor<T>& dgamma, Tensor<T>& dbeta,
                        Tensor<T>& dx) {
  long n = x.n(), c = x.c(), hw = x.h() * x.w();
  long m = n * hw;
  for (long ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (long i = 0; i < n; ++i) {
      const T* xp = x.data() + (i * c + ch) * hw;
      const T* yp = y.data() + (i * c + ch) * hw;
      const T* dp = dy_in.data() + (i * c + ch) * hw;
      for (long j = 0; j < hw; ++j) {
        T d = relu ? (yp[j] > T(0) ? dp[j] : T(0)) : dp[j];
        T xhat = (xp[j] - mean[ch]) * invstd[ch];
        sum_dy += d;
        sum_dy_xhat += static_cast<double>(d) * xhat;
      }
    }
    dgamma[ch] += static_cast<T>(sum_dy_xhat);
    dbeta[ch] += static_cast<T>(sum_dy);
    T g_is = gamma[ch] * invstd[ch];
    if (batch_stats) {
      T c1 = static_cast<T>(sum_dy / m);
      T c2 = static_cast<T>(sum_dy_xhat / m);
      for (long i = 0; i < n; ++i) {
        const T* xp = x.data() + (i * c + ch) * hw;
        const T* yp = y.data() + (i * c + ch) * hw;
        const T* dp = dy_in.data() + (i * c + ch) * hw;
        T* dst = dx.data() + (i * c + ch) * hw;
        for (long j = 0; j < hw; ++j) {
          T d = relu ? (yp[j] > T(0) ? dp[j] : T(0)) : dp[j];
          T xhat = (xp[j] - mean[ch]) * invstd[ch];
          dst[j] += g_is * (d - c1 - xhat * c2);
        }
      }
    } else {
      for (long i = 0; i < n; ++i) {
        const T* yp = y.data() + (i * c + ch) * hw;
        const T* dp = dy_in.data() + (i * c + ch) * hw;
        T* dst = dx.data() + (i * c + ch) * hw;
        for (long j = 0; j < hw; ++j) {
          T d = relu ? (yp[j] > T(0) ? dp[j] : T(0)) : dp[j];
          dst[j] += g_is * d;
        }
      }
    }
  }
}

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y) {
  for (long i = 0; i < x.numel(); ++i) y[i] = std::max(T(0), x[i]);
}

template <typename T>
void avgpool_forward(const Tensor<T>& x, long k, Tensor<T>& y) {
  long n = x.n(), c = x.c(), h = x.h(), w = x.w();
  long oh = h / k, ow = w / k;
  T inv = T(1) / static_cast<T>(k * k);
  for (long i = 0; i < n * c; ++i) {
    const T* src = x.data() + i * h * w;
    T* dst = y.data() + i * oh * ow;
    for (long oi = 0; oi < oh; ++oi) {
      for (long oj = 0; oj < ow; ++oj) {
        T s = 0;
        for (long ki = 0; ki < k; ++ki)
          for (long kj = 0; kj < k; ++kj) s += src[(oi * k + ki) * w + oj * k + kj];
        dst[oi * ow + oj] = s * inv;
      }
    }
  }
}

template <typename T>
void avgpool_backward(const Tensor<T>& dy, long k, Tensor<T>& dx) {
  long n = dx.n(), c = dx.c(), h = dx.h(), w = dx.w();
  long oh = h / k, ow = w / k;
  T inv = T(1) / static_cast<T>(k * k);
  for (long i = 0; i < n * c; ++i) {
    const T* src = dy.data() + i * oh * ow;
    T* dst = dx.data() + i * h * w;
    for (long oi = 0; oi < oh; ++oi)
      for (long oj = 0; oj < ow; ++oj) {
        T g = src[oi * ow + oj] * inv;
        for (long ki = 0; ki < k; ++ki)
          for (long kj = 0; kj < k; ++kj) dst[(oi * k + ki) * w + oj * k + kj] += g;
      }
  }
}

template <typename T>
void maxpool_forward(const Tensor<T>& x, long k, long stride, long pad, Tensor<T>& y,
                     std::vector<int>& argmax) {
  long n = x.n(), c = x.c(), h = x.h(), w = x.w();
  long oh = conv_out_size(h, k, stride, pad);
  long ow = conv_out_size(w, k, stride, pad);
  argmax.resize(static_cast<std::size_t>(n * c * oh * ow));
  for (long i = 0; i < n * c; ++i) {
    const T* src = x.data() + i * h * w;
    T* dst = y.data() + i * oh * ow;
    int* am = argmax.data() + i * oh * ow;
    for (long oi = 0; oi < oh; ++oi) {
      for (long oj = 0; oj < ow; ++oj) {
        T best = -std::numeric_limits<T>::infinity();
        int best_idx = -1;
        for (long ki = 0; ki < k; ++ki) {
          long si = oi * stride - pad + ki;
          if (si < 0 || si >= h) continue;
          for (long kj = 0; kj < k; ++kj) {
            long sj = oj * stride - pad + kj;
            if (sj < 0 || sj >= w) continue;
            T v = src[si * w + sj];
            if (v > best) {
              best = v;
              best_idx = static_cast<int>(si * w + sj);
            }
          }
        }
        dst[oi * ow + oj] = best;
        am[oi * ow + oj] = best_idx;
      }
    }
  }
}

template <typename T>
void maxpool_backward(const Tensor<T>& dy, const std::vector<int>& argmax, Tensor<T>& dx) {
  long n = dx.n(), c = dx.c(), hw = dx.h() * dx.w();
  long ohw = dy.h() * dy.w();
  for (long i = 0; i < n * c; ++i) {
    const T* src = dy.data() + i * ohw;
    const int* am = argmax.data() + i * ohw;
    T* dst = dx.data() + i * hw;
    for (long p = 0; p < ohw; ++p)
      if (am[p] >= 0) dst[am[p]] += src[p];
  }
}

/// (N,C,H,W) -> (N,C) spatial mean.
template <typename T>
void global_avgpool_forward(const Tensor<T>& x, Tensor<T>& y) {
  long n = x.n(), c = x.c(), hw = x.h() * x.w();
  for (long i = 0; i < n * c; ++i) {
    const T* src = x.data() + i * hw;
    double s = 0.0;
    for (long j = 0; j < hw; ++j) s += src[j];
    y[i] = static_cast<T>(s / hw);
  }
}

template <typename T>
void global_avgpool_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  long n = dx.n(), c = dx.c(), hw = dx.h() * dx.w();
  for (long i = 0; i < n * c; ++i) {
    T g = dy[i] / static_cast<T>(hw);
    T* dst = dx.data() + i * hw;
    for (long j = 0; j < hw; ++j) dst[j] += g;
  }
}

template <typename T>
void upsample_nearest2_forward(const Tensor<T>& x, Tensor<T>& y) {
  long n = x.n(), c = x.c(), h = x.h(), w = x.w();
  for (long i = 0; i < n * c; ++i) {
    const T* src = x.data() + i * h * w;
    T* dst = y.data() + i * 4 * h * w;
    for (long r = 0; r < h; ++r)
      for (long col = 0; col < w; ++col) {
        T v = src[r * w + col];
        dst[(2 * r) * 2 * w + 2 * col] = v;
        dst[(2 * r) * 2 * w + 2 * col + 1] = v;
        dst[(2 * r + 1) * 2 * w + 2 * col] = v;
        dst[(2 * r + 1) * 2 * w + 2 * col + 1] = v;
      }
  }
}

template <typename T>
void upsample_nearest2_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  long n = dx.n(), c = dx.c(), h = dx.h(), w = dx.w();
  for (long i = 0; i < n * c; ++i) {
    const T* src = dy.data() + i * 4 * h * w;
    T* dst = dx.data() + i * h * w;
    for (long r = 0; r < h; ++r)
      for (long col = 0; col < w; ++col)
        dst[r * w + col] += src[(2 * r) * 2 * w + 2 * col] + src[(2 * r) * 2 * w + 2 * col + 1] +
                            src[(2 * r + 1) * 2 * w + 2 * col] +
                            src[(2 * r + 1) * 2 * w + 2 * col + 1];
  }
}

// x: (N,F), weight: (out,F), y: (N,out).
template <typename T>
void linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                    Tensor<T>& y) {
  long n = x.dim(0), f = x.dim(1), out = weight.dim(0);
  gemm(false, true, static_cast<int>(n), static_cast<int>(out), static_cast<int>(f), T(1),
       x.data(), static_cast<int>(f), weight.data(), static_cast<int>(f), T(0), y.data(),
       static_cast<int>(out));
  if (bias)
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < out; ++j) y.at(i, j) += (*bias)[j];
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                     Tensor<T>& dw, Tensor<T>* db, Tensor<T>* dx) {
  long n = x.dim(0), f = x.dim(1), out = weight.dim(0);
  gemm(true, false, static_cast<int>(out), static_cast<int>(f), static_cast<int>(n), T(1),
       dy.data(), static_cast<int>(out), x.data(), static_cast<int>(f), T(1), dw.data(),
       static_cast<int>(f));
  if (db)
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < out; ++j) (*db)[j] += dy.at(i, j);
  if (dx)
    gemm(false, false, static_cast<int>(n), static_cast<int>(f), static_cast<int>(out), T(1),
         dy.data(), static_cast<int>(out), weight.data(), static_cast<int>(f), T(1), dx->data(),
         static_cast<int>(f));
}

/// Bilinear resize with half-pixel centers (no corner alignment). The
/// reconstruction targets depend on this convention, so it is frozen here.
template <typename T>
void resize_bilinear(const Tensor<T>& x, long out_h, long out_w, Tensor<T>& y) {
  long n = x.n(), c = x.c(), h = x.h(), w = x.w();
  double sh = static_cast<double>(h) / out_h;
  double sw = static_cast<double>(w) / out_w;
  for (long i = 0; i < n * c; ++i) {
    const T* src = x.data() + i * h * w;
    T* dst = y.data() + i * out_h * out_w;
    for (long oi = 0; oi < out_h; ++oi) {
      double fy = (oi + 0.5) * sh - 0.5;
      long y0 = static_cast<long>(std::floor(fy));
      double wy = fy - y0;
      long y0c = std::clamp(y0, 0L, h - 1);
      long y1c = std::clamp(y0 + 1, 0L, h - 1);
      for (long oj = 0; oj < out_w; ++oj) {
        double fx = (oj + 0.5) * sw - 0.5;
        long x0 = static_cast<long>(std::floor(fx));
        double wx = fx - x0;
        long x0c = std::clamp(x0, 0L, w - 1);
        long x1c = std::clamp(x0 + 1, 0L, w - 1);
        double v = (1 - wy) * ((1 - wx) * src[y0c * w + x0c] + wx * src[y0c * w + x1c]) +
                   wy * ((1 - wx) * src[y1c * w + x0c] + wx * src[y1c * w + x1c]);
        dst[oi * out_w + oj] = static_cast<T>(v);
      }
    }
  }
}

}  // namespace condisr::ops
