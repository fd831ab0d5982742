#pragma once

#include <functional>
#include <memory>

#include "condisr/ops.hpp"
#include "condisr/tensor.hpp"

// Reverse-mode tape. Ops append nodes in topological order; backward()
// walks the tape once in reverse. Gradients are allocated lazily and
// accumulated, so parameters shared across branches (stem, gate, projector)
// receive the sum of all path contributions.

namespace condisr {

template <typename T>
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool rg = false;
    std::function<void(Tape&)> bwd;
  };

  Var<T> make(Tensor<T> v, bool rg) {
    nodes_.push_back(Node{std::move(v), Tensor<T>(), rg, nullptr});
    return Var<T>{static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> leaf(Tensor<T> v, bool requires_grad = false) { return make(std::move(v), requires_grad); }

  void set_bwd(Var<T> v, std::function<void(Tape&)> f) { nodes_[v.id].bwd = std::move(f); }

  const Tensor<T>& val(Var<T> v) const { return nodes_[v.id].val; }
  const Tensor<T>& val(int id) const { return nodes_[id].val; }
  Tensor<T>& val_mut(Var<T> v) { return nodes_[v.id].val; }
  bool rg(Var<T> v) const { return v.valid() && nodes_[v.id].rg; }

  /// Gradient tensor of a node, allocated to zeros on first touch.
  Tensor<T>& grad(Var<T> v) { return grad_ref(v.id); }
  Tensor<T>& grad_ref(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.val.dims());
    return n.grad;
  }
  bool grad_present(int id) const { return !nodes_[id].grad.empty(); }

  void backward(Var<T> root) {
    grad_ref(root.id).fill(T(1));
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.rg && n.bwd && !n.grad.empty()) n.bwd(*this);
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

namespace detail {
template <typename T>
std::vector<T>& col_scratch() {
  static thread_local std::vector<T> buf;
  return buf;
}
}  // namespace detail

template <typename T>
Var<T> conv2d(Tape<T>& tape, Var<T> x, Var<T> weight, Var<T> bias, long k, long stride, long pad) {
  const Tensor<T>& xv = tape.val(x);
  const Tensor<T>& wv = tape.val(weight);
  long oh = ops::conv_out_size(xv.h(), k, stride, pad);
  long ow = ops::conv_out_size(xv.w(), k, stride, pad);
  Tensor<T> y({xv.n(), wv.dim(0), oh, ow});
  ops::conv2d_forward(xv, wv, bias.valid() ? &tape.val(bias) : nullptr, k, stride, pad, y,
                      detail::col_scratch<T>());
  bool rg = tape.rg(x) || tape.rg(weight) || tape.rg(bias);
  Var<T> out = tape.make(std::move(y), rg);
  if (rg) {
    int oi = out.id, xi = x.id, wi = weight.id, bi = bias.valid() ? bias.id : -1;
    bool need_dx = tape.rg(x);
    bool need_dw = tape.rg(weight);
    tape.set_bwd(out, [oi, xi, wi, bi, k, stride, pad, need_dx, need_dw](Tape<T>& t) {
      const Tensor<T>& dy = t.grad_ref(oi);
      if (!need_dw && !need_dx) return;
      Tensor<T>& dw = t.grad_ref(wi);
      Tensor<T>* db = bi >= 0 ? &t.grad_ref(bi) : nullptr;
      Tensor<T>* dx = need_dx ? &t.grad_ref(xi) : nullptr;
      ops::conv2d_backward(t.val(xi), t.val(wi), dy, k, stride, pad, dw, db, dx,
                           detail::col_scratch<T>());
    });
  }
  return out;
}

/// Batch normalization, optionally fused with relu. In training mode batch
/// statistics are used and the running buffers are updated in place; in
/// evaluation mode the running buffers are used (exact identity across
/// repeated calls).
template <typename T>
Var<T> batchnorm(Tape<T>& tape, Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                 Tensor<T>& running_var, bool training, bool relu, T momentum = T(0.1),
                 T eps = T(1e-5)) {
  const Tensor<T>& xv = tape.val(x);
  long c = xv.c();
  auto saved = std::make_shared<std::pair<Tensor<T>, Tensor<T>>>(Tensor<T>({c}), Tensor<T>({c}));
  if (training) {
    ops::batchnorm_stats(xv, eps, saved->first, saved->second);
    for (long ch = 0; ch < c; ++ch) {
      T var = T(1) / (saved->second[ch] * saved->second[ch]) - eps;
      running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * saved->first[ch];
      running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * var;
    }
  } else {
    for (long ch = 0; ch < c; ++ch) {
      saved->first[ch] = running_mean[ch];
      saved->second[ch] = T(1) / std::sqrt(running_var[ch] + eps);
    }
  }
  Tensor<T> y(xv.dims());
  ops::batchnorm_apply(xv, saved->first, saved->second, tape.val(gamma), tape.val(beta), relu, y);
  bool rg = tape.rg(x) || tape.rg(gamma) || tape.rg(beta);
  Var<T> out = tape.make(std::move(y), rg);
  if (rg) {
    int oi = out.id, xi = x.id, gi = gamma.id, bi = beta.id;
    tape.set_bwd(out, [oi, xi, gi, bi, saved, training, relu](Tape<T>& t) {
      ops::batchnorm_backward(t.val(xi), t.val(oi), t.grad_ref(oi), saved->first, saved->second,
                              t.val(gi), relu, training, t.grad_ref(gi), t.grad_ref(bi),
                              t.grad_ref(xi));
    });
  }
  return out;
}

template <typename T>
Var<T> relu(Tape<T>& tape, Var<T> x) {
  const Tensor<T>& xv = tape.val(x);
  Tensor<T> y(xv.dims());
  ops::relu_forward(xv, y);
  Var<T> out = tape.make(std::move(y), tape.rg(x));
  if (tape.rg(x)) {
    int oi = out.id, xi = x.id;
    tape.set_bwd(out, [oi, xi](Tape<T>& t) {
      const Tensor<T>& dy = t.grad_ref(oi);
      const Tensor<T>& y = t.val(oi);
      Tensor<T>& dx = t.grad_ref(xi);
      for (long i = 0; i < dy.numel(); ++i)
        if (y[i] > T(0)) dx[i] += dy[i];
    });
  }
  return out;
}

template <typename T>
Var<T> add(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Tensor<T>& av = tape.val(a);
  const Tensor<T>& bv = tape.val(b);
  Tensor<T> y(av.dims());
  for (long i = 0; i < av.numel(); ++i) y[i] = av[i] + bv[i];
  bool rg = tape.rg(a) || tape.rg(b);
  Var<T> out = tape.make(std::move(y), rg);
  if (rg) {
    int oi = out.id, ai = a.id, bi = b.id;
    bool ra = tape.rg(a), rb = tape.rg(b);
    tape.set_bwd(out, [oi, ai, bi, ra, rb](Tape<T>& t) {
      const Tensor<T>& dy = t.grad_ref(oi);
      if (ra) {
        Tensor<T>& da = t.grad_ref(ai);
        for (long i = 0; i < dy.numel(); ++i) da[i] += dy[i];
      }
      if (rb) {
        Tensor<T>& db = t.grad_ref(bi);
        for (long i = 0; i < dy.numel(); ++i) db[i] += dy[i];
      }
    });
  }
  return out;
}

template <typename T>
Var<T> avgpool(Tape<T>& tape, Var<T> x, long k) {
  const Tensor<T>& xv = tape.val(x);
  Tensor<T> y({xv.n(), xv.c(), xv.h() / k, xv.w() / k});
  ops::avgpool_forward(xv, k, y);
  Var<T> out = tape.make(std::move(y), tape.rg(x));
  if (tape.rg(x)) {
    int oi = out.id, xi = x.id;
    tape.set_bwd(out, [oi, xi, k](Tape<T>& t) {
      ops::avgpool_backward(t.grad_ref(oi), k, t.grad_ref(xi));
    });
  }
  return out;
}

template <typename T>
Var<T> maxpool(Tape<T>& tape, Var<T> x, long k, long stride, long pad) {
  const Tensor<T>& xv = tape.val(x);
  long oh = ops::conv_out_size(xv.h(), k, stride, pad);
  long ow = ops::conv_out_size(xv.w(), k, stride, pad);
  Tensor<T> y({xv.n(), xv.c(), oh, ow});
  auto argmax = std::make_shared<std::vector<int>>();
  ops::maxpool_forward(xv, k, stride, pad, y, *argmax);
  Var<T> out = tape.make(std::move(y), tape.rg(x));
  if (tape.rg(x)) {
    int oi = out.id, xi = x.id;
    tape.set_bwd(out, [oi, xi, argmax](Tape<T>& t) {
      ops::maxpool_backward(t.grad_ref(oi), *argmax, t.grad_ref(xi));
    });
  }
  return out;
}

/// (N,C,H,W) -> (N,C).
template <typename T>
Var<T> global_avgpool(Tape<T>& tape, Var<T> x) {
  const Tensor<T>& xv = tape.val(x);
  Tensor<T> y({xv.n(), xv.c()});
  ops::global_avgpool_forward(xv, y);
  Var<T> out = tape.make(std::move(y), tape.rg(x));
  if (tape.rg(x)) {
    int oi = out.id, xi = x.id;
    tape.set_bwd(out, [oi, xi](Tape<T>& t) {
      ops::global_avgpool_backward(t.grad_ref(oi), t.grad_ref(xi));
    });
  }
  return out;
}

template <typename T>
Var<T> upsample_nearest2(Tape<T>& tape, Var<T> x) {
  const Tensor<T>& xv = tape.val(x);
  Tensor<T> y({xv.n(), xv.c(), xv.h() * 2, xv.w() * 2});
  ops::upsample_nearest2_forward(xv, y);
  Var<T> out = tape.make(std::move(y), tape.rg(x));
  if (tape.rg(x)) {
    int oi = out.id, xi = x.id;
    tape.set_bwd(out, [oi, xi](Tape<T>& t) {
      ops::upsample_nearest2_backward(t.grad_ref(oi), t.grad_ref(xi));
    });
  }
  return out;
}

template <typename T>
Var<T> linear(Tape<T>& tape, Var<T> x, Var<T> weight, Var<T> bias) {
  const Tensor<T>& xv = tape.val(x);
  const Tensor<T>& wv = tape.val(weight);
  Tensor<T> y({xv.dim(0), wv.dim(0)});
  ops::linear_forward(xv, wv, bias.valid() ? &tape.val(bias) : nullptr, y);
  bool rg = tape.rg(x) || tape.rg(weight) || tape.rg(bias);
  Var<T> out = tape.make(std::move(y), rg);
  if (rg) {
    int oi = out.id, xi = x.id, wi = weight.id, bi = bias.valid() ? bias.id : -1;
    bool need_dx = tape.rg(x);
    tape.set_bwd(out, [oi, xi, wi, bi, need_dx](Tape<T>& t) {
      Tensor<T>* db = bi >= 0 ? &t.grad_ref(bi) : nullptr;
      Tensor<T>* dx = need_dx ? &t.grad_ref(xi) : nullptr;
      ops::linear_backward(t.val(xi), t.val(wi), t.grad_ref(oi), t.grad_ref(wi), db, dx);
    });
  }
  return out;
}

/// Column-wise two-way softmax of theta/tau: theta is (2,C), output is (2,C)
/// with out[0,c] + out[1,c] == 1.
template <typename T>
Var<T> softmax_gate(Tape<T>& tape, Var<T> theta, T tau) {
  const Tensor<T>& tv = tape.val(theta);
  long c = tv.dim(1);
  Tensor<T> w({2, c});
  for (long ch = 0; ch < c; ++ch) {
    T a = tv.at(0, ch) / tau, b = tv.at(1, ch) / tau;
    T m = std::max(a, b);
    T ea = std::exp(a - m), eb = std::exp(b - m);
    T z = ea + eb;
    w.at(0, ch) = ea / z;
    w.at(1, ch) = eb / z;
  }
  Var<T> out = tape.make(std::move(w), tape.rg(theta));
  if (tape.rg(theta)) {
    int oi = out.id, ti = theta.id;
    tape.set_bwd(out, [oi, ti, tau, c](Tape<T>& t) {
      const Tensor<T>& w = t.val(oi);
      const Tensor<T>& g = t.grad_ref(oi);
      Tensor<T>& dtheta = t.grad_ref(ti);
      for (long ch = 0; ch < c; ++ch) {
        T w0 = w.at(0, ch), w1 = w.at(1, ch);
        T dot = g.at(0, ch) * w0 + g.at(1, ch) * w1;
        dtheta.at(0, ch) += w0 * (g.at(0, ch) - dot) / tau;
        dtheta.at(1, ch) += w1 * (g.at(1, ch) - dot) / tau;
      }
    });
  }
  return out;
}

/// y[n,c,:,:] = f[n,c,:,:] * weights[row,c].
template <typename T>
Var<T> channel_scale(Tape<T>& tape, Var<T> f, Var<T> weights, long row,
                     bool detach_weights = false) {
  const Tensor<T>& fv = tape.val(f);
  const Tensor<T>& wv = tape.val(weights);
  long n = fv.n(), c = fv.c(), hw = fv.h() * fv.w();
  Tensor<T> y(fv.dims());
  for (long i = 0; i < n; ++i)
    for (long ch = 0; ch < c; ++ch) {
      T s = wv.at(row, ch);
      const T* src = fv.data() + (i * c + ch) * hw;
      T* dst = y.data() + (i * c + ch) * hw;
      for (long j = 0; j < hw; ++j) dst[j] = src[j] * s;
    }
  bool w_grad = !detach_weights && tape.rg(weights);
  bool rg = tape.rg(f) || w_grad;
  Var<T> out = tape.make(std::move(y), rg);
  if (rg) {
    int oi = out.id, fi = f.id, wi = weights.id;
    bool need_df = tape.rg(f);
    tape.set_bwd(out, [oi, fi, wi, row, need_df, w_grad, n, c, hw](Tape<T>& t) {
      const Tensor<T>& dy = t.grad_ref(oi);
      const Tensor<T>& fv = t.val(fi);
      const Tensor<T>& wv = t.val(wi);
      if (need_df) {
        Tensor<T>& df = t.grad_ref(fi);
        for (long i = 0; i < n; ++i)
          for (long ch = 0; ch < c; ++ch) {
            T s = wv.at(row, ch);
            const T* src = dy.data() + (i * c + ch) * hw;
            T* dst = df.data() + (i * c + ch) * hw;
            for (long j = 0; j < hw; ++j) dst[j] += src[j] * s;
          }
      }
      if (w_grad) {
        Tensor<T>& dw = t.grad_ref(wi);
        for (long ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (long i = 0; i < n; ++i) {
            const T* a = dy.data() + (i * c + ch) * hw;
            const T* b = fv.data() + (i * c + ch) * hw;
            for (long j = 0; j < hw; ++j) s += static_cast<double>(a[j]) * b[j];
          }
          dw.at(row, ch) += static_cast<T>(s);
        }
      }
    });
  }
  return out;
}

namespace detail {
template <typename T>
void instance_stats(const Tensor<T>& x, Tensor<T>& mu, Tensor<T>& sig, T eps) {
  long n = x.n(), c = x.c(), hw = x.h() * x.w();
  for (long i = 0; i < n * c; ++i) {
    const T* p = x.data() + i * hw;
    double s = 0.0, sq = 0.0;
    for (long j = 0; j < hw; ++j) {
      s += p[j];
      sq += static_cast<double>(p[j]) * p[j];
    }
    double m = s / hw;
    double v = sq / hw - m * m;
    if (v < 0) v = 0;
    mu[i] = static_cast<T>(m);
    sig[i] = static_cast<T>(std::sqrt(v + static_cast<double>(eps)));
  }
  (void)n;
  (void)c;
}

// Shared core of the feature-statistics plugins: renormalize each (n,c)
// slice from (mu, sig) to (mu2, sig2). Statistics are treated as constants
// in the backward pass, matching the reference implementations.
template <typename T>
Var<T> renormalize(Tape<T>& tape, Var<T> x, const Tensor<T>& mu, const Tensor<T>& sig,
                   std::shared_ptr<Tensor<T>> mu2, std::shared_ptr<Tensor<T>> sig2) {
  const Tensor<T>& xv = tape.val(x);
  long n = xv.n(), c = xv.c(), hw = xv.h() * xv.w();
  Tensor<T> y(xv.dims());
  auto scale = std::make_shared<Tensor<T>>(std::vector<long>{n * c});
  for (long i = 0; i < n * c; ++i) {
    T a = (*sig2)[i] / sig[i];
    (*scale)[i] = a;
    T b = (*mu2)[i] - mu[i] * a;
    const T* src = xv.data() + i * hw;
    T* dst = y.data() + i * hw;
    for (long j = 0; j < hw; ++j) dst[j] = a * src[j] + b;
  }
  Var<T> out = tape.make(std::move(y), tape.rg(x));
  if (tape.rg(x)) {
    int oi = out.id, xi = x.id;
    tape.set_bwd(out, [oi, xi, scale, hw](Tape<T>& t) {
      const Tensor<T>& dy = t.grad_ref(oi);
      Tensor<T>& dx = t.grad_ref(xi);
      long nc = scale->numel();
      for (long i = 0; i < nc; ++i) {
        T a = (*scale)[i];
        const T* src = dy.data() + i * hw;
        T* dst = dx.data() + i * hw;
        for (long j = 0; j < hw; ++j) dst[j] += a * src[j];
      }
    });
  }
  return out;
}
}  // namespace detail

/// MixStyle core: per-instance channel statistics are mixed with those of a
/// permuted batch partner using per-sample weights lambda.
template <typename T>
Var<T> mixstyle_op(Tape<T>& tape, Var<T> x, const std::vector<int>& perm,
                   const std::vector<T>& lambda, T eps = T(1e-6)) {
  const Tensor<T>& xv = tape.val(x);
  long n = xv.n(), c = xv.c();
  Tensor<T> mu({n * c}), sig({n * c});
  detail::instance_stats(xv, mu, sig, eps);
  auto mu2 = std::make_shared<Tensor<T>>(std::vector<long>{n * c});
  auto sig2 = std::make_shared<Tensor<T>>(std::vector<long>{n * c});
  for (long i = 0; i < n; ++i) {
    T lam = lambda[i];
    long p = perm[i];
    for (long ch = 0; ch < c; ++ch) {
      (*mu2)[i * c + ch] = lam * mu[i * c + ch] + (T(1) - lam) * mu[p * c + ch];
      (*sig2)[i * c + ch] = lam * sig[i * c + ch] + (T(1) - lam) * sig[p * c + ch];
    }
  }
  return detail::renormalize(tape, x, mu, sig, mu2, sig2);
}

/// DSU core: statistics are perturbed with Gaussian noise scaled by the
/// batch-level uncertainty of each channel's mean/std.
template <typename T>
Var<T> dsu_op(Tape<T>& tape, Var<T> x, const Tensor<T>& eps_mu, const Tensor<T>& eps_sig,
              T eps = T(1e-6)) {
  const Tensor<T>& xv = tape.val(x);
  long n = xv.n(), c = xv.c();
  Tensor<T> mu({n * c}), sig({n * c});
  detail::instance_stats(xv, mu, sig, eps);
  // Batch-level std of the per-instance statistics, per channel.
  Tensor<T> unc_mu({c}), unc_sig({c});
  for (long ch = 0; ch < c; ++ch) {
    double m1 = 0.0, m2 = 0.0, s1 = 0.0, s2 = 0.0;
    for (long i = 0; i < n; ++i) {
      m1 += mu[i * c + ch];
      m2 += static_cast<double>(mu[i * c + ch]) * mu[i * c + ch];
      s1 += sig[i * c + ch];
      s2 += static_cast<double>(sig[i * c + ch]) * sig[i * c + ch];
    }
    double vm = m2 / n - (m1 / n) * (m1 / n);
    double vs = s2 / n - (s1 / n) * (s1 / n);
    unc_mu[ch] = static_cast<T>(std::sqrt(std::max(0.0, vm)));
    unc_sig[ch] = static_cast<T>(std::sqrt(std::max(0.0, vs)));
  }
  auto mu2 = std::make_shared<Tensor<T>>(std::vector<long>{n * c});
  auto sig2 = std::make_shared<Tensor<T>>(std::vector<long>{n * c});
  for (long i = 0; i < n; ++i)
    for (long ch = 0; ch < c; ++ch) {
      (*mu2)[i * c + ch] = mu[i * c + ch] + eps_mu.at(i, ch) * unc_mu[ch];
      (*sig2)[i * c + ch] = sig[i * c + ch] + eps_sig.at(i, ch) * unc_sig[ch];
    }
  return detail::renormalize(tape, x, mu, sig, mu2, sig2);
}

// ---------------------------------------------------------------------------
// Scalar-valued loss ops. All losses return a {1}-shaped node.
// ---------------------------------------------------------------------------

/// Mean over the batch of binary cross-entropy with logits.
template <typename T>
Var<T> bce_logits(Tape<T>& tape, Var<T> logits, const Tensor<T>& labels) {
  const Tensor<T>& z = tape.val(logits);
  long n = z.numel();
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    double zi = z[i];
    double sp = std::max(zi, 0.0) + std::log1p(std::exp(-std::abs(zi)));
    acc += sp - static_cast<double>(labels[i]) * zi;
  }
  Tensor<T> y({1});
  y[0] = static_cast<T>(acc / n);
  Var<T> out = tape.make(std::move(y), tape.rg(logits));
  if (tape.rg(logits)) {
    int oi = out.id, zi = logits.id;
    auto lab = std::make_shared<Tensor<T>>(labels);
    tape.set_bwd(out, [oi, zi, lab, n](Tape<T>& t) {
      T go = t.grad_ref(oi)[0];
      const Tensor<T>& z = t.val(zi);
      Tensor<T>& dz = t.grad_ref(zi);
      for (long i = 0; i < n; ++i) {
        double s = 1.0 / (1.0 + std::exp(-static_cast<double>(z[i])));
        dz[i] += go * static_cast<T>((s - (*lab)[i]) / n);
      }
    });
  }
  return out;
}

enum class PairReduce { kSum, kCoordMean };

/// Batch mean of the per-sample L1 distance between two latent batches.
/// `clamp` (when > 0) caps each per-sample distance. `hinge_margin`
/// (when > 0) switches to mean max(0, margin - d).
template <typename T>
Var<T> pair_l1(Tape<T>& tape, Var<T> a, Var<T> b, PairReduce reduce, T clamp = T(0),
               T hinge_margin = T(0)) {
  const Tensor<T>& av = tape.val(a);
  const Tensor<T>& bv = tape.val(b);
  if (!av.same_shape(bv)) throw std::runtime_error("pair_l1: latent shape mismatch");
  long n = av.dim(0), d = av.dim(1);
  T norm = reduce == PairReduce::kCoordMean ? T(1) / static_cast<T>(d) : T(1);
  auto active = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n), T(0));
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    double dist = 0.0;
    for (long j = 0; j < d; ++j) dist += std::abs(static_cast<double>(av.at(i, j)) - bv.at(i, j));
    dist *= norm;
    if (hinge_margin > T(0)) {
      double h = std::max(0.0, static_cast<double>(hinge_margin) - dist);
      acc += h;
      (*active)[i] = h > 0.0 ? T(-1) : T(0);  // d(hinge)/d(dist)
    } else if (clamp > T(0) && dist >= static_cast<double>(clamp)) {
      acc += clamp;
      (*active)[i] = T(0);
    } else {
      acc += dist;
      (*active)[i] = T(1);
    }
  }
  Tensor<T> y({1});
  y[0] = static_cast<T>(acc / n);
  bool rg = tape.rg(a) || tape.rg(b);
  Var<T> out = tape.make(std::move(y), rg);
  if (rg) {
    int oi = out.id, ai = a.id, bi = b.id;
    bool ra = tape.rg(a), rb = tape.rg(b);
    tape.set_bwd(out, [oi, ai, bi, ra, rb, n, d, norm, active](Tape<T>& t) {
      T go = t.grad_ref(oi)[0];
      const Tensor<T>& av = t.val(ai);
      const Tensor<T>& bv = t.val(bi);
      Tensor<T>* da = ra ? &t.grad_ref(ai) : nullptr;
      Tensor<T>* db = rb ? &t.grad_ref(bi) : nullptr;
      for (long i = 0; i < n; ++i) {
        T f = (*active)[i];
        if (f == T(0)) continue;
        T scale = go * f * norm / static_cast<T>(n);
        for (long j = 0; j < d; ++j) {
          T diff = av.at(i, j) - bv.at(i, j);
          T s = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
          if (da) da->at(i, j) += scale * s;
          if (db) db->at(i, j) -= scale * s;
        }
      }
    });
  }
  return out;
}

/// Squared error between prediction and a constant target; mean or sum.
template <typename T>
Var<T> squared_error(Tape<T>& tape, Var<T> pred, const Tensor<T>& target, bool mean) {
  const Tensor<T>& pv = tape.val(pred);
  if (!pv.same_shape(target)) throw std::runtime_error("squared_error: shape mismatch");
  long n = pv.numel();
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    double dd = static_cast<double>(pv[i]) - target[i];
    acc += dd * dd;
  }
  Tensor<T> y({1});
  y[0] = static_cast<T>(mean ? acc / n : acc);
  Var<T> out = tape.make(std::move(y), tape.rg(pred));
  if (tape.rg(pred)) {
    int oi = out.id, pi = pred.id;
    auto tgt = std::make_shared<Tensor<T>>(target);
    T scale = mean ? T(2) / static_cast<T>(n) : T(2);
    tape.set_bwd(out, [oi, pi, tgt, scale](Tape<T>& t) {
      T go = t.grad_ref(oi)[0];
      const Tensor<T>& p = t.val(pi);
      Tensor<T>& dp = t.grad_ref(pi);
      for (long i = 0; i < p.numel(); ++i) dp[i] += go * scale * (p[i] - (*tgt)[i]);
    });
  }
  return out;
}

/// Weighted sum of scalar nodes: sum_i coeff[i] * v[i].
template <typename T>
Var<T> weighted_sum(Tape<T>& tape, const std::vector<Var<T>>& vs, const std::vector<T>& coeffs) {
  Tensor<T> y({1});
  double acc = 0.0;
  bool rg = false;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    acc += static_cast<double>(coeffs[i]) * tape.val(vs[i])[0];
    rg = rg || tape.rg(vs[i]);
  }
  y[0] = static_cast<T>(acc);
  Var<T> out = tape.make(std::move(y), rg);
  if (rg) {
    int oi = out.id;
    auto ids = std::make_shared<std::vector<std::pair<int, T>>>();
    for (std::size_t i = 0; i < vs.size(); ++i)
      if (tape.rg(vs[i])) ids->emplace_back(vs[i].id, coeffs[i]);
    tape.set_bwd(out, [oi, ids](Tape<T>& t) {
      T go = t.grad_ref(oi)[0];
      for (auto& [id, cf] : *ids) t.grad_ref(id)[0] += go * cf;
    });
  }
  return out;
}

}  // namespace condisr
