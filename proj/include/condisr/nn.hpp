#pragma once

#include <string>
#include <unordered_map>

#include "condisr/graph.hpp"
#include "condisr/rng.hpp"

namespace condisr {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> m, v;  // Adam state, lazily sized
  bool trainable = true;
};

template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

/// Flat view over every parameter and buffer of a network, used by the
/// optimizer, the checkpoint writer and the parameter-count tests.
template <typename T>
struct ParamSet {
  std::vector<Param<T>*> params;
  std::vector<Buffer<T>*> buffers;

  void add(Param<T>& p) { params.push_back(&p); }
  void add(Buffer<T>& b) { buffers.push_back(&b); }

  long count() const {
    long n = 0;
    for (auto* p : params) n += p->value.numel();
    return n;
  }
  Param<T>* find(const std::string& name) const {
    for (auto* p : params)
      if (p->name == name) return p;
    return nullptr;
  }
};

/// Per-step forward context: the tape, the mode flags and a memo of
/// parameter leaves so that shared modules bind each parameter once.
template <typename T>
struct Ctx {
  Tape<T>& tape;
  bool training = true;
  bool grads = true;
  Rng* rng = nullptr;

  std::unordered_map<const Param<T>*, Var<T>> bound;

  Var<T> var(Param<T>& p) {
    auto it = bound.find(&p);
    if (it != bound.end()) return it->second;
    Var<T> v = tape.leaf(p.value, grads && p.trainable);
    bound.emplace(&p, v);
    return v;
  }
};

template <typename T>
struct Conv2d {
  Param<T> w, b;
  bool has_bias = false;
  long k = 3, stride = 1, pad = 1, in_c = 0, out_c = 0;

  void init(const std::string& name, long in, long out, long kk, long s, long p, bool bias,
            Rng& rng) {
    in_c = in;
    out_c = out;
    k = kk;
    stride = s;
    pad = p;
    has_bias = bias;
    w.name = name + ".w";
    w.value = Tensor<T>({out, in * kk * kk});
    T std_dev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(in * kk * kk)));
    for (long i = 0; i < w.value.numel(); ++i)
      w.value[i] = static_cast<T>(rng.normal()) * std_dev;
    if (bias) {
      b.name = name + ".b";
      b.value = Tensor<T>({out});
      T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in * kk * kk)));
      for (long i = 0; i < out; ++i) b.value[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
  }
  Var<T> forward(Ctx<T>& ctx, Var<T> x) {
    return conv2d(ctx.tape, x, ctx.var(w), has_bias ? ctx.var(b) : Var<T>{}, k, stride, pad);
  }
  void collect(ParamSet<T>& ps) {
    ps.add(w);
    if (has_bias) ps.add(b);
  }
};

template <typename T>
struct BatchNorm2d {
  Param<T> gamma, beta;
  Buffer<T> running_mean, running_var;
  T momentum = T(0.1);

  void init(const std::string& name, long c) {
    gamma.name = name + ".gamma";
    gamma.value = Tensor<T>::full({c}, T(1));
    beta.name = name + ".beta";
    beta.value = Tensor<T>({c});
    running_mean.name = name + ".running_mean";
    running_mean.value = Tensor<T>({c});
    running_var.name = name + ".running_var";
    running_var.value = Tensor<T>::full({c}, T(1));
  }
  Var<T> forward(Ctx<T>& ctx, Var<T> x, bool fused_relu) {
    return batchnorm(ctx.tape, x, ctx.var(gamma), ctx.var(beta), running_mean.value,
                     running_var.value, ctx.training, fused_relu, momentum);
  }
  void collect(ParamSet<T>& ps) {
    ps.add(gamma);
    ps.add(beta);
    ps.add(running_mean);
    ps.add(running_var);
  }
};

template <typename T>
struct LinearLayer {
  Param<T> w, b;
  long in_f = 0, out_f = 0;

  void init(const std::string& name, long in, long out, Rng& rng) {
    in_f = in;
    out_f = out;
    w.name = name + ".w";
    w.value = Tensor<T>({out, in});
    T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
    for (long i = 0; i < w.value.numel(); ++i)
      w.value[i] = static_cast<T>(rng.uniform(-bound, bound));
    b.name = name + ".b";
    b.value = Tensor<T>({out});
  }
  Var<T> forward(Ctx<T>& ctx, Var<T> x) { return linear(ctx.tape, x, ctx.var(w), ctx.var(b)); }
  void collect(ParamSet<T>& ps) {
    ps.add(w);
    ps.add(b);
  }
};

/// Adam with the usual bias correction; no weight decay, no schedule.
template <typename T>
class Adam {
 public:
  Adam(T lr = T(1e-3), T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet<T>& ps, Ctx<T>& ctx) {
    ++t_;
    T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), t_));
    T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), t_));
    for (Param<T>* p : ps.params) {
      if (!p->trainable) continue;
      auto it = ctx.bound.find(p);
      if (it == ctx.bound.end()) continue;
      if (!ctx.tape.grad_present(it->second.id)) continue;
      const Tensor<T>& g = ctx.tape.grad(it->second);
      if (p->m.empty()) {
        p->m = Tensor<T>(p->value.dims());
        p->v = Tensor<T>(p->value.dims());
      }
      for (long i = 0; i < g.numel(); ++i) {
        p->m[i] = beta1_ * p->m[i] + (T(1) - beta1_) * g[i];
        p->v[i] = beta2_ * p->v[i] + (T(1) - beta2_) * g[i] * g[i];
        T mhat = p->m[i] / bc1;
        T vhat = p->v[i] / bc2;
        p->value[i] -= lr_ * mhat / (static_cast<T>(std::sqrt(static_cast<double>(vhat))) + eps_);
      }
    }
  }

  void reset() { t_ = 0; }
  long steps() const { return t_; }

 private:
  T lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace condisr
