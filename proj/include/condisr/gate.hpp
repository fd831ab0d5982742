#pragma once

#include "condisr/nn.hpp"

// Channel-wise soft disentanglement of a stem feature map into structure and
// style halves, plus the learnable projection into the contrastive latent
// space. One gate and one projector are shared by all branches.

namespace condisr {

template <typename T>
struct ChannelGate {
  Param<T> theta;  // (2, C); row 0 -> structure, row 1 -> style
  T tau = T(0.1);

  void init(const std::string& name, long channels, T temperature) {
    theta.name = name + ".theta";
    theta.value = Tensor<T>({2, channels});  // zeros: even split at start
    tau = temperature;
  }
  long channels() const { return theta.value.dim(1); }
  void collect(ParamSet<T>& ps) { ps.add(theta); }
};

/// Per-channel softmax weights of the gate, computed in double regardless of
/// the network scalar type. Returns (structure, style); the two rows sum to
/// one per channel.
template <typename T>
std::pair<std::vector<double>, std::vector<double>> gate_weights(const ChannelGate<T>& gate) {
  long c = gate.channels();
  std::vector<double> w_str(c), w_sty(c);
  for (long ch = 0; ch < c; ++ch) {
    double a = static_cast<double>(gate.theta.value.at(0, ch)) / gate.tau;
    double b = static_cast<double>(gate.theta.value.at(1, ch)) / gate.tau;
    if (!std::isfinite(a) || !std::isfinite(b))
      throw std::runtime_error("gate_weights: non-finite theta");
    double m = std::max(a, b);
    double ea = std::exp(a - m), eb = std::exp(b - m);
    w_str[ch] = ea / (ea + eb);
    w_sty[ch] = eb / (ea + eb);
  }
  return {std::move(w_str), std::move(w_sty)};
}

template <typename T>
struct Disentangled {
  Var<T> structure;
  Var<T> style;
};

/// Tape version: f (N,C,H,W) -> gated halves. With `detach_cls` the caller
/// receives an extra structure tensor whose gate weights do not take
/// gradients (used to stop classification-loss gradients into theta).
template <typename T>
Disentangled<T> disentangle(Ctx<T>& ctx, ChannelGate<T>& gate, Var<T> f) {
  if (ctx.tape.val(f).c() != gate.channels())
    throw std::runtime_error("disentangle: channel count mismatch with gate");
  Var<T> w = softmax_gate(ctx.tape, ctx.var(gate.theta), gate.tau);
  return {channel_scale(ctx.tape, f, w, 0), channel_scale(ctx.tape, f, w, 1)};
}

template <typename T>
Var<T> disentangle_structure_detached(Ctx<T>& ctx, ChannelGate<T>& gate, Var<T> f) {
  Var<T> w = softmax_gate(ctx.tape, ctx.var(gate.theta), gate.tau);
  return channel_scale(ctx.tape, f, w, 0, /*detach_weights=*/true);
}

/// Raw (non-tape) version for direct use and tests.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> disentangle_raw(const Tensor<T>& f, const ChannelGate<T>& gate) {
  if (f.c() != gate.channels())
    throw std::runtime_error("disentangle: channel count mismatch with gate");
  auto [w_str, w_sty] = gate_weights(gate);
  Tensor<T> fs(f.dims()), fy(f.dims());
  long n = f.n(), c = f.c(), hw = f.h() * f.w();
  for (long i = 0; i < n; ++i)
    for (long ch = 0; ch < c; ++ch) {
      const T* src = f.data() + (i * c + ch) * hw;
      T* ds = fs.data() + (i * c + ch) * hw;
      T* dy = fy.data() + (i * c + ch) * hw;
      T a = static_cast<T>(w_str[ch]);
      T b = static_cast<T>(w_sty[ch]);
      for (long j = 0; j < hw; ++j) {
        ds[j] = src[j] * a;
        dy[j] = src[j] * b;
      }
    }
  return {std::move(fs), std::move(fy)};
}

/// Global average pool followed by an affine map into the latent space;
/// optionally one hidden relu layer.
template <typename T>
struct ProjectionHead {
  LinearLayer<T> fc1, fc2;
  bool hidden = false;

  void init(const std::string& name, long in_c, long out_d, long hidden_dim, Rng& rng) {
    hidden = hidden_dim > 0;
    if (hidden) {
      fc1.init(name + ".fc1", in_c, hidden_dim, rng);
      fc2.init(name + ".fc2", hidden_dim, out_d, rng);
    } else {
      fc1.init(name + ".fc1", in_c, out_d, rng);
    }
  }
  Var<T> forward(Ctx<T>& ctx, Var<T> feature_map) {
    Var<T> pooled = global_avgpool(ctx.tape, feature_map);
    Var<T> z = fc1.forward(ctx, pooled);
    if (hidden) z = fc2.forward(ctx, relu(ctx.tape, z));
    return z;
  }
  void collect(ParamSet<T>& ps) {
    fc1.collect(ps);
    if (hidden) fc2.collect(ps);
  }
};

}  // namespace condisr
