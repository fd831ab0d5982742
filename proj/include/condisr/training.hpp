#pragma once

#include "condisr/augment.hpp"
#include "condisr/losses.hpp"
#include "condisr/model.hpp"

// Assembly of the per-step training graph, shared by the float training
// engine and the double-precision gradient checks.

namespace condisr {

enum class Method { kErmNoAug, kErm, kCondisr, kCondisrNoRec };

inline bool uses_augmentation(Method m) { return m != Method::kErmNoAug; }
inline bool uses_gate(Method m) { return m == Method::kCondisr || m == Method::kCondisrNoRec; }
inline bool uses_decoder(Method m) { return m == Method::kCondisr; }

template <typename T>
struct TrainSettings {
  LossWeights<T> weights;
  LossOptions<T> loss_opt;
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.5, 0.5, 0.5};
  long decoder_resolution = 48;
  bool stopgrad_cls = false;
};

template <typename T>
struct TrainGraph {
  Var<T> total;
  T cls = 0, c_str = 0, c_sty = 0, rec = 0;
  T total_value = 0;
};

template <typename T>
void normalize_branch(Tensor<T>& x, const std::array<double, 3>& mean,
                      const std::array<double, 3>& stddev) {
  long n = x.n(), c = x.c(), hw = x.h() * x.w();
  for (long i = 0; i < n; ++i)
    for (long ch = 0; ch < c; ++ch) {
      T m = static_cast<T>(mean[static_cast<std::size_t>(ch % 3)]);
      T inv = static_cast<T>(1.0 / stddev[static_cast<std::size_t>(ch % 3)]);
      T* p = x.data() + (i * c + ch) * hw;
      for (long j = 0; j < hw; ++j) p[j] = (p[j] - m) * inv;
    }
}

/// Builds the full objective over the (up to three) branches on the given
/// tape. Raw branch images stay unnormalized for the reconstruction targets;
/// normalized copies feed the stem. Throws NonFiniteLoss naming the first
/// bad component.
template <typename T>
TrainGraph<T> build_training_graph(Ctx<T>& ctx, Network<T>& net, Method method,
                                   const TrainSettings<T>& settings, const Triplet<T>& trip,
                                   const Tensor<T>& labels) {
  Tape<T>& tape = ctx.tape;
  std::vector<const Tensor<T>*> raw_branches;
  raw_branches.push_back(&trip.source);
  if (uses_augmentation(method)) {
    raw_branches.push_back(&trip.bezier);
    raw_branches.push_back(&trip.fda);
  }

  std::vector<Var<T>> logits, p_str, p_sty, recons;
  for (const Tensor<T>* raw : raw_branches) {
    Tensor<T> xn = *raw;
    normalize_branch(xn, settings.norm_mean, settings.norm_std);
    Var<T> x = tape.leaf(std::move(xn), false);
    Var<T> f = net.backbone->stem(ctx, x);
    if (net.plugin) f = net.plugin->apply(ctx, f);
    if (uses_gate(method)) {
      Disentangled<T> parts = disentangle(ctx, net.gate, f);
      Var<T> cls_input = settings.stopgrad_cls
                             ? disentangle_structure_detached(ctx, net.gate, f)
                             : parts.structure;
      logits.push_back(net.backbone->body(ctx, cls_input, net.plugin.get(), nullptr));
      p_str.push_back(net.proj.forward(ctx, parts.structure));
      p_sty.push_back(net.proj.forward(ctx, parts.style));
      if (uses_decoder(method)) recons.push_back(net.decoder.forward(ctx, parts.style));
    } else {
      logits.push_back(net.backbone->body(ctx, f, net.plugin.get(), nullptr));
    }
  }

  TrainGraph<T> g;
  Var<T> cls = classification_loss_t(tape, logits, labels);
  std::vector<Var<T>> terms{cls};
  std::vector<T> coeffs{settings.weights.cls};
  g.cls = tape.val(cls)[0];
  if (uses_gate(method)) {
    Var<T> c_str =
        contrastive_structure_t(tape, p_str[0], p_str[1], p_str[2], settings.loss_opt.reduce);
    Var<T> c_sty = contrastive_style_t(tape, p_sty[0], p_sty[1], p_sty[2], settings.loss_opt);
    terms.push_back(c_str);
    coeffs.push_back(settings.weights.structure);
    terms.push_back(c_sty);
    coeffs.push_back(settings.weights.style);
    g.c_str = tape.val(c_str)[0];
    g.c_sty = tape.val(c_sty)[0];
  }
  if (uses_decoder(method)) {
    Var<T> rec = reconstruction_loss_t(tape, recons, raw_branches, settings.decoder_resolution,
                                       settings.loss_opt.rec_norm);
    terms.push_back(rec);
    coeffs.push_back(settings.weights.rec);
    g.rec = tape.val(rec)[0];
  }
  LossReport<T> report = total_objective(g.cls, g.c_str, g.c_sty, g.rec, settings.weights);
  g.total = weighted_sum(tape, terms, coeffs);
  g.total_value = report.total;
  return g;
}

}  // namespace condisr
