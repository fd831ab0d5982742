#pragma once

#include <optional>
#include <string>

#include "condisr/graph.hpp"

// Training objective: pairwise L1 contrastive terms over the three branches,
// reconstruction of resized inputs from the style half, and binary
// cross-entropy over all structure branches.

namespace condisr {

template <typename T>
struct LossWeights {
  T cls = T(1.0);
  T structure = T(0.1);
  T style = T(0.1);
  T rec = T(0.1);
};

enum class StyleMode { kLiteral, kMargin };
enum class RecNorm { kMse, kSum };

template <typename T>
struct LossOptions {
  StyleMode style_mode = StyleMode::kLiteral;
  T margin = T(1.0);
  T style_clamp = T(0);  // 0 disables the per-pair distance clamp
  PairReduce reduce = PairReduce::kSum;
  RecNorm rec_norm = RecNorm::kMse;
};

template <typename T>
struct LossReport {
  T cls = 0, c_str = 0, c_sty = 0, rec = 0;
  LossWeights<T> weights;
  T total = 0;
};

/// Thrown when a loss component turns non-finite; carries the component name
/// so training aborts with a usable diagnostic.
struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& component)
      : std::runtime_error("non-finite loss component: " + component), component_name(component) {}
  std::string component_name;
};

namespace detail {
template <typename T>
double l1_distance(const Tensor<T>& a, const Tensor<T>& b, long row, PairReduce reduce) {
  long d = a.dim(1);
  double s = 0.0;
  for (long j = 0; j < d; ++j) s += std::abs(static_cast<double>(a.at(row, j)) - b.at(row, j));
  return reduce == PairReduce::kCoordMean ? s / d : s;
}
}  // namespace detail

/// Sum of L1 distances over the three unordered branch pairs, batch-averaged.
template <typename T>
T contrastive_structure(const Tensor<T>& p_s, const Tensor<T>& p_a, const Tensor<T>& p_b,
                        PairReduce reduce = PairReduce::kSum) {
  if (!p_s.same_shape(p_a) || !p_s.same_shape(p_b))
    throw std::runtime_error("contrastive_structure: latent shape mismatch");
  long n = p_s.dim(0);
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    acc += detail::l1_distance(p_s, p_a, i, reduce);
    acc += detail::l1_distance(p_s, p_b, i, reduce);
    acc += detail::l1_distance(p_a, p_b, i, reduce);
  }
  return static_cast<T>(acc / n);
}

/// Literal mode: exact negation of contrastive_structure. Margin mode:
/// batch-averaged sum over pairs of max(0, margin - d).
template <typename T>
T contrastive_style(const Tensor<T>& q_s, const Tensor<T>& q_a, const Tensor<T>& q_b,
                    const LossOptions<T>& opt = {}) {
  if (!q_s.same_shape(q_a) || !q_s.same_shape(q_b))
    throw std::runtime_error("contrastive_style: latent shape mismatch");
  long n = q_s.dim(0);
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    double ds[3] = {detail::l1_distance(q_s, q_a, i, opt.reduce),
                    detail::l1_distance(q_s, q_b, i, opt.reduce),
                    detail::l1_distance(q_a, q_b, i, opt.reduce)};
    for (double d : ds) {
      if (opt.style_mode == StyleMode::kMargin) {
        acc += std::max(0.0, static_cast<double>(opt.margin) - d);
      } else {
        if (opt.style_clamp > T(0)) d = std::min(d, static_cast<double>(opt.style_clamp));
        acc -= d;
      }
    }
  }
  return static_cast<T>(acc / n);
}

/// Per-set squared error between reconstructions and resized originals,
/// summed over the three sets. `recons` and `originals` run over {s,a,b}.
template <typename T>
T reconstruction_loss(const std::vector<Tensor<T>>& recons, const std::vector<Tensor<T>>& originals,
                      long r, RecNorm norm = RecNorm::kMse) {
  if (recons.size() != originals.size())
    throw std::runtime_error("reconstruction_loss: set count mismatch");
  double total = 0.0;
  for (std::size_t s = 0; s < recons.size(); ++s) {
    const Tensor<T>& rec = recons[s];
    if (rec.h() != r || rec.w() != r)
      throw std::runtime_error("reconstruction_loss: reconstruction is not " + std::to_string(r) +
                               "x" + std::to_string(r));
    Tensor<T> target({originals[s].n(), originals[s].c(), r, r});
    ops::resize_bilinear(originals[s], r, r, target);
    double acc = 0.0;
    for (long i = 0; i < rec.numel(); ++i) {
      double d = static_cast<double>(rec[i]) - target[i];
      acc += d * d;
    }
    if (norm == RecNorm::kMse) acc /= rec.numel();
    total += acc;
  }
  return static_cast<T>(total);
}

/// BCE with logits, averaged over the three branches and the batch.
template <typename T>
T classification_loss(const Tensor<T>& logits_s, const Tensor<T>& logits_a,
                      const Tensor<T>& logits_b, const Tensor<T>& labels) {
  long n = labels.numel();
  for (long i = 0; i < n; ++i)
    if (labels[i] != T(0) && labels[i] != T(1))
      throw std::runtime_error("classification_loss: labels must be 0 or 1");
  const Tensor<T>* branches[3] = {&logits_s, &logits_a, &logits_b};
  double acc = 0.0;
  for (const Tensor<T>* z : branches) {
    for (long i = 0; i < n; ++i) {
      double zi = (*z)[i];
      if (!std::isfinite(zi)) throw std::runtime_error("classification_loss: non-finite logit");
      acc += std::max(zi, 0.0) + std::log1p(std::exp(-std::abs(zi))) -
             static_cast<double>(labels[i]) * zi;
    }
  }
  return static_cast<T>(acc / (3.0 * n));
}

/// Combines the four components; throws NonFiniteLoss naming the first
/// non-finite component so the engine can abort the run cleanly.
template <typename T>
LossReport<T> total_objective(T cls, T c_str, T c_sty, T rec, const LossWeights<T>& w) {
  const std::pair<const char*, T> comps[] = {
      {"classification", cls}, {"contrastive-structure", c_str},
      {"contrastive-style", c_sty}, {"reconstruction", rec}};
  for (auto& [name, v] : comps)
    if (!std::isfinite(static_cast<double>(v))) throw NonFiniteLoss(name);
  LossReport<T> rep;
  rep.cls = cls;
  rep.c_str = c_str;
  rep.c_sty = c_sty;
  rep.rec = rec;
  rep.weights = w;
  rep.total = w.cls * cls + w.structure * c_str + w.style * c_sty + w.rec * rec;
  if (!std::isfinite(static_cast<double>(rep.total))) throw NonFiniteLoss("total");
  return rep;
}

// ---------------------------------------------------------------------------
// Tape versions used by the training step.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> contrastive_structure_t(Tape<T>& tape, Var<T> p_s, Var<T> p_a, Var<T> p_b,
                               PairReduce reduce = PairReduce::kSum) {
  Var<T> d1 = pair_l1(tape, p_s, p_a, reduce);
  Var<T> d2 = pair_l1(tape, p_s, p_b, reduce);
  Var<T> d3 = pair_l1(tape, p_a, p_b, reduce);
  return weighted_sum(tape, {d1, d2, d3}, {T(1), T(1), T(1)});
}

template <typename T>
Var<T> contrastive_style_t(Tape<T>& tape, Var<T> q_s, Var<T> q_a, Var<T> q_b,
                           const LossOptions<T>& opt) {
  if (opt.style_mode == StyleMode::kMargin) {
    Var<T> h1 = pair_l1(tape, q_s, q_a, opt.reduce, T(0), opt.margin);
    Var<T> h2 = pair_l1(tape, q_s, q_b, opt.reduce, T(0), opt.margin);
    Var<T> h3 = pair_l1(tape, q_a, q_b, opt.reduce, T(0), opt.margin);
    return weighted_sum(tape, {h1, h2, h3}, {T(1), T(1), T(1)});
  }
  Var<T> d1 = pair_l1(tape, q_s, q_a, opt.reduce, opt.style_clamp);
  Var<T> d2 = pair_l1(tape, q_s, q_b, opt.reduce, opt.style_clamp);
  Var<T> d3 = pair_l1(tape, q_a, q_b, opt.reduce, opt.style_clamp);
  return weighted_sum(tape, {d1, d2, d3}, {T(-1), T(-1), T(-1)});
}

template <typename T>
Var<T> reconstruction_loss_t(Tape<T>& tape, const std::vector<Var<T>>& recons,
                             const std::vector<const Tensor<T>*>& originals, long r,
                             RecNorm norm) {
  std::vector<Var<T>> terms;
  for (std::size_t s = 0; s < recons.size(); ++s) {
    const Tensor<T>& rv = tape.val(recons[s]);
    if (rv.h() != r || rv.w() != r)
      throw std::runtime_error("reconstruction_loss: reconstruction is not the target size");
    Tensor<T> target({originals[s]->n(), originals[s]->c(), r, r});
    ops::resize_bilinear(*originals[s], r, r, target);
    terms.push_back(squared_error(tape, recons[s], target, norm == RecNorm::kMse));
  }
  return weighted_sum(tape, terms, std::vector<T>(terms.size(), T(1)));
}

template <typename T>
Var<T> classification_loss_t(Tape<T>& tape, const std::vector<Var<T>>& branch_logits,
                             const Tensor<T>& labels) {
  std::vector<Var<T>> terms;
  for (Var<T> z : branch_logits) terms.push_back(bce_logits(tape, z, labels));
  return weighted_sum(tape, terms,
                      std::vector<T>(terms.size(), T(1) / static_cast<T>(terms.size())));
}

}  // namespace condisr
