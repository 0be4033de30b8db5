#pragma once

// Alignment and supervision losses, the shape-keeping weight schedule, and the
// composite objective
//   L_SUP + gamma * L_SK + eta * L_R + lambda * L_CP + L_V  (+ w_E * L_EDIST)
// built on a single tape so one backward pass updates every component. The
// discriminator sees the WAMs through a gradient reversal node, which turns the
// min over projectors / max over discriminator into a plain minimisation.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gga/autodiff.hpp"
#include "gga/error.hpp"
#include "gga/graph.hpp"
#include "gga/model.hpp"

namespace gga::losses {

using ad::Tape;
using ad::Var;

struct LossWeights {
  double alpha = 0.1;
  double gamma_min = 0.01;
  double gamma_max = 0.1;
  double eta = 0.01;
  double lambda = 0.01;
  double temperature = 5.0;
  double edist_weight = 0.01;  // only used by the vertex-distance alternative

  void validate() const {
    auto nonneg = [](double v, const char* key) {
      if (!(v >= 0.0)) throw ConfigError(key, std::string(key) + " must be >= 0");
    };
    nonneg(alpha, "loss.alpha");
    nonneg(gamma_min, "loss.gamma_min");
    nonneg(gamma_max, "loss.gamma_max");
    nonneg(eta, "loss.eta");
    nonneg(lambda, "loss.lambda");
    nonneg(edist_weight, "loss.edist_weight");
    if (alpha > 1.0) throw ConfigError("loss.alpha", "loss.alpha must be in [0, 1]");
    if (gamma_min > gamma_max) throw ConfigError("loss.gamma_min", "gamma_min must be <= gamma_max");
    if (!(temperature > 0.0)) throw ConfigError("loss.temperature", "temperature must be > 0");
  }
};

// Scalar values of one objective evaluation.
struct LossBundle {
  double l_sup = 0.0;
  double l_sk = 0.0;
  double l_r = 0.0;
  double l_cp = 0.0;
  double l_vs = 0.0;
  double l_v = 0.0;
  double l_edist = 0.0;
  double gamma_effective = 0.0;
  double total = 0.0;
};

// Linear ramp from gamma_min at epoch 0 to gamma_max at the last epoch.
inline double gamma_schedule(std::size_t epoch, std::size_t total_epochs, double gamma_min,
                             double gamma_max) {
  if (total_epochs == 0 || epoch >= total_epochs) {
    throw Error("gamma_schedule: epoch " + std::to_string(epoch) + " outside [0," +
                std::to_string(total_epochs) + ")");
  }
  if (total_epochs == 1) return gamma_max;
  return gamma_min + (gamma_max - gamma_min) * static_cast<double>(epoch) /
                         static_cast<double>(total_epochs - 1);
}

// ---- shape keeping -----------------------------------------------------------

enum class ShapeKeepingForm {
  kBinaryCrossEntropy,  // -[log D(M_S) + 1/2 sum log(1 - D(M_T))]
  kLiteral,             //   log D(M_S) + 1/2 sum (1 - log D(M_T))
};

struct ShapeKeepingOptions {
  ShapeKeepingForm form = ShapeKeepingForm::kBinaryCrossEntropy;
  bool reverse_gradients = true;
  double grl_coeff = 1.0;
};

// Source WAM carries domain label 1, the two target WAMs label 0 with weight 1/2 each.
inline Var shape_keeping_loss(Tape& tape, model::Discriminator& disc, Var m_s, Var m_tl,
                              Var m_tl_pl, const ShapeKeepingOptions& opt = {}) {
  const std::size_t expected = disc.input_dim();
  auto feed = [&](Var wam) {
    if (wam.value().size() != expected) {
      throw ShapeError("shape_keeping_loss: WAM " + wam.value().shape() +
                       " does not flatten to the discriminator's " + std::to_string(expected) +
                       " inputs");
    }
    Var flat = ad::reshape(wam, 1, expected);
    if (opt.reverse_gradients) flat = ad::grad_reverse(flat, opt.grl_coeff);
    return disc.forward(tape, flat);
  };
  Var d_s = feed(m_s);
  Var d_tl = feed(m_tl);
  Var d_tlpl = feed(m_tl_pl);
  if (opt.form == ShapeKeepingForm::kLiteral) {
    Var t1 = ad::add_scalar(ad::scale(ad::log(d_tl), -1.0), 1.0);
    Var t2 = ad::add_scalar(ad::scale(ad::log(d_tlpl), -1.0), 1.0);
    return ad::log(d_s) + 0.5 * (t1 + t2);
  }
  auto one_minus = [](Var d) { return ad::add_scalar(ad::scale(d, -1.0), 1.0); };
  Var target_term = 0.5 * (ad::log(one_minus(d_tl)) + ad::log(one_minus(d_tlpl)));
  return ad::scale(ad::log(d_s) + target_term, -1.0);
}

// ---- rotation, centre, vertex distance ---------------------------------------

inline std::vector<bool> mutually_present(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw ShapeError("present masks differ in length");
  std::vector<bool> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] && b[i];
  return out;
}

// sum over classes present in both graphs of (1 - cos(V_S^i, V_T^i)).
inline Var rotation_loss(Tape& tape, Var v_s, Var v_t, const std::vector<bool>& present) {
  if (!v_s.value().same_shape(v_t.value())) {
    throw ShapeError("rotation_loss: " + v_s.value().shape() + " vs " + v_t.value().shape());
  }
  std::vector<Var> terms;
  for (std::size_t i = 0; i < present.size(); ++i) {
    if (!present[i]) continue;
    Var c = ad::cosine_similarity(ad::gather_rows(v_s, {i}), ad::gather_rows(v_t, {i}));
    terms.push_back(ad::add_scalar(ad::scale(c, -1.0), 1.0));
  }
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  return ad::sum(ad::concat_rows(terms));
}

// ||mu_S - mu_T||^2
inline Var centre_loss(Var mu_s, Var mu_t) { return ad::squared_euclidean(mu_s, mu_t); }

// sum_i sum over pool pairs (S, TL+PL), (S, S+TL+PL), (TL+PL, S+TL+PL) of ||V_A^i - V_B^i||^2,
// over classes present in all three pools.
inline Var vertex_edist_loss(Tape& tape, Var v_s, Var v_tl_pl, Var v_all,
                             const std::vector<bool>& present) {
  std::vector<Var> terms;
  for (std::size_t i = 0; i < present.size(); ++i) {
    if (!present[i]) continue;
    Var a = ad::gather_rows(v_s, {i});
    Var b = ad::gather_rows(v_tl_pl, {i});
    Var c = ad::gather_rows(v_all, {i});
    terms.push_back(ad::squared_euclidean(a, b));
    terms.push_back(ad::squared_euclidean(a, c));
    terms.push_back(ad::squared_euclidean(b, c));
  }
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  return ad::sum(ad::concat_rows(terms));
}

// ---- supervision and vertex semantics ----------------------------------------

inline Var supervision_loss(Var source_logits, std::vector<int> labels) {
  return ad::cross_entropy(source_logits, std::move(labels));
}

// q^(k): mean over class-k source rows of softmax(logits / T). K x K, row-stochastic.
inline Var source_semantics(Tape& tape, Var source_logits, std::span<const int> labels,
                            std::size_t num_classes, double temperature) {
  if (!(temperature > 0.0)) throw Error("source_semantics: temperature must be > 0");
  graph::CentroidVars avg = graph::class_centroids(
      tape, ad::softmax_rows(ad::scale(source_logits, 1.0 / temperature)), labels, num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (!avg.present[k]) {
      throw DataError("source_semantics: class " + std::to_string(k) +
                      " has no source instance");
    }
  }
  return avg.centroids;
}

// -(1/n_TL) sum_i q^(y_i)^T log softmax(logits_i); no temperature on the target side.
inline Var vertex_semantic_loss(Var q, Var target_logits, const std::vector<int>& labels) {
  if (labels.empty()) throw Error("vertex_semantic_loss: no labelled target instance");
  std::vector<std::size_t> rows;
  for (int y : labels) rows.push_back(static_cast<std::size_t>(y));
  Var q_rows = ad::gather_rows(q, rows);
  Var log_p = ad::log_softmax_rows(target_logits);
  return ad::scale(ad::sum(ad::mul(q_rows, log_p)), -1.0 / static_cast<double>(labels.size()));
}

// (1 - alpha) * CE(labelled target) + alpha * L_VS
inline Var vertex_loss(Var l_vs, Var target_ce, double alpha) {
  return (1.0 - alpha) * target_ce + alpha * l_vs;
}

// ---- composite objective -----------------------------------------------------

// Inputs of one optimisation step. Unlabelled target rows contribute features
// only; pseudo-labels refer to rows of `target_unlabelled`.
struct Batch {
  const Tensor* source = nullptr;
  std::vector<int> source_labels;
  const Tensor* target_labelled = nullptr;
  std::vector<int> target_labels;
  const Tensor* target_unlabelled = nullptr;
  std::vector<std::size_t> pseudo_index;
  std::vector<int> pseudo_labels;
};

// Effective weights for this step (ablations are already folded in).
struct ObjectiveWeights {
  double gamma = 0.0;
  double eta = 0.01;
  double lambda = 0.01;
  double alpha = 0.1;
  double temperature = 5.0;
  double edist = 0.0;
};

struct ObjectiveOptions {
  ObjectiveWeights weights;
  ShapeKeepingOptions shape_keeping;
};

struct ObjectiveTerms {
  Var l_sup, l_sk, l_r, l_cp, l_vs, l_target_ce, l_v, l_edist, total;
  double gamma = 0.0;

  LossBundle bundle() const {
    return {l_sup.value().item(), l_sk.value().item(), l_r.value().item(),
            l_cp.value().item(),  l_vs.value().item(), l_v.value().item(),
            l_edist.value().item(), gamma,              total.value().item()};
  }
};

inline Var total_objective(Var l_sup, Var l_sk, Var l_r, Var l_cp, Var l_v, Var l_edist,
                           const ObjectiveWeights& w) {
  Var total = l_sup + w.gamma * l_sk + w.eta * l_r + w.lambda * l_cp + l_v + w.edist * l_edist;
  if (!std::isfinite(total.value().item())) throw NumericError("total objective is not finite");
  return total;
}

inline ObjectiveTerms build_objective(Tape& tape, model::GgaModel& model, const Batch& batch,
                                      const ObjectiveOptions& opt) {
  using model::Domain;
  const std::size_t k = model.dims().num_classes;
  const ObjectiveWeights& w = opt.weights;

  Var e_s = model.project(tape, tape.constant(*batch.source), Domain::kSource);
  Var e_tl = model.project(tape, tape.constant(*batch.target_labelled), Domain::kTarget);
  Var e_tu = model.project(tape, tape.constant(*batch.target_unlabelled), Domain::kTarget);

  // Pools: S, TL, TL+PL, S+TL+PL
  std::vector<Var> tl_pl_parts{e_tl};
  std::vector<int> tl_pl_labels = batch.target_labels;
  if (!batch.pseudo_index.empty()) {
    tl_pl_parts.push_back(ad::gather_rows(e_tu, batch.pseudo_index));
    tl_pl_labels.insert(tl_pl_labels.end(), batch.pseudo_labels.begin(), batch.pseudo_labels.end());
  }
  Var e_tl_pl = tl_pl_parts.size() == 1 ? e_tl : ad::concat_rows(tl_pl_parts);
  Var e_all = ad::concat_rows({e_s, e_tl_pl});
  std::vector<int> all_labels = batch.source_labels;
  all_labels.insert(all_labels.end(), tl_pl_labels.begin(), tl_pl_labels.end());

  auto g_s = graph::class_centroids(tape, e_s, batch.source_labels, k);
  auto g_tl = graph::class_centroids(tape, e_tl, batch.target_labels, k);
  auto g_tl_pl = graph::class_centroids(tape, e_tl_pl, tl_pl_labels, k);
  auto g_all = graph::class_centroids(tape, e_all, all_labels, k);

  ObjectiveTerms t;
  t.gamma = w.gamma;

  Var logits_s = model.classify_logits(tape, e_s);
  Var logits_tl = model.classify_logits(tape, e_tl);
  t.l_sup = supervision_loss(logits_s, batch.source_labels);

  Var m_s = graph::build_wam(tape, g_s.centroids, g_s.present);
  Var m_tl = graph::build_wam(tape, g_tl.centroids, g_tl.present);
  Var m_tl_pl = graph::build_wam(tape, g_tl_pl.centroids, g_tl_pl.present);
  t.l_sk = shape_keeping_loss(tape, model.discriminator(), m_s, m_tl, m_tl_pl, opt.shape_keeping);

  t.l_r = rotation_loss(tape, g_s.centroids, g_tl_pl.centroids,
                        mutually_present(g_s.present, g_tl_pl.present));

  Var mu_s = graph::domain_centre(e_s);
  Var mu_t = graph::domain_centre(ad::concat_rows({e_tl, e_tu}));
  t.l_cp = centre_loss(mu_s, mu_t);

  Var q = source_semantics(tape, logits_s, batch.source_labels, k, w.temperature);
  t.l_vs = vertex_semantic_loss(q, logits_tl, batch.target_labels);
  t.l_target_ce = ad::cross_entropy(logits_tl, batch.target_labels);
  t.l_v = vertex_loss(t.l_vs, t.l_target_ce, w.alpha);

  t.l_edist = vertex_edist_loss(
      tape, g_s.centroids, g_tl_pl.centroids, g_all.centroids,
      mutually_present(mutually_present(g_s.present, g_tl_pl.present), g_all.present));

  t.total = total_objective(t.l_sup, t.l_sk, t.l_r, t.l_cp, t.l_v, t.l_edist, w);
  return t;
}

}  // namespace gga::losses
