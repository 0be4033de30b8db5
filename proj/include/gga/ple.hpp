#pragma once

// Pseudo-label election: an unlabelled target instance gets a label only when
// the network vote (argmax logits), the geometric vote (most cosine-similar
// labelled centroid) and the neighbourhood vote (strict k-NN majority) agree.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gga/data.hpp"
#include "gga/error.hpp"
#include "gga/graph.hpp"
#include "gga/tensor.hpp"

namespace gga::ple {

inline constexpr int kAbstain = -1;

// Which voters take part in the election (ablation group B switches them off).
struct Voters {
  bool nn = true;
  bool geometric = true;
  bool neighbourhood = true;

  // "NGK" letters, any subset, e.g. "NG" or "GK".
  static Voters parse(const std::string& code) {
    Voters v{false, false, false};
    for (char c : code) {
      switch (c) {
        case 'N': v.nn = true; break;
        case 'G': v.geometric = true; break;
        case 'K': v.neighbourhood = true; break;
        default: throw ConfigError("ple.voters", "unknown voter '" + std::string(1, c) + "' (use N, G, K)");
      }
    }
    if (!v.nn && !v.geometric && !v.neighbourhood) throw ConfigError("ple.voters", "no voter enabled");
    return v;
  }
  std::string code() const {
    std::string s;
    if (nn) s += 'N';
    if (geometric) s += 'G';
    if (neighbourhood) s += 'K';
    return s;
  }
  bool operator==(const Voters&) const = default;
};

struct PleConfig {
  std::size_t k_neighbours = 4;
  Voters voters;

  void validate() const {
    if (k_neighbours < 1) throw ConfigError("ple.k_neighbours", "must be >= 1");
  }
};

struct Votes {
  int nn = kAbstain;
  int geometric = kAbstain;
  int neighbourhood = kAbstain;
  bool operator==(const Votes&) const = default;
};

struct PseudoLabel {
  std::size_t index;  // row in the unlabelled target pool
  int label;
  Votes votes;
};

struct PseudoLabelSet {
  std::vector<PseudoLabel> entries;  // ascending index
  std::vector<Votes> votes;          // every unlabelled instance, for reporting
  std::size_t pool_size = 0;         // n_TU
  std::size_t epoch = 0;

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (const auto& e : entries) out.push_back(e.index);
    return out;
  }
  std::vector<int> labels() const {
    std::vector<int> out;
    for (const auto& e : entries) out.push_back(e.label);
    return out;
  }
};

// Argmax; ties go to the lowest class id.
inline int nn_vote(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("nn_vote: empty logits");
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

// Class of the most cosine-similar present centroid; ties go to the lowest id.
inline int geometric_vote(std::span<const double> embedding, const Tensor& centroids,
                          const std::vector<bool>& present) {
  int best = kAbstain;
  double best_cos = 0.0;
  for (std::size_t k = 0; k < centroids.rows(); ++k) {
    if (!present[k]) continue;
    const double c = cosine(centroids.row_span(k), embedding);
    if (best == kAbstain || c > best_cos) {
      best = static_cast<int>(k);
      best_cos = c;
    }
  }
  if (best == kAbstain) throw DataError("geometric_vote: no present class centroid");
  return best;
}

// Strict-majority label among the k nearest pool rows (Euclidean; distance
// ties go to the lower pool index), or kAbstain without a strict majority.
inline int neighbourhood_vote(std::span<const double> embedding, const Tensor& pool,
                              std::span<const int> pool_labels, std::size_t k,
                              std::size_t num_classes) {
  if (pool.rows() == 0) throw DataError("neighbourhood_vote: empty pool");
  if (k == 0 || k > pool.rows()) {
    throw DataError("neighbourhood_vote: k=" + std::to_string(k) + " for pool of " +
                    std::to_string(pool.rows()));
  }
  std::vector<std::pair<double, std::size_t>> dist(pool.rows());
  for (std::size_t i = 0; i < pool.rows(); ++i)
    dist[i] = {squared_distance(pool.row_span(i), embedding), i};
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < k; ++i) ++counts[static_cast<std::size_t>(pool_labels[dist[i].second])];
  for (std::size_t c = 0; c < num_classes; ++c)
    if (2 * counts[c] > k) return static_cast<int>(c);
  return kAbstain;
}

// Labelled embeddings every voter consults: projected source plus projected
// labelled target (never pseudo-labelled rows).
struct LabelledPool {
  Tensor embeddings;
  std::vector<int> labels;
  std::size_t num_classes = 0;
};

inline PseudoLabelSet elect(const Tensor& unlabelled, const Tensor& logits,
                            const LabelledPool& pool, const PleConfig& cfg,
                            std::size_t epoch = 0) {
  cfg.validate();
  if (logits.rows() != unlabelled.rows()) {
    throw ShapeError("elect: " + std::to_string(logits.rows()) + " logit rows for " +
                     std::to_string(unlabelled.rows()) + " instances");
  }
  if (pool.embeddings.cols() != unlabelled.cols()) {
    throw ShapeError("elect: pool and unlabelled embeddings differ in width");
  }
  const graph::Centroids centres =
      graph::class_centroids(pool.embeddings, pool.labels, pool.num_classes);

  PseudoLabelSet out;
  out.pool_size = unlabelled.rows();
  out.epoch = epoch;
  out.votes.reserve(unlabelled.rows());
  for (std::size_t i = 0; i < unlabelled.rows(); ++i) {
    const auto x = unlabelled.row_span(i);
    Votes v;
    v.nn = nn_vote(logits.row_span(i));
    v.geometric = geometric_vote(x, centres.centroids, centres.present);
    v.neighbourhood = neighbourhood_vote(x, pool.embeddings, pool.labels, cfg.k_neighbours,
                                         pool.num_classes);
    out.votes.push_back(v);

    std::optional<int> agreed;
    bool consensus = true;
    auto cast = [&](bool enabled, int vote) {
      if (!enabled || !consensus) return;
      if (vote == kAbstain || (agreed && *agreed != vote)) {
        consensus = false;
        return;
      }
      agreed = vote;
    };
    cast(cfg.voters.nn, v.nn);
    cast(cfg.voters.geometric, v.geometric);
    cast(cfg.voters.neighbourhood, v.neighbourhood);
    if (consensus && agreed) out.entries.push_back({i, *agreed, v});
  }
  return out;
}

struct PlAccuracy {
  double coverage = 0.0;
  std::optional<double> accuracy;  // undefined for an empty set
};

// Coverage = |entries| / n_TU, accuracy over entries. Evaluation only: the
// hidden truth refuses access inside a TrainingScope.
inline PlAccuracy pl_accuracy(const PseudoLabelSet& set, const data::HiddenTruth& truth) {
  const auto& labels = truth.reveal();
  if (labels.size() != set.pool_size) {
    throw ShapeError("pl_accuracy: truth covers " + std::to_string(labels.size()) +
                     " rows, pool has " + std::to_string(set.pool_size));
  }
  PlAccuracy out;
  if (set.pool_size > 0) {
    out.coverage = static_cast<double>(set.entries.size()) / static_cast<double>(set.pool_size);
  }
  if (!set.entries.empty()) {
    std::size_t correct = 0;
    for (const auto& e : set.entries) correct += labels[e.index] == e.label ? 1 : 0;
    out.accuracy = static_cast<double>(correct) / static_cast<double>(set.entries.size());
  }
  return out;
}

// Per-epoch election diagnostics: the elected set plus each voter on its own.
struct PleStats {
  PlAccuracy elected;
  PlAccuracy nn;
  PlAccuracy geometric;
  PlAccuracy neighbourhood;
  double nn_geometric_agreement = 0.0;
  double nn_neighbourhood_agreement = 0.0;
  double geometric_neighbourhood_agreement = 0.0;
};

inline PleStats ple_stats(const PseudoLabelSet& set, const data::HiddenTruth& truth) {
  PleStats s;
  s.elected = pl_accuracy(set, truth);
  auto single = [&](auto pick) {
    PseudoLabelSet one;
    one.pool_size = set.pool_size;
    for (std::size_t i = 0; i < set.votes.size(); ++i) {
      const int v = pick(set.votes[i]);
      if (v != kAbstain) one.entries.push_back({i, v, set.votes[i]});
    }
    return pl_accuracy(one, truth);
  };
  s.nn = single([](const Votes& v) { return v.nn; });
  s.geometric = single([](const Votes& v) { return v.geometric; });
  s.neighbourhood = single([](const Votes& v) { return v.neighbourhood; });
  if (!set.votes.empty()) {
    std::size_t ng = 0, nk = 0, gk = 0;
    for (const auto& v : set.votes) {
      ng += v.nn == v.geometric ? 1 : 0;
      nk += v.neighbourhood != kAbstain && v.nn == v.neighbourhood ? 1 : 0;
      gk += v.neighbourhood != kAbstain && v.geometric == v.neighbourhood ? 1 : 0;
    }
    const auto n = static_cast<double>(set.votes.size());
    s.nn_geometric_agreement = static_cast<double>(ng) / n;
    s.nn_neighbourhood_agreement = static_cast<double>(nk) / n;
    s.geometric_neighbourhood_agreement = static_cast<double>(gk) / n;
  }
  return s;
}

}  // namespace gga::ple
