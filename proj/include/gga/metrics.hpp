#pragma once

// Accuracy and class-frequency-weighted precision / recall / F1 / one-vs-rest AUC.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gga/error.hpp"
#include "gga/tensor.hpp"

namespace gga::metrics {

// counts(true, predicted)
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t k = 0) : k_(k), counts_(k * k, 0) {}

  std::size_t num_classes() const noexcept { return k_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  std::uint64_t& operator()(std::size_t truth, std::size_t pred) { return counts_[truth * k_ + pred]; }

  std::uint64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < k_; ++i) t += (*this)(i, i);
    return t;
  }
  std::uint64_t support(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < k_; ++j) s += (*this)(c, j);
    return s;
  }
  std::uint64_t predicted(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < k_; ++i) s += (*this)(i, c);
    return s;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> truths,
                                 std::size_t num_classes) {
  if (preds.size() != truths.size()) {
    throw ShapeError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(truths.size()) + " labels");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int v : {preds[i], truths[i]}) {
      if (v < 0 || static_cast<std::size_t>(v) >= num_classes) {
        throw DataError("confusion: label " + std::to_string(v) + " outside [0," +
                        std::to_string(num_classes) + ")");
      }
    }
    ++cm(static_cast<std::size_t>(truths[i]), static_cast<std::size_t>(preds[i]));
  }
  return cm;
}

struct ClassMetrics {
  std::uint64_t support = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
};

struct MetricsReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  std::vector<ClassMetrics> per_class;
};

// ROC AUC of `scores` for rows labelled `positive` against all others, by the
// rank statistic; tied scores count one half. 0.5 with no positives or no negatives.
inline double one_vs_rest_auc(std::span<const double> scores, std::span<const int> labels,
                              int positive_class) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == positive_class) {
        rank_sum += midrank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return 0.5;
  const auto p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

// Accuracy = trace / n. Precision, recall and F1 are per-class values weighted
// by true-class frequency; a zero denominator makes the per-class value 0.
// AUC is the same weighting over one-vs-rest AUCs of the score columns.
inline MetricsReport report(const ConfusionMatrix& cm, const Tensor& scores,
                            std::span<const int> truths) {
  const std::size_t k = cm.num_classes();
  const std::uint64_t n = cm.total();
  if (scores.rows() != n || truths.size() != n || (n > 0 && scores.cols() != k)) {
    throw ShapeError("report: scores " + scores.shape() + " / " + std::to_string(truths.size()) +
                     " labels do not match a " + std::to_string(k) + "-class confusion matrix of " +
                     std::to_string(n) + " instances");
  }
  MetricsReport r;
  r.n = n;
  r.per_class.resize(k);
  if (n == 0) return r;
  const auto total = static_cast<double>(n);
  r.accuracy = static_cast<double>(cm.trace()) / total;

  std::vector<double> column(n);
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics& m = r.per_class[c];
    m.support = cm.support(c);
    const auto tp = static_cast<double>(cm(c, c));
    const auto predicted = static_cast<double>(cm.predicted(c));
    const auto actual = static_cast<double>(m.support);
    m.precision = predicted > 0 ? tp / predicted : 0.0;
    m.recall = actual > 0 ? tp / actual : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    for (std::size_t i = 0; i < n; ++i) column[i] = scores(i, c);
    m.auc = one_vs_rest_auc(column, truths, static_cast<int>(c));

    const double weight = actual / total;
    r.precision += weight * m.precision;
    r.recall += weight * m.recall;
    r.f1 += weight * m.f1;
    r.auc += weight * m.auc;
  }
  return r;
}

// Argmax per row (ties to the lowest class id).
inline std::vector<int> argmax_rows(const Tensor& scores) {
  std::vector<int> out(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    auto row = scores.row_span(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace gga::metrics
