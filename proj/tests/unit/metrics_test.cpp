#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "gga/metrics.hpp"
#include "gga/rng.hpp"

using namespace gga;
using namespace gga::metrics;

namespace {

struct Weighted {
  double precision = 0, recall = 0, f1 = 0, auc = 0;
};

// Brute force straight from the definitions: per-class TP/FP/FN by scanning,
// AUC by comparing every positive-negative pair.
Weighted brute_force(const std::vector<int>& pred, const std::vector<int>& truth, const Tensor& scores,
                     std::size_t k) {
  Weighted w;
  const double n = static_cast<double>(truth.size());
  for (std::size_t c = 0; c < k; ++c) {
    const int ci = static_cast<int>(c);
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (pred[i] == ci && truth[i] == ci) ++tp;
      if (pred[i] == ci && truth[i] != ci) ++fp;
      if (pred[i] != ci && truth[i] == ci) ++fn;
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    double wins = 0, pairs = 0;
    for (std::size_t a = 0; a < truth.size(); ++a) {
      if (truth[a] != ci) continue;
      for (std::size_t b = 0; b < truth.size(); ++b) {
        if (truth[b] == ci) continue;
        pairs += 1;
        if (scores(a, c) > scores(b, c)) wins += 1;
        else if (scores(a, c) == scores(b, c)) wins += 0.5;
      }
    }
    const double auc = pairs > 0 ? wins / pairs : 0.5;
    const double weight = (tp + fn) / n;
    w.precision += weight * p;
    w.recall += weight * r;
    w.f1 += weight * f;
    w.auc += weight * auc;
  }
  return w;
}

Tensor one_hot(const std::vector<int>& y, std::size_t k) {
  Tensor t(y.size(), k);
  for (std::size_t i = 0; i < y.size(); ++i) t(i, static_cast<std::size_t>(y[i])) = 1.0;
  return t;
}

}  // namespace

TEST(Confusion, HandTally) {
  const std::vector<int> truth{0, 0, 1, 1}, pred{0, 1, 1, 1};
  const auto cm = confusion(pred, truth, 2);
  EXPECT_EQ(cm(0, 0), 1u);
  EXPECT_EQ(cm(0, 1), 1u);
  EXPECT_EQ(cm(1, 0), 0u);
  EXPECT_EQ(cm(1, 1), 2u);
  EXPECT_EQ(cm.total(), 4u);
}

TEST(Confusion, PerfectIsDiagonalAndEmptyIsZero) {
  const std::vector<int> y{2, 0, 1, 2};
  const auto cm = confusion(y, y, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) EXPECT_EQ(cm(i, j), 0u);
  EXPECT_EQ(cm.trace(), 4u);
  EXPECT_EQ(confusion(std::vector<int>{}, std::vector<int>{}, 3), ConfusionMatrix(3));
}

TEST(Confusion, OutOfRangeLabel) {
  EXPECT_THROW(confusion(std::vector<int>{0, 2}, std::vector<int>{0, 1}, 2), DataError);
  EXPECT_THROW(confusion(std::vector<int>{0}, std::vector<int>{0, 1}, 2), ShapeError);
}

TEST(Report, HandWeightedRecall) {
  const std::vector<int> truth{0, 0, 1, 1}, pred{0, 1, 1, 1};
  const auto r = report(confusion(pred, truth, 2), one_hot(pred, 2), truth);
  EXPECT_DOUBLE_EQ(r.recall, 0.75);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
  // precision: class 0 = 1/1, class 1 = 2/3; weights 1/2 each.
  EXPECT_DOUBLE_EQ(r.precision, 0.5 * 1.0 + 0.5 * (2.0 / 3.0));
}

TEST(Report, PerfectPredictionsScoreOne) {
  const std::vector<int> y{0, 1, 2, 1, 0, 2};
  const auto r = report(confusion(y, y, 3), one_hot(y, 3), y);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.f1, 1.0);
  EXPECT_DOUBLE_EQ(r.auc, 1.0);
}

TEST(Report, ShapeMismatch) {
  const std::vector<int> y{0, 1};
  EXPECT_THROW(report(confusion(y, y, 2), Tensor(3, 2), y), ShapeError);
  EXPECT_THROW(report(confusion(y, y, 2), Tensor(2, 3), y), ShapeError);
}

TEST(Report, MatchesBruteForceOnRandomInstances) {
  Rng rng(314);
  std::uniform_int_distribution<std::size_t> kd(2, 5), nd(1, 40);
  std::uniform_int_distribution<int> coarse(0, 4);  // coarse scores force ties
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = kd(rng), n = nd(rng);
    std::uniform_int_distribution<int> lab(0, static_cast<int>(k) - 1);
    std::vector<int> truth(n), pred(n);
    for (auto& v : truth) v = lab(rng);
    for (auto& v : pred) v = lab(rng);
    Tensor scores(n, k);
    for (double& v : scores.values()) v = coarse(rng) / 4.0;
    const auto r = report(confusion(pred, truth, k), scores, truth);
    const auto b = brute_force(pred, truth, scores, k);
    EXPECT_NEAR(r.precision, b.precision, 1e-12);
    EXPECT_NEAR(r.recall, b.recall, 1e-12);
    EXPECT_NEAR(r.f1, b.f1, 1e-12);
    EXPECT_NEAR(r.auc, b.auc, 1e-12);
    // Weighted recall is the micro accuracy.
    EXPECT_NEAR(r.recall, r.accuracy, 1e-12);
  }
}

TEST(Report, ClassPermutationLeavesWeightedMetricsUnchanged) {
  Rng rng(8);
  std::uniform_int_distribution<int> lab(0, 3);
  std::normal_distribution<double> g;
  std::vector<int> truth(30), pred(30);
  for (auto& v : truth) v = lab(rng);
  for (auto& v : pred) v = lab(rng);
  Tensor scores(30, 4);
  for (double& v : scores.values()) v = g(rng);
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<int> pt(30), pp(30);
  Tensor ps(30, 4);
  for (std::size_t i = 0; i < 30; ++i) {
    pt[i] = perm[static_cast<std::size_t>(truth[i])];
    pp[i] = perm[static_cast<std::size_t>(pred[i])];
    for (std::size_t c = 0; c < 4; ++c) ps(i, static_cast<std::size_t>(perm[c])) = scores(i, c);
  }
  const auto a = report(confusion(pred, truth, 4), scores, truth);
  const auto b = report(confusion(pp, pt, 4), ps, pt);
  EXPECT_NEAR(a.precision, b.precision, 1e-12);
  EXPECT_NEAR(a.recall, b.recall, 1e-12);
  EXPECT_NEAR(a.f1, b.f1, 1e-12);
  EXPECT_NEAR(a.auc, b.auc, 1e-12);
  for (std::size_t c = 0; c < 4; ++c)
    EXPECT_NEAR(a.per_class[c].f1, b.per_class[static_cast<std::size_t>(perm[c])].f1, 1e-12);
}

TEST(Auc, PerfectAndReversedRankings) {
  const std::vector<int> y{1, 0, 1, 0, 0};
  const std::vector<double> good{0.9, 0.1, 0.8, 0.2, 0.3};
  std::vector<double> bad(good.size());
  std::transform(good.begin(), good.end(), bad.begin(), [](double s) { return -s; });
  EXPECT_DOUBLE_EQ(one_vs_rest_auc(good, y, 1), 1.0);
  EXPECT_DOUBLE_EQ(one_vs_rest_auc(bad, y, 1), 0.0);
  EXPECT_DOUBLE_EQ(one_vs_rest_auc(std::vector<double>(5, 0.4), y, 1), 0.5);
  EXPECT_DOUBLE_EQ(one_vs_rest_auc(good, std::vector<int>(5, 0), 1), 0.5);
}

TEST(Argmax, LowestIdWinsTies) {
  EXPECT_EQ(argmax_rows(Tensor::from_rows({{1, 3, 3}, {5, 0, 5}})), (std::vector<int>{1, 0}));
}
