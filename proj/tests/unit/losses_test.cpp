#include <array>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gga/losses.hpp"
#include "gga/rng.hpp"

using namespace gga;
using namespace gga::losses;
using ad::Tape;
using ad::Var;

namespace {

Tensor gaussian(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Tensor t(r, c);
  for (double& v : t.values()) v = g(rng);
  return t;
}

double scalar(Var v) { return v.value().item(); }

model::Discriminator zero_discriminator(std::size_t k) {
  return {ad::Parameter("d.w", Tensor(k * k, 1)), ad::Parameter("d.b", Tensor(1, 1))};
}

// Rotation by theta in the first two coordinates.
Tensor rotate2(const Tensor& x, double theta) {
  Tensor y = x;
  const double c = std::cos(theta), s = std::sin(theta);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    y(i, 0) = c * x(i, 0) - s * x(i, 1);
    y(i, 1) = s * x(i, 0) + c * x(i, 1);
  }
  return y;
}

}  // namespace

TEST(ShapeKeeping, ZeroDiscriminatorGivesTwoLnTwo) {
  Rng rng(1);
  auto d = zero_discriminator(3);
  Tape tape;
  auto wam = [&] { return tape.constant(gaussian(3, 3, rng)); };
  const double bce = scalar(shape_keeping_loss(tape, d, wam(), wam(), wam()));
  EXPECT_NEAR(bce, 2.0 * std::log(2.0), 1e-15);
  // Literal form at D = 1/2: log(1/2) + (1 - log(1/2)) = 1.
  const double literal =
      scalar(shape_keeping_loss(tape, d, wam(), wam(), wam(), {ShapeKeepingForm::kLiteral, true, 1.0}));
  EXPECT_NEAR(literal, 1.0, 1e-15);
}

TEST(ShapeKeeping, RejectsWrongWamSize) {
  auto d = zero_discriminator(3);
  Tape tape;
  Var ok = tape.constant(Tensor(3, 3)), bad = tape.constant(Tensor(2, 2));
  EXPECT_THROW(shape_keeping_loss(tape, d, ok, bad, ok), ShapeError);
}

TEST(ShapeKeeping, ReversalFlipsProjectorSideOnly) {
  // Frozen step: D's gradient is identical with and without reversal, while
  // the gradient reaching the WAMs (and hence the projectors) changes sign.
  Rng rng(7);
  model::Discriminator d{ad::Parameter("d.w", gaussian(9, 1, rng)), ad::Parameter("d.b", gaussian(1, 1, rng))};
  const Tensor ms = gaussian(3, 3, rng), mt = gaussian(3, 3, rng), mp = gaussian(3, 3, rng);
  struct Result {
    Tensor d_w, g_ms;
  };
  auto run = [&](bool reverse) {
    d.w.zero_grad();
    d.b.zero_grad();
    Tape tape;
    Var a = tape.constant(ms), b = tape.constant(mt), c = tape.constant(mp);
    Var loss = shape_keeping_loss(tape, d, a, b, c, {ShapeKeepingForm::kBinaryCrossEntropy, reverse, 1.0});
    tape.backward(loss);
    return Result{d.w.grad, tape.grad(a)};
  };
  const Result plain = run(false), reversed = run(true);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_DOUBLE_EQ(plain.d_w[i], reversed.d_w[i]);
    EXPECT_DOUBLE_EQ(plain.g_ms[i], -reversed.g_ms[i]);
  }
  double mag = 0.0;
  for (double v : plain.g_ms.values()) mag += std::abs(v);
  EXPECT_GT(mag, 1e-6);
}

TEST(ShapeKeeping, DescentOnDiscriminatorRaisesSeparation) {
  // The discriminator minimises the BCE: one gradient step makes it score the
  // source WAM higher than the target WAMs.
  auto d = zero_discriminator(2);
  const Tensor ms = Tensor::from_rows({{0, 4}, {4, 0}}), mt = Tensor::from_rows({{0, 1}, {1, 0}});
  Tape tape;
  Var loss = shape_keeping_loss(tape, d, tape.constant(ms), tape.constant(mt), tape.constant(mt));
  tape.backward(loss);
  for (std::size_t i = 0; i < 4; ++i) d.w.value[i] -= 0.1 * d.w.grad[i];
  Tape t2;
  const double ds = scalar(d.forward(t2, t2.constant(Tensor::row({0, 4, 4, 0}))));
  const double dt = scalar(d.forward(t2, t2.constant(Tensor::row({0, 1, 1, 0}))));
  EXPECT_GT(ds, dt);
}

TEST(Rotation, HandExamples) {
  Tape tape;
  auto v = [&](Tensor t) { return tape.constant(std::move(t)); };
  const std::vector<bool> one{true};
  EXPECT_NEAR(scalar(rotation_loss(tape, v(Tensor::row({1, 0})), v(Tensor::row({1, 0})), one)), 0.0, 1e-15);
  EXPECT_NEAR(scalar(rotation_loss(tape, v(Tensor::row({1, 0})), v(Tensor::row({0, 1})), one)), 1.0, 1e-15);
  EXPECT_NEAR(scalar(rotation_loss(tape, v(Tensor::row({1, 0})), v(Tensor::row({-1, 0})), one)), 2.0, 1e-15);
  // Absent classes are skipped.
  const Tensor a = Tensor::from_rows({{1, 0}, {1, 0}}), b = Tensor::from_rows({{1, 0}, {-1, 0}});
  EXPECT_NEAR(scalar(rotation_loss(tape, v(a), v(b), {true, false})), 0.0, 1e-15);
}

TEST(Rotation, BoundedByTwoK) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    const double r = scalar(rotation_loss(tape, tape.constant(gaussian(4, 3, rng)),
                                          tape.constant(gaussian(4, 3, rng)), std::vector<bool>(4, true)));
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 8.0);
  }
}

TEST(Centre, HandExamplesAndHomogeneity) {
  Tape tape;
  EXPECT_DOUBLE_EQ(scalar(centre_loss(tape.constant(Tensor::row({0, 0})), tape.constant(Tensor::row({1, 1})))), 2.0);
  EXPECT_DOUBLE_EQ(scalar(centre_loss(tape.constant(Tensor::row({3, 2})), tape.constant(Tensor::row({3, 2})))), 0.0);
  const double base = scalar(centre_loss(tape.constant(Tensor::row({0.3, -1})), tape.constant(Tensor::row({2, 0.5}))));
  const double scaled = scalar(centre_loss(tape.constant(Tensor::row({0.9, -3})), tape.constant(Tensor::row({6, 1.5}))));
  EXPECT_NEAR(scaled, 9.0 * base, 1e-12);
}

TEST(IsometryTriad, EachLossSeesItsOwnTransform) {
  const Tensor v = Tensor::from_rows({{2, 0, 1}, {0, 3, -1}, {-1, -1, 2}});
  const std::vector<bool> all(3, true);
  auto triad = [&](const Tensor& moved) {
    Tape tape;
    const Tensor ws = graph::build_wam(v, all), wt = graph::build_wam(moved, all);
    double wam_gap = 0.0;
    for (std::size_t i = 0; i < ws.size(); ++i) wam_gap = std::max(wam_gap, std::abs(ws[i] - wt[i]));
    const double rot = scalar(rotation_loss(tape, tape.constant(v), tape.constant(moved), all));
    const double cp = scalar(centre_loss(tape.constant(graph::domain_centre(v)),
                                         tape.constant(graph::domain_centre(moved))));
    return std::array<double, 3>{wam_gap, rot, cp};
  };
  const auto rotated = triad(rotate2(v, 0.9));
  EXPECT_LT(rotated[0], 1e-9);
  EXPECT_GT(rotated[1], 0.1);

  Tensor shifted = v;
  for (std::size_t i = 0; i < 3; ++i) shifted(i, 2) += 1.5;
  const auto translated = triad(shifted);
  EXPECT_LT(translated[0], 1e-9);
  EXPECT_GT(translated[2], 0.1);

  const auto same = triad(v);
  for (double x : same) EXPECT_LT(x, 1e-9);
}

TEST(Semantics, UniformForZeroLogits) {
  Tape tape;
  const std::vector<int> y{0, 1, 2, 2};
  const Tensor q = source_semantics(tape, tape.constant(Tensor(4, 3)), y, 3, 5.0).value();
  for (double v : q.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Semantics, HighTemperatureFlattens) {
  Rng rng(2);
  Tape tape;
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  const Tensor q = source_semantics(tape, tape.constant(gaussian(6, 3, rng, 10.0)), y, 3, 1e6).value();
  for (double v : q.values()) EXPECT_LT(std::abs(v - 1.0 / 3.0), 1e-3);
}

TEST(Semantics, ScalarSoftmaxValue) {
  Tape tape;
  const std::vector<int> y{0, 1};
  const Tensor q = source_semantics(tape, tape.constant(Tensor::from_rows({{2, 0}, {0, 0}})), y, 2, 1.0).value();
  EXPECT_NEAR(q(0, 0), 0.8808, 1e-4);
  EXPECT_NEAR(q(0, 1), 0.1192, 1e-4);
  EXPECT_NEAR(q(0, 0), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(Semantics, MissingSourceClassIsAnError) {
  Tape tape;
  const std::vector<int> y{0, 0};
  EXPECT_THROW(source_semantics(tape, tape.constant(Tensor(2, 3)), y, 3, 5.0), DataError);
}

TEST(VertexSemantic, MatchedOneHotIsNearZero) {
  Tape tape;
  Var q = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  Var logits = tape.constant(Tensor::from_rows({{40, 0}, {0, 40}}));
  EXPECT_LT(scalar(vertex_semantic_loss(q, logits, {0, 1})), 1e-12);
}

TEST(VertexSemantic, UniformQIsCrossEntropyAgainstUniform) {
  Rng rng(6);
  const Tensor logits = gaussian(5, 3, rng);
  Tape tape;
  Var q = tape.constant(Tensor(3, 3, 1.0 / 3.0));
  const double got = scalar(vertex_semantic_loss(q, tape.constant(logits), {0, 1, 2, 1, 0}));
  double expected = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    double z = 0.0;
    for (std::size_t k = 0; k < 3; ++k) z += std::exp(logits(i, k));
    for (std::size_t k = 0; k < 3; ++k) expected -= (logits(i, k) - std::log(z)) / 3.0;
  }
  EXPECT_NEAR(got, expected / 5.0, 1e-12);
}

TEST(VertexLoss, AlphaEndpoints) {
  Tape tape;
  Var vs = tape.constant(Tensor::scalar(0.7)), ce = tape.constant(Tensor::scalar(2.5));
  EXPECT_DOUBLE_EQ(scalar(vertex_loss(vs, ce, 0.0)), 2.5);
  EXPECT_DOUBLE_EQ(scalar(vertex_loss(vs, ce, 1.0)), 0.7);
  Var c = tape.constant(Tensor::scalar(1.3));
  EXPECT_NEAR(scalar(vertex_loss(c, c, 0.1)), 1.3, 1e-15);
}

TEST(Supervision, UniformPredictionsGiveLnK) {
  Tape tape;
  EXPECT_NEAR(scalar(supervision_loss(tape.constant(Tensor(4, 5)), {0, 1, 4, 2})), std::log(5.0), 1e-15);
  EXPECT_LT(scalar(supervision_loss(tape.constant(Tensor::from_rows({{50, 0}, {0, 50}})), {0, 1})), 1e-12);
}

TEST(Supervision, MatchesDirectSum) {
  Rng rng(10);
  std::uniform_int_distribution<int> lab(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor logits = gaussian(7, 4, rng, 3.0);
    std::vector<int> y(7);
    for (int& v : y) v = lab(rng);
    Tape tape;
    const double got = scalar(supervision_loss(tape.constant(logits), y));
    double expected = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
      double z = 0.0;
      for (std::size_t k = 0; k < 4; ++k) z += std::exp(logits(i, k));
      expected -= std::log(std::exp(logits(i, static_cast<std::size_t>(y[i]))) / z);
    }
    EXPECT_NEAR(got, expected / 7.0, 1e-12);
  }
}

TEST(GammaSchedule, LinearRamp) {
  EXPECT_DOUBLE_EQ(gamma_schedule(0, 300, 0.01, 0.1), 0.01);
  EXPECT_DOUBLE_EQ(gamma_schedule(299, 300, 0.01, 0.1), 0.1);
  EXPECT_NEAR(gamma_schedule(50, 101, 0.01, 0.1), 0.055, 1e-15);
  EXPECT_DOUBLE_EQ(gamma_schedule(0, 1, 0.01, 0.1), 0.1);
  EXPECT_THROW(gamma_schedule(5, 5, 0.01, 0.1), Error);
}

TEST(TotalObjective, WeightedSum) {
  Tape tape;
  Var one = tape.constant(Tensor::scalar(1.0));
  ObjectiveWeights w;
  w.gamma = 0.05;
  w.eta = 0.01;
  w.lambda = 0.01;
  w.edist = 0.0;
  EXPECT_NEAR(scalar(total_objective(one, one, one, one, one, one, w)), 2.07, 1e-15);

  // Linear in each part: doubling eta doubles the rotation contribution.
  Var r = tape.constant(Tensor::scalar(3.0));
  const double base = scalar(total_objective(one, one, r, one, one, one, w));
  w.eta *= 2;
  EXPECT_NEAR(scalar(total_objective(one, one, r, one, one, one, w)) - base, 0.03, 1e-15);

  Var nan = tape.constant(Tensor::scalar(std::nan("")));
  EXPECT_THROW(total_objective(nan, one, one, one, one, one, w), NumericError);
}

TEST(VertexEdist, HandExample) {
  Tape tape;
  const std::vector<bool> one{true};
  EXPECT_DOUBLE_EQ(scalar(vertex_edist_loss(tape, tape.constant(Tensor::row({0, 0})), tape.constant(Tensor::row({1, 0})),
                                            tape.constant(Tensor::row({1, 0})), one)),
                   2.0);
  Var same = tape.constant(Tensor::row({0.4, 2}));
  EXPECT_DOUBLE_EQ(scalar(vertex_edist_loss(tape, same, same, same, one)), 0.0);
}

TEST(VertexEdist, MatchesTripleLoop) {
  Rng rng(44);
  std::bernoulli_distribution keep(0.8);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor a = gaussian(4, 3, rng), b = gaussian(4, 3, rng), c = gaussian(4, 3, rng);
    std::vector<bool> present(4);
    for (std::size_t i = 0; i < 4; ++i) present[i] = keep(rng);
    Tape tape;
    const double got =
        scalar(vertex_edist_loss(tape, tape.constant(a), tape.constant(b), tape.constant(c), present));
    double expected = 0.0;
    const Tensor* pools[3] = {&a, &b, &c};
    const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (std::size_t i = 0; i < 4; ++i) {
      if (!present[i]) continue;
      for (const auto& p : pairs)
        for (std::size_t j = 0; j < 3; ++j) {
          const double diff = (*pools[p[0]])(i, j) - (*pools[p[1]])(i, j);
          expected += diff * diff;
        }
    }
    EXPECT_NEAR(got, expected, 1e-12);
  }
}

TEST(BuildObjective, BundleIsConsistentWithWeights) {
  Rng rng(21);
  auto m = model::GgaModel::init({5, 4, 0, 3, 3}, 2);
  const Tensor s = gaussian(9, 5, rng), tl = gaussian(6, 4, rng), tu = gaussian(8, 4, rng);
  Batch batch{&s, {0, 1, 2, 0, 1, 2, 0, 1, 2}, &tl, {0, 1, 2, 0, 1, 2}, &tu, {1, 4}, {2, 0}};
  ObjectiveOptions opt;
  opt.weights = {0.05, 0.02, 0.03, 0.1, 5.0, 0.0};
  Tape tape;
  const auto terms = build_objective(tape, m, batch, opt);
  const auto b = terms.bundle();
  EXPECT_NEAR(b.total, b.l_sup + 0.05 * b.l_sk + 0.02 * b.l_r + 0.03 * b.l_cp + b.l_v, 1e-12);
  EXPECT_GE(b.l_r, 0.0);
  EXPECT_GE(b.l_cp, 0.0);
  EXPECT_GE(b.l_vs, 0.0);
  EXPECT_GE(b.l_sup, 0.0);

  // With no pseudo-labels the TL+PL graph is the TL graph.
  Batch none = batch;
  none.pseudo_index.clear();
  none.pseudo_labels.clear();
  Tape t2;
  const auto plain = build_objective(t2, m, none, opt).bundle();
  EXPECT_TRUE(std::isfinite(plain.total));
}
