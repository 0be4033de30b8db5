#pragma once

// Finite-difference audit of every loss term and the total objective on small
// random problems. The shape-keeping term is checked without the gradient
// reversal: reversal deliberately makes the backward pass disagree with the
// forward function, and is tested separately.

#include <map>
#include <string>
#include <vector>

#include "gga/autodiff.hpp"
#include "gga/losses.hpp"
#include "gga/model.hpp"
#include "gga/rng.hpp"

namespace gga::gradcheck {

struct Settings {
  std::size_t seeds = 10;
  std::uint64_t root_seed = 0;
  std::size_t num_classes = 3;
  std::size_t common_dim = 3;
  std::size_t hidden = 0;
  std::size_t source_dim = 6;
  std::size_t target_dim = 4;
  double temperature = 5.0;
  losses::ShapeKeepingForm form = losses::ShapeKeepingForm::kBinaryCrossEntropy;
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct TermResult {
  std::string term;
  double max_rel_error = 0.0;
  std::string worst;  // "seed <s>: <param>[i]"
  bool passed = false;
};

inline const std::vector<std::string>& term_names() {
  static const std::vector<std::string> names{"L_SUP", "L_SK", "L_R", "L_CP",
                                              "L_VS", "L_V", "total", "vertex_edist"};
  return names;
}

struct Problem {
  Tensor source, target_labelled, target_unlabelled;
  std::vector<int> source_labels, target_labels;
  std::vector<std::size_t> pseudo_index;
  std::vector<int> pseudo_labels;
};

// Every class appears in S and TL; two unlabelled rows carry pseudo-labels.
inline Problem random_problem(const Settings& s, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t k = s.num_classes;
  auto fill = [&](std::size_t rows, std::size_t cols) {
    Tensor t(rows, cols);
    for (double& v : t.values()) v = gauss(rng);
    return t;
  };
  Problem p;
  p.source = fill(3 * k, s.source_dim);
  p.target_labelled = fill(2 * k, s.target_dim);
  p.target_unlabelled = fill(k + 3, s.target_dim);
  for (std::size_t i = 0; i < 3 * k; ++i) p.source_labels.push_back(static_cast<int>(i % k));
  for (std::size_t i = 0; i < 2 * k; ++i) p.target_labels.push_back(static_cast<int>(i % k));
  std::uniform_int_distribution<int> label(0, static_cast<int>(k) - 1);
  p.pseudo_index = {0, 2};
  p.pseudo_labels = {label(rng), label(rng)};
  return p;
}

// Perturbs the zero-initialised biases so no term sits at a special point.
inline model::GgaModel random_model(const Settings& s, std::uint64_t seed) {
  model::GgaModel m = model::GgaModel::init(
      {s.source_dim, s.target_dim, s.hidden, s.common_dim, s.num_classes}, derive_seed(seed, "init"));
  Rng rng(derive_seed(seed, "bias"));
  std::normal_distribution<double> gauss(0.0, 0.3);
  for (ad::Parameter* p : m.parameters())
    if (p->value.rows() == 1)
      for (double& v : p->value.values()) v = gauss(rng);
  return m;
}

inline ad::Var pick(const losses::ObjectiveTerms& t, const std::string& term) {
  if (term == "L_SUP") return t.l_sup;
  if (term == "L_SK") return t.l_sk;
  if (term == "L_R") return t.l_r;
  if (term == "L_CP") return t.l_cp;
  if (term == "L_VS") return t.l_vs;
  if (term == "L_V") return t.l_v;
  if (term == "vertex_edist") return t.l_edist;
  if (term == "total") return t.total;
  throw Error("gradcheck: unknown term " + term);
}

// Non-zero weights on every term so `total` exercises the whole objective.
inline losses::ObjectiveOptions audit_options(const Settings& s) {
  losses::ObjectiveOptions opt;
  opt.weights = {0.5, 0.7, 0.3, 0.4, s.temperature, 0.2};
  opt.shape_keeping = {s.form, false, 1.0};
  return opt;
}

inline std::vector<TermResult> run(const Settings& s, const ad::GradTamper& tamper = {}) {
  std::vector<TermResult> results;
  for (const auto& name : term_names()) results.push_back({name, 0.0, "", true});
  const losses::ObjectiveOptions opt = audit_options(s);
  for (std::size_t i = 0; i < s.seeds; ++i) {
    const std::uint64_t seed = derive_seed(s.root_seed + i, "gradcheck");
    const Problem p = random_problem(s, seed);
    model::GgaModel m = random_model(s, seed);
    const auto params = m.parameters();
    const losses::Batch batch{&p.source,           p.source_labels, &p.target_labelled,
                              p.target_labels,     &p.target_unlabelled,
                              p.pseudo_index,      p.pseudo_labels};
    for (auto& r : results) {
      auto build = [&](ad::Tape& tape) { return pick(losses::build_objective(tape, m, batch, opt), r.term); };
      const auto report = ad::check_gradients(build, params, s.step, tamper);
      if (r.worst.empty() || report.max_rel_error > r.max_rel_error) {
        r.max_rel_error = report.max_rel_error;
        r.worst = "seed " + std::to_string(s.root_seed + i) + ": " + report.worst;
      }
    }
  }
  for (auto& r : results) r.passed = r.max_rel_error < s.tolerance;
  return results;
}

}  // namespace gga::gradcheck
