#pragma once

// Training loop: project -> elect pseudo-labels -> build graphs and losses ->
// one joint backward through the gradient reversal -> Adam -> evaluate.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gga/autodiff.hpp"
#include "gga/data.hpp"
#include "gga/error.hpp"
#include "gga/graph.hpp"
#include "gga/losses.hpp"
#include "gga/metrics.hpp"
#include "gga/model.hpp"
#include "gga/ple.hpp"
#include "gga/rng.hpp"

namespace gga::trainer {

using data::DomainDataset;
using model::Domain;
using model::GgaModel;

// Switches for the ablation groups. A disabled term has its weight zeroed.
struct AblationFlags {
  bool disable_sk = false;        // gamma_min = gamma_max = 0
  bool disable_r = false;         // eta = 0
  bool disable_cp = false;        // lambda = 0
  bool disable_vs = false;        // alpha = 0
  bool use_vertex_edist = false;  // graph terms replaced by direct vertex distances
};

struct TrainConfig {
  losses::LossWeights weights;
  ple::PleConfig ple;
  std::size_t hidden = 0;  // 0 -> max(16, 2 * common_dim)
  std::size_t common_dim = 3;
  model::AdamConfig adam;
  std::size_t epochs = 300;
  std::size_t batch_size = 0;  // 0 -> full batch, one Adam step per epoch
  std::uint64_t seed = 0;
  double grl_coeff = 1.0;
  losses::ShapeKeepingForm shape_keeping = losses::ShapeKeepingForm::kBinaryCrossEntropy;
  AblationFlags ablation;

  void validate() const {
    weights.validate();
    ple.validate();
    if (common_dim < 1) throw ConfigError("model.common_dim", "must be >= 1");
    if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
    if (!(grl_coeff > 0.0)) throw ConfigError("train.grl_coeff", "must be > 0");
    if (!(adam.lr >= 0.0)) throw ConfigError("adam.lr", "must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("adam.beta1", "must be in [0, 1)");
    if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("adam.beta2", "must be in [0, 1)");
    if (!(adam.eps > 0.0)) throw ConfigError("adam.eps", "must be > 0");
  }

  losses::ObjectiveWeights effective_weights(std::size_t epoch) const {
    losses::ObjectiveWeights w;
    w.gamma = ablation.disable_sk ? 0.0
                                  : losses::gamma_schedule(epoch, epochs, weights.gamma_min,
                                                           weights.gamma_max);
    w.eta = ablation.disable_r ? 0.0 : weights.eta;
    w.lambda = ablation.disable_cp ? 0.0 : weights.lambda;
    w.alpha = ablation.disable_vs ? 0.0 : weights.alpha;
    w.temperature = weights.temperature;
    w.edist = 0.0;
    if (ablation.use_vertex_edist) {
      w.gamma = w.eta = w.lambda = 0.0;
      w.edist = weights.edist_weight;
    }
    return w;
  }

  losses::ObjectiveOptions objective(std::size_t epoch) const {
    return {effective_weights(epoch), {shape_keeping, true, grl_coeff}};
  }

  model::ModelDims dims(std::size_t source_dim, std::size_t target_dim, std::size_t k) const {
    return {source_dim, target_dim, hidden, common_dim, k};
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  losses::LossBundle losses;
  metrics::MetricsReport metrics;
  ple::PleStats ple;
  std::size_t pseudo_labels = 0;
  double seconds = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  GgaModel model;
};

// Read-only inference: argmax of the classifier over projected features.
inline metrics::MetricsReport evaluate(const GgaModel& model, const DomainDataset& ds, Domain domain) {
  const Tensor logits = model.logits(model.embed(ds.features, domain));
  const auto preds = metrics::argmax_rows(logits);
  const auto& truth = ds.truth();
  const Tensor scores = ad::detail::softmax_rows(logits);
  return metrics::report(metrics::confusion(preds, truth, model.dims().num_classes), scores, truth);
}

// Called after every epoch with the freshly evaluated record and the model.
using EpochObserver = std::function<void(const EpochRecord&, const GgaModel&)>;

namespace detail {

inline Tensor vstack(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ShapeError("vstack: width mismatch");
  Tensor out(a.rows() + b.rows(), a.cols());
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(),
            out.values().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

struct StepRows {
  std::vector<std::size_t> source;
  std::vector<std::size_t> unlabelled;
};

// Full batch: one step over every row in order. Mini-batch: classes of the
// source are dealt round-robin so every step sees every class.
inline std::vector<StepRows> plan_steps(const DomainDataset& source, std::size_t n_unlabelled,
                                        std::size_t batch_size, Rng& rng) {
  const std::size_t n_s = source.size();
  if (batch_size == 0 || batch_size >= n_s) {
    StepRows all;
    all.source.resize(n_s);
    std::iota(all.source.begin(), all.source.end(), 0);
    all.unlabelled.resize(n_unlabelled);
    std::iota(all.unlabelled.begin(), all.unlabelled.end(), 0);
    return {all};
  }
  const std::size_t steps = (n_s + batch_size - 1) / batch_size;
  std::vector<StepRows> plan(steps);
  std::vector<std::vector<std::size_t>> by_class(source.num_classes);
  for (std::size_t i = 0; i < n_s; ++i) by_class[static_cast<std::size_t>(source.labels[i])].push_back(i);
  for (auto& rows : by_class) {
    if (rows.empty()) continue;
    std::shuffle(rows.begin(), rows.end(), rng);
    const std::size_t per = std::max<std::size_t>(1, (rows.size() + steps - 1) / steps);
    for (std::size_t s = 0; s < steps; ++s)
      for (std::size_t j = 0; j < per; ++j) plan[s].source.push_back(rows[(s * per + j) % rows.size()]);
  }
  std::vector<std::size_t> tu(n_unlabelled);
  std::iota(tu.begin(), tu.end(), 0);
  std::shuffle(tu.begin(), tu.end(), rng);
  const std::size_t per_tu = (n_unlabelled + steps - 1) / steps;
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t j = s * per_tu; j < std::min(n_unlabelled, (s + 1) * per_tu); ++j)
      plan[s].unlabelled.push_back(tu[j]);
    std::sort(plan[s].source.begin(), plan[s].source.end());
    std::sort(plan[s].unlabelled.begin(), plan[s].unlabelled.end());
  }
  return plan;
}

inline void check_inputs(const DomainDataset& source, const DomainDataset& labelled,
                         const DomainDataset& unlabelled) {
  source.validate();
  labelled.validate();
  unlabelled.validate();
  if (source.num_classes != labelled.num_classes || source.num_classes != unlabelled.num_classes) {
    throw DataError("train: domains disagree on the number of shared classes");
  }
  if (!source.fully_labelled()) throw DataError("train: source must be fully labelled");
  if (!labelled.fully_labelled()) throw DataError("train: labelled target has unlabelled rows");
  if (labelled.dim() != unlabelled.dim()) {
    throw DataError("train: labelled and unlabelled target differ in feature count");
  }
}

}  // namespace detail

inline RunRecord train(const DomainDataset& source, const DomainDataset& labelled,
                       const DomainDataset& unlabelled, const TrainConfig& cfg,
                       const EpochObserver& observer = {}) {
  cfg.validate();
  detail::check_inputs(source, labelled, unlabelled);
  const std::size_t k = source.num_classes;

  RunRecord run;
  run.model = GgaModel::init(cfg.dims(source.dim(), labelled.dim(), k), derive_seed(cfg.seed, "init"));
  GgaModel& model = run.model;
  const auto params = model.parameters();
  model::AdamState adam(cfg.adam);
  Rng batch_rng(derive_seed(cfg.seed, "batches"));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    const losses::ObjectiveOptions opt = cfg.objective(epoch);

    ple::PseudoLabelSet epoch_pls;
    epoch_pls.pool_size = unlabelled.size();
    epoch_pls.epoch = epoch;
    epoch_pls.votes.resize(unlabelled.size());

    try {
      {
        data::TrainingScope scope;
        const auto plan = detail::plan_steps(source, unlabelled.size(), cfg.batch_size, batch_rng);
        for (const auto& step : plan) {
          const bool full = plan.size() == 1;
          const Tensor src_x = full ? source.features : take_rows(source.features, step.source);
          std::vector<int> src_y;
          if (full) {
            src_y = source.labels;
          } else {
            for (std::size_t r : step.source) src_y.push_back(source.labels[r]);
          }
          const Tensor tu_x = full ? unlabelled.features : take_rows(unlabelled.features, step.unlabelled);

          // Election on the current parameters; embeddings are values, not tape nodes.
          const Tensor e_s = model.embed(src_x, Domain::kSource);
          const Tensor e_tl = model.embed(labelled.features, Domain::kTarget);
          const Tensor e_tu = model.embed(tu_x, Domain::kTarget);
          ple::LabelledPool pool{detail::vstack(e_s, e_tl), src_y, k};
          pool.labels.insert(pool.labels.end(), labelled.labels.begin(), labelled.labels.end());
          ple::PseudoLabelSet pls = ple::elect(e_tu, model.logits(e_tu), pool, cfg.ple, epoch);

          losses::Batch batch{&src_x, src_y, &labelled.features, labelled.labels, &tu_x,
                              pls.indices(), pls.labels()};
          ad::Tape tape;
          losses::ObjectiveTerms terms = losses::build_objective(tape, model, batch, opt);
          const losses::LossBundle b = terms.bundle();
          tape.backward(terms.total);
          adam.step(params);

          const double w = 1.0 / static_cast<double>(plan.size());
          rec.losses.l_sup += w * b.l_sup;
          rec.losses.l_sk += w * b.l_sk;
          rec.losses.l_r += w * b.l_r;
          rec.losses.l_cp += w * b.l_cp;
          rec.losses.l_vs += w * b.l_vs;
          rec.losses.l_v += w * b.l_v;
          rec.losses.l_edist += w * b.l_edist;
          rec.losses.total += w * b.total;

          for (std::size_t i = 0; i < pls.votes.size(); ++i) {
            epoch_pls.votes[step.unlabelled[i]] = pls.votes[i];
          }
          for (const auto& e : pls.entries) {
            epoch_pls.entries.push_back({step.unlabelled[e.index], e.label, e.votes});
          }
        }
      }
      // Evaluation reads the hidden truth, so it sits outside the scope.
      rec.metrics = evaluate(model, unlabelled, Domain::kTarget);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    rec.losses.gamma_effective = opt.weights.gamma;
    std::sort(epoch_pls.entries.begin(), epoch_pls.entries.end(),
              [](const auto& a, const auto& b) { return a.index < b.index; });

    if (unlabelled.hidden) rec.ple = ple::ple_stats(epoch_pls, *unlabelled.hidden);
    rec.pseudo_labels = epoch_pls.entries.size();
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    run.epochs.push_back(rec);
    if (observer) observer(run.epochs.back(), model);
  }
  return run;
}

// ---- CSV emitters ------------------------------------------------------------

namespace detail {

inline std::string num(double v) { return data::format_double(v); }
inline std::string num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

}  // namespace detail

inline constexpr const char* kLossesHeader =
    "epoch,l_sup,l_sk,l_r,l_cp,l_vs,l_v,gamma_effective,total,l_edist";
inline constexpr const char* kMetricsHeader = "epoch,accuracy,precision,recall,f1,auc";
inline constexpr const char* kPleHeader =
    "epoch,pseudo_labels,coverage,pl_accuracy,nn_coverage,nn_accuracy,geometric_coverage,"
    "geometric_accuracy,neighbourhood_coverage,neighbourhood_accuracy,nn_geometric_agreement,"
    "nn_neighbourhood_agreement,geometric_neighbourhood_agreement";
inline constexpr const char* kTimingHeader = "epoch,seconds";

inline void write_losses_csv(std::ostream& out, const RunRecord& run) {
  out << kLossesHeader << '\n';
  for (const auto& e : run.epochs) {
    const auto& l = e.losses;
    out << e.epoch << ',' << detail::num(l.l_sup) << ',' << detail::num(l.l_sk) << ','
        << detail::num(l.l_r) << ',' << detail::num(l.l_cp) << ',' << detail::num(l.l_vs) << ','
        << detail::num(l.l_v) << ',' << detail::num(l.gamma_effective) << ','
        << detail::num(l.total) << ',' << detail::num(l.l_edist) << '\n';
  }
}

inline void write_metrics_row(std::ostream& out, const std::string& key,
                              const metrics::MetricsReport& m) {
  out << key << ',' << detail::num(m.accuracy) << ',' << detail::num(m.precision) << ','
      << detail::num(m.recall) << ',' << detail::num(m.f1) << ',' << detail::num(m.auc) << '\n';
}

inline void write_metrics_csv(std::ostream& out, const RunRecord& run) {
  out << kMetricsHeader << '\n';
  for (const auto& e : run.epochs) write_metrics_row(out, std::to_string(e.epoch), e.metrics);
}

inline void write_ple_csv(std::ostream& out, const RunRecord& run) {
  out << kPleHeader << '\n';
  for (const auto& e : run.epochs) {
    const auto& p = e.ple;
    out << e.epoch << ',' << e.pseudo_labels << ',' << detail::num(p.elected.coverage) << ','
        << detail::num(p.elected.accuracy) << ',' << detail::num(p.nn.coverage) << ','
        << detail::num(p.nn.accuracy) << ',' << detail::num(p.geometric.coverage) << ','
        << detail::num(p.geometric.accuracy) << ',' << detail::num(p.neighbourhood.coverage)
        << ',' << detail::num(p.neighbourhood.accuracy) << ','
        << detail::num(p.nn_geometric_agreement) << ','
        << detail::num(p.nn_neighbourhood_agreement) << ','
        << detail::num(p.geometric_neighbourhood_agreement) << '\n';
  }
}

inline void write_timing_csv(std::ostream& out, const RunRecord& run) {
  out << kTimingHeader << '\n';
  for (const auto& e : run.epochs) out << e.epoch << ',' << detail::num(e.seconds) << '\n';
}

// ---- ablation suite ------------------------------------------------------------

struct AblationVariant {
  std::string name;
  std::string description;
  TrainConfig config;
};

// Full GGA, A1-A4 (loss terms off), B1-B4 (PLE voter subsets), C (vertex distance alignment).
inline std::vector<AblationVariant> ablation_variants(const TrainConfig& base) {
  std::vector<AblationVariant> out;
  auto add = [&](std::string name, std::string what, auto tweak) {
    TrainConfig c = base;
    tweak(c);
    out.push_back({std::move(name), std::move(what), c});
  };
  add("full", "full GGA", [](TrainConfig&) {});
  add("A1", "no shape keeping (gamma_min = gamma_max = 0)", [](TrainConfig& c) { c.ablation.disable_sk = true; });
  add("A2", "no rotation avoidance (eta = 0)", [](TrainConfig& c) { c.ablation.disable_r = true; });
  add("A3", "no centre matching (lambda = 0)", [](TrainConfig& c) { c.ablation.disable_cp = true; });
  add("A4", "no vertex semantics (alpha = 0)", [](TrainConfig& c) { c.ablation.disable_vs = true; });
  add("B1", "PLE voters N", [](TrainConfig& c) { c.ple.voters = ple::Voters::parse("N"); });
  add("B2", "PLE voters N+G", [](TrainConfig& c) { c.ple.voters = ple::Voters::parse("NG"); });
  add("B3", "PLE voters N+K", [](TrainConfig& c) { c.ple.voters = ple::Voters::parse("NK"); });
  add("B4", "PLE voters G+K", [](TrainConfig& c) { c.ple.voters = ple::Voters::parse("GK"); });
  add("C", "vertex Euclidean-distance alignment", [](TrainConfig& c) { c.ablation.use_vertex_edist = true; });
  return out;
}

struct AblationRow {
  std::string name;
  std::string description;
  std::vector<double> accuracies;    // final-epoch unlabelled-target accuracy per seed
  std::vector<EpochRecord> finals;   // final epoch per seed
  double mean = 0.0;
  double stddev = 0.0;  // population
};

// One semi-supervised problem instance.
struct Task {
  DomainDataset source;
  DomainDataset labelled;
  DomainDataset unlabelled;
};

using TaskFactory = std::function<Task(std::uint64_t seed)>;

// Fixed (standardised) domains; each seed draws its own labelled/unlabelled split.
inline TaskFactory split_task(DomainDataset source, DomainDataset target, data::SplitSpec split) {
  return [source = std::move(source), target = std::move(target), split](std::uint64_t seed) {
    data::SplitSpec s = split;
    s.seed = derive_seed(seed, "split");
    auto parts = data::split_semi_supervised(target, s);
    return Task{source, std::move(parts.labelled), std::move(parts.unlabelled)};
  };
}

// Every variant sees the same task and initialisation seed for a given seed.
// Seeds share no state; they run one after another here.
inline std::vector<AblationRow> run_ablation_suite(const TaskFactory& make_task,
                                                   const TrainConfig& base,
                                                   std::span<const std::uint64_t> seeds) {
  if (seeds.size() < 3) throw ConfigError("ablation.seeds", "ablation suite needs at least 3 seeds");
  auto variants = ablation_variants(base);
  std::vector<AblationRow> rows;
  for (const auto& v : variants) rows.push_back({v.name, v.description, {}, {}, 0.0, 0.0});
  for (std::uint64_t seed : seeds) {
    const Task task = make_task(seed);
    for (std::size_t i = 0; i < variants.size(); ++i) {
      TrainConfig c = variants[i].config;
      c.seed = seed;
      const RunRecord run = train(task.source, task.labelled, task.unlabelled, c);
      rows[i].accuracies.push_back(run.epochs.back().metrics.accuracy);
      rows[i].finals.push_back(run.epochs.back());
    }
  }
  for (auto& r : rows) {
    const auto n = static_cast<double>(r.accuracies.size());
    r.mean = std::accumulate(r.accuracies.begin(), r.accuracies.end(), 0.0) / n;
    double ss = 0.0;
    for (double a : r.accuracies) ss += (a - r.mean) * (a - r.mean);
    r.stddev = std::sqrt(ss / n);
  }
  return rows;
}

inline constexpr const char* kAblationHeader = "variant,description,mean_accuracy,std_accuracy,seed_accuracies";

// seed_accuracies is ';'-separated in seed order.
inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << kAblationHeader << '\n';
  for (const auto& r : rows) {
    out << r.name << ",\"" << r.description << "\"," << detail::num(r.mean) << ','
        << detail::num(r.stddev) << ',';
    for (std::size_t i = 0; i < r.accuracies.size(); ++i)
      out << (i ? ";" : "") << detail::num(r.accuracies[i]);
    out << '\n';
  }
}

}  // namespace gga::trainer
