#pragma once

// Glue from a RunConfig to ready-to-train domains: load or synthesise,
// standardise per domain, and split the target.

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "gga/config.hpp"
#include "gga/data.hpp"
#include "gga/rng.hpp"
#include "gga/trainer.hpp"

namespace gga::pipeline {

struct PreparedData {
  data::DomainDataset source;  // standardised
  data::DomainDataset target;  // standardised, fully labelled (split happens later)
  data::LabelMapping mapping;
  data::FeatureStats source_stats;
  data::FeatureStats target_stats;
  bool standardised = false;
};

inline data::SyntheticSpec synth_spec(const config::RunConfig& cfg) {
  data::SyntheticSpec s = cfg.synth;
  s.seed = derive_seed(cfg.seed, "synth");
  return s;
}

inline data::SplitSpec split_spec(const config::RunConfig& cfg) {
  return {cfg.data.labelled_parts, cfg.data.unlabelled_parts, derive_seed(cfg.seed, "split"),
          cfg.data.stratified};
}

namespace detail {

// Identity stats, used when standardisation is switched off.
inline data::FeatureStats identity_stats(std::size_t d) {
  return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0), std::vector<bool>(d, false)};
}

}  // namespace detail

inline PreparedData prepare(const config::RunConfig& cfg) {
  PreparedData out;
  if (cfg.data.synthetic()) {
    auto pair = data::gen_synthetic_pair(synth_spec(cfg));
    out.mapping = data::synthetic_mapping(cfg.synth.num_classes);
    out.source = std::move(pair.source);
    out.target = std::move(pair.target);
  } else {
    const auto src = data::read_csv_table(cfg.data.source, cfg.data.label_column);
    const auto tgt = data::read_csv_table(cfg.data.target, cfg.data.label_column);
    if (!cfg.data.label_mapping.empty()) {
      out.mapping = data::LabelMapping::read_csv(cfg.data.label_mapping);
    } else {
      std::set<std::string> names(src.labels.begin(), src.labels.end());
      names.insert(tgt.labels.begin(), tgt.labels.end());
      out.mapping = data::LabelMapping::from_names(names);
    }
    out.source = data::to_dataset(src, out.mapping, cfg.data.source);
    out.target = data::to_dataset(tgt, out.mapping, cfg.data.target);
  }
  if (out.mapping.size() < 2) throw DataError("need at least 2 shared classes, found " +
                                              std::to_string(out.mapping.size()));
  if (cfg.data.standardise) {
    auto s = data::standardise(out.source);
    auto t = data::standardise(out.target);
    out.source = std::move(s.dataset);
    out.source_stats = std::move(s.stats);
    out.target = std::move(t.dataset);
    out.target_stats = std::move(t.stats);
    out.standardised = true;
  } else {
    out.source_stats = detail::identity_stats(out.source.dim());
    out.target_stats = detail::identity_stats(out.target.dim());
  }
  return out;
}

inline nlohmann::json stats_to_json(const data::FeatureStats& s) {
  return {{"mean", s.mean}, {"stddev", s.stddev}, {"constant", s.constant}};
}

inline data::FeatureStats stats_from_json(const nlohmann::json& j) {
  try {
    data::FeatureStats s{j.at("mean").get<std::vector<double>>(), j.at("stddev").get<std::vector<double>>(),
                         j.at("constant").get<std::vector<bool>>()};
    if (s.stddev.size() != s.mean.size() || s.constant.size() != s.mean.size()) {
      throw DataError("standardisation stats have inconsistent lengths");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("standardisation stats: ") + e.what());
  }
}

// Everything `evaluate` needs besides the weights.
inline nlohmann::json checkpoint_extras(const PreparedData& d, const config::RunConfig& cfg) {
  return {{"label_column", cfg.data.label_column},
          {"labels", d.mapping.names()},
          {"source_stats", stats_to_json(d.source_stats)},
          {"target_stats", stats_to_json(d.target_stats)}};
}

inline trainer::TaskFactory task_factory(const PreparedData& d, const config::RunConfig& cfg) {
  return trainer::split_task(d.source, d.target, split_spec(cfg));
}

}  // namespace gga::pipeline
