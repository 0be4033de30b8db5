// gga: command-line front end.
//
//   gga train      --config run.toml [--set section.key=value ...] [--run-dir DIR]
//   gga evaluate   --checkpoint ckpt.json --data file.csv [--domain target|source] [--out eval.csv]
//   gga gen-synth  --out-dir DIR [--seed N --classes K --source-dim D --target-dim D ...]
//   gga gradcheck  [--config run.toml] [--set ...] [--corrupt-gradient]
//   gga ple-report --config run.toml [--set ...] [--out FILE]
//   gga ablate     --config run.toml [--set ...] [--run-dir DIR]
//
// Exit codes: 0 success, 1 check failed, 2 user or config error, 3 numeric divergence.
// Failures print one JSON object on stderr.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gga/gga.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit : int { kOk = 0, kCheckFailed = 1, kUserError = 2, kDiverged = 3 };

int fail(Exit code, const std::string& kind, const std::string& message, const std::string& key = "") {
  json j{{"error", kind}, {"message", message}, {"exit_code", static_cast<int>(code)}};
  if (!key.empty()) j["key"] = key;
  std::cerr << j.dump() << std::endl;
  return code;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* app, bool required) {
    auto* opt = app->add_option("--config,-c", path, "TOML-style config file");
    if (required) opt->required();
    app->add_option("--set", overrides, "override, e.g. --set loss.alpha=0.2")->take_all();
  }

  gga::config::RunConfig resolve() const {
    gga::config::RunConfig cfg = path.empty() ? gga::config::RunConfig{} : gga::config::load(path);
    for (const auto& o : overrides) gga::config::apply_override(cfg, o);
    gga::config::validate(cfg);
    return cfg;
  }
};

// --run-dir wins; otherwise <root>/<stem>-s<seed>[-n] under GGA_RUN_DIR or output.dir.
fs::path make_run_dir(const std::string& explicit_dir, const gga::config::RunConfig& cfg,
                      const std::string& stem) {
  fs::path dir;
  if (!explicit_dir.empty()) {
    dir = explicit_dir;
    if (fs::exists(dir / "manifest.json")) {
      throw gga::ConfigError("run_dir", "run directory " + dir.string() + " already holds a manifest");
    }
  } else {
    const char* env = std::getenv("GGA_RUN_DIR");
    const fs::path root = env && *env ? fs::path(env) : fs::path(cfg.output.dir);
    const std::string base = stem + "-s" + std::to_string(cfg.seed);
    dir = root / base;
    for (int n = 1; fs::exists(dir); ++n) dir = root / (base + "-" + std::to_string(n));
  }
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw gga::DataError("cannot write " + path.string());
  out << text;
}

template <class Fn>
void write_stream(const fs::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw gga::DataError("cannot write " + path.string());
  fn(out);
}

json manifest(const std::string& command, const ConfigArgs& args, const gga::config::RunConfig& cfg,
              const std::string& started, const std::vector<std::string>& artifacts) {
  json snap = json::object();
  for (const auto& [k, v] : gga::config::snapshot(cfg)) snap[k] = v;
  return {{"command", command},
          {"config_path", args.path},
          {"overrides", args.overrides},
          {"seed", cfg.seed},
          {"config", snap},
          {"artifacts", artifacts},
          {"started_utc", started},
          {"finished_utc", utc_now()}};
}

struct TrainOutputs {
  gga::trainer::RunRecord run;
  gga::pipeline::PreparedData data;
  gga::data::SemiSupervisedSplit split;
};

TrainOutputs run_training(const gga::config::RunConfig& cfg, std::ostream* graphs) {
  TrainOutputs out;
  out.data = gga::pipeline::prepare(cfg);
  out.split = gga::data::split_semi_supervised(out.data.target, gga::pipeline::split_spec(cfg));
  gga::trainer::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;

  gga::trainer::EpochObserver observer;
  if (graphs) {
    *graphs << "epoch,graph,kind,i,j,value\n";
    observer = [&](const gga::trainer::EpochRecord& rec, const gga::model::GgaModel& m) {
      using gga::model::Domain;
      gga::graph::write_graph_rows(*graphs, rec.epoch, "source",
                                   gga::graph::build_graph(m.embed(out.data.source.features, Domain::kSource),
                                                           out.data.source.labels,
                                                           out.data.source.num_classes));
      gga::graph::write_graph_rows(*graphs, rec.epoch, "target_labelled",
                                   gga::graph::build_graph(m.embed(out.split.labelled.features, Domain::kTarget),
                                                           out.split.labelled.labels,
                                                           out.split.labelled.num_classes));
    };
  }
  out.run = gga::trainer::train(out.data.source, out.split.labelled, out.split.unlabelled, tc, observer);
  return out;
}

// Raw-scale copy of a standardised dataset, so `evaluate` can re-read it.
void write_raw_csv(const fs::path& path, const gga::data::DomainDataset& ds,
                   const gga::data::FeatureStats& stats, const gga::data::LabelMapping& mapping,
                   const std::string& label_column) {
  gga::data::DomainDataset raw = ds;
  raw.features = stats.invert(ds.features);
  gga::data::write_csv(path.string(), raw, mapping, label_column);
}

void print_report(std::ostream& out, const gga::metrics::MetricsReport& m) {
  out << "n=" << m.n << " accuracy=" << m.accuracy << " precision=" << m.precision
      << " recall=" << m.recall << " f1=" << m.f1 << " auc=" << m.auc << '\n';
}

int cmd_train(const ConfigArgs& args, const std::string& run_dir_opt) {
  const std::string started = utc_now();
  const auto cfg = args.resolve();
  const fs::path dir = make_run_dir(run_dir_opt, cfg, "train");

  std::ofstream graphs;
  if (cfg.output.graphs) graphs.open(dir / "graphs.csv", std::ios::binary);
  TrainOutputs t = run_training(cfg, cfg.output.graphs ? &graphs : nullptr);

  std::vector<std::string> artifacts{"config.toml", "losses.csv", "metrics.csv", "ple_report.csv",
                                     "timing.csv", "checkpoint.json", "label_mapping.csv",
                                     "target_labelled.csv", "target_unlabelled.csv"};
  if (cfg.output.graphs) artifacts.push_back("graphs.csv");

  write_text(dir / "config.toml", gga::config::echo(cfg));
  write_stream(dir / "losses.csv", [&](std::ostream& o) { gga::trainer::write_losses_csv(o, t.run); });
  write_stream(dir / "metrics.csv", [&](std::ostream& o) { gga::trainer::write_metrics_csv(o, t.run); });
  write_stream(dir / "ple_report.csv", [&](std::ostream& o) { gga::trainer::write_ple_csv(o, t.run); });
  write_stream(dir / "timing.csv", [&](std::ostream& o) { gga::trainer::write_timing_csv(o, t.run); });
  gga::model::save_checkpoint((dir / "checkpoint.json").string(), t.run.model,
                              gga::pipeline::checkpoint_extras(t.data, cfg));
  t.data.mapping.write_csv((dir / "label_mapping.csv").string());
  write_raw_csv(dir / "target_labelled.csv", t.split.labelled, t.data.target_stats, t.data.mapping,
                cfg.data.label_column);
  write_raw_csv(dir / "target_unlabelled.csv", t.split.unlabelled, t.data.target_stats, t.data.mapping,
                cfg.data.label_column);
  write_text(dir / "manifest.json", manifest("train", args, cfg, started, artifacts).dump(2) + "\n");

  std::cout << "run_dir=" << dir.string() << '\n';
  print_report(std::cout, t.run.epochs.back().metrics);
  return kOk;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data_path, const std::string& domain_name,
                 const std::string& out_path) {
  using gga::model::Domain;
  if (domain_name != "target" && domain_name != "source") {
    throw gga::ConfigError("domain", "--domain must be 'target' or 'source'");
  }
  const Domain domain = domain_name == "source" ? Domain::kSource : Domain::kTarget;
  const auto ckpt = gga::model::load_checkpoint(checkpoint);
  const auto& extras = ckpt.extras;
  const std::string label_column = extras.value("label_column", std::string("label"));

  const auto table = gga::data::read_csv_table(data_path, label_column);
  gga::data::LabelMapping mapping =
      extras.contains("labels") ? gga::data::LabelMapping(extras["labels"].get<std::vector<std::string>>())
                                : gga::data::synthetic_mapping(ckpt.model.dims().num_classes);
  gga::data::DomainDataset ds = gga::data::to_dataset(table, mapping, data_path);
  const auto& dims = ckpt.model.dims();
  const std::size_t expected = domain == Domain::kSource ? dims.source_dim : dims.target_dim;
  if (ds.dim() != expected) {
    throw gga::ConfigError("data", data_path + " has " + std::to_string(ds.dim()) + " features; the " +
                                       domain_name + " projector of " + checkpoint + " expects " +
                                       std::to_string(expected));
  }
  const char* stats_key = domain == Domain::kSource ? "source_stats" : "target_stats";
  if (extras.contains(stats_key)) {
    ds.features = gga::pipeline::stats_from_json(extras[stats_key]).apply(ds.features);
  }
  const auto report = gga::trainer::evaluate(ckpt.model, ds, domain);
  print_report(std::cout, report);

  const bool fresh = !fs::exists(out_path) || fs::file_size(out_path) == 0;
  std::ofstream out(out_path, std::ios::app | std::ios::binary);
  if (!out) throw gga::DataError("cannot write " + out_path);
  if (fresh) out << "checkpoint,dataset,n,accuracy,precision,recall,f1,auc\n";
  gga::trainer::write_metrics_row(out, checkpoint + "," + data_path + "," + std::to_string(report.n), report);
  return kOk;
}

int cmd_gen_synth(gga::data::SyntheticSpec spec, std::uint64_t seed, const std::string& out_dir) {
  if (spec.num_classes < 2) {
    throw gga::ConfigError("classes", "--classes must be >= 2 (a graph needs two vertices)");
  }
  try {
    spec.validate();
  } catch (const gga::DataError& e) {
    throw gga::ConfigError("synth", e.what());
  }
  spec.seed = gga::derive_seed(seed, "synth");
  const auto pair = gga::data::gen_synthetic_pair(spec);
  const auto mapping = gga::data::synthetic_mapping(spec.num_classes);
  fs::create_directories(out_dir);
  gga::data::write_csv((fs::path(out_dir) / "source.csv").string(), pair.source, mapping);
  gga::data::write_csv((fs::path(out_dir) / "target.csv").string(), pair.target, mapping);
  mapping.write_csv((fs::path(out_dir) / "label_mapping.csv").string());
  std::cout << "wrote " << out_dir << "/source.csv (" << pair.source.size() << "x" << pair.source.dim()
            << "), target.csv (" << pair.target.size() << "x" << pair.target.dim() << ")\n";
  return kOk;
}

int cmd_gradcheck(const ConfigArgs& args, bool corrupt) {
  const auto cfg = args.resolve();
  gga::gradcheck::Settings s;
  s.seeds = cfg.gradcheck.seeds;
  s.root_seed = cfg.seed;
  s.num_classes = cfg.synth.num_classes;
  s.common_dim = cfg.train.common_dim;
  s.hidden = cfg.train.hidden;
  s.source_dim = cfg.synth.source_dim;
  s.target_dim = cfg.synth.target_dim;
  s.temperature = cfg.train.weights.temperature;
  s.form = cfg.train.shape_keeping;
  s.step = cfg.gradcheck.step;
  s.tolerance = cfg.gradcheck.tolerance;

  gga::ad::GradTamper tamper;
  if (corrupt) {
    // Negative control: perturb one analytic gradient entry.
    tamper = [](std::vector<gga::Tensor>& g) { g.front()[0] += 1e-2; };
  }
  const auto results = gga::gradcheck::run(s, tamper);
  std::vector<std::string> offenders;
  std::cout << "term,max_rel_error,worst_entry,status\n";
  for (const auto& r : results) {
    std::cout << r.term << ',' << gga::data::format_double(r.max_rel_error) << ",\"" << r.worst << "\","
              << (r.passed ? "ok" : "FAIL") << '\n';
    if (!r.passed) offenders.push_back(r.term);
  }
  if (!offenders.empty()) {
    std::string list;
    for (const auto& o : offenders) list += (list.empty() ? "" : ",") + o;
    return fail(kCheckFailed, "gradcheck", "relative error >= " + gga::data::format_double(s.tolerance) +
                                               " in: " + list);
  }
  return kOk;
}

int cmd_ple_report(const ConfigArgs& args, const std::string& out_path) {
  const auto cfg = args.resolve();
  const TrainOutputs t = run_training(cfg, nullptr);
  if (out_path.empty()) {
    gga::trainer::write_ple_csv(std::cout, t.run);
  } else {
    write_stream(out_path, [&](std::ostream& o) { gga::trainer::write_ple_csv(o, t.run); });
  }
  return kOk;
}

int cmd_ablate(const ConfigArgs& args, const std::string& run_dir_opt) {
  const std::string started = utc_now();
  const auto cfg = args.resolve();
  const auto data = gga::pipeline::prepare(cfg);
  const fs::path dir = make_run_dir(run_dir_opt, cfg, "ablate");
  const auto rows = gga::trainer::run_ablation_suite(gga::pipeline::task_factory(data, cfg), cfg.train,
                                                     cfg.ablation_seeds);
  write_text(dir / "config.toml", gga::config::echo(cfg));
  write_stream(dir / "ablation.csv", [&](std::ostream& o) { gga::trainer::write_ablation_csv(o, rows); });
  write_text(dir / "manifest.json",
             manifest("ablate", args, cfg, started, {"config.toml", "ablation.csv"}).dump(2) + "\n");
  gga::trainer::write_ablation_csv(std::cout, rows);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometric graph alignment for semi-supervised heterogeneous domain adaptation"};
  app.require_subcommand(1);

  ConfigArgs train_args, grad_args, ple_args, ablate_args;
  std::string train_dir, ablate_dir;
  auto* train = app.add_subcommand("train", "train a model and write a run directory");
  train_args.attach(train, true);
  train->add_option("--run-dir", train_dir, "output directory (default: $GGA_RUN_DIR or output.dir)");

  std::string ckpt, data_path, domain = "target", eval_out = "evaluation.csv";
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a labelled CSV");
  evaluate->add_option("--checkpoint", ckpt)->required();
  evaluate->add_option("--data", data_path)->required();
  evaluate->add_option("--domain", domain, "which projector to use: target or source");
  evaluate->add_option("--out", eval_out, "CSV to append the metrics row to");

  gga::data::SyntheticSpec synth;
  std::uint64_t synth_seed = 0;
  std::string synth_dir = ".";
  auto* gen = app.add_subcommand("gen-synth", "write a synthetic heterogeneous source/target pair");
  gen->add_option("--out-dir", synth_dir);
  gen->add_option("--seed", synth_seed);
  gen->add_option("--classes", synth.num_classes);
  gen->add_option("--latent-dim", synth.latent_dim);
  gen->add_option("--source-dim", synth.source_dim);
  gen->add_option("--target-dim", synth.target_dim);
  gen->add_option("--source-per-class", synth.source_per_class);
  gen->add_option("--target-per-class", synth.target_per_class);
  gen->add_option("--separation", synth.separation);
  gen->add_option("--noise", synth.noise);

  bool corrupt = false;
  auto* grad = app.add_subcommand("gradcheck", "compare every loss gradient with finite differences");
  grad_args.attach(grad, false);
  grad->add_flag("--corrupt-gradient", corrupt, "negative control: perturb one analytic gradient");

  std::string ple_out;
  auto* ple = app.add_subcommand("ple-report", "train and print the per-epoch pseudo-label report");
  ple_args.attach(ple, true);
  ple->add_option("--out", ple_out, "write the CSV here instead of stdout");

  auto* ablate = app.add_subcommand("ablate", "run the ablation suite over ablation.seeds");
  ablate_args.attach(ablate, true);
  ablate->add_option("--run-dir", ablate_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return fail(kUserError, "usage", e.what());
  }

  try {
    if (*train) return cmd_train(train_args, train_dir);
    if (*evaluate) return cmd_evaluate(ckpt, data_path, domain, eval_out);
    if (*gen) return cmd_gen_synth(synth, synth_seed, synth_dir);
    if (*grad) return cmd_gradcheck(grad_args, corrupt);
    if (*ple) return cmd_ple_report(ple_args, ple_out);
    if (*ablate) return cmd_ablate(ablate_args, ablate_dir);
  } catch (const gga::ConfigError& e) {
    return fail(kUserError, "config", e.what(), e.key());
  } catch (const gga::NumericError& e) {
    return fail(kDiverged, "divergence", e.what());
  } catch (const gga::ShapeError& e) {
    return fail(kUserError, "shape", e.what());
  } catch (const gga::Error& e) {
    return fail(kUserError, "data", e.what());
  } catch (const std::exception& e) {
    return fail(kUserError, "io", e.what());
  }
  return kUserError;
}
