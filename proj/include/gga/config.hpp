#pragma once

// Run configuration: a flat TOML subset.
//
//   seed = 7
//   [loss]
//   alpha = 0.1          # comment
//   [data]
//   source = "src.csv"
//
// Every key is `section.key` (or a bare top-level key such as `seed`) and can
// be overridden with `section.key=value`. Unknown keys are rejected by name.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gga/data.hpp"
#include "gga/error.hpp"
#include "gga/trainer.hpp"

namespace gga::config {

struct DataSection {
  std::string source;  // empty -> synthetic pair from [synth]
  std::string target;
  std::string label_column = "label";
  std::string label_mapping;  // optional name,id sidecar shared by both domains
  bool standardise = true;
  std::size_t labelled_parts = 1;
  std::size_t unlabelled_parts = 50;
  bool stratified = true;

  bool synthetic() const { return source.empty() && target.empty(); }
};

struct GradcheckSection {
  std::size_t seeds = 10;
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct OutputSection {
  std::string dir = "runs";
  bool graphs = false;  // long-format centroid/WAM dump per epoch
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataSection data;
  data::SyntheticSpec synth;
  trainer::TrainConfig train;
  std::vector<std::uint64_t> ablation_seeds{1, 2, 3, 4, 5};
  GradcheckSection gradcheck;
  OutputSection output;
};

namespace detail {

inline std::string unquote(const std::string& key, std::string v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  if (!v.empty() && v.front() == '"') throw ConfigError(key, key + ": unterminated string");
  return v;
}

template <class T>
T parse_integer(const std::string& key, const std::string& raw) {
  const std::string v = unquote(key, raw);
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key, key + ": expected a non-negative integer, got '" + raw + "'");
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& raw) {
  auto v = data::detail::parse_double(unquote(key, raw));
  if (!v) throw ConfigError(key, key + ": expected a finite number, got '" + raw + "'");
  return *v;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string v = unquote(key, raw);
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key, key + ": expected true or false, got '" + raw + "'");
}

inline std::string quote(const std::string& s) { return "\"" + s + "\""; }

// Strips a trailing comment that is not inside a quoted string.
inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

}  // namespace detail

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// The complete key table, in echo order.
inline const std::vector<Field>& fields() {
  using namespace detail;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto uint = [&](std::string key, auto access) {
      f.push_back({key,
                   [key, access](RunConfig& c, const std::string& v) {
                     auto& slot = access(c);
                     slot = parse_integer<std::remove_reference_t<decltype(slot)>>(key, v);
                   },
                   [access](const RunConfig& c) {
                     return std::to_string(access(const_cast<RunConfig&>(c)));
                   }});
    };
    auto real = [&](std::string key, auto access) {
      f.push_back({key, [key, access](RunConfig& c, const std::string& v) { access(c) = parse_real(key, v); },
                   [access](const RunConfig& c) {
                     return data::format_double(access(const_cast<RunConfig&>(c)));
                   }});
    };
    auto flag = [&](std::string key, auto access) {
      f.push_back({key, [key, access](RunConfig& c, const std::string& v) { access(c) = parse_bool(key, v); },
                   [access](const RunConfig& c) {
                     return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false");
                   }});
    };
    auto text = [&](std::string key, auto access) {
      f.push_back({key, [key, access](RunConfig& c, const std::string& v) { access(c) = unquote(key, v); },
                   [access](const RunConfig& c) { return quote(access(const_cast<RunConfig&>(c))); }});
    };

    uint("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });

    text("data.source", [](RunConfig& c) -> std::string& { return c.data.source; });
    text("data.target", [](RunConfig& c) -> std::string& { return c.data.target; });
    text("data.label_column", [](RunConfig& c) -> std::string& { return c.data.label_column; });
    text("data.label_mapping", [](RunConfig& c) -> std::string& { return c.data.label_mapping; });
    flag("data.standardise", [](RunConfig& c) -> bool& { return c.data.standardise; });
    uint("data.labelled_parts", [](RunConfig& c) -> std::size_t& { return c.data.labelled_parts; });
    uint("data.unlabelled_parts", [](RunConfig& c) -> std::size_t& { return c.data.unlabelled_parts; });
    flag("data.stratified", [](RunConfig& c) -> bool& { return c.data.stratified; });

    uint("synth.num_classes", [](RunConfig& c) -> std::size_t& { return c.synth.num_classes; });
    uint("synth.latent_dim", [](RunConfig& c) -> std::size_t& { return c.synth.latent_dim; });
    uint("synth.source_dim", [](RunConfig& c) -> std::size_t& { return c.synth.source_dim; });
    uint("synth.target_dim", [](RunConfig& c) -> std::size_t& { return c.synth.target_dim; });
    uint("synth.source_per_class", [](RunConfig& c) -> std::size_t& { return c.synth.source_per_class; });
    uint("synth.target_per_class", [](RunConfig& c) -> std::size_t& { return c.synth.target_per_class; });
    real("synth.separation", [](RunConfig& c) -> double& { return c.synth.separation; });
    real("synth.noise", [](RunConfig& c) -> double& { return c.synth.noise; });

    uint("model.hidden", [](RunConfig& c) -> std::size_t& { return c.train.hidden; });
    uint("model.common_dim", [](RunConfig& c) -> std::size_t& { return c.train.common_dim; });

    real("loss.alpha", [](RunConfig& c) -> double& { return c.train.weights.alpha; });
    real("loss.gamma_min", [](RunConfig& c) -> double& { return c.train.weights.gamma_min; });
    real("loss.gamma_max", [](RunConfig& c) -> double& { return c.train.weights.gamma_max; });
    real("loss.eta", [](RunConfig& c) -> double& { return c.train.weights.eta; });
    real("loss.lambda", [](RunConfig& c) -> double& { return c.train.weights.lambda; });
    real("loss.temperature", [](RunConfig& c) -> double& { return c.train.weights.temperature; });
    real("loss.edist_weight", [](RunConfig& c) -> double& { return c.train.weights.edist_weight; });
    f.push_back({"loss.literal_sk",
                 [](RunConfig& c, const std::string& v) {
                   c.train.shape_keeping = parse_bool("loss.literal_sk", v)
                                               ? losses::ShapeKeepingForm::kLiteral
                                               : losses::ShapeKeepingForm::kBinaryCrossEntropy;
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.shape_keeping == losses::ShapeKeepingForm::kLiteral ? "true" : "false");
                 }});

    uint("ple.k_neighbours", [](RunConfig& c) -> std::size_t& { return c.train.ple.k_neighbours; });
    f.push_back({"ple.voters",
                 [](RunConfig& c, const std::string& v) {
                   c.train.ple.voters = ple::Voters::parse(unquote("ple.voters", v));
                 },
                 [](const RunConfig& c) { return quote(c.train.ple.voters.code()); }});

    real("adam.lr", [](RunConfig& c) -> double& { return c.train.adam.lr; });
    real("adam.beta1", [](RunConfig& c) -> double& { return c.train.adam.beta1; });
    real("adam.beta2", [](RunConfig& c) -> double& { return c.train.adam.beta2; });
    real("adam.eps", [](RunConfig& c) -> double& { return c.train.adam.eps; });

    uint("train.epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
    uint("train.batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    real("train.grl_coeff", [](RunConfig& c) -> double& { return c.train.grl_coeff; });

    flag("ablation.disable_sk", [](RunConfig& c) -> bool& { return c.train.ablation.disable_sk; });
    flag("ablation.disable_r", [](RunConfig& c) -> bool& { return c.train.ablation.disable_r; });
    flag("ablation.disable_cp", [](RunConfig& c) -> bool& { return c.train.ablation.disable_cp; });
    flag("ablation.disable_vs", [](RunConfig& c) -> bool& { return c.train.ablation.disable_vs; });
    flag("ablation.use_vertex_edist", [](RunConfig& c) -> bool& { return c.train.ablation.use_vertex_edist; });
    f.push_back({"ablation.seeds",
                 [](RunConfig& c, const std::string& raw) {
                   std::vector<std::uint64_t> seeds;
                   std::stringstream ss(unquote("ablation.seeds", raw));
                   for (std::string part; std::getline(ss, part, ',');) {
                     seeds.push_back(parse_integer<std::uint64_t>("ablation.seeds", data::detail::trim(part)));
                   }
                   c.ablation_seeds = std::move(seeds);
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.ablation_seeds.size(); ++i)
                     s += (i ? "," : "") + std::to_string(c.ablation_seeds[i]);
                   return quote(s);
                 }});

    uint("gradcheck.seeds", [](RunConfig& c) -> std::size_t& { return c.gradcheck.seeds; });
    real("gradcheck.step", [](RunConfig& c) -> double& { return c.gradcheck.step; });
    real("gradcheck.tolerance", [](RunConfig& c) -> double& { return c.gradcheck.tolerance; });

    text("output.dir", [](RunConfig& c) -> std::string& { return c.output.dir; });
    flag("output.graphs", [](RunConfig& c) -> bool& { return c.output.graphs; });
    return f;
  }();
  return table;
}

inline const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError(key, "unknown config key '" + key + "'");
}

inline void set(RunConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, data::detail::trim(value));
}

// `section.key=value`
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError(assignment, "override '" + assignment + "' is not of the form section.key=value");
  }
  set(cfg, data::detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

inline void validate(const RunConfig& cfg) {
  cfg.train.validate();
  if (cfg.data.labelled_parts == 0) throw ConfigError("data.labelled_parts", "must be >= 1");
  if (cfg.data.unlabelled_parts == 0) throw ConfigError("data.unlabelled_parts", "must be >= 1");
  if (cfg.data.source.empty() != cfg.data.target.empty()) {
    throw ConfigError(cfg.data.source.empty() ? "data.source" : "data.target",
                      "data.source and data.target must be given together");
  }
  if (cfg.synth.num_classes < 2) {
    throw ConfigError("synth.num_classes", "synth.num_classes must be >= 2 (a graph needs two vertices)");
  }
  if (cfg.gradcheck.seeds == 0) throw ConfigError("gradcheck.seeds", "must be >= 1");
  if (!(cfg.gradcheck.step > 0.0)) throw ConfigError("gradcheck.step", "must be > 0");
}

inline RunConfig parse(std::istream& in, const std::string& origin = "<config>") {
  RunConfig cfg;
  std::string section;
  std::map<std::string, std::size_t> seen;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string body = data::detail::trim(detail::strip_comment(line));
    if (body.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(body, where + ": malformed section header");
      section = data::detail::trim(body.substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(body, where + ": expected key = value");
    const std::string name = data::detail::trim(body.substr(0, eq));
    const std::string key = section.empty() ? name : section + "." + name;
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(key, where + ": '" + key + "' already set on line " + std::to_string(it->second));
    }
    seen[key] = lineno;
    try {
      set(cfg, key, body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(e.key(), where + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig parse_string(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

inline RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file '" + path + "'");
  return parse(in, path);
}

// Canonical TOML text of every key; parse(echo(c)) reproduces c.
inline std::string echo(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (sec != section) {
      out << "\n[" << sec << "]\n";
      section = sec;
    }
    out << name << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

// Key -> canonical value text, for manifests.
inline std::map<std::string, std::string> snapshot(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& f : fields()) out[f.key] = f.get(cfg);
  return out;
}

}  // namespace gga::config
