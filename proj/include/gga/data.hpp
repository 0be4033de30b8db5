#pragma once

// Domain datasets: CSV ingestion, per-domain standardisation, semi-supervised
// target splits and synthetic heterogeneous domain pairs.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gga/error.hpp"
#include "gga/rng.hpp"
#include "gga/tensor.hpp"

namespace gga::data {

inline constexpr int kUnlabelled = -1;

namespace detail {
inline thread_local int training_depth = 0;
}

// While alive on a thread, hidden ground truth refuses to reveal itself.
// The trainer holds one around every optimisation step.
class TrainingScope {
 public:
  TrainingScope() { ++detail::training_depth; }
  ~TrainingScope() { --detail::training_depth; }
  TrainingScope(const TrainingScope&) = delete;
  TrainingScope& operator=(const TrainingScope&) = delete;
};

inline bool in_training_scope() noexcept { return detail::training_depth > 0; }

// Labels of the unlabelled target pool, kept only for evaluation.
class HiddenTruth {
 public:
  HiddenTruth() = default;
  explicit HiddenTruth(std::vector<int> labels) : labels_(std::move(labels)) {}

  const std::vector<int>& reveal() const {
    if (in_training_scope()) {
      throw ContractViolation("hidden ground truth accessed from a training context");
    }
    return labels_;
  }
  std::size_t size() const noexcept { return labels_.size(); }

 private:
  std::vector<int> labels_;
};

struct DomainDataset {
  std::string name;
  Tensor features;          // n x d
  std::vector<int> labels;  // class id in [0, num_classes) or kUnlabelled
  std::size_t num_classes = 0;
  std::optional<HiddenTruth> hidden;

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }

  bool fully_labelled() const {
    return std::none_of(labels.begin(), labels.end(), [](int y) { return y == kUnlabelled; });
  }

  // Visible labels if every row has one, otherwise the hidden truth.
  const std::vector<int>& truth() const {
    if (fully_labelled()) return labels;
    if (!hidden) throw DataError(name + ": no ground truth available");
    return hidden->reveal();
  }

  void validate() const {
    if (features.rows() == 0) throw DataError(name + ": empty dataset");
    if (labels.size() != features.rows()) throw DataError(name + ": label count != row count");
    for (int y : labels) {
      if (y != kUnlabelled && (y < 0 || static_cast<std::size_t>(y) >= num_classes)) {
        throw DataError(name + ": label " + std::to_string(y) + " outside [0," +
                        std::to_string(num_classes) + ")");
      }
    }
  }
};

// Shared-category table: id -> label name.
class LabelMapping {
 public:
  LabelMapping() = default;
  explicit LabelMapping(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
        throw DataError("label mapping: duplicate name '" + names_[i] + "'");
      }
    }
  }

  // Sorted unique names get ids 0..K-1.
  static LabelMapping from_names(const std::set<std::string>& names) {
    return LabelMapping(std::vector<std::string>(names.begin(), names.end()));
  }

  std::optional<int> id_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& name_of(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  // Two-column sidecar: name,id
  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "name,id\n";
    for (std::size_t i = 0; i < names_.size(); ++i) out << names_[i] << ',' << i << '\n';
  }

  static LabelMapping read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open label mapping " + path);
    std::string line;
    std::getline(in, line);
    std::map<int, std::string> by_id;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto comma = line.rfind(',');
      if (comma == std::string::npos) {
        throw DataError(path + ":" + std::to_string(lineno) + ": expected name,id");
      }
      int id = 0;
      const std::string idtext = line.substr(comma + 1);
      auto [ptr, ec] = std::from_chars(idtext.data(), idtext.data() + idtext.size(), id);
      if (ec != std::errc() || ptr != idtext.data() + idtext.size() || id < 0) {
        throw DataError(path + ":" + std::to_string(lineno) + ": bad id '" + idtext + "'");
      }
      if (!by_id.emplace(id, line.substr(0, comma)).second) {
        throw DataError(path + ": duplicate id " + idtext);
      }
    }
    std::vector<std::string> names;
    for (const auto& [id, name] : by_id) {
      if (static_cast<std::size_t>(id) != names.size()) {
        throw DataError(path + ": ids must be contiguous from 0");
      }
      names.push_back(name);
    }
    return LabelMapping(std::move(names));
  }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> index_;
};

// ---- CSV -------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) {
      cells.push_back(trim(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(trim(cell));
  return cells;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

// Shortest representation that round-trips.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// Parsed CSV before labels are mapped to ids. Duplicate full records are dropped.
struct CsvTable {
  std::vector<std::string> feature_names;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
  std::size_t duplicates_removed = 0;
};

inline CsvTable read_csv_table(const std::string& path, const std::string& label_column = "label") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_line(line);
  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end()) {
    throw DataError(path + ": label column '" + label_column + "' not found");
  }
  const auto label_idx = static_cast<std::size_t>(label_it - header.begin());

  CsvTable table;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != label_idx) table.feature_names.push_back(header[c]);

  std::set<std::pair<std::vector<double>, std::string>> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_line(line);
    if (cells.size() != header.size()) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(header.size() - 1);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_idx) continue;
      auto v = detail::parse_double(cells[c]);
      if (!v) {
        throw DataError(path + ":" + std::to_string(lineno) + ": column '" + header[c] +
                        "' is not numeric: '" + cells[c] + "'");
      }
      row.push_back(*v);
    }
    if (!seen.emplace(row, cells[label_idx]).second) {
      ++table.duplicates_removed;
      continue;
    }
    table.rows.push_back(std::move(row));
    table.labels.push_back(cells[label_idx]);
  }
  if (table.rows.empty()) throw DataError(path + ": no data rows");
  return table;
}

inline DomainDataset to_dataset(const CsvTable& table, const LabelMapping& mapping,
                                std::string name) {
  DomainDataset ds;
  ds.name = std::move(name);
  ds.num_classes = mapping.size();
  const std::size_t d = table.feature_names.size();
  ds.features = Tensor(table.rows.size(), d);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    std::copy(table.rows[i].begin(), table.rows[i].end(), ds.features.row_span(i).begin());
    auto id = mapping.id_of(table.labels[i]);
    if (!id) {
      throw DataError(ds.name + ": category '" + table.labels[i] +
                      "' is not in the shared label mapping");
    }
    ds.labels.push_back(*id);
  }
  ds.validate();
  return ds;
}

struct LoadedCsv {
  DomainDataset dataset;
  LabelMapping mapping;
};

// Loads a labelled CSV. Without a shared mapping, the file's own sorted label
// names become ids 0..K-1.
inline LoadedCsv load_csv(const std::string& path, const std::string& label_column = "label",
                          const LabelMapping* shared = nullptr) {
  const CsvTable table = read_csv_table(path, label_column);
  LabelMapping mapping =
      shared ? *shared
             : LabelMapping::from_names(std::set<std::string>(table.labels.begin(), table.labels.end()));
  return {to_dataset(table, mapping, path), mapping};
}

inline void write_csv(const std::string& path, const DomainDataset& ds, const LabelMapping& mapping,
                      const std::string& label_column = "label") {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (std::size_t j = 0; j < ds.dim(); ++j) out << 'f' << j << ',';
  out << label_column << '\n';
  const auto& truth = ds.truth();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j) out << format_double(ds.features(i, j)) << ',';
    out << mapping.name_of(truth[i]) << '\n';
  }
}

// ---- standardisation -------------------------------------------------------

inline constexpr double kConstantFeatureStd = 1e-12;

// Per-feature mean and population standard deviation (divide by n).
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<bool> constant;

  Tensor apply(const Tensor& x) const {
    if (x.cols() != mean.size()) {
      throw ShapeError("standardise: " + std::to_string(x.cols()) + " features, stats for " +
                       std::to_string(mean.size()));
    }
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j)
        out(i, j) = constant[j] ? 0.0 : (x(i, j) - mean[j]) / stddev[j];
    return out;
  }

  // Exact inverse on non-constant features; constant features come back as their mean.
  Tensor invert(const Tensor& z) const {
    Tensor out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t j = 0; j < z.cols(); ++j)
        out(i, j) = constant[j] ? mean[j] : z(i, j) * stddev[j] + mean[j];
    return out;
  }
};

inline FeatureStats feature_stats(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  FeatureStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0),
                 std::vector<bool>(d, false)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += x(i, j);
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x(i, j) - s.mean[j];
      s.stddev[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    s.stddev[j] = std::sqrt(s.stddev[j] / static_cast<double>(n));
    s.constant[j] = s.stddev[j] < kConstantFeatureStd;
  }
  return s;
}

struct Standardised {
  DomainDataset dataset;
  FeatureStats stats;
};

inline Standardised standardise(const DomainDataset& ds) {
  if (ds.size() < 2) throw DataError(ds.name + ": standardisation needs at least 2 rows");
  Standardised out{ds, feature_stats(ds.features)};
  out.dataset.features = out.stats.apply(ds.features);
  return out;
}

// ---- semi-supervised split -------------------------------------------------

struct SplitSpec {
  std::size_t labelled_parts = 1;
  std::size_t unlabelled_parts = 50;
  std::uint64_t seed = 0;
  bool stratified = true;
};

struct SemiSupervisedSplit {
  DomainDataset labelled;    // D_TL
  DomainDataset unlabelled;  // D_TU, truth hidden
  std::vector<std::size_t> labelled_rows;
  std::vector<std::size_t> unlabelled_rows;
};

namespace detail {

inline DomainDataset subset(const DomainDataset& ds, const std::vector<std::size_t>& rows,
                            std::string name) {
  DomainDataset out;
  out.name = std::move(name);
  out.num_classes = ds.num_classes;
  out.features = take_rows(ds.features, rows);
  for (std::size_t r : rows) out.labels.push_back(ds.labels[r]);
  return out;
}

}  // namespace detail

// Splits a fully labelled target into a small labelled pool and a large pool
// whose labels are moved behind HiddenTruth. Stratified splits apportion the
// labelled budget round(n * a / (a + b)) across classes by largest remainder.
inline SemiSupervisedSplit split_semi_supervised(const DomainDataset& ds, const SplitSpec& spec) {
  if (spec.labelled_parts == 0 || spec.unlabelled_parts == 0) {
    throw DataError("split: both ratio parts must be positive");
  }
  if (!ds.fully_labelled()) throw DataError(ds.name + ": split needs a fully labelled dataset");
  const std::size_t n = ds.size();
  const double frac = static_cast<double>(spec.labelled_parts) /
                      static_cast<double>(spec.labelled_parts + spec.unlabelled_parts);
  const auto budget = static_cast<std::size_t>(std::llround(static_cast<double>(n) * frac));

  Rng rng(spec.seed);
  std::vector<std::size_t> labelled;

  if (spec.stratified) {
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    std::vector<std::size_t> quota(ds.num_classes, 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < ds.num_classes; ++k) {
      if (by_class[k].empty()) continue;
      const double exact = static_cast<double>(budget) * static_cast<double>(by_class[k].size()) /
                           static_cast<double>(n);
      quota[k] = static_cast<std::size_t>(std::floor(exact));
      assigned += quota[k];
      remainders.emplace_back(exact - std::floor(exact), k);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < budget && r < remainders.size(); ++r, ++assigned) {
      ++quota[remainders[r].second];
    }
    for (std::size_t k = 0; k < ds.num_classes; ++k) {
      if (by_class[k].empty()) continue;
      if (quota[k] == 0) {
        throw DataError("split: class " + std::to_string(k) + " (" +
                        std::to_string(by_class[k].size()) +
                        " rows) would receive no labelled instance at ratio " +
                        std::to_string(spec.labelled_parts) + ":" +
                        std::to_string(spec.unlabelled_parts) +
                        "; increase the labelled share");
      }
      if (quota[k] >= by_class[k].size()) {
        throw DataError("split: class " + std::to_string(k) +
                        " would have no unlabelled instance; decrease the labelled share");
      }
      auto rows = by_class[k];
      std::shuffle(rows.begin(), rows.end(), rng);
      labelled.insert(labelled.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(quota[k]));
    }
  } else {
    if (budget == 0 || budget >= n) {
      throw DataError("split: ratio " + std::to_string(spec.labelled_parts) + ":" +
                      std::to_string(spec.unlabelled_parts) + " is infeasible for n=" +
                      std::to_string(n));
    }
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    labelled.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(budget));
  }

  std::sort(labelled.begin(), labelled.end());
  std::vector<std::size_t> unlabelled;
  {
    std::vector<bool> is_labelled(n, false);
    for (std::size_t r : labelled) is_labelled[r] = true;
    for (std::size_t i = 0; i < n; ++i)
      if (!is_labelled[i]) unlabelled.push_back(i);
  }

  SemiSupervisedSplit out;
  out.labelled = detail::subset(ds, labelled, ds.name + ":labelled");
  out.unlabelled = detail::subset(ds, unlabelled, ds.name + ":unlabelled");
  out.unlabelled.hidden = HiddenTruth(out.unlabelled.labels);
  std::fill(out.unlabelled.labels.begin(), out.unlabelled.labels.end(), kUnlabelled);
  out.labelled_rows = std::move(labelled);
  out.unlabelled_rows = std::move(unlabelled);
  return out;
}

// ---- synthetic heterogeneous pairs ------------------------------------------

struct SyntheticSpec {
  std::size_t num_classes = 3;
  std::size_t latent_dim = 3;
  std::size_t source_dim = 6;
  std::size_t target_dim = 4;
  std::size_t source_per_class = 200;
  std::size_t target_per_class = 170;
  double separation = 6.0;  // std of the latent class centres and their minimum pairwise gap
  double noise = 1.0;       // within-class latent spread and observation noise
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw DataError("synthetic: need at least 2 classes");
    if (latent_dim == 0 || source_dim == 0 || target_dim == 0) {
      throw DataError("synthetic: dimensions must be positive");
    }
    if (source_per_class == 0 || target_per_class == 0) {
      throw DataError("synthetic: per-class counts must be positive");
    }
    if (!(separation >= 0.0) || !(noise >= 0.0)) {
      throw DataError("synthetic: separation and noise must be non-negative");
    }
  }
};

struct SyntheticPair {
  DomainDataset source;
  DomainDataset target;
  Tensor latent_centres;   // K x latent_dim
  Tensor source_mixing;    // latent_dim x d_S
  Tensor target_mixing;    // latent_dim x d_T
};

inline constexpr int kCentreAttempts = 1000;

// Shared latent class structure seen through two independent random linear
// mixings of different output dimension:
//   z = c_k + noise * e,   x = z A + noise * e'
inline SyntheticPair gen_synthetic_pair(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SyntheticPair out;
  // Centres ~ N(0, separation^2), redrawn until every pair is at least
  // `separation` apart; the widest-spread draw wins if none qualifies.
  auto min_gap = [&](const Tensor& c) {
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < c.rows(); ++a)
      for (std::size_t b = a + 1; b < c.rows(); ++b)
        gap = std::min(gap, std::sqrt(squared_distance(c.row_span(a), c.row_span(b))));
    return gap;
  };
  double best_gap = -1.0;
  for (int attempt = 0; attempt < kCentreAttempts && best_gap < spec.separation; ++attempt) {
    Tensor c(spec.num_classes, spec.latent_dim);
    for (double& v : c.values()) v = spec.separation * gauss(rng);
    const double gap = min_gap(c);
    if (gap > best_gap) {
      best_gap = gap;
      out.latent_centres = std::move(c);
    }
  }

  // Gaussian mixing; when d >= latent_dim its rows are orthonormalised
  // (Gram-Schmidt) so the map is an isometric embedding and no latent
  // direction is squashed by an unlucky draw.
  auto mixing = [&](std::size_t d) {
    Tensor a(spec.latent_dim, d);
    for (double& v : a.values()) v = gauss(rng);
    if (d < spec.latent_dim) return a;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      for (std::size_t q = 0; q < r; ++q) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += a(r, j) * a(q, j);
        for (std::size_t j = 0; j < d; ++j) a(r, j) -= dot * a(q, j);
      }
      const double len = norm(a.row_span(r));
      for (std::size_t j = 0; j < d; ++j) a(r, j) /= len;
    }
    return a;
  };
  out.source_mixing = mixing(spec.source_dim);
  out.target_mixing = mixing(spec.target_dim);

  auto sample = [&](const Tensor& mix, std::size_t per_class, const std::string& name) {
    const std::size_t n = per_class * spec.num_classes;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    DomainDataset ds;
    ds.name = name;
    ds.num_classes = spec.num_classes;
    ds.features = Tensor(n, mix.cols());
    ds.labels.assign(n, 0);
    std::vector<double> z(spec.latent_dim);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = i / per_class;
      const std::size_t row = order[i];
      for (std::size_t l = 0; l < spec.latent_dim; ++l)
        z[l] = out.latent_centres(k, l) + spec.noise * gauss(rng);
      for (std::size_t j = 0; j < mix.cols(); ++j) {
        double x = 0.0;
        for (std::size_t l = 0; l < spec.latent_dim; ++l) x += z[l] * mix(l, j);
        ds.features(row, j) = x + spec.noise * gauss(rng);
      }
      ds.labels[row] = static_cast<int>(k);
    }
    return ds;
  };
  out.source = sample(out.source_mixing, spec.source_per_class, "synthetic:source");
  out.target = sample(out.target_mixing, spec.target_per_class, "synthetic:target");
  return out;
}

inline LabelMapping synthetic_mapping(std::size_t num_classes) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < num_classes; ++k) names.push_back("class_" + std::to_string(k));
  return LabelMapping(std::move(names));
}

}  // namespace gga::data
