#pragma once

// Domain graphs in the common subspace: class centroids as vertices, the
// weighted adjacency matrix (WAM) of centroid distances, and the domain centre.
// Every builder has a plain-tensor form and a differentiable tape form.

#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gga/autodiff.hpp"
#include "gga/error.hpp"
#include "gga/tensor.hpp"

namespace gga::graph {

using ad::Tape;
using ad::Var;

struct Centroids {
  Tensor centroids;           // K x d; rows of absent classes are zero
  std::vector<bool> present;  // class has >= 1 contributing row
};

struct CentroidVars {
  Var centroids;
  std::vector<bool> present;
};

namespace detail {

inline void check_labels(std::span<const int> labels, std::size_t rows, std::size_t k) {
  if (labels.size() != rows) {
    throw ShapeError("class_centroids: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ShapeError("class_centroids: label " + std::to_string(y) + " outside [0," +
                       std::to_string(k) + ")");
    }
  }
}

// K x n matrix whose row k averages the rows labelled k.
inline Tensor averaging_matrix(std::span<const int> labels, std::size_t k,
                               std::vector<bool>& present) {
  std::vector<std::size_t> counts(k, 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  Tensor a(k, labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    a(y, i) = 1.0 / static_cast<double>(counts[y]);
  }
  present.assign(k, false);
  for (std::size_t c = 0; c < k; ++c) present[c] = counts[c] > 0;
  return a;
}

inline std::size_t count_present(const std::vector<bool>& present) {
  std::size_t n = 0;
  for (bool p : present) n += p ? 1 : 0;
  return n;
}

}  // namespace detail

inline Centroids class_centroids(const Tensor& embeddings, std::span<const int> labels,
                                 std::size_t num_classes) {
  detail::check_labels(labels, embeddings.rows(), num_classes);
  Centroids out{Tensor(num_classes, embeddings.cols()), {}};
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    ++counts[y];
    for (std::size_t j = 0; j < embeddings.cols(); ++j) out.centroids(y, j) += embeddings(i, j);
  }
  out.present.assign(num_classes, false);
  for (std::size_t k = 0; k < num_classes; ++k) {
    out.present[k] = counts[k] > 0;
    if (counts[k] == 0) continue;
    for (std::size_t j = 0; j < embeddings.cols(); ++j)
      out.centroids(k, j) /= static_cast<double>(counts[k]);
  }
  return out;
}

// Differentiable: gradients reach the embeddings through the class means.
inline CentroidVars class_centroids(Tape& tape, Var embeddings, std::span<const int> labels,
                                    std::size_t num_classes) {
  detail::check_labels(labels, embeddings.rows(), num_classes);
  CentroidVars out;
  Tensor avg = detail::averaging_matrix(labels, num_classes, out.present);
  out.centroids = ad::matmul(tape.constant(std::move(avg)), embeddings);
  return out;
}

// Entry (i, j) is the Euclidean distance between centroids i and j when both
// classes are present; rows and columns of absent classes are zero.
inline Tensor build_wam(const Tensor& centroids, const std::vector<bool>& present) {
  const std::size_t k = centroids.rows();
  if (present.size() != k) throw ShapeError("build_wam: mask size != number of centroids");
  if (detail::count_present(present) < 2) {
    throw ShapeError("build_wam: need at least 2 present classes to form an edge");
  }
  Tensor wam(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    if (!present[i]) continue;
    for (std::size_t j = i + 1; j < k; ++j) {
      if (!present[j]) continue;
      const double d = std::sqrt(squared_distance(centroids.row_span(i), centroids.row_span(j)));
      wam(i, j) = d;
      wam(j, i) = d;
    }
  }
  return wam;
}

// Differentiable WAM. The distance gradient at coincident centroids is 0.
inline Var build_wam(Tape& tape, Var centroids, const std::vector<bool>& present) {
  const std::size_t k = centroids.rows();
  if (present.size() != k) throw ShapeError("build_wam: mask size != number of centroids");
  if (detail::count_present(present) < 2) {
    throw ShapeError("build_wam: need at least 2 present classes to form an edge");
  }
  std::vector<Var> rows(k);
  for (std::size_t i = 0; i < k; ++i)
    if (present[i]) rows[i] = ad::gather_rows(centroids, {i});
  std::vector<ad::ScalarSlot> slots;
  for (std::size_t i = 0; i < k; ++i) {
    if (!present[i]) continue;
    for (std::size_t j = i + 1; j < k; ++j) {
      if (!present[j]) continue;
      Var d = ad::euclidean(rows[i], rows[j]);
      slots.push_back({i, j, d});
      slots.push_back({j, i, d});
    }
  }
  return ad::stack_scalars(tape, k, k, slots);
}

inline Tensor domain_centre(const Tensor& embeddings) {
  if (embeddings.rows() == 0) throw ShapeError("domain_centre: empty input");
  Tensor c(1, embeddings.cols());
  for (std::size_t i = 0; i < embeddings.rows(); ++i)
    for (std::size_t j = 0; j < embeddings.cols(); ++j) c(0, j) += embeddings(i, j);
  for (double& v : c.values()) v /= static_cast<double>(embeddings.rows());
  return c;
}

inline Var domain_centre(Var embeddings) {
  if (embeddings.rows() == 0) throw ShapeError("domain_centre: empty input");
  return ad::mean_rows(embeddings);
}

struct DomainGraph {
  Tensor centroids;
  Tensor wam;
  std::vector<bool> present;
  Tensor centre;
};

inline DomainGraph build_graph(const Tensor& embeddings, std::span<const int> labels,
                               std::size_t num_classes) {
  Centroids c = class_centroids(embeddings, labels, num_classes);
  DomainGraph g;
  g.wam = build_wam(c.centroids, c.present);
  g.centroids = std::move(c.centroids);
  g.present = std::move(c.present);
  g.centre = domain_centre(embeddings);
  return g;
}

// Long-format dump for offline plotting; header: epoch,graph,kind,i,j,value
// kind is "centroid" (j = coordinate), "wam" (j = column) or "centre" (i = 0).
inline void write_graph_rows(std::ostream& out, std::size_t epoch, const std::string& name,
                             const DomainGraph& g) {
  for (std::size_t i = 0; i < g.centroids.rows(); ++i) {
    if (!g.present[i]) continue;
    for (std::size_t j = 0; j < g.centroids.cols(); ++j)
      out << epoch << ',' << name << ",centroid," << i << ',' << j << ',' << g.centroids(i, j) << '\n';
  }
  for (std::size_t i = 0; i < g.wam.rows(); ++i)
    for (std::size_t j = 0; j < g.wam.cols(); ++j)
      out << epoch << ',' << name << ",wam," << i << ',' << j << ',' << g.wam(i, j) << '\n';
  for (std::size_t j = 0; j < g.centre.cols(); ++j)
    out << epoch << ',' << name << ",centre,0," << j << ',' << g.centre(0, j) << '\n';
}

}  // namespace gga::graph
