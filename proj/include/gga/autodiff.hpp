#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every primitive application in execution order. Each node
// keeps its forward value and a closure producing the local gradients of its
// inputs given the gradient of its output. backward() walks the tape once, in
// reverse insertion order, and accumulates into the Parameters that were
// registered on the tape.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gga/error.hpp"
#include "gga/tensor.hpp"

namespace gga::ad {

// Trainable tensor plus its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }

  std::string name;
  Tensor value;
  Tensor grad;
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Returns one gradient per input (an empty Tensor means "no contribution").
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& out_grad)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor v) { return push("constant", std::move(v), {}, nullptr, nullptr); }

  // Registers `p` as a leaf. Registering the same parameter twice yields the same node.
  Var param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Var v = push("param:" + p.name, p.value, {}, nullptr, &p);
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  // Read-only parameter: recorded as a constant, never receives gradient.
  Var param(const Parameter& p) { return push("frozen:" + p.name, p.value, {}, nullptr, nullptr); }

  Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn fn) {
    for (const Var& in : inputs) {
      if (in.tape() != this) throw Error(op + ": input belongs to another tape");
    }
    if (!value.all_finite()) {
      throw NumericError(op + ": non-finite forward value at node #" +
                         std::to_string(nodes_.size()));
    }
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& in : inputs) ids.push_back(in.id());
    return push(std::move(op), std::move(value), std::move(ids), std::move(fn), nullptr);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  const std::string& op(Var v) const { return nodes_.at(v.id()).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of the last backward() root with respect to node `v` (zeros if unreached).
  Tensor grad(Var v) const {
    const auto& g = grads_.at(v.id());
    if (!g.empty()) return g;
    const auto& val = nodes_.at(v.id()).value;
    return Tensor(val.rows(), val.cols());
  }

  // Accumulates d(root)/d(param) into every registered Parameter's grad.
  void backward(Var root) {
    const Tensor& rv = value(root);
    if (!rv.is_scalar()) throw ShapeError("backward: root must be scalar, got " + rv.shape());
    grads_.assign(nodes_.size(), Tensor{});
    grads_[root.id()] = Tensor::scalar(1.0);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      if (grads_[i].empty()) continue;
      Node& node = nodes_[i];
      if (node.param != nullptr) {
        auto& pg = node.param->grad.values();
        const auto& g = grads_[i].values();
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += g[k];
      }
      if (!node.backward) continue;
      std::vector<Tensor> local = node.backward(grads_[i]);
      for (std::size_t j = 0; j < node.inputs.size(); ++j) {
        if (j >= local.size() || local[j].empty()) continue;
        if (!local[j].all_finite()) {
          throw NumericError("backward: non-finite gradient at node #" + std::to_string(i) +
                             " (" + node.op + "), input " + std::to_string(j));
        }
        Tensor& dst = grads_[node.inputs[j]];
        if (dst.empty()) {
          dst = std::move(local[j]);
        } else {
          auto& d = dst.values();
          const auto& s = local[j].values();
          for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
        }
      }
    }
  }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn,
           Parameter* p) {
    nodes_.push_back(Node{std::move(op), std::move(value), std::move(inputs), std::move(fn), p});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const {
  if (tape_ == nullptr) throw Error("Var: detached handle");
  return tape_->value(*this);
}

namespace detail {

inline void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw ShapeError(op + ": " + what);
}

inline std::string shapes(const Tensor& a, const Tensor& b) {
  return a.shape() + " vs " + b.shape();
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

// a^T b
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  Tensor out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  }
  return out;
}

// a b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  }
  return out;
}

enum class Broadcast { kSame, kRow, kScalar };

inline Broadcast broadcast_kind(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) return Broadcast::kSame;
  if (b.is_scalar()) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  throw ShapeError(op + ": cannot broadcast " + shapes(a, b));
}

inline Tensor reduce_to(const Tensor& g, Broadcast kind, const Tensor& like) {
  switch (kind) {
    case Broadcast::kSame:
      return g;
    case Broadcast::kScalar: {
      double s = 0.0;
      for (double v : g.values()) s += v;
      return Tensor::scalar(s);
    }
    case Broadcast::kRow: {
      Tensor out(1, like.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) out(0, j) += g(i, j);
      return out;
    }
  }
  return g;
}

inline double bval(const Tensor& b, Broadcast kind, std::size_t i, std::size_t j) {
  switch (kind) {
    case Broadcast::kSame:
      return b(i, j);
    case Broadcast::kRow:
      return b(0, j);
    case Broadcast::kScalar:
      return b[0];
  }
  return 0.0;
}

inline void require_finite(const Tensor& t, const std::string& op) {
  if (!t.all_finite()) throw NumericError(op + ": non-finite input");
}

inline Tensor softmax_rows(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= z;
  }
  return out;
}

inline Tensor log_softmax_rows(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) z += std::exp(x(i, j) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - lse;
  }
  return out;
}

}  // namespace detail

// ---- primitives ------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.cols() == bv.rows(), "matmul", detail::shapes(av, bv));
  Tape* t = a.tape();
  return t->record("matmul", detail::matmul(av, bv), {a, b}, [t, a, b](const Tensor& g) {
    return std::vector<Tensor>{detail::matmul_nt(g, t->value(b)), detail::matmul_tn(t->value(a), g)};
  });
}

// Elementwise a + b; b may also be a 1 x cols row or a 1 x 1 scalar (broadcast).
inline Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto kind = detail::broadcast_kind("add", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += detail::bval(bv, kind, i, j);
  Tape* t = a.tape();
  return t->record("add", std::move(out), {a, b}, [t, b, kind](const Tensor& g) {
    return std::vector<Tensor>{g, detail::reduce_to(g, kind, t->value(b))};
  });
}

inline Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto kind = detail::broadcast_kind("sub", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) -= detail::bval(bv, kind, i, j);
  Tape* t = a.tape();
  return t->record("sub", std::move(out), {a, b}, [t, b, kind](const Tensor& g) {
    Tensor gb = detail::reduce_to(g, kind, t->value(b));
    for (double& v : gb.values()) v = -v;
    return std::vector<Tensor>{g, std::move(gb)};
  });
}

// Elementwise (Hadamard) product of equal shapes.
inline Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.same_shape(bv), "mul", detail::shapes(av, bv));
  Tensor out = av;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= bv[k];
  Tape* t = a.tape();
  return t->record("mul", std::move(out), {a, b}, [t, a, b](const Tensor& g) {
    Tensor ga = g, gb = g;
    const Tensor& av = t->value(a);
    const Tensor& bv = t->value(b);
    for (std::size_t k = 0; k < g.size(); ++k) {
      ga[k] *= bv[k];
      gb[k] *= av[k];
    }
    return std::vector<Tensor>{std::move(ga), std::move(gb)};
  });
}

inline Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= c;
  return a.tape()->record("scale", std::move(out), {a}, [c](const Tensor& g) {
    Tensor ga = g;
    for (double& v : ga.values()) v *= c;
    return std::vector<Tensor>{std::move(ga)};
  });
}

inline Var add_scalar(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.values()) v += c;
  return a.tape()->record("add_scalar", std::move(out), {a},
                          [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t r = a.rows(), c = a.cols();
  return a.tape()->record("sum", Tensor::scalar(s), {a}, [r, c](const Tensor& g) {
    return std::vector<Tensor>{Tensor(r, c, g[0])};
  });
}

inline Var mean(Var a) {
  const std::size_t n = a.value().size();
  detail::require(n > 0, "mean", "empty input");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

// Column-wise mean over rows: n x d -> 1 x d.
inline Var mean_rows(Var a) {
  const Tensor& av = a.value();
  detail::require(av.rows() > 0, "mean_rows", "empty input");
  const std::size_t n = av.rows(), d = av.cols();
  Tensor out(1, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out(0, j) += av(i, j);
  for (double& v : out.values()) v /= static_cast<double>(n);
  return a.tape()->record("mean_rows", std::move(out), {a}, [n, d](const Tensor& g) {
    Tensor ga(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) ga(i, j) = g(0, j) / static_cast<double>(n);
    return std::vector<Tensor>{std::move(ga)};
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat", "no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t n = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    detail::require(p.cols() == d, "concat",
                    "column mismatch " + detail::shapes(parts.front().value(), p.value()));
    offsets.push_back(n);
    n += p.rows();
  }
  Tensor out(n, d);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].value().values();
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(offsets[k] * d));
  }
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) sizes.push_back(p.rows());
  return parts.front().tape()->record(
      "concat", std::move(out), parts, [offsets, sizes, d](const Tensor& g) {
        std::vector<Tensor> grads;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
          Tensor gk(sizes[k], d);
          std::copy_n(g.values().begin() + static_cast<std::ptrdiff_t>(offsets[k] * d),
                      sizes[k] * d, gk.values().begin());
          grads.push_back(std::move(gk));
        }
        return grads;
      });
}

inline Var gather_rows(Var a, std::vector<std::size_t> indices) {
  const Tensor& av = a.value();
  for (std::size_t idx : indices) {
    detail::require(idx < av.rows(), "gather_rows",
                    "index " + std::to_string(idx) + " out of range for " + av.shape());
  }
  Tensor out = take_rows(av, indices);
  const std::size_t n = av.rows(), d = av.cols();
  return a.tape()->record("gather_rows", std::move(out), {a},
                          [idx = std::move(indices), n, d](const Tensor& g) {
                            Tensor ga(n, d);
                            for (std::size_t i = 0; i < idx.size(); ++i)
                              for (std::size_t j = 0; j < d; ++j) ga(idx[i], j) += g(i, j);
                            return std::vector<Tensor>{std::move(ga)};
                          });
}

inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Tensor& av = a.value();
  detail::require(rows * cols == av.size(), "reshape",
                  av.shape() + " -> " + Tensor::shape_string(rows, cols));
  const std::size_t r0 = av.rows(), c0 = av.cols();
  return a.tape()->record("reshape", Tensor(rows, cols, av.values()), {a},
                          [r0, c0](const Tensor& g) {
                            return std::vector<Tensor>{Tensor(r0, c0, g.values())};
                          });
}

inline constexpr double kLeakySlope = 0.01;

inline Var leaky_relu(Var a, double slope = kLeakySlope) {
  if (!(slope > 0.0)) throw ShapeError("leaky_relu: slope must be > 0");
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : slope * v;
  Tape* t = a.tape();
  return t->record("leaky_relu", std::move(out), {a}, [t, a, slope](const Tensor& g) {
    Tensor ga = g;
    const Tensor& x = t->value(a);
    for (std::size_t k = 0; k < ga.size(); ++k)
      if (!(x[k] > 0.0)) ga[k] *= slope;
    return std::vector<Tensor>{std::move(ga)};
  });
}

inline Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  Tensor s = out;
  return a.tape()->record("sigmoid", std::move(out), {a}, [s](const Tensor& g) {
    Tensor ga = g;
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] *= s[k] * (1.0 - s[k]);
    return std::vector<Tensor>{std::move(ga)};
  });
}

inline constexpr double kLogClamp = 1e-12;

// Natural log with the input clamped from below at kLogClamp (zero gradient where clamped).
inline Var log(Var a) {
  detail::require_finite(a.value(), "log");
  Tensor out = a.value();
  for (double& v : out.values()) v = std::log(std::max(v, kLogClamp));
  Tape* t = a.tape();
  return t->record("log", std::move(out), {a}, [t, a](const Tensor& g) {
    Tensor ga = g;
    const Tensor& x = t->value(a);
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] = x[k] > kLogClamp ? ga[k] / x[k] : 0.0;
    return std::vector<Tensor>{std::move(ga)};
  });
}

inline Var softmax_rows(Var a) {
  detail::require_finite(a.value(), "softmax");
  Tensor s = detail::softmax_rows(a.value());
  Tensor saved = s;
  return a.tape()->record("softmax", std::move(s), {a}, [saved](const Tensor& g) {
    Tensor ga(saved.rows(), saved.cols());
    for (std::size_t i = 0; i < saved.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < saved.cols(); ++j) dot += g(i, j) * saved(i, j);
      for (std::size_t j = 0; j < saved.cols(); ++j) ga(i, j) = saved(i, j) * (g(i, j) - dot);
    }
    return std::vector<Tensor>{std::move(ga)};
  });
}

inline Var log_softmax_rows(Var a) {
  detail::require_finite(a.value(), "log_softmax");
  Tensor ls = detail::log_softmax_rows(a.value());
  Tensor s = ls;
  for (double& v : s.values()) v = std::exp(v);
  return a.tape()->record("log_softmax", std::move(ls), {a}, [s](const Tensor& g) {
    Tensor ga(s.rows(), s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < s.cols(); ++j) gs += g(i, j);
      for (std::size_t j = 0; j < s.cols(); ++j) ga(i, j) = g(i, j) - s(i, j) * gs;
    }
    return std::vector<Tensor>{std::move(ga)};
  });
}

// Sum of squared differences of two equally shaped tensors -> scalar.
inline Var squared_euclidean(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.same_shape(bv), "squared_euclidean", detail::shapes(av, bv));
  Tensor diff = av;
  for (std::size_t k = 0; k < diff.size(); ++k) diff[k] -= bv[k];
  double s = 0.0;
  for (double v : diff.values()) s += v * v;
  return a.tape()->record("squared_euclidean", Tensor::scalar(s), {a, b},
                          [diff](const Tensor& g) {
                            Tensor ga = diff, gb = diff;
                            for (std::size_t k = 0; k < ga.size(); ++k) {
                              ga[k] *= 2.0 * g[0];
                              gb[k] *= -2.0 * g[0];
                            }
                            return std::vector<Tensor>{std::move(ga), std::move(gb)};
                          });
}

// Euclidean distance -> scalar. The gradient at zero distance is defined as 0.
inline Var euclidean(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.same_shape(bv), "euclidean", detail::shapes(av, bv));
  Tensor diff = av;
  for (std::size_t k = 0; k < diff.size(); ++k) diff[k] -= bv[k];
  double s = 0.0;
  for (double v : diff.values()) s += v * v;
  const double dist = std::sqrt(s);
  return a.tape()->record("euclidean", Tensor::scalar(dist), {a, b},
                          [diff, dist](const Tensor& g) {
                            Tensor ga(diff.rows(), diff.cols()), gb(diff.rows(), diff.cols());
                            if (dist > 0.0) {
                              for (std::size_t k = 0; k < ga.size(); ++k) {
                                ga[k] = g[0] * diff[k] / dist;
                                gb[k] = -ga[k];
                              }
                            }
                            return std::vector<Tensor>{std::move(ga), std::move(gb)};
                          });
}

// Cosine similarity of two equally shaped tensors -> scalar. If either norm is
// below kZeroNorm the similarity and its gradient are 0.
inline Var cosine_similarity(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.same_shape(bv), "cosine_similarity", detail::shapes(av, bv));
  const double na = norm(av.values()), nb = norm(bv.values());
  const bool degenerate = na < kZeroNorm || nb < kZeroNorm;
  double dot = 0.0;
  for (std::size_t k = 0; k < av.size(); ++k) dot += av[k] * bv[k];
  const double cs = degenerate ? 0.0 : dot / (na * nb);
  Tape* t = a.tape();
  return t->record("cosine_similarity", Tensor::scalar(cs), {a, b},
                   [t, a, b, na, nb, cs, degenerate](const Tensor& g) {
                     const Tensor& av = t->value(a);
                     const Tensor& bv = t->value(b);
                     Tensor ga(av.rows(), av.cols()), gb(bv.rows(), bv.cols());
                     if (!degenerate) {
                       for (std::size_t k = 0; k < av.size(); ++k) {
                         ga[k] = g[0] * (bv[k] / (na * nb) - cs * av[k] / (na * na));
                         gb[k] = g[0] * (av[k] / (na * nb) - cs * bv[k] / (nb * nb));
                       }
                     }
                     return std::vector<Tensor>{std::move(ga), std::move(gb)};
                   });
}

// Mean over rows of -log softmax(logits)[target]. Fused for stability.
inline Var cross_entropy(Var logits, std::vector<int> targets) {
  const Tensor& lv = logits.value();
  detail::require(lv.rows() == targets.size(), "cross_entropy",
                  std::to_string(targets.size()) + " targets for logits " + lv.shape());
  detail::require(lv.rows() > 0, "cross_entropy", "empty batch");
  detail::require_finite(lv, "cross_entropy");
  for (int y : targets) {
    detail::require(y >= 0 && static_cast<std::size_t>(y) < lv.cols(), "cross_entropy",
                    "target " + std::to_string(y) + " outside [0," + std::to_string(lv.cols()) + ")");
  }
  Tensor ls = detail::log_softmax_rows(lv);
  const auto n = static_cast<double>(lv.rows());
  double loss = 0.0;
  for (std::size_t i = 0; i < lv.rows(); ++i) loss -= ls(i, static_cast<std::size_t>(targets[i]));
  loss /= n;
  return logits.tape()->record(
      "cross_entropy", Tensor::scalar(loss), {logits},
      [ls = std::move(ls), tg = std::move(targets), n](const Tensor& g) {
        Tensor ga(ls.rows(), ls.cols());
        for (std::size_t i = 0; i < ls.rows(); ++i) {
          for (std::size_t j = 0; j < ls.cols(); ++j) ga(i, j) = std::exp(ls(i, j));
          ga(i, static_cast<std::size_t>(tg[i])) -= 1.0;
          for (std::size_t j = 0; j < ls.cols(); ++j) ga(i, j) *= g[0] / n;
        }
        return std::vector<Tensor>{std::move(ga)};
      });
}

// Identity forward; multiplies the incoming gradient by -coeff on the way back.
inline Var grad_reverse(Var x, double coeff = 1.0) {
  if (!(coeff > 0.0)) throw ShapeError("grad_reverse: coefficient must be > 0");
  return x.tape()->record("grad_reverse", x.value(), {x}, [coeff](const Tensor& g) {
    Tensor gx = g;
    for (double& v : gx.values()) v *= -coeff;
    return std::vector<Tensor>{std::move(gx)};
  });
}

struct ScalarSlot {
  std::size_t row;
  std::size_t col;
  Var value;
};

// rows x cols matrix that is zero except at the listed slots, each fed by a scalar node.
inline Var stack_scalars(Tape& tape, std::size_t rows, std::size_t cols,
                         const std::vector<ScalarSlot>& slots) {
  Tensor out(rows, cols);
  std::vector<Var> inputs;
  std::vector<std::pair<std::size_t, std::size_t>> where;
  for (const auto& s : slots) {
    detail::require(s.value.value().is_scalar(), "stack_scalars", "slot is not scalar");
    detail::require(s.row < rows && s.col < cols, "stack_scalars", "slot out of range");
    out(s.row, s.col) += s.value.value()[0];
    inputs.push_back(s.value);
    where.emplace_back(s.row, s.col);
  }
  return tape.record("stack_scalars", std::move(out), std::move(inputs),
                     [where](const Tensor& g) {
                       std::vector<Tensor> grads;
                       grads.reserve(where.size());
                       for (auto [r, c] : where) grads.push_back(Tensor::scalar(g(r, c)));
                       return grads;
                     });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }

// ---- gradient verification -------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[index]" of the worst entry
};

// Hook allowing tests to corrupt the analytic gradients before comparison.
using GradTamper = std::function<void(std::vector<Tensor>& analytic)>;

// Compares analytic gradients against central differences of step h:
//   max |analytic - numeric| / max(1, |analytic|, |numeric|)
// Throws if two forward passes with identical parameters disagree.
inline GradCheckReport check_gradients(const std::function<Var(Tape&)>& build,
                                       std::span<Parameter* const> params, double h,
                                       const GradTamper& tamper = {}) {
  if (!(h > 0.0)) throw Error("check_gradients: h must be > 0");
  for (Parameter* p : params) p->zero_grad();

  double base = 0.0;
  {
    Tape tape;
    Var root = build(tape);
    base = root.value().item();
    tape.backward(root);
  }
  {
    Tape tape;
    const double again = build(tape).value().item();
    if (again != base) {
      throw Error("check_gradients: loss builder is non-deterministic");
    }
  }

  std::vector<Tensor> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);
  if (tamper) tamper(analytic);

  auto eval = [&] {
    Tape tape;
    return build(tape).value().item();
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double saved = p.value[k];
      p.value[k] = saved + h;
      const double up = eval();
      p.value[k] = saved - h;
      const double down = eval();
      p.value[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][k];
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > report.max_rel_error || !std::isfinite(err)) {
        report.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        report.worst = p.name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return report;
}

}  // namespace gga::ad
