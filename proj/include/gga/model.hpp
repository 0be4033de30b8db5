#pragma once

// Trainable components: per-domain projectors into the common subspace, the
// shared classifier, the WAM discriminator, and Adam state.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gga/autodiff.hpp"
#include "gga/error.hpp"
#include "gga/rng.hpp"

namespace gga::model {

using ad::Parameter;
using ad::Tape;
using ad::Var;

enum class Domain { kSource, kTarget };

inline const char* to_string(Domain d) { return d == Domain::kSource ? "source" : "target"; }

struct ModelDims {
  std::size_t source_dim = 0;
  std::size_t target_dim = 0;
  std::size_t hidden = 0;  // 0 -> max(16, 2 * common_dim)
  std::size_t common_dim = 3;
  std::size_t num_classes = 0;

  std::size_t hidden_width() const { return hidden != 0 ? hidden : std::max<std::size_t>(16, 2 * common_dim); }

  void validate() const {
    if (source_dim == 0 || target_dim == 0) throw ShapeError("model: input dims must be positive");
    if (common_dim == 0) throw ShapeError("model: common_dim must be >= 1");
    if (num_classes < 2) throw ShapeError("model: need at least 2 classes");
  }
};

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor w(fan_in, fan_out);
  for (double& v : w.values()) v = dist(rng);
  return w;
}

// Two affine layers with a leaky ReLU between them.
struct Projector {
  Parameter w1, b1, w2, b2;

  std::size_t input_dim() const { return w1.value.rows(); }
  std::size_t output_dim() const { return w2.value.cols(); }

  Var forward(Tape& tape, Var x) { return forward_impl(*this, tape, x); }
  Var forward(Tape& tape, Var x) const { return forward_impl(*this, tape, x); }

 private:
  template <class Self>
  static Var forward_impl(Self& self, Tape& tape, Var x) {
    Var h = ad::leaky_relu(ad::matmul(x, tape.param(self.w1)) + tape.param(self.b1));
    return ad::matmul(h, tape.param(self.w2)) + tape.param(self.b2);
  }
};

// Single affine layer d_C -> K. Produces logits; softmax belongs to the losses.
struct Classifier {
  Parameter w, b;

  Var forward(Tape& tape, Var z) { return forward_impl(*this, tape, z); }
  Var forward(Tape& tape, Var z) const { return forward_impl(*this, tape, z); }

 private:
  template <class Self>
  static Var forward_impl(Self& self, Tape& tape, Var z) {
    if (z.cols() != self.w.value.rows()) {
      throw ShapeError("classifier: expected " + std::to_string(self.w.value.rows()) +
                       " input features, got " + z.value().shape());
    }
    return ad::matmul(z, tape.param(self.w)) + tape.param(self.b);
  }
};

// Single affine layer K^2 -> 1 followed by a sigmoid.
struct Discriminator {
  Parameter w, b;

  std::size_t input_dim() const { return w.value.rows(); }

  Var logit(Tape& tape, Var flat_wam) { return logit_impl(*this, tape, flat_wam); }
  Var logit(Tape& tape, Var flat_wam) const { return logit_impl(*this, tape, flat_wam); }
  Var forward(Tape& tape, Var flat_wam) { return ad::sigmoid(logit(tape, flat_wam)); }
  Var forward(Tape& tape, Var flat_wam) const { return ad::sigmoid(logit(tape, flat_wam)); }

 private:
  template <class Self>
  static Var logit_impl(Self& self, Tape& tape, Var flat_wam) {
    if (flat_wam.rows() != 1 || flat_wam.cols() != self.input_dim()) {
      throw ShapeError("discriminator: expected [1x" + std::to_string(self.input_dim()) +
                       "] flattened WAM, got " + flat_wam.value().shape());
    }
    return ad::matmul(flat_wam, tape.param(self.w)) + tape.param(self.b);
  }
};

class GgaModel {
 public:
  GgaModel() = default;

  // Weights Glorot-uniform, biases zero; deterministic per seed.
  static GgaModel init(const ModelDims& dims, std::uint64_t seed) {
    dims.validate();
    Rng rng(seed);
    const std::size_t h = dims.hidden_width();
    const std::size_t dc = dims.common_dim;
    const std::size_t k = dims.num_classes;
    auto projector = [&](const std::string& prefix, std::size_t d_in) {
      return Projector{Parameter(prefix + ".w1", glorot(d_in, h, rng)),
                       Parameter(prefix + ".b1", Tensor(1, h)),
                       Parameter(prefix + ".w2", glorot(h, dc, rng)),
                       Parameter(prefix + ".b2", Tensor(1, dc))};
    };
    GgaModel m;
    m.dims_ = dims;
    m.seed_ = seed;
    m.source_ = projector("source_projector", dims.source_dim);
    m.target_ = projector("target_projector", dims.target_dim);
    m.classifier_ = Classifier{Parameter("classifier.w", glorot(dc, k, rng)),
                               Parameter("classifier.b", Tensor(1, k))};
    m.discriminator_ = Discriminator{Parameter("discriminator.w", glorot(k * k, 1, rng)),
                                     Parameter("discriminator.b", Tensor(1, 1))};
    return m;
  }

  const ModelDims& dims() const noexcept { return dims_; }
  std::uint64_t seed() const noexcept { return seed_; }

  const Projector& projector(Domain d) const { return d == Domain::kSource ? source_ : target_; }
  Projector& projector(Domain d) { return d == Domain::kSource ? source_ : target_; }
  const Classifier& classifier() const noexcept { return classifier_; }
  Classifier& classifier() noexcept { return classifier_; }
  const Discriminator& discriminator() const noexcept { return discriminator_; }
  Discriminator& discriminator() noexcept { return discriminator_; }

  // f(x): routes rows through E_S or E_T by domain tag. The const overloads
  // record parameters as constants (inference, no gradients).
  Var project(Tape& tape, Var x, Domain d) { return project_impl(*this, tape, x, d); }
  Var project(Tape& tape, Var x, Domain d) const { return project_impl(*this, tape, x, d); }

  Var classify_logits(Tape& tape, Var embeddings) { return classifier_.forward(tape, embeddings); }
  Var classify_logits(Tape& tape, Var embeddings) const {
    return classifier_.forward(tape, embeddings);
  }

  Var discriminate(Tape& tape, Var flat_wam) { return discriminator_.forward(tape, flat_wam); }
  Var discriminate(Tape& tape, Var flat_wam) const {
    return discriminator_.forward(tape, flat_wam);
  }

  // Stable order: source projector, target projector, classifier, discriminator.
  std::vector<Parameter*> parameters() {
    return {&source_.w1, &source_.b1, &source_.w2, &source_.b2,
            &target_.w1, &target_.b1, &target_.w2, &target_.b2,
            &classifier_.w, &classifier_.b, &discriminator_.w, &discriminator_.b};
  }
  std::vector<const Parameter*> parameters() const {
    return {&source_.w1, &source_.b1, &source_.w2, &source_.b2,
            &target_.w1, &target_.b1, &target_.w2, &target_.b2,
            &classifier_.w, &classifier_.b, &discriminator_.w, &discriminator_.b};
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  // Inference helpers on plain tensors.
  Tensor embed(const Tensor& x, Domain d) const {
    Tape tape;
    return project(tape, tape.constant(x), d).value();
  }
  Tensor logits(const Tensor& embeddings) const {
    Tape tape;
    return classify_logits(tape, tape.constant(embeddings)).value();
  }

 private:
  template <class Self>
  static Var project_impl(Self& self, Tape& tape, Var x, Domain d) {
    auto& p = self.projector(d);
    if (x.cols() != p.input_dim()) {
      throw ShapeError(std::string("project: ") + to_string(d) + " projector expects " +
                       std::to_string(p.input_dim()) + " features, got " +
                       std::to_string(x.cols()));
    }
    return p.forward(tape, x);
  }

  ModelDims dims_;
  std::uint64_t seed_ = 0;
  Projector source_;
  Projector target_;
  Classifier classifier_;
  Discriminator discriminator_;
};

// ---- Adam ------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return step_; }

  // Bias-corrected Adam update of every parameter, then zeroes the grads.
  // Throws NumericError (leaving parameters untouched) on a non-finite grad.
  void step(std::span<Parameter* const> params) {
    for (const Parameter* p : params) {
      if (!p->grad.all_finite()) throw NumericError("adam: non-finite gradient in " + p->name);
    }
    if (first_.empty()) {
      for (const Parameter* p : params) {
        first_.emplace_back(p->value.rows(), p->value.cols());
        second_.emplace_back(p->value.rows(), p->value.cols());
      }
    }
    if (first_.size() != params.size()) throw ShapeError("adam: parameter set changed between steps");
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      if (!first_[i].same_shape(p.value)) throw ShapeError("adam: moment shape mismatch for " + p.name);
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k];
        first_[i][k] = cfg_.beta1 * first_[i][k] + (1.0 - cfg_.beta1) * g;
        second_[i][k] = cfg_.beta2 * second_[i][k] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = first_[i][k] / c1;
        const double vhat = second_[i][k] / c2;
        p.value[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      p.zero_grad();
    }
  }

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
};

// ---- checkpoints -------------------------------------------------------------
//
// JSON document:
//   { "format": "gga-checkpoint", "version": 1, "seed": <u64>,
//     "dims": {"source_dim", "target_dim", "hidden", "common_dim", "num_classes"},
//     "parameters": { "<name>": {"rows": r, "cols": c, "data": [...]}, ... },
//     "extras": { ... caller-defined ... } }
// Doubles are written in shortest round-trip form, so save/load is bitwise exact.

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", t.values()}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

inline nlohmann::json to_json(const GgaModel& m, const nlohmann::json& extras = nlohmann::json::object()) {
  nlohmann::json params = nlohmann::json::object();
  for (const Parameter* p : m.parameters()) params[p->name] = tensor_to_json(p->value);
  const auto& d = m.dims();
  return {{"format", "gga-checkpoint"},
          {"version", 1},
          {"seed", m.seed()},
          {"dims",
           {{"source_dim", d.source_dim},
            {"target_dim", d.target_dim},
            {"hidden", d.hidden_width()},
            {"common_dim", d.common_dim},
            {"num_classes", d.num_classes}}},
          {"parameters", params},
          {"extras", extras}};
}

inline GgaModel from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "gga-checkpoint") throw Error("not a gga checkpoint");
    const auto& jd = j.at("dims");
    ModelDims dims{jd.at("source_dim").get<std::size_t>(), jd.at("target_dim").get<std::size_t>(),
                   jd.at("hidden").get<std::size_t>(), jd.at("common_dim").get<std::size_t>(),
                   jd.at("num_classes").get<std::size_t>()};
    GgaModel m = GgaModel::init(dims, j.at("seed").get<std::uint64_t>());
    const auto& jp = j.at("parameters");
    for (Parameter* p : m.parameters()) {
      Tensor t = tensor_from_json(jp.at(p->name));
      if (!t.same_shape(p->value)) {
        throw Error("parameter " + p->name + " has shape " + t.shape() + ", expected " +
                    p->value.shape());
      }
      if (!t.all_finite()) throw Error("parameter " + p->name + " is not finite");
      p->value = std::move(t);
      p->zero_grad();
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const Error& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const GgaModel& m,
                            const nlohmann::json& extras = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out << to_json(m, extras).dump(1) << '\n';
}

struct LoadedCheckpoint {
  GgaModel model;
  nlohmann::json extras;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  }
  GgaModel m = from_json(j);
  return {std::move(m), j.value("extras", nlohmann::json::object())};
}

}  // namespace gga::model
