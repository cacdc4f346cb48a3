#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tripimg/data_model.hpp"
#include "tripimg/igtd.hpp"
#include "tripimg/preprocess.hpp"
#include "tripimg/prng.hpp"

namespace tripimg {
namespace nn {

struct ShapeMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dims {
  size_t h = 0, w = 0, c = 0;  // c == 0 means flat vector of length h
  size_t size() const { return c == 0 ? h : h * w * c; }
  bool flat() const { return c == 0; }
};

// ---------------------------------------------------------------------------
// Layer specs

struct ConvSpec {
  size_t filters = 8;
  size_t kh = 3, kw = 3;
  size_t stride = 1;
  bool same_padding = true;
};
struct ReluSpec {};
struct MaxPoolSpec {};  // 2x2, stride 2
struct DropoutSpec {
  double rate = 0.2;
};
struct FlattenSpec {};
struct DenseSpec {
  size_t units = 16;
};
struct SoftmaxSpec {};

using LayerSpec =
    std::variant<ConvSpec, ReluSpec, MaxPoolSpec, DropoutSpec, FlattenSpec, DenseSpec, SoftmaxSpec>;

struct CnnSpec {
  std::vector<LayerSpec> layers;
  double l1 = 0.0;
  double l2 = 0.0;

  // Conv(3x3,8,same) -> ReLU -> MaxPool2x2 -> Dropout(0.2) -> Flatten
  //   -> Dense(16) -> ReLU -> Dense(4) -> Softmax
  static CnnSpec baseline(double l1 = 0.0, double l2 = 0.0) {
    CnnSpec s;
    s.layers = {ConvSpec{8, 3, 3, 1, true}, ReluSpec{}, MaxPoolSpec{}, DropoutSpec{0.2},
                FlattenSpec{},              DenseSpec{16}, ReluSpec{}, DenseSpec{4}, SoftmaxSpec{}};
    s.l1 = l1;
    s.l2 = l2;
    return s;
  }

  // Two conv blocks; the stronger preset exposed by the CLI.
  static CnnSpec deep(double l1 = 0.0, double l2 = 0.0) {
    CnnSpec s;
    s.layers = {ConvSpec{8, 3, 3, 1, true},  ReluSpec{},    MaxPoolSpec{}, DropoutSpec{0.2},
                ConvSpec{16, 3, 3, 1, true}, ReluSpec{},    MaxPoolSpec{}, DropoutSpec{0.2},
                FlattenSpec{},               DenseSpec{32}, ReluSpec{},    DenseSpec{4},
                SoftmaxSpec{}};
    s.l1 = l1;
    s.l2 = l2;
    return s;
  }

  nlohmann::json to_json() const;
  static CnnSpec from_json(const nlohmann::json& j);
};

inline nlohmann::json CnnSpec::to_json() const {
  nlohmann::json layers_json = nlohmann::json::array();
  for (const auto& l : layers) {
    nlohmann::json j;
    if (auto* c = std::get_if<ConvSpec>(&l)) {
      j = {{"kind", "conv"}, {"filters", c->filters}, {"kh", c->kh},
           {"kw", c->kw},    {"stride", c->stride},   {"same", c->same_padding}};
    } else if (std::get_if<ReluSpec>(&l)) {
      j = {{"kind", "relu"}};
    } else if (std::get_if<MaxPoolSpec>(&l)) {
      j = {{"kind", "maxpool"}};
    } else if (auto* d = std::get_if<DropoutSpec>(&l)) {
      j = {{"kind", "dropout"}, {"rate", d->rate}};
    } else if (std::get_if<FlattenSpec>(&l)) {
      j = {{"kind", "flatten"}};
    } else if (auto* de = std::get_if<DenseSpec>(&l)) {
      j = {{"kind", "dense"}, {"units", de->units}};
    } else {
      j = {{"kind", "softmax"}};
    }
    layers_json.push_back(j);
  }
  return nlohmann::json{{"layers", layers_json}, {"l1", l1}, {"l2", l2}};
}

inline CnnSpec CnnSpec::from_json(const nlohmann::json& j) {
  CnnSpec s;
  s.l1 = j.at("l1").get<double>();
  s.l2 = j.at("l2").get<double>();
  for (const auto& lj : j.at("layers")) {
    const std::string kind = lj.at("kind").get<std::string>();
    if (kind == "conv") {
      s.layers.push_back(ConvSpec{lj.at("filters").get<size_t>(), lj.at("kh").get<size_t>(),
                                  lj.at("kw").get<size_t>(), lj.at("stride").get<size_t>(),
                                  lj.at("same").get<bool>()});
    } else if (kind == "relu") {
      s.layers.push_back(ReluSpec{});
    } else if (kind == "maxpool") {
      s.layers.push_back(MaxPoolSpec{});
    } else if (kind == "dropout") {
      s.layers.push_back(DropoutSpec{lj.at("rate").get<double>()});
    } else if (kind == "flatten") {
      s.layers.push_back(FlattenSpec{});
    } else if (kind == "dense") {
      s.layers.push_back(DenseSpec{lj.at("units").get<size_t>()});
    } else if (kind == "softmax") {
      s.layers.push_back(SoftmaxSpec{});
    } else {
      throw std::invalid_argument("unknown layer kind: " + kind);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Layers. Single-sample forward/backward; each layer caches what its own
// backward needs, so backward must follow the matching forward.

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::vector<double> forward(const std::vector<double>& in, bool train) = 0;
  virtual std::vector<double> backward(const std::vector<double>& grad_out) = 0;
  virtual std::vector<std::vector<double>*> params() { return {}; }
  virtual std::vector<std::vector<double>*> grads() { return {}; }
  virtual Dims out_dims() const = 0;
};

// Cross-correlation, HWC layout. Weights: [f][kh][kw][cin], row-major.
class ConvLayer : public Layer {
 public:
  ConvLayer(const ConvSpec& spec, Dims in, Rng& init_rng) : spec_(spec), in_(in) {
    if (in.flat()) throw ShapeMismatchError("conv: input must be an image");
    if (spec.same_padding && spec.stride != 1)
      throw ShapeMismatchError("conv: same-padding requires stride 1");
    if (spec.same_padding) {
      pad_top_ = (spec.kh - 1) / 2;
      pad_left_ = (spec.kw - 1) / 2;
      out_ = {in.h, in.w, spec.filters};
    } else {
      if (in.h < spec.kh || in.w < spec.kw) throw ShapeMismatchError("conv: kernel larger than input");
      out_ = {(in.h - spec.kh) / spec.stride + 1, (in.w - spec.kw) / spec.stride + 1, spec.filters};
    }
    const size_t fan_in = spec.kh * spec.kw * in.c;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    weights_.resize(spec.filters * fan_in);
    for (auto& w : weights_) w = (init_rng.next_double() * 2.0 - 1.0) * bound;
    bias_.assign(spec.filters, 0.0);
    wgrad_.assign(weights_.size(), 0.0);
    bgrad_.assign(bias_.size(), 0.0);
  }

  std::vector<double> forward(const std::vector<double>& in, bool) override {
    if (in.size() != in_.size()) throw ShapeMismatchError("conv: bad input size");
    input_ = in;
    std::vector<double> out(out_.size(), 0.0);
    const size_t fan_in = spec_.kh * spec_.kw * in_.c;
    for (size_t oy = 0; oy < out_.h; ++oy) {
      for (size_t ox = 0; ox < out_.w; ++ox) {
        for (size_t f = 0; f < spec_.filters; ++f) {
          double acc = bias_[f];
          const double* wf = weights_.data() + f * fan_in;
          for (size_t ky = 0; ky < spec_.kh; ++ky) {
            const long iy = static_cast<long>(oy * spec_.stride + ky) - static_cast<long>(pad_top_);
            if (iy < 0 || iy >= static_cast<long>(in_.h)) continue;
            for (size_t kx = 0; kx < spec_.kw; ++kx) {
              const long ix = static_cast<long>(ox * spec_.stride + kx) - static_cast<long>(pad_left_);
              if (ix < 0 || ix >= static_cast<long>(in_.w)) continue;
              const double* px = in.data() + (static_cast<size_t>(iy) * in_.w + static_cast<size_t>(ix)) * in_.c;
              const double* wk = wf + (ky * spec_.kw + kx) * in_.c;
              for (size_t ci = 0; ci < in_.c; ++ci) acc += px[ci] * wk[ci];
            }
          }
          out[(oy * out_.w + ox) * out_.c + f] = acc;
        }
      }
    }
    return out;
  }

  std::vector<double> backward(const std::vector<double>& grad_out) override {
    if (grad_out.size() != out_.size()) throw ShapeMismatchError("conv: bad grad size");
    std::vector<double> grad_in(in_.size(), 0.0);
    const size_t fan_in = spec_.kh * spec_.kw * in_.c;
    for (size_t oy = 0; oy < out_.h; ++oy) {
      for (size_t ox = 0; ox < out_.w; ++ox) {
        for (size_t f = 0; f < spec_.filters; ++f) {
          const double g = grad_out[(oy * out_.w + ox) * out_.c + f];
          if (g == 0.0) continue;
          bgrad_[f] += g;
          const double* wf = weights_.data() + f * fan_in;
          double* wgf = wgrad_.data() + f * fan_in;
          for (size_t ky = 0; ky < spec_.kh; ++ky) {
            const long iy = static_cast<long>(oy * spec_.stride + ky) - static_cast<long>(pad_top_);
            if (iy < 0 || iy >= static_cast<long>(in_.h)) continue;
            for (size_t kx = 0; kx < spec_.kw; ++kx) {
              const long ix = static_cast<long>(ox * spec_.stride + kx) - static_cast<long>(pad_left_);
              if (ix < 0 || ix >= static_cast<long>(in_.w)) continue;
              const size_t base = (static_cast<size_t>(iy) * in_.w + static_cast<size_t>(ix)) * in_.c;
              const size_t wbase = (ky * spec_.kw + kx) * in_.c;
              for (size_t ci = 0; ci < in_.c; ++ci) {
                wgf[wbase + ci] += g * input_[base + ci];
                grad_in[base + ci] += g * wf[wbase + ci];
              }
            }
          }
        }
      }
    }
    return grad_in;
  }

  std::vector<std::vector<double>*> params() override { return {&weights_, &bias_}; }
  std::vector<std::vector<double>*> grads() override { return {&wgrad_, &bgrad_}; }
  Dims out_dims() const override { return out_; }

 private:
  ConvSpec spec_;
  Dims in_, out_;
  size_t pad_top_ = 0, pad_left_ = 0;
  std::vector<double> weights_, bias_, wgrad_, bgrad_;
  std::vector<double> input_;
};

class ReluLayer : public Layer {
 public:
  explicit ReluLayer(Dims in) : dims_(in) {}

  std::vector<double> forward(const std::vector<double>& in, bool) override {
    input_ = in;
    std::vector<double> out(in.size());
    for (size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return out;
  }

  std::vector<double> backward(const std::vector<double>& grad_out) override {
    std::vector<double> grad(grad_out.size());
    for (size_t i = 0; i < grad.size(); ++i) grad[i] = input_[i] > 0.0 ? grad_out[i] : 0.0;
    return grad;
  }

  Dims out_dims() const override { return dims_; }

 private:
  Dims dims_;
  std::vector<double> input_;
};

struct OddDimensionsError : ShapeMismatchError {
  using ShapeMismatchError::ShapeMismatchError;
};

// 2x2 max pooling, stride 2. Gradient routes to the argmax; ties go to the
// first element in row-major order.
class MaxPoolLayer : public Layer {
 public:
  explicit MaxPoolLayer(Dims in) : in_(in) {
    if (in.flat()) throw ShapeMismatchError("maxpool: input must be an image");
    if (in.h % 2 != 0 || in.w % 2 != 0)
      throw OddDimensionsError("maxpool: input dimensions must be even");
    out_ = {in.h / 2, in.w / 2, in.c};
  }

  std::vector<double> forward(const std::vector<double>& in, bool) override {
    if (in.size() != in_.size()) throw ShapeMismatchError("maxpool: bad input size");
    std::vector<double> out(out_.size());
    argmax_.resize(out_.size());
    for (size_t oy = 0; oy < out_.h; ++oy) {
      for (size_t ox = 0; ox < out_.w; ++ox) {
        for (size_t c = 0; c < in_.c; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          size_t best_idx = 0;
          for (size_t dy = 0; dy < 2; ++dy) {
            for (size_t dx = 0; dx < 2; ++dx) {
              const size_t idx = ((oy * 2 + dy) * in_.w + (ox * 2 + dx)) * in_.c + c;
              if (in[idx] > best) {
                best = in[idx];
                best_idx = idx;
              }
            }
          }
          const size_t o = (oy * out_.w + ox) * out_.c + c;
          out[o] = best;
          argmax_[o] = best_idx;
        }
      }
    }
    return out;
  }

  std::vector<double> backward(const std::vector<double>& grad_out) override {
    std::vector<double> grad(in_.size(), 0.0);
    for (size_t o = 0; o < grad_out.size(); ++o) grad[argmax_[o]] += grad_out[o];
    return grad;
  }

  Dims out_dims() const override { return out_; }

 private:
  Dims in_, out_;
  std::vector<size_t> argmax_;
};

// Inverted dropout: seeded mask, scale 1/(1-p) at train time, identity at eval.
class DropoutLayer : public Layer {
 public:
  DropoutLayer(double rate, Dims in, Rng* rng) : rate_(rate), dims_(in), rng_(rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0,1)");
  }

  std::vector<double> forward(const std::vector<double>& in, bool train) override {
    if (!train || rate_ == 0.0) {
      mask_.assign(in.size(), 1.0);
      return in;
    }
    const double scale = 1.0 / (1.0 - rate_);
    mask_.resize(in.size());
    std::vector<double> out(in.size());
    for (size_t i = 0; i < in.size(); ++i) {
      mask_[i] = (rng_->next_double() < rate_) ? 0.0 : scale;
      out[i] = in[i] * mask_[i];
    }
    return out;
  }

  std::vector<double> backward(const std::vector<double>& grad_out) override {
    std::vector<double> grad(grad_out.size());
    for (size_t i = 0; i < grad.size(); ++i) grad[i] = grad_out[i] * mask_[i];
    return grad;
  }

  Dims out_dims() const override { return dims_; }

 private:
  double rate_;
  Dims dims_;
  Rng* rng_;
  std::vector<double> mask_;
};

class FlattenLayer : public Layer {
 public:
  explicit FlattenLayer(Dims in) : out_{in.size(), 0, 0} {}
  std::vector<double> forward(const std::vector<double>& in, bool) override { return in; }
  std::vector<double> backward(const std::vector<double>& grad_out) override { return grad_out; }
  Dims out_dims() const override { return out_; }

 private:
  Dims out_;
};

class DenseLayer : public Layer {
 public:
  DenseLayer(size_t units, Dims in, Rng& init_rng) : in_size_(in.size()), out_{units, 0, 0} {
    const double bound = std::sqrt(6.0 / static_cast<double>(in_size_));
    weights_.resize(units * in_size_);
    for (auto& w : weights_) w = (init_rng.next_double() * 2.0 - 1.0) * bound;
    bias_.assign(units, 0.0);
    wgrad_.assign(weights_.size(), 0.0);
    bgrad_.assign(bias_.size(), 0.0);
  }

  std::vector<double> forward(const std::vector<double>& in, bool) override {
    if (in.size() != in_size_) throw ShapeMismatchError("dense: bad input size");
    input_ = in;
    std::vector<double> out(out_.h);
    for (size_t u = 0; u < out_.h; ++u) {
      double acc = bias_[u];
      const double* w = weights_.data() + u * in_size_;
      for (size_t i = 0; i < in_size_; ++i) acc += w[i] * in[i];
      out[u] = acc;
    }
    return out;
  }

  std::vector<double> backward(const std::vector<double>& grad_out) override {
    std::vector<double> grad(in_size_, 0.0);
    for (size_t u = 0; u < out_.h; ++u) {
      const double g = grad_out[u];
      bgrad_[u] += g;
      const double* w = weights_.data() + u * in_size_;
      double* wg = wgrad_.data() + u * in_size_;
      for (size_t i = 0; i < in_size_; ++i) {
        wg[i] += g * input_[i];
        grad[i] += g * w[i];
      }
    }
    return grad;
  }

  std::vector<std::vector<double>*> params() override { return {&weights_, &bias_}; }
  std::vector<std::vector<double>*> grads() override { return {&wgrad_, &bgrad_}; }
  Dims out_dims() const override { return out_; }

 private:
  size_t in_size_;
  Dims out_;
  std::vector<double> weights_, bias_, wgrad_, bgrad_;
  std::vector<double> input_;
};

// Max-subtraction stabilized softmax.
class SoftmaxLayer : public Layer {
 public:
  explicit SoftmaxLayer(Dims in) : dims_(in) {}

  std::vector<double> forward(const std::vector<double>& in, bool) override {
    const double mx = *std::max_element(in.begin(), in.end());
    std::vector<double> out(in.size());
    double sum = 0.0;
    for (size_t i = 0; i < in.size(); ++i) {
      out[i] = std::exp(in[i] - mx);
      sum += out[i];
    }
    for (auto& v : out) v /= sum;
    output_ = out;
    return out;
  }

  std::vector<double> backward(const std::vector<double>& grad_out) override {
    double dot = 0.0;
    for (size_t i = 0; i < grad_out.size(); ++i) dot += grad_out[i] * output_[i];
    std::vector<double> grad(grad_out.size());
    for (size_t i = 0; i < grad.size(); ++i) grad[i] = output_[i] * (grad_out[i] - dot);
    return grad;
  }

  Dims out_dims() const override { return dims_; }

 private:
  Dims dims_;
  std::vector<double> output_;
};

// ---------------------------------------------------------------------------
// Loss and penalties

struct BadClassError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// -ln(p_true) with p clamped at 1e-12; gradient is w.r.t. the probabilities.
inline double sparse_ce_loss(const std::vector<double>& probs, int true_class,
                             std::vector<double>* grad_probs = nullptr) {
  if (true_class < 0 || static_cast<size_t>(true_class) >= probs.size())
    throw BadClassError("sparse_ce_loss: class out of range");
  const double p = std::max(probs[static_cast<size_t>(true_class)], 1e-12);
  if (grad_probs) {
    grad_probs->assign(probs.size(), 0.0);
    (*grad_probs)[static_cast<size_t>(true_class)] = -1.0 / p;
  }
  return -std::log(p);
}

// penalty = l1*sum|w| + l2*sum(w^2); subgradient of |w| at 0 is 0.
inline double l1l2_penalty(const std::vector<const std::vector<double>*>& weight_tensors, double l1,
                           double l2) {
  double penalty = 0.0;
  for (const auto* t : weight_tensors) {
    for (double w : *t) penalty += l1 * std::abs(w) + l2 * w * w;
  }
  return penalty;
}

inline void l1l2_add_subgradient(const std::vector<double>& weights, double l1, double l2,
                                 std::vector<double>& grad) {
  for (size_t i = 0; i < weights.size(); ++i) {
    const double w = weights[i];
    grad[i] += l2 * 2.0 * w + (w > 0.0 ? l1 : (w < 0.0 ? -l1 : 0.0));
  }
}

// ---------------------------------------------------------------------------
// Model

class CnnModel {
 public:
  CnnModel(const CnnSpec& spec, Dims input, uint64_t seed)
      : spec_(spec), input_(input), init_rng_(derive_seed(seed, 0)), dropout_rng_(derive_seed(seed, 1)) {
    Dims dims = input;
    for (const auto& ls : spec.layers) {
      if (auto* c = std::get_if<ConvSpec>(&ls)) {
        layers_.push_back(std::make_unique<ConvLayer>(*c, dims, init_rng_));
      } else if (std::get_if<ReluSpec>(&ls)) {
        layers_.push_back(std::make_unique<ReluLayer>(dims));
      } else if (std::get_if<MaxPoolSpec>(&ls)) {
        layers_.push_back(std::make_unique<MaxPoolLayer>(dims));
      } else if (auto* d = std::get_if<DropoutSpec>(&ls)) {
        layers_.push_back(std::make_unique<DropoutLayer>(d->rate, dims, &dropout_rng_));
      } else if (std::get_if<FlattenSpec>(&ls)) {
        layers_.push_back(std::make_unique<FlattenLayer>(dims));
      } else if (auto* de = std::get_if<DenseSpec>(&ls)) {
        layers_.push_back(std::make_unique<DenseLayer>(de->units, dims, init_rng_));
      } else {
        layers_.push_back(std::make_unique<SoftmaxLayer>(dims));
      }
      dims = layers_.back()->out_dims();
    }
    output_ = dims;
  }

  std::vector<double> forward(const std::vector<double>& x, bool train) {
    std::vector<double> v = x;
    for (auto& l : layers_) v = l->forward(v, train);
    return v;
  }

  std::vector<double> backward(const std::vector<double>& grad_out) {
    std::vector<double> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<std::vector<double>*> params() {
    std::vector<std::vector<double>*> out;
    for (auto& l : layers_) {
      for (auto* p : l->params()) out.push_back(p);
    }
    return out;
  }

  std::vector<std::vector<double>*> grads() {
    std::vector<std::vector<double>*> out;
    for (auto& l : layers_) {
      for (auto* g : l->grads()) out.push_back(g);
    }
    return out;
  }

  // Weight tensors only (biases excluded from regularization): even indices
  // of the (weight, bias) pairs emitted by conv and dense layers.
  std::vector<size_t> weight_param_indices() {
    std::vector<size_t> out;
    size_t idx = 0;
    for (auto& l : layers_) {
      const auto ps = l->params();
      if (ps.size() == 2) out.push_back(idx);
      idx += ps.size();
    }
    return out;
  }

  void zero_grads() {
    for (auto* g : grads()) std::fill(g->begin(), g->end(), 0.0);
  }

  const CnnSpec& spec() const { return spec_; }
  Dims input_dims() const { return input_; }
  Dims output_dims() const { return output_; }

 private:
  CnnSpec spec_;
  Dims input_, output_;
  Rng init_rng_;
  Rng dropout_rng_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// ---------------------------------------------------------------------------
// Optimizers

struct SgdConfig {
  double lr = 0.01;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(const std::vector<std::vector<double>*>& params,
                    const std::vector<std::vector<double>*>& grads) = 0;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}
  void step(const std::vector<std::vector<double>*>& params,
            const std::vector<std::vector<double>*>& grads) override {
    for (size_t t = 0; t < params.size(); ++t) {
      auto& p = *params[t];
      const auto& g = *grads[t];
      for (size_t i = 0; i < p.size(); ++i) p[i] -= cfg_.lr * g[i];
    }
  }

 private:
  SgdConfig cfg_;
};

class Adam : public Optimizer {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<std::vector<double>*>& params,
            const std::vector<std::vector<double>*>& grads) override {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t t = 0; t < params.size(); ++t) {
      auto& p = *params[t];
      const auto& g = *grads[t];
      for (size_t i = 0; i < p.size(); ++i) {
        m_[t][i] = cfg_.beta1 * m_[t][i] + (1.0 - cfg_.beta1) * g[i];
        v_[t][i] = cfg_.beta2 * v_[t][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m_[t][i] / bc1;
        const double vhat = v_[t][i] / bc2;
        p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Training

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double lr = 0.001;
  size_t batch_size = 32;
  size_t epochs = 15;
  double l1 = 0.0;
  double l2 = 0.0;
  uint64_t seed = 0;
  bool early_stopping = false;
  size_t early_stopping_patience = 3;
};

struct TrainCurves {
  std::vector<double> train_loss, train_acc, val_loss, val_acc;
};

struct EmptySplitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<double> image_to_input(const ImageSample& img) {
  std::vector<double> v(img.pixels.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(img.pixels[i]) / 255.0;
  return v;
}

inline int predict_class(CnnModel& model, const std::vector<double>& input,
                         std::vector<double>* probs_out = nullptr) {
  const auto probs = model.forward(input, false);
  if (probs_out) *probs_out = probs;
  size_t best = 0;
  for (size_t c = 1; c < probs.size(); ++c) {
    if (probs[c] > probs[best]) best = c;
  }
  return static_cast<int>(best);
}

struct TrainResult {
  std::unique_ptr<CnnModel> model;
  TrainCurves curves;
};

inline TrainResult train_cnn(const std::vector<ImageSample>& images, const CnnSpec& spec,
                             const TrainConfig& cfg, const SplitIndices& split) {
  if (split.train.empty() || split.test.empty())
    throw EmptySplitError("train_cnn: empty train or validation split");
  if (cfg.batch_size < 1 || cfg.epochs < 1 || !(cfg.lr > 0.0))
    throw std::invalid_argument("train_cnn: bad config");

  CnnSpec spec_reg = spec;
  spec_reg.l1 = cfg.l1;
  spec_reg.l2 = cfg.l2;
  const Dims input{images[split.train[0]].ni, images[split.train[0]].nj, 1};
  auto model = std::make_unique<CnnModel>(spec_reg, input, derive_seed(cfg.seed, 0));

  std::unique_ptr<Optimizer> opt;
  if (cfg.optimizer == OptimizerKind::Adam) {
    opt = std::make_unique<Adam>(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  } else {
    opt = std::make_unique<Sgd>(SgdConfig{cfg.lr});
  }

  const auto params = model->params();
  const auto grads = model->grads();
  const auto weight_idx = model->weight_param_indices();

  auto evaluate = [&](const std::vector<size_t>& idx, double* loss_out, double* acc_out) {
    double loss = 0.0;
    size_t correct = 0;
    for (size_t i : idx) {
      const auto input_v = image_to_input(images[i]);
      const auto probs = model->forward(input_v, false);
      loss += sparse_ce_loss(probs, code_of(images[i].label));
      size_t best = 0;
      for (size_t c = 1; c < probs.size(); ++c) {
        if (probs[c] > probs[best]) best = c;
      }
      if (static_cast<int>(best) == code_of(images[i].label)) ++correct;
    }
    *loss_out = loss / static_cast<double>(idx.size());
    *acc_out = static_cast<double>(correct) / static_cast<double>(idx.size());
  };

  TrainResult result;
  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  std::vector<size_t> order = split.train;
  double best_val_loss = std::numeric_limits<double>::infinity();
  size_t epochs_without_improvement = 0;

  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(start + cfg.batch_size, order.size());
      model->zero_grads();
      std::vector<double> grad_probs;
      for (size_t b = start; b < end; ++b) {
        const auto input_v = image_to_input(images[order[b]]);
        const auto probs = model->forward(input_v, true);
        sparse_ce_loss(probs, code_of(images[order[b]].label), &grad_probs);
        model->backward(grad_probs);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto* g : grads) {
        for (auto& v : *g) v *= inv;
      }
      for (size_t wi : weight_idx) {
        l1l2_add_subgradient(*params[wi], cfg.l1, cfg.l2, *grads[wi]);
      }
      opt->step(params, grads);
    }

    std::vector<const std::vector<double>*> weight_tensors;
    for (size_t wi : weight_idx) weight_tensors.push_back(params[wi]);
    const double penalty = l1l2_penalty(weight_tensors, cfg.l1, cfg.l2);

    double train_loss, train_acc, val_loss, val_acc;
    evaluate(split.train, &train_loss, &train_acc);
    evaluate(split.test, &val_loss, &val_acc);
    result.curves.train_loss.push_back(train_loss + penalty);
    result.curves.train_acc.push_back(train_acc);
    result.curves.val_loss.push_back(val_loss);
    result.curves.val_acc.push_back(val_acc);

    if (cfg.early_stopping) {
      if (val_loss < best_val_loss) {
        best_val_loss = val_loss;
        epochs_without_improvement = 0;
      } else if (++epochs_without_improvement >= cfg.early_stopping_patience) {
        break;
      }
    }
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint: magic, spec JSON block, per-tensor sizes, little-endian doubles.

inline void save_checkpoint(CnnModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write("TIMG", 4);
  nlohmann::json meta = {{"spec", model.spec().to_json()},
                         {"input", {model.input_dims().h, model.input_dims().w, model.input_dims().c}}};
  const std::string meta_str = meta.dump();
  const uint64_t meta_len = meta_str.size();
  out.write(reinterpret_cast<const char*>(&meta_len), 8);
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  const auto params = model.params();
  const uint64_t n_tensors = params.size();
  out.write(reinterpret_cast<const char*>(&n_tensors), 8);
  for (const auto* p : params) {
    const uint64_t sz = p->size();
    out.write(reinterpret_cast<const char*>(&sz), 8);
    out.write(reinterpret_cast<const char*>(p->data()), static_cast<std::streamsize>(sz * 8));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline std::unique_ptr<CnnModel> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "TIMG")
    throw std::runtime_error("bad checkpoint magic: " + path);
  uint64_t meta_len = 0;
  in.read(reinterpret_cast<char*>(&meta_len), 8);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  const auto meta = nlohmann::json::parse(meta_str);
  const auto spec = CnnSpec::from_json(meta.at("spec"));
  const auto dims = meta.at("input");
  const Dims input{dims[0].get<size_t>(), dims[1].get<size_t>(), dims[2].get<size_t>()};
  auto model = std::make_unique<CnnModel>(spec, input, 0);
  uint64_t n_tensors = 0;
  in.read(reinterpret_cast<char*>(&n_tensors), 8);
  auto params = model->params();
  if (n_tensors != params.size()) throw std::runtime_error("checkpoint tensor count mismatch");
  for (auto* p : params) {
    uint64_t sz = 0;
    in.read(reinterpret_cast<char*>(&sz), 8);
    if (sz != p->size()) throw std::runtime_error("checkpoint tensor size mismatch");
    in.read(reinterpret_cast<char*>(p->data()), static_cast<std::streamsize>(sz * 8));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return model;
}

}  // namespace nn
}  // namespace tripimg
