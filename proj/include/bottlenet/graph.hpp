#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bottlenet/codec_layer.hpp"
#include "bottlenet/layers.hpp"
#include "bottlenet/rng.hpp"
#include "bottlenet/tensor.hpp"

namespace bottlenet {

/// (location j, s, c', filter dims, n, q) for one bottleneck unit.
struct BottleneckConfig {
  std::size_t location = 0;  // index into the base graph's partition points
  std::size_t spatial = 1;   // s
  std::size_t channels = 1;  // c'
  std::size_t filter_h = 0;  // 0 selects the default s + 1
  std::size_t filter_w = 0;
  unsigned bits = 8;
  unsigned quality = 20;

  std::size_t effective_filter_h() const { return filter_h == 0 ? spatial + 1 : filter_h; }
  std::size_t effective_filter_w() const { return filter_w == 0 ? spatial + 1 : filter_w; }

  friend bool operator==(const BottleneckConfig&, const BottleneckConfig&) = default;
};

/// Where an inserted bottleneck unit sits inside a graph.
struct BottleneckPlacement {
  BottleneckConfig config;
  std::size_t first_layer = 0;  // first unit layer
  std::size_t codec_layer = 0;  // mobile side ends with this node's encoder
  std::size_t last_layer = 0;   // last unit layer

  friend bool operator==(const BottleneckPlacement&, const BottleneckPlacement&) = default;
};

class MissingForwardError : public std::logic_error {
 public:
  MissingForwardError() : std::logic_error("backward called without a recorded forward pass") {}
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  explicit NonFiniteGradientError(std::size_t param)
      : std::runtime_error("non-finite gradient in parameter tensor " + std::to_string(param) + "; step aborted"),
        param_(param) {}
  std::size_t param() const { return param_; }

 private:
  std::size_t param_;
};

/// One gradient tensor per parameter tensor, in NetworkGraph::parameters() order.
using Gradients = std::vector<Tensor>;

inline std::unique_ptr<Layer> make_layer(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::conv2d: return std::make_unique<Conv2d>(spec, in);
    case LayerKind::conv2d_transpose: return std::make_unique<Conv2dTranspose>(spec, in);
    case LayerKind::relu: return std::make_unique<Relu>(spec);
    case LayerKind::batchnorm: return std::make_unique<BatchNorm>(spec, in);
    case LayerKind::avgpool_global: return std::make_unique<AvgPoolGlobal>(spec);
    case LayerKind::dense: return std::make_unique<Dense>(spec, in);
    case LayerKind::softmax_xent_head: return std::make_unique<SoftmaxXentHead>(spec);
    case LayerKind::codec: return std::make_unique<CodecLayer>(spec, in);
  }
  throw std::invalid_argument("unknown layer kind");
}

/// Ordered layer stack with designated partition points (layer indices after
/// which execution may move from the mobile side to the cloud side).
class NetworkGraph {
 public:
  NetworkGraph() = default;

  /// `input` is the per-sample shape; its batch dimension is ignored.
  NetworkGraph(Shape input, const std::vector<LayerSpec>& specs, std::vector<std::size_t> partition_points,
               std::uint64_t seed = 0)
      : input_(input), partition_points_(std::move(partition_points)) {
    input_.n = 1;
    Shape s = input_;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      try {
        auto layer = make_layer(specs[i], s);
        s = layer->output_shape(s);
        layers_.push_back(std::move(layer));
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(i) + " (" + std::string(to_string(specs[i].kind)) + "): " + e.what());
      }
    }
    for (std::size_t i = 0; i < partition_points_.size(); ++i) {
      if (partition_points_[i] >= layers_.size() || (i > 0 && partition_points_[i] <= partition_points_[i - 1])) {
        throw std::invalid_argument("partition points must be strictly increasing layer indices < " +
                                    std::to_string(layers_.size()));
      }
    }
    initialize(seed);
  }

  NetworkGraph(const NetworkGraph& o)
      : input_(o.input_), partition_points_(o.partition_points_), bottleneck_(o.bottleneck_) {
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  NetworkGraph& operator=(const NetworkGraph& o) {
    if (this != &o) {
      NetworkGraph tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  NetworkGraph(NetworkGraph&&) noexcept = default;
  NetworkGraph& operator=(NetworkGraph&&) noexcept = default;

  /// He-uniform weights from per-layer streams derived from `seed`.
  void initialize(std::uint64_t seed) {
    for (std::size_t i = 0; i < layers_.size(); ++i) initialize_layer(i, derive_seed(seed, {i}));
  }
  void initialize_layer(std::size_t i, std::uint64_t layer_seed) {
    Rng rng(layer_seed);
    layers_.at(i)->init(rng);
  }

  const Shape& input_shape() const { return input_; }
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) out.push_back(l->spec());
    return out;
  }

  /// Per-sample shape after layer i.
  Shape shape_after(std::size_t i) const {
    Shape s = input_;
    for (std::size_t k = 0; k <= i; ++k) s = layers_.at(k)->output_shape(s);
    return s;
  }
  Shape output_shape() const { return layers_.empty() ? input_ : shape_after(layers_.size() - 1); }

  const std::vector<std::size_t>& partition_points() const { return partition_points_; }
  void set_partition_points(std::vector<std::size_t> p) { partition_points_ = std::move(p); }

  const std::optional<BottleneckPlacement>& bottleneck() const { return bottleneck_; }
  void set_bottleneck(std::optional<BottleneckPlacement> b) { bottleneck_ = std::move(b); }

  CodecLayer* codec_layer() {
    if (!bottleneck_) return nullptr;
    return dynamic_cast<CodecLayer*>(layers_.at(bottleneck_->codec_layer).get());
  }
  const CodecLayer* codec_layer() const { return const_cast<NetworkGraph*>(this)->codec_layer(); }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
      for (auto* p : l->params()) out.push_back(p);
    }
    return out;
  }
  std::vector<const Tensor*> parameters() const {
    auto ps = const_cast<NetworkGraph*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }
  std::vector<Tensor*> buffers() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
      for (auto* p : l->buffers()) out.push_back(p);
    }
    return out;
  }

  /// Runs layers [0, upto] (all layers by default) and records the
  /// intermediates needed by backward().
  Tensor forward(const Tensor& x, Mode mode, std::optional<std::size_t> upto = std::nullopt) {
    const std::size_t last = upto.value_or(layers_.size() - 1);
    if (layers_.empty() || last >= layers_.size()) throw std::out_of_range("forward: upto beyond last layer");
    check_input(x.shape());
    trace_.acts.clear();
    trace_.valid = false;
    trace_.acts.push_back(x);
    for (std::size_t i = 0; i <= last; ++i) trace_.acts.push_back(apply(i, trace_.acts.back(), mode));
    trace_.mode = mode;
    trace_.last = last;
    trace_.valid = true;
    return trace_.acts.back();
  }

  /// Runs layers [first, last] without recording (split execution).
  Tensor run(const Tensor& x, std::size_t first, std::size_t last, Mode mode = Mode::eval) {
    if (last >= layers_.size() || first > last + 1) throw std::out_of_range("run: bad layer range");
    if (first == 0) check_input(x.shape());
    Tensor cur = x;
    for (std::size_t i = first; i <= last; ++i) cur = apply(i, cur, mode);
    return cur;
  }

  /// Gradients of every parameter for the recorded forward pass, given the
  /// gradient of the loss w.r.t. the recorded output. Layers after the
  /// recorded range get zero gradients.
  Gradients backward(const Tensor& loss_grad) const {
    if (!trace_.valid) throw MissingForwardError();
    if (loss_grad.shape() != trace_.acts.back().shape()) {
      throw ShapeError("backward: loss gradient shape " + loss_grad.shape().str() + " does not match output " +
                       trace_.acts.back().shape().str());
    }
    Gradients grads;
    std::vector<std::size_t> first_param(layers_.size() + 1, 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      first_param[i] = grads.size();
      for (const auto* p : layers_[i]->params()) grads.emplace_back(p->shape());
    }
    first_param[layers_.size()] = grads.size();
    Tensor g = loss_grad;
    for (std::size_t i = trace_.last + 1; i-- > 0;) {
      std::span<Tensor> pg(grads.data() + first_param[i], first_param[i + 1] - first_param[i]);
      g = layers_[i]->backward(trace_.acts[i], trace_.acts[i + 1], g, trace_.mode, pg);
    }
    return grads;
  }

  /// Gradient w.r.t. the input of the recorded forward pass.
  Tensor input_gradient(const Tensor& loss_grad) const {
    if (!trace_.valid) throw MissingForwardError();
    Tensor g = loss_grad;
    std::vector<Tensor> scratch;
    for (std::size_t i = trace_.last + 1; i-- > 0;) {
      scratch.clear();
      for (const auto* p : layers_[i]->params()) scratch.emplace_back(p->shape());
      g = layers_[i]->backward(trace_.acts[i], trace_.acts[i + 1], g, trace_.mode, scratch);
    }
    return g;
  }

  void clear_trace() {
    trace_.acts.clear();
    trace_.valid = false;
  }

  /// Raw layer insertion; used by bottleneck insertion. Partition points and
  /// placement metadata are the caller's responsibility.
  void insert_layers(std::size_t at, std::vector<std::unique_ptr<Layer>> layers) {
    layers_.insert(layers_.begin() + static_cast<std::ptrdiff_t>(at), std::make_move_iterator(layers.begin()),
                   std::make_move_iterator(layers.end()));
    clear_trace();
  }

 private:
  void check_input(const Shape& s) const {
    if (s.h != input_.h || s.w != input_.w || s.c != input_.c) {
      throw ShapeError("layer 0: input shape " + s.str() + " does not match declared input " + input_.str());
    }
  }

  Tensor apply(std::size_t i, const Tensor& x, Mode mode) {
    try {
      return layers_[i]->forward(x, mode);
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" + std::string(to_string(layers_[i]->kind())) + "): " +
                       e.what());
    }
  }

  struct Trace {
    std::vector<Tensor> acts;  // acts[0] = input, acts[i + 1] = output of layer i
    Mode mode = Mode::eval;
    std::size_t last = 0;
    bool valid = false;
  };

  Shape input_{};
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::size_t> partition_points_;
  std::optional<BottleneckPlacement> bottleneck_;
  Trace trace_;
};

/// p <- p - lr * g for every pair. Leaves all parameters untouched if any
/// gradient is non-finite.
inline void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter/gradient count mismatch");
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) throw ShapeError("sgd_step: shape mismatch at tensor " + std::to_string(i));
    if (!grads[i].all_finite()) throw NonFiniteGradientError(i);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->data();
    const double* g = grads[i].data();
    for (std::size_t k = 0; k < grads[i].size(); ++k) p[k] -= lr * g[k];
  }
}

}  // namespace bottlenet
