#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "bottlenet/codec_layer.hpp"
#include "bottlenet/dataset.hpp"
#include "bottlenet/graph.hpp"
#include "bottlenet/train.hpp"

namespace bottlenet {

class BottleneckConfigError : public std::invalid_argument {
 public:
  BottleneckConfigError(const std::string& constraint, const std::string& detail)
      : std::invalid_argument("bottleneck constraint violated [" + constraint + "]: " + detail), constraint_(constraint) {}
  const std::string& constraint() const { return constraint_; }

 private:
  std::string constraint_;
};

/// Transmitted per-sample shape (1, ceil(h/s), ceil(w/s), c') for a feature (h, w, c).
inline Shape transmitted_shape(const Shape& feature, const BottleneckConfig& cfg) {
  return {1, (feature.h + cfg.spatial - 1) / cfg.spatial, (feature.w + cfg.spatial - 1) / cfg.spatial, cfg.channels};
}

inline void validate_bottleneck(const NetworkGraph& base, const BottleneckConfig& cfg) {
  if (cfg.location >= base.partition_points().size()) {
    throw BottleneckConfigError("location", "location " + std::to_string(cfg.location) + " but graph has " +
                                                std::to_string(base.partition_points().size()) + " partition points");
  }
  const Shape f = base.shape_after(base.partition_points()[cfg.location]);
  if (cfg.channels < 1) throw BottleneckConfigError("c' >= 1", "c' = 0");
  if (cfg.channels > f.c) {
    throw BottleneckConfigError("c' <= c", "c' = " + std::to_string(cfg.channels) + " exceeds c = " + std::to_string(f.c));
  }
  if (cfg.spatial < 1) throw BottleneckConfigError("s >= 1", "s = 0");
  if (cfg.spatial > 1 && (cfg.effective_filter_h() <= cfg.spatial || cfg.effective_filter_w() <= cfg.spatial)) {
    throw BottleneckConfigError("w_f > s, h_f > s", "filter " + std::to_string(cfg.effective_filter_h()) + "x" +
                                                        std::to_string(cfg.effective_filter_w()) + " with s = " +
                                                        std::to_string(cfg.spatial));
  }
  codec::CodecParams p{cfg.bits, cfg.quality};
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw BottleneckConfigError("codec params", e.what());
  }
}

struct InsertOptions {
  std::uint64_t seed = 0;
  /// Start the 1x1 reduce/restore convs as identity maps (for s = 1, c' = c).
  bool identity_init = false;
};

/// New graph with a bottleneck unit after the base graph's partition point
/// `cfg.location`:
///   channel reduce (1x1 conv c->c', BN, ReLU)
///   spatial reduce (fh x fw conv stride s, BN, ReLU)       [s > 1]
///   codec node (mobile side ends after its encoder)
///   spatial restore (transposed conv stride s, BN, ReLU)   [s > 1]
///   channel restore (1x1 conv c'->c, BN, ReLU)
/// Base layers keep their parameters; unit layers are freshly initialized.
inline NetworkGraph insert_bottleneck(const NetworkGraph& base, const BottleneckConfig& cfg,
                                      const InsertOptions& opts = {}) {
  validate_bottleneck(base, cfg);
  const std::size_t after = base.partition_points()[cfg.location];
  const Shape f = base.shape_after(after);

  std::vector<LayerSpec> unit;
  auto mark = [](LayerSpec s) {
    s.bottleneck = true;
    return s;
  };
  auto block = [&](LayerSpec conv) {
    unit.push_back(mark(conv));
    unit.push_back(mark(LayerSpec::of(LayerKind::batchnorm)));
    unit.push_back(mark(LayerSpec::of(LayerKind::relu)));
  };
  block(LayerSpec::conv(cfg.channels, 1));
  if (cfg.spatial > 1) {
    LayerSpec sr = LayerSpec::conv(cfg.channels, 1, cfg.spatial);
    sr.kernel_h = cfg.effective_filter_h();
    sr.kernel_w = cfg.effective_filter_w();
    block(sr);
  }
  const std::size_t codec_offset = unit.size();
  LayerSpec cs = LayerSpec::of(LayerKind::codec);
  cs.codec = {cfg.bits, cfg.quality};
  cs.out_h = f.h;
  cs.out_w = f.w;
  unit.push_back(mark(cs));
  if (cfg.spatial > 1) {
    LayerSpec rs = LayerSpec::conv_transpose(cfg.channels, 1, cfg.spatial, f.h, f.w);
    rs.kernel_h = cfg.effective_filter_h();
    rs.kernel_w = cfg.effective_filter_w();
    block(rs);
  }
  block(LayerSpec::conv(f.c, 1));

  NetworkGraph g = base;
  std::vector<std::unique_ptr<Layer>> layers;
  Shape s = f;
  for (const auto& spec : unit) {
    auto l = make_layer(spec, s);
    s = l->output_shape(s);
    layers.push_back(std::move(l));
  }
  g.insert_layers(after + 1, std::move(layers));
  for (std::size_t k = 0; k < unit.size(); ++k) {
    g.initialize_layer(after + 1 + k, derive_seed(opts.seed, {0xb077, cfg.location, cfg.spatial, cfg.channels, k}));
  }
  if (opts.identity_init) {
    if (auto* c = dynamic_cast<Conv2d*>(&g.layer(after + 1)); c && c->spec().kernel_h == 1) c->init_identity();
    if (auto* c = dynamic_cast<Conv2d*>(&g.layer(after + unit.size() - 2)); c && c->spec().kernel_h == 1) {
      c->init_identity();
    }
  }
  BottleneckConfig stored = cfg;
  stored.filter_h = cfg.effective_filter_h();
  stored.filter_w = cfg.effective_filter_w();
  BottleneckPlacement placement{stored, after + 1, after + 1 + codec_offset, after + unit.size()};
  g.set_bottleneck(placement);
  g.set_partition_points({placement.codec_layer});
  return g;
}

enum class TrainingMode { aware, naive };

struct BottleneckModel {
  NetworkGraph graph;
  double accuracy = 0.0;              // held-out, codec active
  double accuracy_without_codec = 0;  // held-out, codec bypassed
  std::vector<double> epoch_loss;
};

/// aware: codec active during training (straight-through gradients).
/// naive: codec bypassed during training, switched on for evaluation only.
inline BottleneckModel train_bottleneck_model(const NetworkGraph& base, const BottleneckConfig& cfg,
                                              const Dataset& train_set, const Dataset& test_set, TrainingMode mode,
                                              TrainConfig tc) {
  BottleneckModel m{insert_bottleneck(base, cfg, {tc.seed}), 0.0, 0.0, {}};
  CodecLayer* codec = m.graph.codec_layer();
  codec->set_enabled(mode == TrainingMode::aware);
  auto r = train(m.graph, train_set, test_set, tc);
  m.epoch_loss = std::move(r.epoch_loss);
  codec->set_enabled(false);
  m.accuracy_without_codec = evaluate(m.graph, test_set, tc.crop_h, tc.crop_w);
  codec->set_enabled(true);
  m.accuracy = mode == TrainingMode::aware ? r.accuracy : evaluate(m.graph, test_set, tc.crop_h, tc.crop_w);
  return m;
}

/// Wire size of the encoded feature for each listed sample (eval mode).
inline std::vector<std::size_t> encoded_sizes(NetworkGraph& g, const Dataset& data, std::size_t max_samples) {
  const auto& b = g.bottleneck();
  if (!b) throw std::invalid_argument("encoded_sizes: graph has no bottleneck unit");
  const CodecLayer* codec = g.codec_layer();
  std::vector<std::size_t> sizes;
  const std::size_t n = std::min(max_samples, data.count());
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor feat = g.run(data.input(i), 0, b->codec_layer - 1, Mode::eval);
    sizes.push_back(codec->encode_sample(feat, 0).wire_size());
  }
  return sizes;
}

}  // namespace bottlenet
