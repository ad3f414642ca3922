#pragma once

#include <map>

#include "bottlenet/bottleneck.hpp"
#include "bottlenet/checkpoint.hpp"
#include "bottlenet/models.hpp"
#include "bottlenet/train.hpp"

namespace bottlenet::fixture {

inline Dataset small_images(std::size_t count, std::uint64_t seed) {
  GeneratorConfig g;
  g.count = count;
  g.height = 12;
  g.width = 12;
  g.seed = seed;
  return generate_dataset(g);
}

/// One bottlenecked desk-scale model per partition point, keyed by j, each
/// briefly trained so BatchNorm statistics are not trivial.
inline std::map<std::uint16_t, NetworkGraph> split_models(std::uint64_t seed = 1) {
  const Dataset d = small_images(48, seed);
  DeskNetConfig net;
  net.widths = {4, 6, 6, 8, 8, 8};
  const NetworkGraph base = desk_net(d.sample_shape(), net, seed);
  std::map<std::uint16_t, NetworkGraph> out;
  for (std::size_t loc = 0; loc < base.partition_points().size(); ++loc) {
    BottleneckConfig cfg;
    cfg.location = loc;
    cfg.spatial = 2;
    cfg.channels = 2;
    cfg.quality = 30;
    NetworkGraph g = insert_bottleneck(base, cfg, {derive_seed(seed, {loc}), false});
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 16;
    tc.seed = derive_seed(seed, {loc, 1});
    train(g, d, tc);
    out.emplace(static_cast<std::uint16_t>(loc + 1), std::move(g));
  }
  return out;
}

/// Server-side copies rebuilt from checkpoint bytes.
inline std::map<std::uint16_t, NetworkGraph> via_checkpoint(const std::map<std::uint16_t, NetworkGraph>& models) {
  std::map<std::uint16_t, NetworkGraph> out;
  for (const auto& [j, g] : models) out.emplace(j, load_checkpoint_bytes(save_checkpoint_bytes(g)).graph);
  return out;
}

inline std::vector<float> monolithic_logits(NetworkGraph& g, const Tensor& x) {
  const Tensor y = g.forward(x, Mode::eval);
  std::vector<float> out;
  for (double v : y.values()) out.push_back(static_cast<float>(v));
  return out;
}

inline Tensor random_input(Rng& rng, const Shape& sample) {
  Tensor x(sample);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.0, 1.0);
  return x;
}

}  // namespace bottlenet::fixture
