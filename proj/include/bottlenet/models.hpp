#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bottlenet/graph.hpp"

namespace bottlenet {

struct DeskNetConfig {
  std::size_t classes = 4;
  std::array<std::size_t, 6> widths = {8, 16, 16, 16, 16, 16};
  std::array<std::size_t, 6> strides = {1, 2, 1, 2, 1, 1};
};

/// Six conv blocks (3x3 conv, BN, ReLU), global average pool, dense head.
/// Partition points sit after blocks 1-4.
inline std::vector<LayerSpec> desk_net_layers(const DeskNetConfig& cfg) {
  std::vector<LayerSpec> layers;
  for (std::size_t b = 0; b < cfg.widths.size(); ++b) {
    layers.push_back(LayerSpec::conv(cfg.widths[b], 3, cfg.strides[b]));
    layers.push_back(LayerSpec::of(LayerKind::batchnorm));
    layers.push_back(LayerSpec::of(LayerKind::relu));
  }
  layers.push_back(LayerSpec::of(LayerKind::avgpool_global));
  layers.push_back(LayerSpec::dense(cfg.classes));
  layers.push_back(LayerSpec::of(LayerKind::softmax_xent_head));
  return layers;
}

inline std::vector<std::size_t> desk_net_partition_points() { return {2, 5, 8, 11}; }

inline NetworkGraph desk_net(Shape input, const DeskNetConfig& cfg, std::uint64_t seed) {
  return NetworkGraph(input, desk_net_layers(cfg), desk_net_partition_points(), seed);
}

}  // namespace bottlenet
