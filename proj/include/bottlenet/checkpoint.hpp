#pragma once

// Graph description (JSON) and model checkpoints.
//
// Checkpoint layout (little-endian): "BNMD", u32 version, u32 header length,
// UTF-8 JSON header, then every layer's parameter tensors followed by its
// buffers as raw f64, in layer order.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bottlenet/bytes.hpp"
#include "bottlenet/dataset.hpp"
#include "bottlenet/graph.hpp"

namespace bottlenet {

using json = nlohmann::json;

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline json layer_to_json(const LayerSpec& s) {
  json j;
  j["kind"] = std::string(to_string(s.kind));
  switch (s.kind) {
    case LayerKind::conv2d:
      j["filters"] = s.filters;
      j["kernel"] = {s.kernel_h, s.kernel_w};
      j["stride"] = s.stride;
      j["padding"] = s.padding == Padding::same ? "same" : "valid";
      break;
    case LayerKind::conv2d_transpose:
      j["filters"] = s.filters;
      j["kernel"] = {s.kernel_h, s.kernel_w};
      j["stride"] = s.stride;
      j["output"] = {s.out_h, s.out_w};
      break;
    case LayerKind::dense: j["units"] = s.filters; break;
    case LayerKind::codec:
      j["bits"] = s.codec.bits;
      j["quality"] = s.codec.quality;
      j["enabled"] = s.codec_enabled;
      j["restore"] = {s.out_h, s.out_w};
      break;
    default: break;
  }
  if (s.bottleneck) j["bottleneck"] = true;
  return j;
}

inline LayerSpec layer_from_json(const json& j) {
  LayerSpec s;
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  auto kernel = [&] {
    const auto& k = j.at("kernel");
    if (k.is_array()) {
      s.kernel_h = k.at(0).get<std::size_t>();
      s.kernel_w = k.at(1).get<std::size_t>();
    } else {
      s.kernel_h = s.kernel_w = k.get<std::size_t>();
    }
  };
  switch (s.kind) {
    case LayerKind::conv2d: {
      s.filters = j.at("filters").get<std::size_t>();
      kernel();
      s.stride = j.value("stride", std::size_t{1});
      const std::string pad = j.value("padding", std::string("same"));
      if (pad != "same" && pad != "valid") throw std::invalid_argument("padding must be same|valid, got " + pad);
      s.padding = pad == "same" ? Padding::same : Padding::valid;
      break;
    }
    case LayerKind::conv2d_transpose:
      s.filters = j.at("filters").get<std::size_t>();
      kernel();
      s.stride = j.value("stride", std::size_t{1});
      s.out_h = j.at("output").at(0).get<std::size_t>();
      s.out_w = j.at("output").at(1).get<std::size_t>();
      break;
    case LayerKind::dense: s.filters = j.at("units").get<std::size_t>(); break;
    case LayerKind::codec:
      s.codec.bits = j.value("bits", 8u);
      s.codec.quality = j.value("quality", 20u);
      s.codec_enabled = j.value("enabled", true);
      s.out_h = j.at("restore").at(0).get<std::size_t>();
      s.out_w = j.at("restore").at(1).get<std::size_t>();
      break;
    default: break;
  }
  s.bottleneck = j.value("bottleneck", false);
  return s;
}

inline json bottleneck_config_to_json(const BottleneckConfig& c) {
  return {{"location", c.location}, {"s", c.spatial},  {"c_prime", c.channels}, {"filter", {c.effective_filter_h(), c.effective_filter_w()}},
          {"bits", c.bits},         {"quality", c.quality}};
}

inline BottleneckConfig bottleneck_config_from_json(const json& j) {
  BottleneckConfig c;
  c.location = j.at("location").get<std::size_t>();
  c.spatial = j.at("s").get<std::size_t>();
  c.channels = j.at("c_prime").get<std::size_t>();
  if (j.contains("filter")) {
    c.filter_h = j["filter"].at(0).get<std::size_t>();
    c.filter_w = j["filter"].at(1).get<std::size_t>();
  }
  c.bits = j.value("bits", 8u);
  c.quality = j.value("quality", 20u);
  return c;
}

/// Graph structure as JSON: {input: [h,w,c], layers: [...], partition_points: [...], bottleneck?}.
inline json graph_to_json(const NetworkGraph& g) {
  json j;
  const Shape in = g.input_shape();
  j["input"] = {in.h, in.w, in.c};
  j["layers"] = json::array();
  for (const auto& s : g.specs()) j["layers"].push_back(layer_to_json(s));
  j["partition_points"] = g.partition_points();
  if (const auto& b = g.bottleneck()) {
    j["bottleneck"] = {{"config", bottleneck_config_to_json(b->config)},
                       {"first_layer", b->first_layer},
                       {"codec_layer", b->codec_layer},
                       {"last_layer", b->last_layer}};
  }
  return j;
}

/// Builds (and seeds) a graph from its JSON description.
inline NetworkGraph graph_from_json(const json& j, std::uint64_t seed = 0) {
  const auto& in = j.at("input");
  Shape shape{1, in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
  std::vector<LayerSpec> specs;
  for (const auto& l : j.at("layers")) specs.push_back(layer_from_json(l));
  NetworkGraph g(shape, specs, j.value("partition_points", std::vector<std::size_t>{}), seed);
  if (j.contains("bottleneck") && !j["bottleneck"].is_null()) {
    const auto& b = j["bottleneck"];
    BottleneckPlacement p{bottleneck_config_from_json(b.at("config")), b.at("first_layer").get<std::size_t>(),
                          b.at("codec_layer").get<std::size_t>(), b.at("last_layer").get<std::size_t>()};
    if (p.codec_layer >= g.size() || g.layer(p.codec_layer).kind() != LayerKind::codec) {
      throw std::invalid_argument("bottleneck codec_layer does not point at a codec node");
    }
    g.set_bottleneck(p);
  }
  return g;
}

inline std::vector<std::uint8_t> save_checkpoint_bytes(const NetworkGraph& graph, const json& meta = json::object()) {
  json header = graph_to_json(graph);
  header["meta"] = meta;
  const std::string text = header.dump();
  ByteWriter w;
  w.text("BNMD");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.text(text);
  NetworkGraph& g = const_cast<NetworkGraph&>(graph);
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (auto* t : g.layer(i).params()) {
      for (double v : t->storage()) w.f64(v);
    }
    for (auto* t : g.layer(i).buffers()) {
      for (double v : t->storage()) w.f64(v);
    }
  }
  return w.take();
}

struct Checkpoint {
  NetworkGraph graph;
  json meta;
};

inline Checkpoint load_checkpoint_bytes(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("BNMD");
  const std::size_t ver_at = r.pos();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), ver_at);
  const std::uint32_t len = r.u32();
  const std::size_t json_at = r.pos();
  json header;
  try {
    header = json::parse(r.text(len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what(), json_at);
  }
  Checkpoint ck;
  try {
    ck.graph = graph_from_json(header);
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint graph: ") + e.what(), json_at);
  }
  ck.meta = header.value("meta", json::object());
  for (std::size_t i = 0; i < ck.graph.size(); ++i) {
    auto tensors = ck.graph.layer(i).params();
    auto bufs = ck.graph.layer(i).buffers();
    tensors.insert(tensors.end(), bufs.begin(), bufs.end());
    for (auto* t : tensors) {
      for (auto& v : t->storage()) v = r.f64();
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after parameter blobs", r.pos());
  return ck;
}

inline void save_checkpoint(const NetworkGraph& g, const std::string& path, const json& meta = json::object()) {
  write_file(path, save_checkpoint_bytes(g, meta));
}

inline Checkpoint load_checkpoint(const std::string& path) { return load_checkpoint_bytes(read_file(path)); }

}  // namespace bottlenet
