#pragma once

// Wire protocol between the mobile client and the cloud server.
//
// Frame: "BNRT", u8 version, u8 msg_type, u32 body_len (LE), body.
//   INFER_REQ    u16 partition_id, EncodedFeature bytes
//   INFER_RESP   u16 class_count, f32 logits[class_count]
//   LOAD_QUERY   (empty)
//   LOAD_REPORT  f32 K_cloud, u32 queue_depth
//   ERROR        u16 code, UTF-8 message

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "bottlenet/bytes.hpp"

namespace bottlenet::proto {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 10;
inline constexpr std::uint32_t kMaxBody = 64u << 20;

enum class MsgType : std::uint8_t { infer_req = 1, infer_resp = 2, load_query = 3, load_report = 4, error = 5 };

enum ErrorCode : std::uint16_t {
  bad_request = 400,
  unknown_partition = 404,
  internal = 500,
};

struct FrameHeader {
  std::uint8_t type = 0;  // not yet checked against MsgType
  std::uint32_t body_len = 0;
};

struct Frame {
  MsgType type{};
  std::vector<std::uint8_t> body;

  bool operator==(const Frame&) const = default;
};

inline bool known_type(std::uint8_t t) { return t >= 1 && t <= 5; }

/// Validates magic, version and length. The type byte is left to the caller
/// so a server can skip the body of an unknown type and keep the connection.
inline FrameHeader parse_header(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes.first(std::min(bytes.size(), kHeaderSize)));
  r.expect_magic("BNRT");
  const std::uint8_t version = r.u8();
  if (version != kVersion) throw FormatError("unsupported protocol version " + std::to_string(version), 4);
  const std::uint8_t type = r.u8();
  const std::uint32_t len = r.u32();
  if (len > kMaxBody) throw FormatError("body length " + std::to_string(len) + " exceeds limit", 6);
  return {type, len};
}

inline std::vector<std::uint8_t> serialize(const Frame& f) {
  if (f.body.size() > kMaxBody) throw std::length_error("frame body exceeds limit");
  ByteWriter w;
  w.text("BNRT");
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(f.type));
  w.u32(static_cast<std::uint32_t>(f.body.size()));
  w.bytes(f.body);
  return w.take();
}

/// Parses exactly one frame occupying all of `bytes`.
inline Frame parse_frame(std::span<const std::uint8_t> bytes) {
  const FrameHeader h = parse_header(bytes);
  if (bytes.size() != kHeaderSize + h.body_len) {
    throw FormatError("frame is " + std::to_string(bytes.size()) + " bytes, header announces " +
                          std::to_string(kHeaderSize + h.body_len),
                      std::min(bytes.size(), kHeaderSize));
  }
  if (!known_type(h.type)) throw FormatError("unknown message type " + std::to_string(h.type), 5);
  auto body = bytes.subspan(kHeaderSize);
  return {static_cast<MsgType>(h.type), {body.begin(), body.end()}};
}

struct InferRequest {
  std::uint16_t partition_id = 0;
  std::vector<std::uint8_t> feature;  // serialized EncodedFeature
  bool operator==(const InferRequest&) const = default;
};

struct InferResponse {
  std::vector<float> logits;
  bool operator==(const InferResponse&) const = default;
};

struct LoadQuery {
  bool operator==(const LoadQuery&) const = default;
};

struct LoadReport {
  float k_cloud = 1.0f;
  std::uint32_t queue_depth = 0;
  bool operator==(const LoadReport&) const = default;
};

struct ErrorMessage {
  std::uint16_t code = 0;
  std::string message;
  bool operator==(const ErrorMessage&) const = default;
};

using Message = std::variant<InferRequest, InferResponse, LoadQuery, LoadReport, ErrorMessage>;

inline Frame to_frame(const Message& m) {
  ByteWriter w;
  MsgType type{};
  std::visit(
      [&](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, InferRequest>) {
          type = MsgType::infer_req;
          w.u16(msg.partition_id);
          w.bytes(msg.feature);
        } else if constexpr (std::is_same_v<T, InferResponse>) {
          type = MsgType::infer_resp;
          if (msg.logits.size() > 0xffff) throw std::length_error("too many logits for one response");
          w.u16(static_cast<std::uint16_t>(msg.logits.size()));
          for (float v : msg.logits) w.f32(v);
        } else if constexpr (std::is_same_v<T, LoadQuery>) {
          type = MsgType::load_query;
        } else if constexpr (std::is_same_v<T, LoadReport>) {
          type = MsgType::load_report;
          w.f32(msg.k_cloud);
          w.u32(msg.queue_depth);
        } else {
          type = MsgType::error;
          w.u16(msg.code);
          w.text(msg.message);
        }
      },
      m);
  return {type, w.take()};
}

inline Message from_frame(const Frame& f) {
  ByteReader r(f.body);
  auto done = [&] {
    if (r.remaining() != 0) throw FormatError("trailing bytes in message body", kHeaderSize + r.pos());
  };
  switch (f.type) {
    case MsgType::infer_req: {
      InferRequest m;
      m.partition_id = r.u16();
      auto rest = r.rest();
      m.feature.assign(rest.begin(), rest.end());
      return m;
    }
    case MsgType::infer_resp: {
      InferResponse m;
      const std::uint16_t n = r.u16();
      if (r.remaining() != std::size_t{n} * 4) {
        throw FormatError("INFER_RESP announces " + std::to_string(n) + " logits but carries " +
                              std::to_string(r.remaining()) + " bytes",
                          kHeaderSize);
      }
      m.logits.resize(n);
      for (auto& v : m.logits) {
        const std::size_t at = r.pos();
        v = r.f32();
        if (!std::isfinite(v)) throw FormatError("non-finite logit", kHeaderSize + at);
      }
      return m;
    }
    case MsgType::load_query:
      done();
      return LoadQuery{};
    case MsgType::load_report: {
      LoadReport m;
      const std::size_t at = r.pos();
      m.k_cloud = r.f32();
      if (!std::isfinite(m.k_cloud) || m.k_cloud < 0.0f) throw FormatError("bad K_cloud", kHeaderSize + at);
      m.queue_depth = r.u32();
      done();
      return m;
    }
    case MsgType::error: {
      ErrorMessage m;
      m.code = r.u16();
      m.message = r.text(r.remaining());
      return m;
    }
  }
  throw FormatError("unknown message type", 5);
}

inline std::vector<std::uint8_t> encode(const Message& m) { return serialize(to_frame(m)); }

inline Message decode(std::span<const std::uint8_t> bytes) { return from_frame(parse_frame(bytes)); }

}  // namespace bottlenet::proto
