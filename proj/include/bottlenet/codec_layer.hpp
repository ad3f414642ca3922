#pragma once

#include <memory>
#include <span>
#include <string>

#include "bottlenet/codec.hpp"
#include "bottlenet/layers.hpp"

namespace bottlenet {

/// Lossy codec as a graph node. Forward runs the exact transmit path
/// (quantize, tile, encode, decode, untile, dequantize) on every sample;
/// backward hands the incoming gradient through untouched.
///
/// `spec.out_h/out_w` carry the spatial size the receiver restores to; it is
/// written into each EncodedFeature header. With `codec_enabled == false`
/// the node is the identity in both directions.
class CodecLayer final : public Layer {
 public:
  CodecLayer(LayerSpec spec, const Shape& in) : Layer(std::move(spec)), in_(in) {
    spec_.codec.validate();
    in_.n = 1;
  }

  Shape output_shape(const Shape& in) const override {
    detail::require(in.h == in_.h && in.w == in_.w && in.c == in_.c,
                    "codec: expected per-sample shape " + in_.str() + ", got " + in.str());
    return in;
  }

  bool enabled() const { return spec_.codec_enabled; }
  void set_enabled(bool on) { spec_.codec_enabled = on; }
  void set_quality(unsigned q) {
    codec::CodecParams p = spec_.codec;
    p.quality = q;
    p.validate();
    spec_.codec = p;
  }
  const codec::CodecParams& params() const { return spec_.codec; }

  /// Per-sample feature shape (n = 1) this node transmits.
  const Shape& feature_shape() const { return in_; }

  codec::EncodedFeature encode_sample(const Tensor& in, std::size_t b) const {
    output_shape(in.shape());
    return codec::encode_feature(in.sample(b), in_.h, in_.w, in_.c, spec_.codec, spec_.out_h, spec_.out_w);
  }

  /// Rebuilds a (1, h', w', c') tensor; rejects features that do not match this node.
  Tensor decode_sample(const codec::EncodedFeature& f) const {
    if (f.height != in_.h || f.width != in_.w || f.channels != in_.c) {
      throw ShapeError("encoded feature " + std::to_string(f.height) + "x" + std::to_string(f.width) + "x" +
                       std::to_string(f.channels) + " does not match expected " + in_.str());
    }
    if (f.crop_h != spec_.out_h || f.crop_w != spec_.out_w) {
      throw ShapeError("encoded feature restore size does not match this partition");
    }
    if (f.params != spec_.codec) throw ShapeError("encoded feature codec params do not match this partition");
    return Tensor(in_, codec::decode_feature(f));
  }

  Tensor forward(const Tensor& in, Mode) override {
    output_shape(in.shape());
    if (!spec_.codec_enabled) return in;
    Tensor out(in.shape());
    const std::size_t per = in_.per_sample();
    for (std::size_t b = 0; b < in.shape().n; ++b) {
      const auto restored = codec::decode_feature(encode_sample(in, b));
      std::copy(restored.begin(), restored.end(), out.data() + b * per);
    }
    return out;
  }

  Tensor backward(const Tensor&, const Tensor&, const Tensor& grad_out, Mode, std::span<Tensor>) const override {
    return grad_out;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<CodecLayer>(*this); }

 private:
  Shape in_;
};

}  // namespace bottlenet
