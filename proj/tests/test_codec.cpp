#include <gtest/gtest.h>

#include <cmath>

#include "bottlenet/codec.hpp"
#include "bottlenet/codec_layer.hpp"
#include "bottlenet/rng.hpp"

using namespace bottlenet;
using namespace bottlenet::codec;

namespace {

/// Low-frequency sinusoid mix plus mild noise, in [0, 2^bits - 1].
Plane smooth_image(std::size_t w, std::size_t h, Rng& rng, unsigned bits = 8) {
  const double top = static_cast<double>((1u << bits) - 1);
  Plane p{w, h, std::vector<std::uint16_t>(w * h)};
  double fx[3], fy[3], ph[3], amp[3];
  for (int k = 0; k < 3; ++k) {
    fx[k] = rng.uniform(0.0, 0.25);
    fy[k] = rng.uniform(0.0, 0.25);
    ph[k] = rng.uniform(0.0, 6.28);
    amp[k] = rng.uniform(0.05, 0.2);
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double v = 0.5;
      for (int k = 0; k < 3; ++k) v += amp[k] * std::sin(fx[k] * static_cast<double>(x) + fy[k] * static_cast<double>(y) + ph[k]);
      v += 0.01 * rng.normal();
      p.samples[y * w + x] = static_cast<std::uint16_t>(std::clamp(std::round(v * top), 0.0, top));
    }
  }
  return p;
}

Plane round_trip(const Plane& p, CodecParams params) { return decode(encode(p, params)); }

int max_abs_diff(const Plane& a, const Plane& b) {
  int worst = 0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) worst = std::max(worst, std::abs(int(a.samples[i]) - int(b.samples[i])));
  return worst;
}

}  // namespace

TEST(Quantize, HalfRoundsAwayFromZero) {
  const std::vector<double> f{0.0, 0.5, 1.0};
  const auto q = quantize(f, 8);
  EXPECT_EQ(q.levels, (std::vector<std::uint16_t>{0, 128, 255}));
  EXPECT_EQ(q.min, 0.0);
  EXPECT_EQ(q.max, 1.0);
}

TEST(Quantize, TwoBitIntegralCase) {
  const std::vector<double> f{-1.0, 0.0, 1.0, 2.0};
  EXPECT_EQ(quantize(f, 2).levels, (std::vector<std::uint16_t>{0, 1, 2, 3}));
}

TEST(Quantize, ConstantInputGivesZeros) {
  const std::vector<double> f(7, 3.25);
  const auto q = quantize(f, 8);
  EXPECT_EQ(q.levels, std::vector<std::uint16_t>(7, 0));
  EXPECT_EQ(q.min, q.max);
  for (double v : dequantize(q.levels, q.min, q.max, 8)) EXPECT_EQ(v, 3.25);
}

TEST(Quantize, TopLevelRestoresMaxExactly) {
  const std::vector<std::uint16_t> levels{0, 255};
  const auto v = dequantize(levels, -0.3, 0.7, 8);
  EXPECT_EQ(v[0], -0.3);
  EXPECT_EQ(v[1], 0.7);
}

TEST(Quantize, RoundTripWithinHalfStep) {
  const std::vector<double> f{0.0, 0.5, 1.0};
  const auto q = quantize(f, 8);
  const auto back = dequantize(q.levels, q.min, q.max, 8);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_LE(std::fabs(back[i] - f[i]), 1.0 / 510.0);
}

TEST(Quantize, RoundTripBoundProperty) {
  Rng rng(1);
  for (unsigned bits : {1u, 2u, 5u, 8u, 12u, 16u}) {
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> f(1 + rng.below(64));
      const double scale = std::pow(10.0, rng.uniform(-3, 3));
      for (auto& v : f) v = rng.uniform(-scale, scale);
      const auto q = quantize(f, bits);
      const double top = static_cast<double>((1u << bits) - 1);
      const double bound = (q.max - q.min) / (2 * top);
      const auto back = dequantize(q.levels, q.min, q.max, bits);
      for (std::size_t i = 0; i < f.size(); ++i) {
        ASSERT_LE(q.levels[i], top);
        ASSERT_LE(std::fabs(back[i] - f[i]), bound * (1 + 1e-9) + 1e-15) << "bits " << bits;
      }
    }
  }
}

TEST(Tile, GridShapes) {
  EXPECT_EQ(tile_grid(256).cols, 16u);
  EXPECT_EQ(tile_grid(256).rows, 16u);
  EXPECT_EQ(tile_grid(32).cols, 8u);
  EXPECT_EQ(tile_grid(32).rows, 4u);
  EXPECT_EQ(tile_grid(5).cols, 4u);
  EXPECT_EQ(tile_grid(5).rows, 2u);
  EXPECT_EQ(tile_grid(1).cols, 1u);
  EXPECT_EQ(tile_grid(1).rows, 1u);
  EXPECT_THROW(tile_grid(0), std::invalid_argument);
}

TEST(Tile, SingleChannelIsTheChannel) {
  Rng rng(2);
  std::vector<std::uint16_t> levels(28 * 28);
  for (auto& v : levels) v = static_cast<std::uint16_t>(rng.below(256));
  const Plane p = tile(levels, 28, 28, 1);
  EXPECT_EQ(p.width, 28u);
  EXPECT_EQ(p.height, 28u);
  EXPECT_EQ(p.samples, levels);
}

TEST(Tile, ChannelPlacementAndPadding) {
  // c'=5: grid 4x2, channel k at (k mod 4, k div 4), three zero pad cells.
  std::vector<std::uint16_t> levels(2 * 3 * 5);
  for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = static_cast<std::uint16_t>(1 + i % 5);
  const Plane p = tile(levels, 2, 3, 5);
  EXPECT_EQ(p.width, 12u);
  EXPECT_EQ(p.height, 4u);
  EXPECT_EQ(p.at(0, 0), 1);
  EXPECT_EQ(p.at(3, 0), 2);
  EXPECT_EQ(p.at(9, 1), 4);
  EXPECT_EQ(p.at(0, 2), 5);
  EXPECT_EQ(p.at(3, 2), 0);
  EXPECT_EQ(p.at(11, 3), 0);
}

TEST(Tile, UntileInvertsTile) {
  Rng rng(3);
  for (std::size_t c : {1u, 2u, 3u, 5u, 32u, 256u, 1000u, 1024u}) {
    const std::size_t h = 1 + rng.below(5), w = 1 + rng.below(5);
    std::vector<std::uint16_t> levels(h * w * c);
    for (auto& v : levels) v = static_cast<std::uint16_t>(rng.below(65536));
    EXPECT_EQ(untile(tile(levels, h, w, c), h, w, c), levels) << "c=" << c;
  }
  const Plane zeros{8, 4, std::vector<std::uint16_t>(32, 0)};
  EXPECT_EQ(untile(zeros, 2, 2, 8), std::vector<std::uint16_t>(32, 0));
}

TEST(Tile, UntileRejectsMismatch) {
  const Plane p{8, 4, std::vector<std::uint16_t>(32, 0)};
  EXPECT_THROW(untile(p, 2, 2, 4), std::invalid_argument);
}

TEST(Codec, NearLosslessAtQuality100) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const Plane p = smooth_image(8 + rng.below(40), 8 + rng.below(40), rng);
    EXPECT_LE(max_abs_diff(round_trip(p, {8, 100}), p), 4);
  }
}

TEST(Codec, ConstantImageExactAtAnyQuality) {
  for (unsigned q : {1u, 20u, 50u, 100u}) {
    for (std::uint16_t v : {0, 77, 255}) {
      const Plane p{13, 9, std::vector<std::uint16_t>(13 * 9, v)};
      EXPECT_EQ(round_trip(p, {8, q}), p) << "q=" << q << " v=" << v;
    }
  }
}

TEST(Codec, OtherBitDepths) {
  Rng rng(5);
  for (unsigned bits : {1u, 4u, 12u, 16u}) {
    const Plane p = smooth_image(17, 11, rng, bits);
    const Plane back = round_trip(p, {bits, 100});
    const double top = static_cast<double>((1u << bits) - 1);
    for (auto v : back.samples) ASSERT_LE(v, top);
    // Quality 100 keeps every coefficient step at one, so the error stays a
    // few levels on the 8-bit scale.
    EXPECT_LE(max_abs_diff(back, p), std::max(4.0, 4.0 * top / 255.0)) << "bits " << bits;
  }
}

TEST(Codec, SizeGrowsWithQuality) {
  Rng rng(6);
  const unsigned ladder[] = {1, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95, 100};
  int violations = 0, pairs = 0;
  for (int i = 0; i < 100; ++i) {
    const Plane p = smooth_image(32, 32, rng);
    std::size_t prev = 0;
    for (unsigned q : ladder) {
      const std::size_t size = encode(p, {8, q}).size();
      if (q != ladder[0]) {
        ++pairs;
        if (size < prev) {
          ++violations;
          std::cout << "size not monotone: image " << i << " q=" << q << " " << size << " < " << prev << "\n";
        }
      }
      prev = size;
    }
    EXPECT_LE(encode(p, {8, 20}).size(), encode(p, {8, 80}).size());
  }
  EXPECT_LE(violations, pairs / 100);
}

TEST(Codec, RoundTripDeterministicAndStable) {
  Rng rng(7);
  for (unsigned q : {20u, 100u}) {
    const Plane p = smooth_image(24, 16, rng);
    EXPECT_EQ(encode(p, {8, q}), encode(p, {8, q}));
    // Repeated round trips settle on a fixed point.
    Plane cur = round_trip(p, {8, q});
    bool stable = false;
    for (int k = 0; k < 8 && !stable; ++k) {
      const Plane next = round_trip(cur, {8, q});
      stable = next == cur;
      cur = next;
    }
    EXPECT_TRUE(stable) << "q=" << q;
  }
}

TEST(Codec, EdgeBlocksAndTinyPlanes) {
  Rng rng(8);
  for (auto [w, h] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 1}, {9, 17}, {64, 8}}) {
    const Plane p = smooth_image(w, h, rng);
    const Plane back = round_trip(p, {8, 100});
    EXPECT_EQ(back.width, w);
    EXPECT_EQ(back.height, h);
    EXPECT_LE(max_abs_diff(back, p), 4);
  }
}

TEST(Codec, CorruptStreamNamesOffset) {
  Rng rng(9);
  const auto bytes = encode(smooth_image(16, 16, rng), {8, 50});
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      decode(t);
      ADD_FAILURE() << "truncation at " << cut << " accepted";
    } catch (const FormatError& e) {
      EXPECT_LE(e.offset(), cut);
      EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
  }
  // Random corruption either fails cleanly or decodes to a well-formed plane.
  for (int i = 0; i < 200; ++i) {
    auto c = bytes;
    c[rng.below(c.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    try {
      const Plane p = decode(c);
      EXPECT_EQ(p.samples.size(), p.width * p.height);
    } catch (const FormatError&) {
    }
  }
}

TEST(Feature, WireLayout) {
  const std::vector<double> sample{0.0, 0.25, 0.5, 1.0};
  const auto f = encode_feature(sample, 2, 1, 2, {8, 90}, 4, 2);
  const auto bytes = f.serialize();
  ASSERT_EQ(bytes.size(), f.wire_size());
  ASSERT_EQ(EncodedFeature::kHeaderSize, 28u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "BNF1");
  EXPECT_EQ(bytes[4], 8);
  EXPECT_EQ(bytes[5], 90);
  EXPECT_EQ(bytes[6] | bytes[7] << 8, 1);   // w'
  EXPECT_EQ(bytes[8] | bytes[9] << 8, 2);   // h'
  EXPECT_EQ(bytes[10] | bytes[11] << 8, 2); // c'
  EXPECT_EQ(bytes[12] | bytes[13] << 8, 2); // crop_w
  EXPECT_EQ(bytes[14] | bytes[15] << 8, 4); // crop_h
  float lo, hi;
  std::memcpy(&lo, &bytes[16], 4);
  std::memcpy(&hi, &bytes[20], 4);
  EXPECT_EQ(lo, 0.0f);
  EXPECT_EQ(hi, 1.0f);
  const std::uint32_t len = bytes[24] | bytes[25] << 8 | bytes[26] << 16 | std::uint32_t(bytes[27]) << 24;
  EXPECT_EQ(len, f.payload.size());

  const auto parsed = EncodedFeature::parse(bytes);
  EXPECT_EQ(parsed.serialize(), bytes);
  EXPECT_EQ(decode_feature(parsed), decode_feature(f));
}

TEST(Feature, HeaderAloneGivesShape) {
  Rng rng(10);
  std::vector<double> sample(7 * 5 * 3);
  for (auto& v : sample) v = rng.uniform(-2, 2);
  const auto f = encode_feature(sample, 7, 5, 3, {8, 20}, 14, 10);
  auto header_only = f.serialize();
  header_only.resize(EncodedFeature::kHeaderSize);
  header_only[24] = header_only[25] = header_only[26] = header_only[27] = 0;
  const auto h = EncodedFeature::parse(header_only);
  EXPECT_EQ(h.height, 7);
  EXPECT_EQ(h.width, 5);
  EXPECT_EQ(h.channels, 3);
  EXPECT_EQ(h.crop_h, 14);
  EXPECT_EQ(h.crop_w, 10);
}

TEST(Feature, ParseRejectsBadHeaders) {
  const std::vector<double> sample{0.0, 1.0};
  const auto good = encode_feature(sample, 1, 2, 1, {8, 20}, 0, 0).serialize();
  auto bad = good;
  bad[0] = 'X';
  EXPECT_THROW(EncodedFeature::parse(bad), FormatError);
  bad = good;
  bad[5] = 0;  // q = 0
  EXPECT_THROW(EncodedFeature::parse(bad), FormatError);
  bad = good;
  bad.push_back(0);  // payload_len mismatch
  EXPECT_THROW(EncodedFeature::parse(bad), FormatError);
  bad = good;
  bad.resize(10);
  EXPECT_THROW(EncodedFeature::parse(bad), FormatError);
}

TEST(Feature, RangeWidenedToFloatIsRespected) {
  const std::vector<double> sample{0.1, 0.2, 0.30000000000000004};
  const auto f = encode_feature(sample, 1, 3, 1, {8, 100}, 0, 0);
  EXPECT_LE(static_cast<double>(f.min), 0.1);
  EXPECT_GE(static_cast<double>(f.max), 0.30000000000000004);
  const auto back = decode_feature(f);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(back[i], sample[i], 0.2 * 4 / 255.0 + 1e-7);
}

TEST(Feature, NodeForwardEqualsManualPipeline) {
  Rng rng(11);
  LayerSpec s = LayerSpec::of(LayerKind::codec);
  s.codec = {8, 20};
  s.out_h = 8;
  s.out_w = 6;
  CodecLayer node(s, Shape{1, 4, 3, 5});
  Tensor x(Shape{3, 4, 3, 5});
  for (auto& v : x.storage()) v = rng.uniform(-1, 3);
  const Tensor y = node.forward(x, Mode::eval);
  for (std::size_t b = 0; b < 3; ++b) {
    const auto vals = x.sample(b);
    const auto q = quantize_range(vals, 8, codec::detail::float_range(*std::min_element(vals.begin(), vals.end()), 0).first,
                                  codec::detail::float_range(0, *std::max_element(vals.begin(), vals.end())).second);
    const Plane decoded = decode(encode(tile(q.levels, 4, 3, 5), {8, 20}));
    const auto manual = dequantize(untile(decoded, 4, 3, 5), q.min, q.max, 8);
    const auto out = y.sample(b);
    for (std::size_t i = 0; i < manual.size(); ++i) ASSERT_EQ(out[i], manual[i]);
  }
  // Serialization in between changes nothing.
  const auto f = node.encode_sample(x, 1);
  const Tensor via_wire = node.decode_sample(EncodedFeature::parse(f.serialize()));
  for (std::size_t i = 0; i < via_wire.size(); ++i) ASSERT_EQ(via_wire[i], y.sample(1)[i]);
}

TEST(Feature, DisabledNodeIsIdentity) {
  LayerSpec s = LayerSpec::of(LayerKind::codec);
  s.codec_enabled = false;
  CodecLayer node(s, Shape{1, 2, 2, 1});
  const Tensor x(Shape{1, 2, 2, 1}, {0.1, 0.2, 0.3, 0.4});
  EXPECT_EQ(node.forward(x, Mode::train), x);
}

TEST(Params, Validation) {
  EXPECT_THROW((CodecParams{0, 20}.validate()), std::invalid_argument);
  EXPECT_THROW((CodecParams{17, 20}.validate()), std::invalid_argument);
  EXPECT_THROW((CodecParams{8, 0}.validate()), std::invalid_argument);
  EXPECT_THROW((CodecParams{8, 101}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((CodecParams{16, 1}.validate()));
}
