#pragma once

// Feature codec: uniform n-bit quantizer, channel tiling into a single plane,
// and a JPEG-like 8x8 DCT block coder with a self-defined bitstream.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bottlenet/bytes.hpp"

namespace bottlenet::codec {

inline constexpr std::size_t kBlock = 8;

struct CodecParams {
  unsigned bits = 8;
  unsigned quality = 20;

  void validate() const {
    if (bits < 1 || bits > 16) throw std::invalid_argument("codec bits must be in [1,16], got " + std::to_string(bits));
    if (quality < 1 || quality > 100) {
      throw std::invalid_argument("codec quality must be in [1,100], got " + std::to_string(quality));
    }
  }
  std::uint32_t max_level() const { return (std::uint32_t{1} << bits) - 1; }

  friend bool operator==(const CodecParams&, const CodecParams&) = default;
};

// ---------------------------------------------------------------------------
// Quantizer

struct Quantized {
  std::vector<std::uint16_t> levels;
  double min = 0.0;
  double max = 0.0;
};

/// Quantize with an explicit [lo, hi] range. Values outside the range clamp.
inline Quantized quantize_range(std::span<const double> values, unsigned bits, double lo, double hi) {
  Quantized q;
  q.min = lo;
  q.max = hi;
  q.levels.assign(values.size(), 0);
  if (!(hi > lo)) return q;
  const double top = static_cast<double>((std::uint32_t{1} << bits) - 1);
  const double range = hi - lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    // std::round rounds halves away from zero.
    double v = std::round((values[i] - lo) / range * top);
    v = std::clamp(v, 0.0, top);
    q.levels[i] = static_cast<std::uint16_t>(v);
  }
  return q;
}

/// round((F - min F) / (max F - min F) * (2^n - 1)); all zeros when the range is degenerate.
inline Quantized quantize(std::span<const double> values, unsigned bits) {
  if (values.empty()) return {};
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return quantize_range(values, bits, *lo, *hi);
}

inline std::vector<double> dequantize(std::span<const std::uint16_t> levels, double min, double max, unsigned bits) {
  const double top = static_cast<double>((std::uint32_t{1} << bits) - 1);
  std::vector<double> out(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(max > min)) {
      out[i] = min;
    } else if (levels[i] == top) {
      out[i] = max;
    } else {
      out[i] = min + static_cast<double>(levels[i]) / top * (max - min);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tiling

struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint16_t> samples;  // row-major

  std::uint16_t at(std::size_t x, std::size_t y) const { return samples[y * width + x]; }
  friend bool operator==(const Plane&, const Plane&) = default;
};

struct TileGrid {
  std::size_t cols = 1;
  std::size_t rows = 1;
};

/// Grid for c channels: c is padded to the next power of two 2^L, then laid
/// out as 2^ceil(L/2) columns by 2^floor(L/2) rows.
inline TileGrid tile_grid(std::size_t channels) {
  if (channels == 0) throw std::invalid_argument("tile_grid: channel count must be >= 1");
  const std::size_t padded = std::bit_ceil(channels);
  const unsigned log2 = static_cast<unsigned>(std::countr_zero(padded));
  return {std::size_t{1} << ((log2 + 1) / 2), std::size_t{1} << (log2 / 2)};
}

/// Lays out an (h, w, c) level tensor as a plane; channel k sits at grid
/// cell (k mod cols, k div cols). Cells past c stay zero.
inline Plane tile(std::span<const std::uint16_t> levels, std::size_t h, std::size_t w, std::size_t c) {
  if (levels.size() != h * w * c) throw std::invalid_argument("tile: level count does not match (h,w,c)");
  const TileGrid g = tile_grid(c);
  Plane p{g.cols * w, g.rows * h, {}};
  p.samples.assign(p.width * p.height, 0);
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t x0 = (k % g.cols) * w;
    const std::size_t y0 = (k / g.cols) * h;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) p.samples[(y0 + y) * p.width + x0 + x] = levels[(y * w + x) * c + k];
    }
  }
  return p;
}

inline std::vector<std::uint16_t> untile(const Plane& p, std::size_t h, std::size_t w, std::size_t c) {
  const TileGrid g = tile_grid(c);
  if (p.width != g.cols * w || p.height != g.rows * h || p.samples.size() != p.width * p.height) {
    throw std::invalid_argument("untile: plane " + std::to_string(p.width) + "x" + std::to_string(p.height) +
                                " does not match feature (h=" + std::to_string(h) + ", w=" + std::to_string(w) +
                                ", c=" + std::to_string(c) + ")");
  }
  std::vector<std::uint16_t> levels(h * w * c);
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t x0 = (k % g.cols) * w;
    const std::size_t y0 = (k / g.cols) * h;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) levels[(y * w + x) * c + k] = p.samples[(y0 + y) * p.width + x0 + x];
    }
  }
  return levels;
}

// ---------------------------------------------------------------------------
// Block transform

namespace detail {

inline constexpr std::array<std::uint8_t, 64> kZigzag = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,  12, 19, 26, 33, 40, 48,
    41, 34, 27, 20, 13, 6,  7,  14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23,
    30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

// Base luminance table, natural (row-major) order.
inline constexpr std::array<std::uint16_t, 64> kLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55,  64,
    81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

struct CosTable {
  std::array<double, 64> m{};  // m[u*8 + x] = a(u) cos((2x+1) u pi / 16)
  CosTable() {
    const double pi = 3.14159265358979323846;
    for (std::size_t u = 0; u < kBlock; ++u) {
      const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (std::size_t x = 0; x < kBlock; ++x) {
        m[u * kBlock + x] = a * std::cos(static_cast<double>(2 * x + 1) * static_cast<double>(u) * pi / 16.0);
      }
    }
  }
};

inline const CosTable& cos_table() {
  static const CosTable t;
  return t;
}

inline void fdct(const std::array<double, 64>& in, std::array<double, 64>& out) {
  const auto& c = cos_table().m;
  std::array<double, 64> tmp{};
  for (std::size_t y = 0; y < kBlock; ++y) {
    for (std::size_t u = 0; u < kBlock; ++u) {
      double s = 0.0;
      for (std::size_t x = 0; x < kBlock; ++x) s += c[u * kBlock + x] * in[y * kBlock + x];
      tmp[y * kBlock + u] = s;
    }
  }
  for (std::size_t v = 0; v < kBlock; ++v) {
    for (std::size_t u = 0; u < kBlock; ++u) {
      double s = 0.0;
      for (std::size_t y = 0; y < kBlock; ++y) s += c[v * kBlock + y] * tmp[y * kBlock + u];
      out[v * kBlock + u] = s;
    }
  }
}

inline void idct(const std::array<double, 64>& in, std::array<double, 64>& out) {
  const auto& c = cos_table().m;
  std::array<double, 64> tmp{};
  for (std::size_t v = 0; v < kBlock; ++v) {
    for (std::size_t x = 0; x < kBlock; ++x) {
      double s = 0.0;
      for (std::size_t u = 0; u < kBlock; ++u) s += c[u * kBlock + x] * in[v * kBlock + u];
      tmp[v * kBlock + x] = s;
    }
  }
  for (std::size_t y = 0; y < kBlock; ++y) {
    for (std::size_t x = 0; x < kBlock; ++x) {
      double s = 0.0;
      for (std::size_t v = 0; v < kBlock; ++v) s += c[v * kBlock + y] * tmp[v * kBlock + x];
      out[y * kBlock + x] = s;
    }
  }
}

// ---------------------------------------------------------------------------
// Entropy coding

class BitWriter {
 public:
  void put(std::uint32_t code, unsigned len) {
    for (unsigned i = len; i-- > 0;) {
      acc_ = static_cast<std::uint8_t>((acc_ << 1) | ((code >> i) & 1u));
      if (++fill_ == 8) {
        out_.push_back(acc_);
        acc_ = 0;
        fill_ = 0;
      }
    }
  }
  std::vector<std::uint8_t> finish() {
    while (fill_ != 0) put(1, 1);
    return std::move(out_);
  }

 private:
  std::vector<std::uint8_t> out_;
  std::uint8_t acc_ = 0;
  unsigned fill_ = 0;
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> data, std::size_t base_offset) : data_(data), base_(base_offset) {}

  unsigned bit() {
    if (pos_ >= data_.size() * 8) throw FormatError("bitstream truncated", base_ + data_.size());
    const unsigned b = (data_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
    ++pos_;
    return b;
  }
  std::uint32_t bits(unsigned n) {
    std::uint32_t v = 0;
    for (unsigned i = 0; i < n; ++i) v = (v << 1) | bit();
    return v;
  }
  std::size_t byte_offset() const { return base_ + pos_ / 8; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

inline constexpr unsigned kMaxCodeLen = 16;

/// Canonical prefix code: `counts[l-1]` symbols of length l, listed in `symbols`.
struct PrefixCode {
  std::array<std::uint16_t, kMaxCodeLen> counts{};
  std::vector<std::uint16_t> symbols;

  // Derived encoder lookup.
  std::vector<std::uint32_t> code_of;
  std::vector<std::uint8_t> len_of;

  void assign_codes(std::size_t alphabet) {
    code_of.assign(alphabet, 0);
    len_of.assign(alphabet, 0);
    std::uint32_t code = 0;
    std::size_t k = 0;
    for (unsigned l = 1; l <= kMaxCodeLen; ++l) {
      for (std::uint16_t i = 0; i < counts[l - 1]; ++i, ++k) {
        code_of[symbols[k]] = code;
        len_of[symbols[k]] = static_cast<std::uint8_t>(l);
        ++code;
      }
      code <<= 1;
    }
  }
};

/// Optimal length-limited code from symbol frequencies.
inline PrefixCode build_code(const std::vector<std::uint32_t>& freq) {
  PrefixCode pc;
  std::vector<std::uint16_t> used;
  for (std::size_t s = 0; s < freq.size(); ++s) {
    if (freq[s] > 0) used.push_back(static_cast<std::uint16_t>(s));
  }
  // Most frequent first; ties by symbol value.
  std::sort(used.begin(), used.end(), [&](std::uint16_t a, std::uint16_t b) {
    return freq[a] != freq[b] ? freq[a] > freq[b] : a < b;
  });
  if (used.empty()) {
    pc.assign_codes(freq.size());
    return pc;
  }
  if (used.size() == 1) {
    pc.counts[0] = 1;
    pc.symbols = used;
    pc.assign_codes(freq.size());
    return pc;
  }

  // Plain Huffman merge over (weight, node id); leaves are ids [0, used.size()).
  struct Node {
    std::uint64_t weight;
    int parent;
  };
  std::vector<Node> nodes;
  for (auto s : used) nodes.push_back({freq[s], -1});
  std::vector<int> live(used.size());
  std::iota(live.begin(), live.end(), 0);
  while (live.size() > 1) {
    std::sort(live.begin(), live.end(), [&](int a, int b) {
      return nodes[a].weight != nodes[b].weight ? nodes[a].weight < nodes[b].weight : a < b;
    });
    const int a = live[0];
    const int b = live[1];
    nodes.push_back({nodes[a].weight + nodes[b].weight, -1});
    const int p = static_cast<int>(nodes.size()) - 1;
    nodes[a].parent = p;
    nodes[b].parent = p;
    live.erase(live.begin(), live.begin() + 2);
    live.push_back(p);
  }
  std::array<std::uint32_t, 64> bits_count{};
  for (std::size_t i = 0; i < used.size(); ++i) {
    unsigned depth = 0;
    for (int n = static_cast<int>(i); nodes[n].parent >= 0; n = nodes[n].parent) ++depth;
    ++bits_count[depth];
  }
  // Length limiting as in JPEG Annex K.3.
  for (unsigned i = 63; i > kMaxCodeLen; --i) {
    while (bits_count[i] > 0) {
      unsigned j = i - 2;
      while (bits_count[j] == 0) --j;
      bits_count[i] -= 2;
      bits_count[i - 1] += 1;
      bits_count[j + 1] += 2;
      bits_count[j] -= 1;
    }
  }
  for (unsigned l = 1; l <= kMaxCodeLen; ++l) pc.counts[l - 1] = static_cast<std::uint16_t>(bits_count[l]);
  pc.symbols = used;
  pc.assign_codes(freq.size());
  return pc;
}

inline void write_code_table(ByteWriter& w, const PrefixCode& pc) {
  const bool wide = std::any_of(pc.symbols.begin(), pc.symbols.end(), [](std::uint16_t s) { return s > 0xff; });
  w.u8(wide ? 2 : 1);
  for (auto c : pc.counts) w.u8(static_cast<std::uint8_t>(c));
  for (auto s : pc.symbols) {
    if (wide) {
      w.u16(s);
    } else {
      w.u8(static_cast<std::uint8_t>(s));
    }
  }
}

struct CodeDecoder {
  std::array<std::int32_t, kMaxCodeLen + 1> max_code{};
  std::array<std::int32_t, kMaxCodeLen + 1> val_ptr{};
  std::array<std::int32_t, kMaxCodeLen + 1> min_code{};
  std::vector<std::uint16_t> symbols;

  static CodeDecoder read(ByteReader& r, std::size_t alphabet) {
    const std::size_t at = r.pos();
    const std::uint8_t width = r.u8();
    if (width != 1 && width != 2) throw FormatError("bad code table symbol width", at);
    CodeDecoder d;
    std::array<std::uint16_t, kMaxCodeLen> counts{};
    std::size_t total = 0;
    for (auto& c : counts) {
      c = r.u8();
      total += c;
    }
    if (total > alphabet) throw FormatError("code table lists more symbols than the alphabet", at);
    // Kraft check: a canonical code must fit in the code space.
    std::uint64_t space = 0;
    for (unsigned l = 1; l <= kMaxCodeLen; ++l) space += static_cast<std::uint64_t>(counts[l - 1]) << (kMaxCodeLen - l);
    if (space > (std::uint64_t{1} << kMaxCodeLen)) throw FormatError("code table over-subscribed", at);
    for (std::size_t i = 0; i < total; ++i) {
      const std::size_t sat = r.pos();
      const std::uint16_t s = width == 2 ? r.u16() : r.u8();
      if (s >= alphabet) throw FormatError("code table symbol out of range", sat);
      d.symbols.push_back(s);
    }
    std::int32_t code = 0;
    std::int32_t k = 0;
    for (unsigned l = 1; l <= kMaxCodeLen; ++l) {
      if (counts[l - 1] == 0) {
        d.max_code[l] = -1;
      } else {
        d.val_ptr[l] = k;
        d.min_code[l] = code;
        code += counts[l - 1];
        k += counts[l - 1];
        d.max_code[l] = code - 1;
      }
      code <<= 1;
    }
    return d;
  }

  std::uint16_t decode(BitReader& br) const {
    const std::size_t at = br.byte_offset();
    std::int32_t code = 0;
    for (unsigned l = 1; l <= kMaxCodeLen; ++l) {
      code = (code << 1) | static_cast<std::int32_t>(br.bit());
      if (max_code[l] >= 0 && code <= max_code[l] && code >= min_code[l]) {
        return symbols[static_cast<std::size_t>(val_ptr[l] + code - min_code[l])];
      }
    }
    throw FormatError("invalid prefix code", at);
  }
};

inline unsigned magnitude_category(std::int64_t v) {
  std::uint64_t a = static_cast<std::uint64_t>(v < 0 ? -v : v);
  return static_cast<unsigned>(std::bit_width(a));
}

inline std::uint32_t magnitude_bits(std::int64_t v, unsigned cat) {
  if (v >= 0) return static_cast<std::uint32_t>(v);
  return static_cast<std::uint32_t>(v + ((std::int64_t{1} << cat) - 1));
}

inline std::int64_t extend_magnitude(std::uint32_t raw, unsigned cat) {
  if (cat == 0) return 0;
  if (raw >= (std::uint32_t{1} << (cat - 1))) return raw;
  return static_cast<std::int64_t>(raw) - ((std::int64_t{1} << cat) - 1);
}

inline constexpr std::size_t kDcAlphabet = 32;
inline constexpr std::size_t kAcAlphabet = 16 * 32;
inline constexpr std::uint16_t kEob = 0;
inline constexpr std::uint16_t kZrl = 15u << 5;
inline constexpr unsigned kMaxCategory = 31;

inline std::uint16_t ac_symbol(unsigned run, unsigned cat) { return static_cast<std::uint16_t>((run << 5) | cat); }

}  // namespace detail

inline constexpr std::uint32_t kMaxDcStep = 8;

/// Quantization table for a quality level, natural order, entries >= 1.
/// The DC step is capped at 8: a flat block's DC is 8x its integer level, so
/// flat regions come back exact at every quality.
inline std::array<std::uint32_t, 64> quant_table(unsigned quality) {
  const std::uint32_t scale = quality < 50 ? 5000u / quality : 200u - 2u * quality;
  std::array<std::uint32_t, 64> t{};
  for (std::size_t i = 0; i < 64; ++i) t[i] = std::max<std::uint32_t>(1, (detail::kLumaTable[i] * scale + 50) / 100);
  t[0] = std::min(t[0], kMaxDcStep);
  return t;
}

/// Quantized DCT coefficients for every 8x8 block of the plane, zigzag order.
/// Block rows/cols cover the plane with edge replication.
inline std::vector<std::array<std::int32_t, 64>> block_coefficients(const Plane& p, const CodecParams& params) {
  const auto table = quant_table(params.quality);
  const double shift = static_cast<double>(std::uint32_t{1} << (params.bits - 1));
  const std::size_t bx = (p.width + kBlock - 1) / kBlock;
  const std::size_t by = (p.height + kBlock - 1) / kBlock;
  std::vector<std::array<std::int32_t, 64>> blocks(bx * by);
  std::array<double, 64> spatial{};
  std::array<double, 64> freq{};
  for (std::size_t j = 0; j < by; ++j) {
    for (std::size_t i = 0; i < bx; ++i) {
      for (std::size_t y = 0; y < kBlock; ++y) {
        const std::size_t sy = std::min(j * kBlock + y, p.height - 1);
        for (std::size_t x = 0; x < kBlock; ++x) {
          const std::size_t sx = std::min(i * kBlock + x, p.width - 1);
          spatial[y * kBlock + x] = static_cast<double>(p.samples[sy * p.width + sx]) - shift;
        }
      }
      detail::fdct(spatial, freq);
      auto& out = blocks[j * bx + i];
      for (std::size_t k = 0; k < 64; ++k) {
        const std::size_t nat = detail::kZigzag[k];
        out[k] = static_cast<std::int32_t>(std::round(freq[nat] / static_cast<double>(table[nat])));
      }
    }
  }
  return blocks;
}

/// Payload layout: width u16, height u16, bits u8, quality u8, DC code table,
/// AC code table, then the MSB-first bitstream padded with 1 bits.
/// Code table: symbol width u8 (1|2), 16 length counts u8, symbols.
inline std::vector<std::uint8_t> encode(const Plane& p, const CodecParams& params) {
  params.validate();
  if (p.width == 0 || p.height == 0 || p.width > 0xffff || p.height > 0xffff) {
    throw std::invalid_argument("encode: plane dims must be in [1, 65535]");
  }
  const auto blocks = block_coefficients(p, params);

  struct Token {
    std::uint16_t symbol;
    bool dc;
    std::uint32_t extra;
    unsigned extra_len;
  };
  std::vector<Token> tokens;
  std::vector<std::uint32_t> dc_freq(detail::kDcAlphabet, 0);
  std::vector<std::uint32_t> ac_freq(detail::kAcAlphabet, 0);
  std::int64_t prev_dc = 0;
  for (const auto& b : blocks) {
    const std::int64_t diff = static_cast<std::int64_t>(b[0]) - prev_dc;
    prev_dc = b[0];
    const unsigned cat = detail::magnitude_category(diff);
    tokens.push_back({static_cast<std::uint16_t>(cat), true, detail::magnitude_bits(diff, cat), cat});
    ++dc_freq[cat];
    unsigned run = 0;
    for (std::size_t k = 1; k < 64; ++k) {
      if (b[k] == 0) {
        ++run;
        continue;
      }
      while (run >= 16) {
        tokens.push_back({detail::kZrl, false, 0, 0});
        ++ac_freq[detail::kZrl];
        run -= 16;
      }
      const unsigned c = detail::magnitude_category(b[k]);
      const auto sym = detail::ac_symbol(run, c);
      tokens.push_back({sym, false, detail::magnitude_bits(b[k], c), c});
      ++ac_freq[sym];
      run = 0;
    }
    if (run > 0) {
      tokens.push_back({detail::kEob, false, 0, 0});
      ++ac_freq[detail::kEob];
    }
  }
  const auto dc_code = detail::build_code(dc_freq);
  const auto ac_code = detail::build_code(ac_freq);

  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(p.width));
  w.u16(static_cast<std::uint16_t>(p.height));
  w.u8(static_cast<std::uint8_t>(params.bits));
  w.u8(static_cast<std::uint8_t>(params.quality));
  detail::write_code_table(w, dc_code);
  detail::write_code_table(w, ac_code);
  detail::BitWriter bw;
  for (const auto& t : tokens) {
    const auto& pc = t.dc ? dc_code : ac_code;
    bw.put(pc.code_of[t.symbol], pc.len_of[t.symbol]);
    if (t.extra_len > 0) bw.put(t.extra, t.extra_len);
  }
  w.bytes(bw.finish());
  return w.take();
}

struct DecodedPlane {
  Plane plane;
  CodecParams params;
};

inline DecodedPlane decode_with_params(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  DecodedPlane out;
  out.plane.width = r.u16();
  out.plane.height = r.u16();
  if (out.plane.width == 0 || out.plane.height == 0) throw FormatError("zero plane dimension", 0);
  const std::size_t params_at = r.pos();
  out.params.bits = r.u8();
  out.params.quality = r.u8();
  try {
    out.params.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what(), params_at);
  }
  const auto dc = detail::CodeDecoder::read(r, detail::kDcAlphabet);
  const auto ac = detail::CodeDecoder::read(r, detail::kAcAlphabet);
  detail::BitReader br(r.rest(), r.pos());

  const auto table = quant_table(out.params.quality);
  const double shift = static_cast<double>(std::uint32_t{1} << (out.params.bits - 1));
  const double top = static_cast<double>(out.params.max_level());
  const std::size_t bx = (out.plane.width + kBlock - 1) / kBlock;
  const std::size_t by = (out.plane.height + kBlock - 1) / kBlock;
  out.plane.samples.assign(out.plane.width * out.plane.height, 0);
  std::array<double, 64> freq{};
  std::array<double, 64> spatial{};
  std::int64_t prev_dc = 0;
  // Coefficients of a valid stream are bounded well below this; anything
  // larger is corruption and would overflow the arithmetic below.
  constexpr std::int64_t kCoefLimit = std::int64_t{1} << 30;
  for (std::size_t j = 0; j < by; ++j) {
    for (std::size_t i = 0; i < bx; ++i) {
      std::array<std::int64_t, 64> zz{};
      const std::size_t at = br.byte_offset();
      const unsigned cat = dc.decode(br);
      if (cat > detail::kMaxCategory) throw FormatError("DC category out of range", at);
      prev_dc += detail::extend_magnitude(br.bits(cat), cat);
      if (prev_dc > kCoefLimit || prev_dc < -kCoefLimit) throw FormatError("DC coefficient out of range", at);
      zz[0] = prev_dc;
      std::size_t k = 1;
      while (k < 64) {
        const std::size_t sat = br.byte_offset();
        const std::uint16_t sym = ac.decode(br);
        if (sym == detail::kEob) break;
        if (sym == detail::kZrl) {
          k += 16;
          if (k > 64) throw FormatError("zero run past end of block", sat);
          continue;
        }
        const unsigned run = sym >> 5;
        const unsigned c = sym & 31u;
        if (c == 0) throw FormatError("invalid AC symbol", sat);
        k += run;
        if (k >= 64) throw FormatError("AC run past end of block", sat);
        zz[k++] = detail::extend_magnitude(br.bits(c), c);
      }
      for (std::size_t z = 0; z < 64; ++z) {
        const std::size_t nat = detail::kZigzag[z];
        freq[nat] = static_cast<double>(zz[z]) * static_cast<double>(table[nat]);
      }
      detail::idct(freq, spatial);
      for (std::size_t y = 0; y < kBlock; ++y) {
        const std::size_t sy = j * kBlock + y;
        if (sy >= out.plane.height) break;
        for (std::size_t x = 0; x < kBlock; ++x) {
          const std::size_t sx = i * kBlock + x;
          if (sx >= out.plane.width) break;
          const double v = std::clamp(std::round(spatial[y * kBlock + x] + shift), 0.0, top);
          out.plane.samples[sy * out.plane.width + sx] = static_cast<std::uint16_t>(v);
        }
      }
    }
  }
  return out;
}

inline Plane decode(std::span<const std::uint8_t> bytes) { return decode_with_params(bytes).plane; }

// ---------------------------------------------------------------------------
// Transmitted feature

/// Wire layout (little-endian): "BNF1", n u8, q u8, w' u16, h' u16, c' u16,
/// crop_w u16, crop_h u16, min f32, max f32, payload_len u32, payload.
struct EncodedFeature {
  static constexpr char kMagic[] = "BNF1";
  static constexpr std::size_t kHeaderSize = 4 + 1 + 1 + 2 * 5 + 4 + 4 + 4;

  CodecParams params;
  std::uint16_t width = 0;   // w'
  std::uint16_t height = 0;  // h'
  std::uint16_t channels = 0;
  std::uint16_t crop_w = 0;  // spatial size the receiver restores to
  std::uint16_t crop_h = 0;
  float min = 0.0f;
  float max = 0.0f;
  std::vector<std::uint8_t> payload;

  std::size_t wire_size() const { return kHeaderSize + payload.size(); }

  std::vector<std::uint8_t> serialize() const {
    ByteWriter w;
    w.text(std::string_view(kMagic, 4));
    w.u8(static_cast<std::uint8_t>(params.bits));
    w.u8(static_cast<std::uint8_t>(params.quality));
    w.u16(width);
    w.u16(height);
    w.u16(channels);
    w.u16(crop_w);
    w.u16(crop_h);
    w.f32(min);
    w.f32(max);
    w.u32(static_cast<std::uint32_t>(payload.size()));
    w.bytes(payload);
    return w.take();
  }

  static EncodedFeature parse(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic(std::string_view(kMagic, 4));
    EncodedFeature f;
    const std::size_t params_at = r.pos();
    f.params.bits = r.u8();
    f.params.quality = r.u8();
    try {
      f.params.validate();
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), params_at);
    }
    const std::size_t dims_at = r.pos();
    f.width = r.u16();
    f.height = r.u16();
    f.channels = r.u16();
    f.crop_w = r.u16();
    f.crop_h = r.u16();
    if (f.width == 0 || f.height == 0 || f.channels == 0) throw FormatError("zero feature dimension", dims_at);
    const std::size_t range_at = r.pos();
    f.min = r.f32();
    f.max = r.f32();
    if (!std::isfinite(f.min) || !std::isfinite(f.max) || f.max < f.min) {
      throw FormatError("invalid quantizer range", range_at);
    }
    const std::size_t len_at = r.pos();
    const std::uint32_t len = r.u32();
    if (len != r.remaining()) {
      throw FormatError("payload length " + std::to_string(len) + " does not match remaining " +
                            std::to_string(r.remaining()),
                        len_at);
    }
    auto body = r.bytes(len);
    f.payload.assign(body.begin(), body.end());
    return f;
  }
};

namespace detail {

// Widen [lo, hi] to float-representable bounds so the header range is exact.
inline std::pair<float, float> float_range(double lo, double hi) {
  float flo = static_cast<float>(lo);
  if (static_cast<double>(flo) > lo) flo = std::nextafter(flo, -std::numeric_limits<float>::infinity());
  float fhi = static_cast<float>(hi);
  if (static_cast<double>(fhi) < hi) fhi = std::nextafter(fhi, std::numeric_limits<float>::infinity());
  return {flo, fhi};
}

}  // namespace detail

/// quantize -> tile -> encode for one (h, w, c) sample.
inline EncodedFeature encode_feature(std::span<const double> sample, std::size_t h, std::size_t w, std::size_t c,
                                     const CodecParams& params, std::size_t crop_h, std::size_t crop_w) {
  params.validate();
  if (sample.size() != h * w * c) throw std::invalid_argument("encode_feature: sample size does not match (h,w,c)");
  if (h > 0xffff || w > 0xffff || c > 0xffff || crop_h > 0xffff || crop_w > 0xffff) {
    throw std::invalid_argument("encode_feature: dims exceed 16 bits");
  }
  auto [lo, hi] = std::minmax_element(sample.begin(), sample.end());
  auto [flo, fhi] = detail::float_range(*lo, *hi);
  const auto q = quantize_range(sample, params.bits, flo, fhi);
  EncodedFeature f;
  f.params = params;
  f.width = static_cast<std::uint16_t>(w);
  f.height = static_cast<std::uint16_t>(h);
  f.channels = static_cast<std::uint16_t>(c);
  f.crop_w = static_cast<std::uint16_t>(crop_w);
  f.crop_h = static_cast<std::uint16_t>(crop_h);
  f.min = flo;
  f.max = fhi;
  f.payload = encode(tile(q.levels, h, w, c), params);
  return f;
}

/// decode -> untile -> dequantize; returns (h', w', c') values row-major.
inline std::vector<double> decode_feature(const EncodedFeature& f) {
  const auto decoded = decode_with_params(f.payload);
  if (decoded.params != f.params) throw FormatError("payload codec params disagree with header", 4);
  std::vector<std::uint16_t> levels;
  try {
    levels = untile(decoded.plane, f.height, f.width, f.channels);
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what(), EncodedFeature::kHeaderSize);
  }
  return dequantize(levels, f.min, f.max, f.params.bits);
}

}  // namespace bottlenet::codec
