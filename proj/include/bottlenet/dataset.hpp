#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bottlenet/bytes.hpp"
#include "bottlenet/rng.hpp"
#include "bottlenet/tensor.hpp"

namespace bottlenet {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit image classification set, samples stored (h, w, c) row-major.
struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t num_classes = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;

  std::size_t count() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t sample_size() const { return height * width * channels; }
  Shape sample_shape() const { return {1, height, width, channels}; }

  std::span<const std::uint8_t> sample(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels).subspan(i * sample_size(), sample_size());
  }

  /// Gathers the given samples into one tensor scaled to [0, 1].
  Tensor batch(std::span<const std::size_t> indices) const {
    Tensor t(Shape{indices.size(), height, width, channels});
    const std::size_t per = sample_size();
    for (std::size_t b = 0; b < indices.size(); ++b) {
      auto px = sample(indices[b]);
      for (std::size_t k = 0; k < per; ++k) t[b * per + k] = px[k] / 255.0;
    }
    return t;
  }

  Tensor input(std::size_t i) const {
    const std::size_t idx[] = {i};
    return batch(idx);
  }

  std::vector<std::size_t> batch_labels(std::span<const std::size_t> indices) const {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels[i]);
    return out;
  }

  Dataset subset(std::size_t first, std::size_t n) const {
    if (first + n > count()) throw DataError("subset out of range");
    Dataset d = *this;
    d.pixels.assign(pixels.begin() + static_cast<std::ptrdiff_t>(first * sample_size()),
                    pixels.begin() + static_cast<std::ptrdiff_t>((first + n) * sample_size()));
    d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(first), labels.begin() + static_cast<std::ptrdiff_t>(first + n));
    return d;
  }

  void validate() const {
    if (height == 0 || width == 0 || channels == 0) throw DataError("dataset dims must be >= 1");
    if (num_classes == 0) throw DataError("dataset must declare at least one class");
    if (pixels.size() != count() * sample_size()) throw DataError("dataset pixel count does not match header");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= num_classes) {
        throw DataError("label " + std::to_string(labels[i]) + " of record " + std::to_string(i) + " out of range");
      }
    }
  }
};

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

/// Leading records train, trailing `test_fraction` test. Generators emit
/// records in random order so this is an unbiased split.
inline TrainTestSplit split(const Dataset& d, double test_fraction = 0.15) {
  const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(d.count() * test_fraction)));
  if (d.count() < 2 || n_test >= d.count()) throw DataError("dataset too small to split");
  return {d.subset(0, d.count() - n_test), d.subset(d.count() - n_test, n_test)};
}

// Binary layout (little-endian): "BNDS", u32 count, u32 h, u32 w, u32 c,
// u32 num_classes, then count x (h*w*c u8 pixels, u8 label).

inline std::vector<std::uint8_t> serialize(const Dataset& d) {
  ByteWriter w;
  w.text("BNDS");
  w.u32(static_cast<std::uint32_t>(d.count()));
  w.u32(static_cast<std::uint32_t>(d.height));
  w.u32(static_cast<std::uint32_t>(d.width));
  w.u32(static_cast<std::uint32_t>(d.channels));
  w.u32(static_cast<std::uint32_t>(d.num_classes));
  for (std::size_t i = 0; i < d.count(); ++i) {
    w.bytes(d.sample(i));
    w.u8(d.labels[i]);
  }
  return w.take();
}

inline Dataset parse_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("BNDS");
  Dataset d;
  const std::uint32_t count = r.u32();
  d.height = r.u32();
  d.width = r.u32();
  d.channels = r.u32();
  d.num_classes = r.u32();
  const std::uint64_t per = static_cast<std::uint64_t>(d.height) * d.width * d.channels;
  if (per == 0 || (per + 1) * count != r.remaining()) {
    throw FormatError("dataset body size does not match header", r.pos());
  }
  d.pixels.reserve(per * count);
  d.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto px = r.bytes(per);
    d.pixels.insert(d.pixels.end(), px.begin(), px.end());
    d.labels.push_back(r.u8());
  }
  d.validate();
  return d;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) { return parse_dataset(read_file(path)); }
inline void save_dataset(const Dataset& d, const std::string& path) { write_file(path, serialize(d)); }

/// Random crop of every sample to (crop_h, crop_w); center crop when rng is null.
inline Tensor crop_batch(const Tensor& x, std::size_t crop_h, std::size_t crop_w, Rng* rng) {
  const Shape s = x.shape();
  if (crop_h > s.h || crop_w > s.w) throw ShapeError("crop larger than input");
  Tensor out(Shape{s.n, crop_h, crop_w, s.c});
  for (std::size_t n = 0; n < s.n; ++n) {
    const std::size_t oy = rng ? static_cast<std::size_t>(rng->below(s.h - crop_h + 1)) : (s.h - crop_h) / 2;
    const std::size_t ox = rng ? static_cast<std::size_t>(rng->below(s.w - crop_w + 1)) : (s.w - crop_w) / 2;
    for (std::size_t y = 0; y < crop_h; ++y) {
      for (std::size_t xx = 0; xx < crop_w; ++xx) {
        for (std::size_t c = 0; c < s.c; ++c) out.at(n, y, xx, c) = x.at(n, oy + y, ox + xx, c);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generators

enum class DatasetKind { blobs, stripes, shapes };

inline DatasetKind dataset_kind_from_string(std::string_view s) {
  if (s == "blobs") return DatasetKind::blobs;
  if (s == "stripes") return DatasetKind::stripes;
  if (s == "shapes") return DatasetKind::shapes;
  throw std::invalid_argument("unknown dataset kind \"" + std::string(s) + "\" (blobs|stripes|shapes)");
}

struct GeneratorConfig {
  DatasetKind kind = DatasetKind::shapes;
  std::size_t count = 1000;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t channels = 1;
  std::size_t num_classes = 4;
  std::uint64_t seed = 1;
};

namespace detail {

inline std::uint8_t to_pixel(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

/// Grating parameters for class k of the stripes set: four orientations,
/// then increasing spatial frequency bands.
struct Grating {
  double angle;
  double cycles;  // cycles across the image width
};

}  // namespace detail

inline detail::Grating stripes_grating(std::size_t k) {
  constexpr double kPi = 3.14159265358979323846;
  return {kPi * static_cast<double>(k % 4) / 4.0, 3.0 + 3.0 * static_cast<double>(k / 4)};
}

/// Class prototype intensity for the blobs set at (pixel index, class).
inline double blob_prototype(std::uint64_t seed, std::size_t pixel, std::size_t cls) {
  Rng r(derive_seed(seed, {0xb10b, cls, pixel}));
  return r.uniform(40.0, 215.0);
}

inline Dataset generate_dataset(const GeneratorConfig& cfg) {
  if (cfg.num_classes < 2) throw DataError("need at least 2 classes");
  if (cfg.count < cfg.num_classes) throw DataError("count must cover every class at least once");
  if (cfg.num_classes > 255) throw DataError("at most 255 classes");
  Dataset d;
  d.height = cfg.height;
  d.width = cfg.width;
  d.channels = cfg.channels;
  d.num_classes = cfg.num_classes;
  d.validate();
  Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(cfg.kind)}));
  const std::size_t per = d.sample_size();
  const double h = static_cast<double>(cfg.height), w = static_cast<double>(cfg.width);
  constexpr double kPi = 3.14159265358979323846;

  // Balanced labels in shuffled order.
  std::vector<std::uint8_t> labels(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) labels[i] = static_cast<std::uint8_t>(i % cfg.num_classes);
  rng.shuffle(labels);

  std::vector<double> img(per);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const std::size_t cls = labels[i];
    switch (cfg.kind) {
      case DatasetKind::blobs: {
        for (std::size_t p = 0; p < per; ++p) img[p] = blob_prototype(cfg.seed, p, cls) + 12.0 * rng.normal();
        break;
      }
      case DatasetKind::stripes: {
        const auto g = stripes_grating(cls);
        const double amp = rng.uniform(50.0, 90.0);
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        const double k = 2.0 * kPi * g.cycles / w;
        for (std::size_t y = 0; y < cfg.height; ++y) {
          for (std::size_t x = 0; x < cfg.width; ++x) {
            const double t = static_cast<double>(x) * std::cos(g.angle) + static_cast<double>(y) * std::sin(g.angle);
            const double v = 128.0 + amp * std::sin(k * t + phase);
            for (std::size_t c = 0; c < cfg.channels; ++c) img[(y * cfg.width + x) * cfg.channels + c] = v + 20.0 * rng.normal();
          }
        }
        break;
      }
      case DatasetKind::shapes: {
        // Class = shape family; position, size, contrast and background vary.
        const double bg = rng.uniform(30.0, 110.0);
        const double fg = bg + rng.uniform(70.0, 130.0);
        const double r = rng.uniform(0.22, 0.34) * std::min(h, w);
        const double cy = rng.uniform(r, h - r), cx = rng.uniform(r, w - r);
        const double thick = std::max(1.5, r * 0.35);
        for (std::size_t y = 0; y < cfg.height; ++y) {
          for (std::size_t x = 0; x < cfg.width; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
            bool inside = false;
            switch (cls % 6) {
              case 0: inside = std::abs(dx) <= r && std::abs(dy) <= r; break;  // square
              case 1: inside = dx * dx + dy * dy <= r * r; break;               // disk
              case 2: inside = (std::abs(dx) <= thick / 2 && std::abs(dy) <= r) ||
                               (std::abs(dy) <= thick / 2 && std::abs(dx) <= r);
                break;  // plus
              case 3: {  // ring
                const double rr = std::sqrt(dx * dx + dy * dy);
                inside = rr <= r && rr >= r - thick;
                break;
              }
              case 4: inside = dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2; break;  // triangle
              case 5: inside = std::abs(std::abs(dx) - std::abs(dy)) <= thick / 2 && std::abs(dx) <= r; break;  // X
            }
            // Classes beyond six reuse shapes at a second contrast polarity.
            const bool invert = (cls / 6) % 2 == 1;
            const double v = (inside != invert ? fg : bg) + 12.0 * rng.normal();
            for (std::size_t c = 0; c < cfg.channels; ++c) img[(y * cfg.width + x) * cfg.channels + c] = v;
          }
        }
        break;
      }
    }
    for (double v : img) d.pixels.push_back(detail::to_pixel(v));
    d.labels.push_back(labels[i]);
  }
  return d;
}

}  // namespace bottlenet
