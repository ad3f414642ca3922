#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bottlenet {

/// Extent of a dense activation tensor in (batch, height, width, channels) order.
struct Shape {
  std::size_t n = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t c = 1;

  std::size_t size() const { return n * h * w * c; }
  std::size_t per_sample() const { return h * w * c; }

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << h << "," << w << "," << c << ")";
    return os.str();
  }
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major (n, h, w, c) tensor of doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) const {
    return ((b * shape_.h + y) * shape_.w + x) * shape_.c + ch;
  }
  double& at(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) {
    return data_[index(b, y, x, ch)];
  }
  double at(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) const {
    return data_[index(b, y, x, ch)];
  }

  /// Copy of samples [first, first + count) along the batch axis.
  Tensor slice_batch(std::size_t first, std::size_t count) const {
    if (first + count > shape_.n) throw ShapeError("batch slice out of range");
    Shape s = shape_;
    s.n = count;
    const std::size_t stride = shape_.per_sample();
    return Tensor(s, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(first * stride),
                                         data_.begin() + static_cast<std::ptrdiff_t>((first + count) * stride)));
  }

  std::span<double> sample(std::size_t b) {
    return std::span<double>(data_).subspan(b * shape_.per_sample(), shape_.per_sample());
  }
  std::span<const double> sample(std::size_t b) const {
    return std::span<const double>(data_).subspan(b * shape_.per_sample(), shape_.per_sample());
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_dims() const {
    if (shape_.n == 0 || shape_.h == 0 || shape_.w == 0 || shape_.c == 0) {
      throw ShapeError("tensor dims must be >= 1, got " + shape_.str());
    }
  }

  Shape shape_{};
  std::vector<double> data_;
};

/// Stacks equally shaped single-sample tensors along the batch axis.
inline Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape s = parts.front().shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape q = p.shape();
    if (q.h != s.h || q.w != s.w || q.c != s.c) throw ShapeError("concat shape mismatch");
    total += q.n;
  }
  s.n = total;
  std::vector<double> data;
  data.reserve(s.size());
  for (const auto& p : parts) data.insert(data.end(), p.storage().begin(), p.storage().end());
  return Tensor(s, std::move(data));
}

}  // namespace bottlenet
