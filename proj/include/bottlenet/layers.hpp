#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bottlenet/codec.hpp"
#include "bottlenet/rng.hpp"
#include "bottlenet/tensor.hpp"

namespace bottlenet {

enum class Mode { train, eval };
enum class Padding { same, valid };

enum class LayerKind {
  conv2d,
  conv2d_transpose,
  relu,
  batchnorm,
  avgpool_global,
  dense,
  softmax_xent_head,
  codec,
};

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv2d_transpose: return "conv2d-transpose";
    case LayerKind::relu: return "relu";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::avgpool_global: return "avgpool-global";
    case LayerKind::dense: return "dense";
    case LayerKind::softmax_xent_head: return "softmax-xent-head";
    case LayerKind::codec: return "codec";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(std::string_view s) {
  for (auto k : {LayerKind::conv2d, LayerKind::conv2d_transpose, LayerKind::relu, LayerKind::batchnorm,
                 LayerKind::avgpool_global, LayerKind::dense, LayerKind::softmax_xent_head, LayerKind::codec}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown layer kind \"" + std::string(s) + "\"");
}

/// Declarative description of one layer. Which fields matter depends on `kind`.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t filters = 0;  // conv output channels, dense units
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  Padding padding = Padding::same;
  std::size_t out_h = 0;  // conv2d-transpose target spatial size
  std::size_t out_w = 0;
  codec::CodecParams codec{};
  bool codec_enabled = true;
  bool bottleneck = false;  // part of an inserted bottleneck unit

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;

  static LayerSpec conv(std::size_t filters, std::size_t k, std::size_t stride = 1, Padding pad = Padding::same) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.filters = filters;
    s.kernel_h = s.kernel_w = k;
    s.stride = stride;
    s.padding = pad;
    return s;
  }
  static LayerSpec conv_transpose(std::size_t filters, std::size_t k, std::size_t stride, std::size_t out_h,
                                  std::size_t out_w) {
    LayerSpec s;
    s.kind = LayerKind::conv2d_transpose;
    s.filters = filters;
    s.kernel_h = s.kernel_w = k;
    s.stride = stride;
    s.out_h = out_h;
    s.out_w = out_w;
    return s;
  }
  static LayerSpec of(LayerKind k) {
    LayerSpec s;
    s.kind = k;
    return s;
  }
  static LayerSpec dense(std::size_t units) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.filters = units;
    return s;
  }
};

/// Output extent of a strided window along one axis; also the front padding.
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_front = 0;
};

inline AxisGeometry conv_axis(std::size_t in, std::size_t k, std::size_t stride, Padding pad) {
  if (pad == Padding::same) {
    const std::size_t out = (in + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + k;
    const std::size_t total = needed > in ? needed - in : 0;
    return {out, total / 2};
  }
  if (k > in) return {0, 0};
  return {(in - k) / stride + 1, 0};
}

class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(std::move(spec)) {}
  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }
  LayerKind kind() const { return spec_.kind; }

  /// Pure shape function; throws ShapeError for an incompatible input.
  virtual Shape output_shape(const Shape& in) const = 0;

  /// Train mode may update internal running statistics.
  virtual Tensor forward(const Tensor& in, Mode mode) = 0;

  /// Gradient w.r.t. the input. Parameter gradients are accumulated into
  /// `param_grads`, which is ordered like params().
  virtual Tensor backward(const Tensor& in, const Tensor& out, const Tensor& grad_out, Mode mode,
                          std::span<Tensor> param_grads) const = 0;

  virtual std::vector<Tensor*> params() { return {}; }
  /// Non-trainable state that still belongs in a checkpoint.
  virtual std::vector<Tensor*> buffers() { return {}; }
  virtual void init(Rng&) {}
  virtual std::unique_ptr<Layer> clone() const = 0;

  std::vector<const Tensor*> params() const {
    auto ps = const_cast<Layer*>(this)->params();
    return {ps.begin(), ps.end()};
  }

 protected:
  LayerSpec spec_;
};

namespace detail {

inline void he_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = rng.uniform(-limit, limit);
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

// y += a * x
inline void axpy(double* __restrict y, const double* __restrict x, double a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

/// (kh, kw, cin, cout) -> (kh, kw, cout, cin)
inline std::vector<double> transpose_io(const Tensor& w) {
  const Shape s = w.shape();
  std::vector<double> t(w.size());
  for (std::size_t k = 0; k < s.n * s.h; ++k) {
    for (std::size_t ci = 0; ci < s.w; ++ci) {
      for (std::size_t co = 0; co < s.c; ++co) t[(k * s.c + co) * s.w + ci] = w[(k * s.w + ci) * s.c + co];
    }
  }
  return t;
}

}  // namespace detail

// Weights are stored as (kh, kw, cin, cout) in the four Tensor axes.
class Conv2d final : public Layer {
 public:
  Conv2d(LayerSpec spec, const Shape& in)
      : Layer(std::move(spec)),
        in_c_(in.c),
        weight_(Shape{spec_.kernel_h, spec_.kernel_w, in.c, spec_.filters}),
        bias_(Shape{1, 1, 1, spec_.filters}) {
    detail::require(spec_.stride >= 1 && spec_.kernel_h >= 1 && spec_.kernel_w >= 1 && spec_.filters >= 1,
                    "conv2d: stride, kernel and filters must be >= 1");
  }

  Shape output_shape(const Shape& in) const override {
    detail::require(in.c == in_c_, "conv2d: expected " + std::to_string(in_c_) + " input channels, got " +
                                       std::to_string(in.c));
    const auto gy = conv_axis(in.h, spec_.kernel_h, spec_.stride, spec_.padding);
    const auto gx = conv_axis(in.w, spec_.kernel_w, spec_.stride, spec_.padding);
    detail::require(gy.out > 0 && gx.out > 0, "conv2d: kernel larger than input " + in.str());
    return {in.n, gy.out, gx.out, spec_.filters};
  }

  void init(Rng& rng) override {
    detail::he_uniform(weight_, spec_.kernel_h * spec_.kernel_w * in_c_, rng);
    std::fill(bias_.storage().begin(), bias_.storage().end(), 0.0);
  }

  /// 1x1 identity mapping of min(cin, cout) channels.
  void init_identity() {
    std::fill(weight_.storage().begin(), weight_.storage().end(), 0.0);
    std::fill(bias_.storage().begin(), bias_.storage().end(), 0.0);
    const std::size_t cy = spec_.kernel_h / 2, cx = spec_.kernel_w / 2;
    for (std::size_t k = 0; k < std::min(in_c_, spec_.filters); ++k) weight_.at(cy, cx, k, k) = 1.0;
  }

  Tensor forward(const Tensor& in, Mode) override {
    const Shape os = output_shape(in.shape());
    Tensor out(os);
    const Shape is = in.shape();
    const auto py = conv_axis(is.h, spec_.kernel_h, spec_.stride, spec_.padding).pad_front;
    const auto px = conv_axis(is.w, spec_.kernel_w, spec_.stride, spec_.padding).pad_front;
    const std::size_t co_n = os.c, ci_n = is.c;
    const double* w = weight_.data();
    const double* b = bias_.data();
    for (std::size_t n = 0; n < os.n; ++n) {
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          double* o = out.data() + out.index(n, oy, ox, 0);
          for (std::size_t co = 0; co < co_n; ++co) o[co] = b[co];
          for (std::size_t ky = 0; ky < spec_.kernel_h; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec_.stride + ky) - static_cast<std::ptrdiff_t>(py);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(is.h)) continue;
            for (std::size_t kx = 0; kx < spec_.kernel_w; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec_.stride + kx) - static_cast<std::ptrdiff_t>(px);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(is.w)) continue;
              const double* xi = in.data() + in.index(n, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0);
              const double* wk = w + (ky * spec_.kernel_w + kx) * ci_n * co_n;
              for (std::size_t ci = 0; ci < ci_n; ++ci) detail::axpy(o, wk + ci * co_n, xi[ci], co_n);
            }
          }
        }
      }
    }
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Mode,
                  std::span<Tensor> param_grads) const override {
    const Shape is = in.shape();
    const Shape os = grad_out.shape();
    Tensor grad_in(is);
    Tensor& gw = param_grads[0];
    Tensor& gb = param_grads[1];
    const auto py = conv_axis(is.h, spec_.kernel_h, spec_.stride, spec_.padding).pad_front;
    const auto px = conv_axis(is.w, spec_.kernel_w, spec_.stride, spec_.padding).pad_front;
    const std::size_t co_n = os.c, ci_n = is.c;
    const std::vector<double> wt = detail::transpose_io(weight_);
    for (std::size_t n = 0; n < os.n; ++n) {
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          const double* g = grad_out.data() + grad_out.index(n, oy, ox, 0);
          for (std::size_t co = 0; co < co_n; ++co) gb[co] += g[co];
          for (std::size_t ky = 0; ky < spec_.kernel_h; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec_.stride + ky) - static_cast<std::ptrdiff_t>(py);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(is.h)) continue;
            for (std::size_t kx = 0; kx < spec_.kernel_w; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec_.stride + kx) - static_cast<std::ptrdiff_t>(px);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(is.w)) continue;
              const std::size_t at = in.index(n, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0);
              const double* xi = in.data() + at;
              double* gi = grad_in.data() + at;
              const std::size_t woff = (ky * spec_.kernel_w + kx) * ci_n * co_n;
              for (std::size_t ci = 0; ci < ci_n; ++ci) detail::axpy(gw.data() + woff + ci * co_n, g, xi[ci], co_n);
              for (std::size_t co = 0; co < co_n; ++co) detail::axpy(gi, wt.data() + woff + co * ci_n, g[co], ci_n);
            }
          }
        }
      }
    }
    return grad_in;
  }

  std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

 private:
  std::size_t in_c_;
  Tensor weight_;
  Tensor bias_;
};

/// Adjoint of a "same"-padded strided conv onto a fixed (out_h, out_w) extent.
/// Input spatial dims must equal ceil(out / stride).
class Conv2dTranspose final : public Layer {
 public:
  Conv2dTranspose(LayerSpec spec, const Shape& in)
      : Layer(std::move(spec)),
        in_c_(in.c),
        weight_(Shape{spec_.kernel_h, spec_.kernel_w, in.c, spec_.filters}),
        bias_(Shape{1, 1, 1, spec_.filters}) {
    detail::require(spec_.stride >= 1 && spec_.kernel_h >= 1 && spec_.kernel_w >= 1 && spec_.filters >= 1 &&
                        spec_.out_h >= 1 && spec_.out_w >= 1,
                    "conv2d-transpose: stride, kernel, filters and output dims must be >= 1");
  }

  Shape output_shape(const Shape& in) const override {
    detail::require(in.c == in_c_, "conv2d-transpose: expected " + std::to_string(in_c_) + " input channels, got " +
                                       std::to_string(in.c));
    const auto gy = conv_axis(spec_.out_h, spec_.kernel_h, spec_.stride, Padding::same);
    const auto gx = conv_axis(spec_.out_w, spec_.kernel_w, spec_.stride, Padding::same);
    detail::require(in.h == gy.out && in.w == gx.out,
                    "conv2d-transpose: input " + in.str() + " does not reduce from target " +
                        std::to_string(spec_.out_h) + "x" + std::to_string(spec_.out_w));
    return {in.n, spec_.out_h, spec_.out_w, spec_.filters};
  }

  void init(Rng& rng) override {
    detail::he_uniform(weight_, spec_.kernel_h * spec_.kernel_w * in_c_, rng);
    std::fill(bias_.storage().begin(), bias_.storage().end(), 0.0);
  }

  Tensor forward(const Tensor& in, Mode) override {
    const Shape os = output_shape(in.shape());
    const Shape is = in.shape();
    Tensor out(os);
    const std::size_t py = conv_axis(os.h, spec_.kernel_h, spec_.stride, Padding::same).pad_front;
    const std::size_t px = conv_axis(os.w, spec_.kernel_w, spec_.stride, Padding::same).pad_front;
    const std::size_t co_n = os.c, ci_n = is.c;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = bias_[i % co_n];
    for (std::size_t n = 0; n < is.n; ++n) {
      for (std::size_t iy = 0; iy < is.h; ++iy) {
        for (std::size_t ix = 0; ix < is.w; ++ix) {
          const double* xi = in.data() + in.index(n, iy, ix, 0);
          for (std::size_t ky = 0; ky < spec_.kernel_h; ++ky) {
            const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(iy * spec_.stride + ky) - static_cast<std::ptrdiff_t>(py);
            if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(os.h)) continue;
            for (std::size_t kx = 0; kx < spec_.kernel_w; ++kx) {
              const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(ix * spec_.stride + kx) - static_cast<std::ptrdiff_t>(px);
              if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(os.w)) continue;
              double* o = out.data() + out.index(n, static_cast<std::size_t>(oy), static_cast<std::size_t>(ox), 0);
              const double* wk = weight_.data() + (ky * spec_.kernel_w + kx) * ci_n * co_n;
              for (std::size_t ci = 0; ci < ci_n; ++ci) detail::axpy(o, wk + ci * co_n, xi[ci], co_n);
            }
          }
        }
      }
    }
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Mode,
                  std::span<Tensor> param_grads) const override {
    const Shape is = in.shape();
    const Shape os = grad_out.shape();
    Tensor grad_in(is);
    Tensor& gw = param_grads[0];
    Tensor& gb = param_grads[1];
    const std::size_t py = conv_axis(os.h, spec_.kernel_h, spec_.stride, Padding::same).pad_front;
    const std::size_t px = conv_axis(os.w, spec_.kernel_w, spec_.stride, Padding::same).pad_front;
    const std::size_t co_n = os.c, ci_n = is.c;
    const std::vector<double> wt = detail::transpose_io(weight_);
    for (std::size_t i = 0; i < grad_out.size(); ++i) gb[i % co_n] += grad_out[i];
    for (std::size_t n = 0; n < is.n; ++n) {
      for (std::size_t iy = 0; iy < is.h; ++iy) {
        for (std::size_t ix = 0; ix < is.w; ++ix) {
          const std::size_t at = in.index(n, iy, ix, 0);
          const double* xi = in.data() + at;
          double* gi = grad_in.data() + at;
          for (std::size_t ky = 0; ky < spec_.kernel_h; ++ky) {
            const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(iy * spec_.stride + ky) - static_cast<std::ptrdiff_t>(py);
            if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(os.h)) continue;
            for (std::size_t kx = 0; kx < spec_.kernel_w; ++kx) {
              const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(ix * spec_.stride + kx) - static_cast<std::ptrdiff_t>(px);
              if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(os.w)) continue;
              const double* g =
                  grad_out.data() + grad_out.index(n, static_cast<std::size_t>(oy), static_cast<std::size_t>(ox), 0);
              const std::size_t woff = (ky * spec_.kernel_w + kx) * ci_n * co_n;
              for (std::size_t ci = 0; ci < ci_n; ++ci) detail::axpy(gw.data() + woff + ci * co_n, g, xi[ci], co_n);
              for (std::size_t co = 0; co < co_n; ++co) detail::axpy(gi, wt.data() + woff + co * ci_n, g[co], ci_n);
            }
          }
        }
      }
    }
    return grad_in;
  }

  std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2dTranspose>(*this); }

 private:
  std::size_t in_c_;
  Tensor weight_;
  Tensor bias_;
};

class Relu final : public Layer {
 public:
  explicit Relu(LayerSpec spec) : Layer(std::move(spec)) {}

  Shape output_shape(const Shape& in) const override { return in; }

  Tensor forward(const Tensor& in, Mode) override {
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Mode, std::span<Tensor>) const override {
    Tensor g(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) g[i] = in[i] > 0.0 ? grad_out[i] : 0.0;
    return g;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
};

/// Per-channel batch normalization. Train mode normalizes with batch
/// statistics and updates running estimates; eval mode uses the frozen
/// running estimates.
class BatchNorm final : public Layer {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  /// Weight of the newest batch in the running statistics.
  double momentum() const { return momentum_; }
  void set_momentum(double m) { momentum_ = m; }

  BatchNorm(LayerSpec spec, const Shape& in)
      : Layer(std::move(spec)),
        gamma_(Shape{1, 1, 1, in.c}, 1.0),
        beta_(Shape{1, 1, 1, in.c}, 0.0),
        running_mean_(Shape{1, 1, 1, in.c}, 0.0),
        running_var_(Shape{1, 1, 1, in.c}, 1.0) {}

  Shape output_shape(const Shape& in) const override {
    detail::require(in.c == gamma_.size(), "batchnorm: expected " + std::to_string(gamma_.size()) +
                                               " channels, got " + std::to_string(in.c));
    return in;
  }

  void init(Rng&) override {
    std::fill(gamma_.storage().begin(), gamma_.storage().end(), 1.0);
    std::fill(beta_.storage().begin(), beta_.storage().end(), 0.0);
    std::fill(running_mean_.storage().begin(), running_mean_.storage().end(), 0.0);
    std::fill(running_var_.storage().begin(), running_var_.storage().end(), 1.0);
  }

  Tensor forward(const Tensor& in, Mode mode) override {
    output_shape(in.shape());
    const std::size_t c = in.shape().c;
    std::vector<double> mean, inv_std;
    if (mode == Mode::train) {
      std::vector<double> var;
      batch_stats(in, mean, var);
      const double m = static_cast<double>(in.size() / c);
      inv_std.resize(c);
      for (std::size_t k = 0; k < c; ++k) {
        inv_std[k] = 1.0 / std::sqrt(var[k] + kEps);
        const double unbiased = m > 1.0 ? var[k] * m / (m - 1.0) : var[k];
        running_mean_[k] = (1.0 - momentum_) * running_mean_[k] + momentum_ * mean[k];
        running_var_[k] = (1.0 - momentum_) * running_var_[k] + momentum_ * unbiased;
      }
    } else {
      mean.assign(running_mean_.storage().begin(), running_mean_.storage().end());
      inv_std.resize(c);
      for (std::size_t k = 0; k < c; ++k) inv_std[k] = 1.0 / std::sqrt(running_var_[k] + kEps);
    }
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) {
      const std::size_t k = i % c;
      out[i] = gamma_[k] * (in[i] - mean[k]) * inv_std[k] + beta_[k];
    }
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Mode mode,
                  std::span<Tensor> param_grads) const override {
    const std::size_t c = in.shape().c;
    Tensor& ggamma = param_grads[0];
    Tensor& gbeta = param_grads[1];
    Tensor grad_in(in.shape());
    if (mode == Mode::eval) {
      for (std::size_t i = 0; i < in.size(); ++i) {
        const std::size_t k = i % c;
        const double inv = 1.0 / std::sqrt(running_var_[k] + kEps);
        const double xhat = (in[i] - running_mean_[k]) * inv;
        ggamma[k] += grad_out[i] * xhat;
        gbeta[k] += grad_out[i];
        grad_in[i] = grad_out[i] * gamma_[k] * inv;
      }
      return grad_in;
    }
    std::vector<double> mean, var;
    batch_stats(in, mean, var);
    const double m = static_cast<double>(in.size() / c);
    std::vector<double> inv_std(c), sum_g(c, 0.0), sum_gx(c, 0.0);
    for (std::size_t k = 0; k < c; ++k) inv_std[k] = 1.0 / std::sqrt(var[k] + kEps);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const std::size_t k = i % c;
      const double xhat = (in[i] - mean[k]) * inv_std[k];
      sum_g[k] += grad_out[i];
      sum_gx[k] += grad_out[i] * xhat;
    }
    for (std::size_t k = 0; k < c; ++k) {
      ggamma[k] += sum_gx[k];
      gbeta[k] += sum_g[k];
    }
    for (std::size_t i = 0; i < in.size(); ++i) {
      const std::size_t k = i % c;
      const double xhat = (in[i] - mean[k]) * inv_std[k];
      grad_in[i] = gamma_[k] * inv_std[k] / m * (m * grad_out[i] - sum_g[k] - xhat * sum_gx[k]);
    }
    return grad_in;
  }

  std::vector<Tensor*> params() override { return {&gamma_, &beta_}; }
  std::vector<Tensor*> buffers() override { return {&running_mean_, &running_var_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }

 private:
  static void batch_stats(const Tensor& in, std::vector<double>& mean, std::vector<double>& var) {
    const std::size_t c = in.shape().c;
    const double m = static_cast<double>(in.size() / c);
    mean.assign(c, 0.0);
    var.assign(c, 0.0);
    for (std::size_t i = 0; i < in.size(); ++i) mean[i % c] += in[i];
    for (auto& v : mean) v /= m;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double d = in[i] - mean[i % c];
      var[i % c] += d * d;
    }
    for (auto& v : var) v /= m;
  }

  Tensor gamma_;
  Tensor beta_;
  Tensor running_mean_;
  Tensor running_var_;
  double momentum_ = kMomentum;
};

class AvgPoolGlobal final : public Layer {
 public:
  explicit AvgPoolGlobal(LayerSpec spec) : Layer(std::move(spec)) {}

  Shape output_shape(const Shape& in) const override { return {in.n, 1, 1, in.c}; }

  Tensor forward(const Tensor& in, Mode) override {
    const Shape s = in.shape();
    Tensor out(output_shape(s));
    const double area = static_cast<double>(s.h * s.w);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t p = 0; p < s.h * s.w; ++p) {
        for (std::size_t k = 0; k < s.c; ++k) out[n * s.c + k] += in[(n * s.h * s.w + p) * s.c + k];
      }
      for (std::size_t k = 0; k < s.c; ++k) out[n * s.c + k] /= area;
    }
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Mode, std::span<Tensor>) const override {
    const Shape s = in.shape();
    Tensor g(s);
    const double area = static_cast<double>(s.h * s.w);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t p = 0; p < s.h * s.w; ++p) {
        for (std::size_t k = 0; k < s.c; ++k) g[(n * s.h * s.w + p) * s.c + k] = grad_out[n * s.c + k] / area;
      }
    }
    return g;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPoolGlobal>(*this); }
};

/// Fully connected over the flattened (h, w, c) sample; output (n, 1, 1, units).
class Dense final : public Layer {
 public:
  Dense(LayerSpec spec, const Shape& in)
      : Layer(std::move(spec)),
        in_features_(in.per_sample()),
        weight_(Shape{1, 1, in.per_sample(), spec_.filters}),
        bias_(Shape{1, 1, 1, spec_.filters}) {
    detail::require(spec_.filters >= 1, "dense: units must be >= 1");
  }

  Shape output_shape(const Shape& in) const override {
    detail::require(in.per_sample() == in_features_, "dense: expected " + std::to_string(in_features_) +
                                                         " input features, got " + std::to_string(in.per_sample()));
    return {in.n, 1, 1, spec_.filters};
  }

  void init(Rng& rng) override {
    detail::he_uniform(weight_, in_features_, rng);
    std::fill(bias_.storage().begin(), bias_.storage().end(), 0.0);
  }

  Tensor forward(const Tensor& in, Mode) override {
    Tensor out(output_shape(in.shape()));
    const std::size_t u = spec_.filters;
    for (std::size_t n = 0; n < in.shape().n; ++n) {
      double* o = out.data() + n * u;
      for (std::size_t j = 0; j < u; ++j) o[j] = bias_[j];
      const double* x = in.data() + n * in_features_;
      for (std::size_t i = 0; i < in_features_; ++i) {
        const double* wr = weight_.data() + i * u;
        for (std::size_t j = 0; j < u; ++j) o[j] += x[i] * wr[j];
      }
    }
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Mode,
                  std::span<Tensor> param_grads) const override {
    Tensor grad_in(in.shape());
    Tensor& gw = param_grads[0];
    Tensor& gb = param_grads[1];
    const std::size_t u = spec_.filters;
    for (std::size_t n = 0; n < in.shape().n; ++n) {
      const double* g = grad_out.data() + n * u;
      const double* x = in.data() + n * in_features_;
      double* gi = grad_in.data() + n * in_features_;
      for (std::size_t j = 0; j < u; ++j) gb[j] += g[j];
      for (std::size_t i = 0; i < in_features_; ++i) {
        const double* wr = weight_.data() + i * u;
        double* gwr = gw.data() + i * u;
        double acc = 0.0;
        for (std::size_t j = 0; j < u; ++j) {
          acc += g[j] * wr[j];
          gwr[j] += x[i] * g[j];
        }
        gi[i] = acc;
      }
    }
    return grad_in;
  }

  std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

 private:
  std::size_t in_features_;
  Tensor weight_;
  Tensor bias_;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d(mean loss)/d(logits)
};

/// Pass-through marker for the classification head; the loss lives in
/// softmax_cross_entropy().
class SoftmaxXentHead final : public Layer {
 public:
  explicit SoftmaxXentHead(LayerSpec spec) : Layer(std::move(spec)) {}

  Shape output_shape(const Shape& in) const override {
    detail::require(in.h == 1 && in.w == 1, "softmax-xent-head: expects (n,1,1,classes) logits, got " + in.str());
    return in;
  }
  Tensor forward(const Tensor& in, Mode) override {
    output_shape(in.shape());
    return in;
  }
  Tensor backward(const Tensor&, const Tensor&, const Tensor& grad_out, Mode, std::span<Tensor>) const override {
    return grad_out;
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<SoftmaxXentHead>(*this); }
};

/// Mean softmax cross-entropy over the batch and its gradient.
inline LossResult softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  const Shape s = logits.shape();
  if (labels.size() != s.n) throw ShapeError("softmax_cross_entropy: label count does not match batch");
  const std::size_t k = s.per_sample();
  LossResult r{0.0, Tensor(s)};
  const double inv_n = 1.0 / static_cast<double>(s.n);
  for (std::size_t n = 0; n < s.n; ++n) {
    if (labels[n] >= k) throw std::out_of_range("label out of range");
    const double* z = logits.data() + n * k;
    double zmax = z[0];
    for (std::size_t j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    const double log_sum = std::log(sum) + zmax;
    r.loss += (log_sum - z[labels[n]]) * inv_n;
    double* g = r.grad.data() + n * k;
    for (std::size_t j = 0; j < k; ++j) {
      g[j] = std::exp(z[j] - log_sum) * inv_n;
      if (j == labels[n]) g[j] -= inv_n;
    }
  }
  return r;
}

}  // namespace bottlenet
