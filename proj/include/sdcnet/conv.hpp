#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sdcnet/error.hpp"
#include "sdcnet/rng.hpp"
#include "sdcnet/tensor.hpp"

namespace sdcnet {

// Grouped 2-D convolution. g == 1 is a standard convolution and
// g == in_channels == out_channels is a depthwise convolution.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t groups = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = false;

  static ConvSpec pointwise(std::size_t in, std::size_t out, std::size_t groups,
                            std::size_t stride = 1) {
    return {in, out, groups, 1, 1, stride, 0, false};
  }

  static ConvSpec depthwise3x3(std::size_t channels, std::size_t stride = 1) {
    return {channels, channels, channels, 3, 3, stride, 1, false};
  }

  [[nodiscard]] std::size_t in_per_group() const noexcept { return in_channels / groups; }
  [[nodiscard]] std::size_t out_per_group() const noexcept { return out_channels / groups; }
  [[nodiscard]] bool is_depthwise() const noexcept {
    return groups == in_channels && groups == out_channels;
  }
  [[nodiscard]] Shape4 weight_shape() const noexcept {
    return {out_channels, in_per_group(), kernel_h, kernel_w};
  }
  [[nodiscard]] std::size_t fan_in() const noexcept {
    return in_per_group() * kernel_h * kernel_w;
  }

  void validate() const {
    if (in_channels == 0 || out_channels == 0 || groups == 0 || kernel_h == 0 || kernel_w == 0)
      throw ShapeError("conv: channels, groups and kernel extents must be positive");
    if (stride == 0) throw ShapeError("conv: stride must be positive");
    if (in_channels % groups != 0 || out_channels % groups != 0) {
      std::ostringstream os;
      os << "conv: groups " << groups << " must divide in_channels " << in_channels
         << " and out_channels " << out_channels;
      throw ShapeError(os.str());
    }
  }

  // floor((in + 2*padding - kernel) / stride) + 1, or an error if that is < 1.
  [[nodiscard]] std::size_t output_extent(std::size_t in, std::size_t kernel) const {
    const std::size_t padded = in + 2 * padding;
    if (padded < kernel)
      throw ShapeError("conv: kernel " + std::to_string(kernel) + " exceeds padded input " +
                       std::to_string(padded));
    return (padded - kernel) / stride + 1;
  }

  [[nodiscard]] Shape4 output_shape(const Shape4& input) const {
    return {input.n, out_channels, output_extent(input.h, kernel_h),
            output_extent(input.w, kernel_w)};
  }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

template <Scalar T>
struct ConvLayer {
  ConvSpec spec;
  Tensor<T> weight;  // (K, N_I/g, kh, kw)
  Tensor<T> bias;    // (1, K, 1, 1); empty unless spec.bias

  ConvLayer() = default;

  explicit ConvLayer(const ConvSpec& s) : spec(s) {
    spec.validate();
    weight = Tensor<T>(spec.weight_shape());
    if (spec.bias) bias = Tensor<T>({1, spec.out_channels, 1, 1});
  }

  // He-normal: N(0, sqrt(2 / fan_in)), bias zero.
  static ConvLayer init(const ConvSpec& s, Rng& rng) {
    ConvLayer layer(s);
    layer.weight = tensor_random_normal<T>(layer.spec.weight_shape(), 0.0,
                                           std::sqrt(2.0 / static_cast<double>(s.fan_in())), rng);
    return layer;
  }

  [[nodiscard]] std::size_t parameter_count() const noexcept {
    return weight.size() + (spec.bias ? bias.size() : 0);
  }
};

template <Scalar T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  std::optional<Tensor<T>> bias;
};

namespace detail {

// Output positions o in [lo, hi) whose input index o*stride + tap - padding
// falls inside [0, extent).
struct TapRange {
  std::ptrdiff_t lo;
  std::ptrdiff_t hi;
};

inline TapRange tap_range(std::size_t tap, std::size_t padding, std::size_t stride,
                          std::size_t extent, std::size_t out_extent) noexcept {
  const auto t = static_cast<std::ptrdiff_t>(tap);
  const auto p = static_cast<std::ptrdiff_t>(padding);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto e = static_cast<std::ptrdiff_t>(extent);
  // smallest o with o*s >= p - t
  std::ptrdiff_t lo = p - t <= 0 ? 0 : (p - t + s - 1) / s;
  // largest o with o*s <= e - 1 + p - t
  const std::ptrdiff_t top = e - 1 + p - t;
  std::ptrdiff_t hi = top < 0 ? 0 : top / s + 1;
  hi = std::min(hi, static_cast<std::ptrdiff_t>(out_extent));
  lo = std::min(lo, hi);
  return {lo, hi};
}

inline void check_conv_input(const ConvSpec& spec, const Shape4& in) {
  if (in.c != spec.in_channels)
    throw ShapeError("conv: input has " + std::to_string(in.c) + " channels, layer expects " +
                     std::to_string(spec.in_channels));
}

template <Scalar T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <Scalar T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <Scalar T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// 1x1 unpadded convolutions are a per-group matrix product
// (K/g x N_I/g) * (N_I/g x HW); strided ones first gather the sampled pixels.
inline bool use_gemm(const ConvSpec& spec) {
  return spec.kernel_h == 1 && spec.kernel_w == 1 && spec.padding == 0 && spec.in_per_group() > 1;
}

template <Scalar T>
void gather_strided(const T* src, const Shape4& is, const Shape4& os, std::size_t stride, T* dst) {
  for (std::size_t c = 0; c < is.c; ++c)
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      const T* row = src + (c * is.h + oy * stride) * is.w;
      T* out = dst + (c * os.h + oy) * os.w;
      for (std::size_t ox = 0; ox < os.w; ++ox) out[ox] = row[ox * stride];
    }
}

template <Scalar T>
void gemm_forward(const ConvLayer<T>& layer, const Tensor<T>& input, Tensor<T>& out) {
  const ConvSpec& spec = layer.spec;
  const Shape4& is = input.shape();
  const Shape4& os = out.shape();
  const auto cin_g = static_cast<Eigen::Index>(spec.in_per_group());
  const auto cout_g = static_cast<Eigen::Index>(spec.out_per_group());
  const auto hw = static_cast<Eigen::Index>(os.plane());
  std::vector<T> sampled;
  if (spec.stride != 1) sampled.resize(is.c * os.plane());
  for (std::size_t n = 0; n < is.n; ++n) {
    const T* x = input.plane(n, 0);
    if (spec.stride != 1) {
      gather_strided(x, is, os, spec.stride, sampled.data());
      x = sampled.data();
    }
    for (std::size_t g = 0; g < spec.groups; ++g) {
      ConstMatrixMap<T> w(layer.weight.data() + g * cout_g * cin_g, cout_g, cin_g);
      ConstMatrixMap<T> xs(x + g * cin_g * hw, cin_g, hw);
      MatrixMap<T> o(out.plane(n, g * cout_g), cout_g, hw);
      o.noalias() = w * xs;
    }
    if (spec.bias)
      for (std::size_t k = 0; k < spec.out_channels; ++k) {
        T* dst = out.plane(n, k);
        for (std::size_t i = 0; i < os.plane(); ++i) dst[i] += layer.bias[k];
      }
  }
}

template <Scalar T>
void gemm_backward(const ConvLayer<T>& layer, const Tensor<T>& input, const Tensor<T>& grad_out,
                   Tensor<T>& grad_input, Tensor<T>& grad_weight) {
  const ConvSpec& spec = layer.spec;
  const Shape4& is = input.shape();
  const Shape4& os = grad_out.shape();
  const auto cin_g = static_cast<Eigen::Index>(spec.in_per_group());
  const auto cout_g = static_cast<Eigen::Index>(spec.out_per_group());
  const auto hw = static_cast<Eigen::Index>(os.plane());
  const bool strided = spec.stride != 1;
  std::vector<T> sampled;
  std::vector<T> grad_sampled;
  if (strided) {
    sampled.resize(is.c * os.plane());
    grad_sampled.resize(is.c * os.plane());
  }
  for (std::size_t n = 0; n < is.n; ++n) {
    const T* x = input.plane(n, 0);
    T* gx = grad_input.plane(n, 0);
    if (strided) {
      gather_strided(x, is, os, spec.stride, sampled.data());
      x = sampled.data();
      gx = grad_sampled.data();
    }
    for (std::size_t g = 0; g < spec.groups; ++g) {
      ConstMatrixMap<T> w(layer.weight.data() + g * cout_g * cin_g, cout_g, cin_g);
      MatrixMap<T> gw(grad_weight.data() + g * cout_g * cin_g, cout_g, cin_g);
      ConstMatrixMap<T> xs(x + g * cin_g * hw, cin_g, hw);
      ConstMatrixMap<T> go(grad_out.plane(n, g * cout_g), cout_g, hw);
      MatrixMap<T> gxs(gx + g * cin_g * hw, cin_g, hw);
      gw.noalias() += go * xs.transpose();
      gxs.noalias() = w.transpose() * go;
    }
    if (strided) {
      T* dst = grad_input.plane(n, 0);
      for (std::size_t c = 0; c < is.c; ++c)
        for (std::size_t oy = 0; oy < os.h; ++oy) {
          T* row = dst + (c * is.h + oy * spec.stride) * is.w;
          const T* src = grad_sampled.data() + (c * os.h + oy) * os.w;
          for (std::size_t ox = 0; ox < os.w; ++ox) row[ox * spec.stride] = src[ox];
        }
    }
  }
}

}  // namespace detail

template <Scalar T>
Tensor<T> conv_forward(const ConvLayer<T>& layer, const Tensor<T>& input) {
  const ConvSpec& spec = layer.spec;
  spec.validate();
  const Shape4& is = input.shape();
  detail::check_conv_input(spec, is);
  const Shape4 os = spec.output_shape(is);
  Tensor<T> out(os);
  if (detail::use_gemm(spec)) {
    detail::gemm_forward(layer, input, out);
    return out;
  }

  const std::size_t cin_g = spec.in_per_group();
  const std::size_t cout_g = spec.out_per_group();
  const std::size_t kh = spec.kernel_h;
  const std::size_t kw = spec.kernel_w;
  const std::size_t s = spec.stride;
  const std::size_t p = spec.padding;

  for (std::size_t n = 0; n < is.n; ++n) {
    for (std::size_t k = 0; k < spec.out_channels; ++k) {
      T* dst = out.plane(n, k);
      if (spec.bias) std::fill_n(dst, os.plane(), layer.bias[k]);
      const std::size_t first_in = (k / cout_g) * cin_g;
      for (std::size_t ci = 0; ci < cin_g; ++ci) {
        const T* src = input.plane(n, first_in + ci);
        const T* wk = layer.weight.data() + (k * cin_g + ci) * kh * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto rows = detail::tap_range(ky, p, s, is.h, os.h);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto cols = detail::tap_range(kx, p, s, is.w, os.w);
            const T wv = wk[ky * kw + kx];
            for (std::ptrdiff_t oy = rows.lo; oy < rows.hi; ++oy) {
              const std::size_t iy = oy * s + ky - p;
              const T* irow = src + iy * is.w;
              T* orow = dst + oy * os.w;
              if (s == 1) {
                const T* ip = irow + (static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(p));
                for (std::ptrdiff_t ox = cols.lo; ox < cols.hi; ++ox) orow[ox] += wv * ip[ox];
              } else {
                for (std::ptrdiff_t ox = cols.lo; ox < cols.hi; ++ox)
                  orow[ox] += wv * irow[ox * s + kx - p];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <Scalar T>
ConvGrads<T> conv_backward(const ConvLayer<T>& layer, const Tensor<T>& input,
                           const Tensor<T>& grad_out) {
  const ConvSpec& spec = layer.spec;
  spec.validate();
  const Shape4& is = input.shape();
  detail::check_conv_input(spec, is);
  const Shape4 os = spec.output_shape(is);
  if (grad_out.shape() != os)
    throw ShapeError("conv_backward: grad_out " + grad_out.shape().str() + ", expected " +
                     os.str());

  ConvGrads<T> g{Tensor<T>(is), Tensor<T>(spec.weight_shape()), std::nullopt};
  if (detail::use_gemm(spec)) {
    detail::gemm_backward(layer, input, grad_out, g.input, g.weight);
  } else {
    const std::size_t cin_g = spec.in_per_group();
    const std::size_t cout_g = spec.out_per_group();
    const std::size_t kh = spec.kernel_h;
    const std::size_t kw = spec.kernel_w;
    const std::size_t s = spec.stride;
    const std::size_t p = spec.padding;

    for (std::size_t n = 0; n < is.n; ++n) {
      for (std::size_t k = 0; k < spec.out_channels; ++k) {
        const T* go = grad_out.plane(n, k);
        const std::size_t first_in = (k / cout_g) * cin_g;
        for (std::size_t ci = 0; ci < cin_g; ++ci) {
          const T* src = input.plane(n, first_in + ci);
          T* gin = g.input.plane(n, first_in + ci);
          const T* wk = layer.weight.data() + (k * cin_g + ci) * kh * kw;
          T* gwk = g.weight.data() + (k * cin_g + ci) * kh * kw;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const auto rows = detail::tap_range(ky, p, s, is.h, os.h);
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const auto cols = detail::tap_range(kx, p, s, is.w, os.w);
              const T wv = wk[ky * kw + kx];
              double acc = 0.0;
              for (std::ptrdiff_t oy = rows.lo; oy < rows.hi; ++oy) {
                const std::size_t iy = oy * s + ky - p;
                const T* irow = src + iy * is.w;
                T* girow = gin + iy * is.w;
                const T* grow = go + oy * os.w;
                if (s == 1) {
                  const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(p);
                  const T* ip = irow + shift;
                  T* gp = girow + shift;
                  for (std::ptrdiff_t ox = cols.lo; ox < cols.hi; ++ox) gp[ox] += wv * grow[ox];
                  const T* g0 = grow + cols.lo;
                  const T* i0 = ip + cols.lo;
                  acc += lane_sum<T>(static_cast<std::size_t>(cols.hi - cols.lo),
                                     [g0, i0](std::size_t i) { return g0[i] * i0[i]; });
                } else {
                  for (std::ptrdiff_t ox = cols.lo; ox < cols.hi; ++ox) {
                    const std::size_t ix = ox * s + kx - p;
                    acc += grow[ox] * irow[ix];
                    girow[ix] += wv * grow[ox];
                  }
                }
              }
              gwk[ky * kw + kx] += static_cast<T>(acc);
            }
          }
        }
      }
    }
  }

  if (spec.bias) {
    Tensor<T> gb({1, spec.out_channels, 1, 1});
    for (std::size_t n = 0; n < os.n; ++n)
      for (std::size_t k = 0; k < spec.out_channels; ++k) {
        const T* go = grad_out.plane(n, k);
        T acc{0};
        for (std::size_t i = 0; i < os.plane(); ++i) acc += go[i];
        gb[k] += acc;
      }
    g.bias = std::move(gb);
  }
  return g;
}

}  // namespace sdcnet
