#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "sdcnet/error.hpp"
#include "sdcnet/rng.hpp"
#include "sdcnet/tensor.hpp"

namespace sdcnet {

// Instrumentation for structural tests (e.g. ReLU sites per block).
struct OpCounters {
  std::size_t relu = 0;
};

inline OpCounters& op_counters() {
  thread_local OpCounters counters;
  return counters;
}

template <Scalar T>
Tensor<T> relu(const Tensor<T>& input) {
  ++op_counters().relu;
  Tensor<T> out(input.shape());
  const T* src = input.data();
  T* dst = out.data();
  for (std::size_t i = 0, e = input.size(); i < e; ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  return out;
}

// `activation` may be the ReLU input or its output: both are > 0 at exactly
// the same positions. The derivative at 0 is taken as 0.
template <Scalar T>
Tensor<T> relu_backward(const Tensor<T>& activation, const Tensor<T>& grad_out) {
  if (activation.shape() != grad_out.shape())
    throw ShapeError("relu_backward: " + activation.shape().str() + " vs " +
                     grad_out.shape().str());
  Tensor<T> g(activation.shape());
  const T* a = activation.data();
  const T* go = grad_out.data();
  T* dst = g.data();
  for (std::size_t i = 0, e = g.size(); i < e; ++i) {
    const T v = go[i];
    dst[i] = a[i] > T{0} ? v : T{0};
  }
  return g;
}

namespace detail {

inline Shape4 pool_output_shape(const Shape4& in, std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || stride == 0) throw ShapeError("avgpool: kernel and stride must be positive");
  if (in.h < kernel || in.w < kernel)
    throw ShapeError("avgpool: kernel " + std::to_string(kernel) + " larger than input " +
                     in.str());
  return {in.n, in.c, (in.h - kernel) / stride + 1, (in.w - kernel) / stride + 1};
}

}  // namespace detail

template <Scalar T>
Tensor<T> avgpool_forward(const Tensor<T>& input, std::size_t kernel, std::size_t stride) {
  const Shape4& is = input.shape();
  const Shape4 os = detail::pool_output_shape(is, kernel, stride);
  Tensor<T> out(os);
  const T area = static_cast<T>(kernel * kernel);
  for (std::size_t n = 0; n < is.n; ++n)
    for (std::size_t c = 0; c < is.c; ++c) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t oy = 0; oy < os.h; ++oy)
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          T acc{0};
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            const T* row = src + (oy * stride + ky) * is.w + ox * stride;
            for (std::size_t kx = 0; kx < kernel; ++kx) acc += row[kx];
          }
          dst[oy * os.w + ox] = acc / area;
        }
    }
  return out;
}

template <Scalar T>
Tensor<T> avgpool_backward(const Shape4& input_shape, const Tensor<T>& grad_out,
                           std::size_t kernel, std::size_t stride) {
  const Shape4 os = detail::pool_output_shape(input_shape, kernel, stride);
  if (grad_out.shape() != os)
    throw ShapeError("avgpool_backward: grad_out " + grad_out.shape().str() + ", expected " +
                     os.str());
  Tensor<T> g(input_shape);
  const T scale = T{1} / static_cast<T>(kernel * kernel);
  for (std::size_t n = 0; n < os.n; ++n)
    for (std::size_t c = 0; c < os.c; ++c) {
      const T* go = grad_out.plane(n, c);
      T* dst = g.plane(n, c);
      for (std::size_t oy = 0; oy < os.h; ++oy)
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          const T v = go[oy * os.w + ox] * scale;
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            T* row = dst + (oy * stride + ky) * input_shape.w + ox * stride;
            for (std::size_t kx = 0; kx < kernel; ++kx) row[kx] += v;
          }
        }
    }
  return g;
}

// Reshape the channel axis to (sections, c / sections) and transpose:
// output channel j * sections + i takes input channel i * (c / sections) + j.
template <Scalar T>
Tensor<T> channel_shuffle(const Tensor<T>& input, std::size_t sections) {
  const Shape4& s = input.shape();
  if (sections == 0 || s.c % sections != 0)
    throw ShapeError("channel_shuffle: " + std::to_string(sections) + " sections do not divide " +
                     std::to_string(s.c) + " channels");
  const std::size_t per = s.c / sections;
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < sections; ++i)
      for (std::size_t j = 0; j < per; ++j)
        std::copy_n(input.plane(n, i * per + j), s.plane(), out.plane(n, j * sections + i));
  return out;
}

// The inverse permutation is the shuffle with the complementary section count.
template <Scalar T>
Tensor<T> channel_shuffle_backward(const Tensor<T>& grad_out, std::size_t sections) {
  const std::size_t c = grad_out.shape().c;
  if (sections == 0 || c % sections != 0)
    throw ShapeError("channel_shuffle_backward: " + std::to_string(sections) +
                     " sections do not divide " + std::to_string(c) + " channels");
  return channel_shuffle(grad_out, c / sections);
}

template <Scalar T>
struct LinearLayer {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Tensor<T> weight;  // (out, in, 1, 1)
  Tensor<T> bias;    // (1, out, 1, 1)

  LinearLayer() = default;

  LinearLayer(std::size_t in, std::size_t out)
      : in_features(in), out_features(out), weight({out, in, 1, 1}), bias({1, out, 1, 1}) {}

  static LinearLayer init(std::size_t in, std::size_t out, Rng& rng) {
    LinearLayer layer(in, out);
    layer.weight = tensor_random_normal<T>({out, in, 1, 1}, 0.0,
                                           std::sqrt(2.0 / static_cast<double>(in)), rng);
    return layer;
  }

  [[nodiscard]] std::size_t parameter_count() const noexcept {
    return weight.size() + bias.size();
  }
};

template <Scalar T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

// Flattens each batch element; returns scores shaped (n, out, 1, 1).
template <Scalar T>
Tensor<T> linear_forward(const LinearLayer<T>& layer, const Tensor<T>& input) {
  const Shape4& s = input.shape();
  if (s.image() != layer.in_features)
    throw ShapeError("linear: flattened input length " + std::to_string(s.image()) +
                     " != in_features " + std::to_string(layer.in_features));
  Tensor<T> out({s.n, layer.out_features, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* x = input.data() + n * s.image();
    for (std::size_t o = 0; o < layer.out_features; ++o) {
      const T* w = layer.weight.data() + o * layer.in_features;
      T acc = layer.bias[o];
      for (std::size_t i = 0; i < layer.in_features; ++i) acc += w[i] * x[i];
      out[n * layer.out_features + o] = acc;
    }
  }
  return out;
}

template <Scalar T>
LinearGrads<T> linear_backward(const LinearLayer<T>& layer, const Tensor<T>& input,
                               const Tensor<T>& grad_out) {
  const Shape4& s = input.shape();
  if (s.image() != layer.in_features)
    throw ShapeError("linear_backward: flattened input length mismatch");
  if (grad_out.shape() != Shape4{s.n, layer.out_features, 1, 1})
    throw ShapeError("linear_backward: grad_out " + grad_out.shape().str());
  LinearGrads<T> g{Tensor<T>(s), Tensor<T>(layer.weight.shape()), Tensor<T>(layer.bias.shape())};
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* x = input.data() + n * s.image();
    T* gx = g.input.data() + n * s.image();
    for (std::size_t o = 0; o < layer.out_features; ++o) {
      const T go = grad_out[n * layer.out_features + o];
      const T* w = layer.weight.data() + o * layer.in_features;
      T* gw = g.weight.data() + o * layer.in_features;
      g.bias[o] += go;
      for (std::size_t i = 0; i < layer.in_features; ++i) {
        gw[i] += go * x[i];
        gx[i] += go * w[i];
      }
    }
  }
  return g;
}

template <Scalar T>
struct LossResult {
  double loss = 0.0;  // mean over the batch
  Tensor<T> grad;     // d(mean loss)/d(scores)
};

template <Scalar T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& scores, std::span<const int> labels) {
  const Shape4& s = scores.shape();
  const std::size_t classes = s.image();
  if (labels.size() != s.n)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(s.n) + " score rows");
  LossResult<T> r{0.0, Tensor<T>(s)};
  const double inv_n = 1.0 / static_cast<double>(s.n);
  for (std::size_t n = 0; n < s.n; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw IndexError("softmax_cross_entropy: label " + std::to_string(label) +
                       " outside [0, " + std::to_string(classes) + ")");
    const T* z = scores.data() + n * classes;
    const double zmax = *std::max_element(z, z + classes);
    double denom = 0.0;
    for (std::size_t k = 0; k < classes; ++k) denom += std::exp(z[k] - zmax);
    const double log_denom = std::log(denom);
    r.loss += (log_denom - (z[label] - zmax)) * inv_n;
    T* g = r.grad.data() + n * classes;
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::exp(z[k] - zmax - log_denom);
      g[k] = static_cast<T>((p - (static_cast<int>(k) == label ? 1.0 : 0.0)) * inv_n);
    }
  }
  return r;
}

template <Scalar T>
std::size_t argmax_row(const Tensor<T>& scores, std::size_t n) {
  const std::size_t classes = scores.shape().image();
  const T* z = scores.data() + n * classes;
  return static_cast<std::size_t>(std::max_element(z, z + classes) - z);
}

}  // namespace sdcnet
