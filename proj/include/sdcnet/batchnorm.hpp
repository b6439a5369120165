#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sdcnet/error.hpp"
#include "sdcnet/tensor.hpp"

namespace sdcnet {

enum class Mode { Training, Inference };

template <Scalar T>
struct BatchNormLayer {
  std::size_t channels = 0;
  Tensor<T> gamma;         // (1, C, 1, 1), trainable
  Tensor<T> beta;          // (1, C, 1, 1), trainable
  Tensor<T> running_mean;  // (1, C, 1, 1)
  Tensor<T> running_var;   // (1, C, 1, 1)
  double epsilon = 1e-5;
  double momentum = 0.9;  // running <- momentum * running + (1 - momentum) * batch

  BatchNormLayer() = default;

  explicit BatchNormLayer(std::size_t c)
      : channels(c),
        gamma({1, c, 1, 1}, T{1}),
        beta({1, c, 1, 1}, T{0}),
        running_mean({1, c, 1, 1}, T{0}),
        running_var({1, c, 1, 1}, T{1}) {}

  [[nodiscard]] std::size_t parameter_count() const noexcept { return 2 * channels; }
};

template <Scalar T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

namespace detail {

struct ChannelMoments {
  std::vector<double> mean;
  std::vector<double> var;  // biased
  std::size_t count = 0;
};

template <Scalar T>
ChannelMoments channel_moments(const Tensor<T>& x) {
  const Shape4& s = x.shape();
  ChannelMoments m{std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0), s.n * s.plane()};
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = x.plane(n, c);
      sum += lane_sum(s.plane(), [p](std::size_t i) { return static_cast<double>(p[i]); });
    }
    const double mean = sum / static_cast<double>(m.count);
    double sq = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = x.plane(n, c);
      sq += lane_sum(s.plane(), [p, mean](std::size_t i) {
        const double d = p[i] - mean;
        return d * d;
      });
    }
    m.mean[c] = mean;
    m.var[c] = sq / static_cast<double>(m.count);
  }
  return m;
}

template <Scalar T>
void check_bn_input(const BatchNormLayer<T>& layer, const Tensor<T>& x, Mode mode) {
  if (x.shape().c != layer.channels)
    throw ShapeError("batchnorm: input has " + std::to_string(x.shape().c) +
                     " channels, layer expects " + std::to_string(layer.channels));
  if (mode == Mode::Training && x.shape().n * x.shape().plane() < 2)
    throw DegenerateBatchError("batchnorm: training mode needs at least 2 values per channel");
}

}  // namespace detail

// Training mode normalizes with batch moments and updates the running
// statistics; inference mode uses the running statistics.
template <Scalar T>
Tensor<T> batchnorm_forward(BatchNormLayer<T>& layer, const Tensor<T>& input, Mode mode) {
  detail::check_bn_input(layer, input, mode);
  const Shape4& s = input.shape();
  Tensor<T> out(s);

  std::vector<double> mean(s.c);
  std::vector<double> inv_std(s.c);
  if (mode == Mode::Training) {
    const auto m = detail::channel_moments(input);
    const double unbias = static_cast<double>(m.count) / static_cast<double>(m.count - 1);
    for (std::size_t c = 0; c < s.c; ++c) {
      mean[c] = m.mean[c];
      inv_std[c] = 1.0 / std::sqrt(m.var[c] + layer.epsilon);
      layer.running_mean[c] = static_cast<T>(layer.momentum * layer.running_mean[c] +
                                             (1.0 - layer.momentum) * m.mean[c]);
      layer.running_var[c] = static_cast<T>(layer.momentum * layer.running_var[c] +
                                            (1.0 - layer.momentum) * m.var[c] * unbias);
    }
  } else {
    for (std::size_t c = 0; c < s.c; ++c) {
      mean[c] = layer.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(layer.running_var[c]) + layer.epsilon);
    }
  }

  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T scale = static_cast<T>(layer.gamma[c] * inv_std[c]);
      const T shift = static_cast<T>(layer.beta[c] - layer.gamma[c] * inv_std[c] * mean[c]);
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = src[i] * scale + shift;
    }
  return out;
}

// Backward through the training-mode normalization, batch moments included.
// Moments are recomputed from `input`, so the layer is not mutated.
template <Scalar T>
BatchNormGrads<T> batchnorm_backward(const BatchNormLayer<T>& layer, const Tensor<T>& input,
                                     const Tensor<T>& grad_out, Mode mode = Mode::Training) {
  if (mode != Mode::Training)
    throw InvalidArgument("batchnorm_backward: only training-mode backward is supported");
  detail::check_bn_input(layer, input, mode);
  const Shape4& s = input.shape();
  if (grad_out.shape() != s)
    throw ShapeError("batchnorm_backward: grad_out " + grad_out.shape().str() + " vs input " +
                     s.str());

  BatchNormGrads<T> g{Tensor<T>(s), Tensor<T>({1, s.c, 1, 1}), Tensor<T>({1, s.c, 1, 1})};
  const auto m = detail::channel_moments(input);
  const double count = static_cast<double>(m.count);

  for (std::size_t c = 0; c < s.c; ++c) {
    const double inv_std = 1.0 / std::sqrt(m.var[c] + layer.epsilon);
    const double mean = m.mean[c];
    double sum_dy = 0.0;
    double sum_dy_xc = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* x = input.plane(n, c);
      const T* dy = grad_out.plane(n, c);
      sum_dy += lane_sum(s.plane(), [dy](std::size_t i) { return static_cast<double>(dy[i]); });
      sum_dy_xc += lane_sum(s.plane(), [x, dy, mean](std::size_t i) {
        return static_cast<double>(dy[i]) * (x[i] - mean);
      });
    }
    const double sum_dy_xhat = sum_dy_xc * inv_std;
    g.beta[c] = static_cast<T>(sum_dy);
    g.gamma[c] = static_cast<T>(sum_dy_xhat);

    // dx = gamma * inv_std / N * (N*dy - sum(dy) - xhat * sum(dy*xhat))
    // Expanded to dx = a * dy + b * x + c0 per channel.
    const double k = layer.gamma[c] * inv_std / count;
    const T a = static_cast<T>(k * count);
    const T b = static_cast<T>(-k * inv_std * sum_dy_xhat);
    const T c0 = static_cast<T>(-k * sum_dy + k * inv_std * sum_dy_xhat * mean);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* x = input.plane(n, c);
      const T* dy = grad_out.plane(n, c);
      T* dx = g.input.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) dx[i] = a * dy[i] + b * x[i] + c0;
    }
  }
  return g;
}

}  // namespace sdcnet
