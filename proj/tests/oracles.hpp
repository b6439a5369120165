#pragma once

// Independent reference implementations used only by tests. Nothing here
// calls into the library's kernels; only the Tensor container is shared.

#include <cstddef>
#include <vector>

#include "sdcnet/tensor.hpp"

namespace oracle {

using sdcnet::Shape4;
using sdcnet::Tensor;

// Direct grouped convolution: for every output element, sum over its group's
// input channels and the kernel window, skipping padded positions.
template <typename T>
Tensor<T> naive_grouped_conv(const Tensor<T>& in, const Tensor<T>& weight, std::size_t groups,
                             std::size_t stride, std::size_t pad) {
  const Shape4 is = in.shape();
  const Shape4 ws = weight.shape();
  const std::size_t K = ws.n;
  const std::size_t cpg = ws.c;
  const std::size_t kpg = K / groups;
  const std::size_t oh = (is.h + 2 * pad - ws.h) / stride + 1;
  const std::size_t ow = (is.w + 2 * pad - ws.w) / stride + 1;
  Tensor<T> out({is.n, K, oh, ow});
  for (std::size_t n = 0; n < is.n; ++n)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = 0;
          for (std::size_t ci = 0; ci < cpg; ++ci)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(is.h) ||
                    ix >= static_cast<long>(is.w))
                  continue;
                const std::size_t c = (k / kpg) * cpg + ci;
                acc += weight.at(k, ci, ky, kx) * in.at(n, c, iy, ix);
              }
          out.at(n, k, oy, ox) = acc;
        }
  return out;
}

// Standard (ungrouped) convolution written without any group arithmetic.
template <typename T>
Tensor<T> naive_standard_conv(const Tensor<T>& in, const Tensor<T>& weight, std::size_t stride,
                              std::size_t pad) {
  const Shape4 is = in.shape();
  const Shape4 ws = weight.shape();
  const std::size_t oh = (is.h + 2 * pad - ws.h) / stride + 1;
  const std::size_t ow = (is.w + 2 * pad - ws.w) / stride + 1;
  Tensor<T> out({is.n, ws.n, oh, ow});
  for (std::size_t n = 0; n < is.n; ++n)
    for (std::size_t k = 0; k < ws.n; ++k)
      for (std::size_t c = 0; c < is.c; ++c)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy >= 0 && ix >= 0 && iy < static_cast<long>(is.h) &&
                    ix < static_cast<long>(is.w))
                  out.at(n, k, oy, ox) += weight.at(k, c, ky, kx) * in.at(n, c, iy, ix);
              }
  return out;
}

// Per-channel 2-D cross-correlation over a zero-padded copy of the image.
template <typename T>
Tensor<T> naive_depthwise_conv(const Tensor<T>& in, const Tensor<T>& weight, std::size_t stride,
                               std::size_t pad) {
  const Shape4 is = in.shape();
  const Shape4 ws = weight.shape();
  const std::size_t ph = is.h + 2 * pad;
  const std::size_t pw = is.w + 2 * pad;
  const std::size_t oh = (ph - ws.h) / stride + 1;
  const std::size_t ow = (pw - ws.w) / stride + 1;
  Tensor<T> out({is.n, is.c, oh, ow});
  std::vector<T> padded(ph * pw);
  for (std::size_t n = 0; n < is.n; ++n)
    for (std::size_t c = 0; c < is.c; ++c) {
      std::fill(padded.begin(), padded.end(), T{0});
      for (std::size_t y = 0; y < is.h; ++y)
        for (std::size_t x = 0; x < is.w; ++x) padded[(y + pad) * pw + x + pad] = in.at(n, c, y, x);
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = 0;
          for (std::size_t ky = 0; ky < ws.h; ++ky)
            for (std::size_t kx = 0; kx < ws.w; ++kx)
              acc += weight.at(c, 0, ky, kx) * padded[(oy * stride + ky) * pw + ox * stride + kx];
          out.at(n, c, oy, ox) = acc;
        }
    }
  return out;
}

template <typename T>
Tensor<T> naive_avgpool(const Tensor<T>& in, std::size_t kernel, std::size_t stride) {
  const Shape4 is = in.shape();
  const std::size_t oh = (is.h - kernel) / stride + 1;
  const std::size_t ow = (is.w - kernel) / stride + 1;
  Tensor<T> out({is.n, is.c, oh, ow});
  for (std::size_t n = 0; n < is.n; ++n)
    for (std::size_t c = 0; c < is.c; ++c)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = 0;
          for (std::size_t ky = 0; ky < kernel; ++ky)
            for (std::size_t kx = 0; kx < kernel; ++kx)
              acc += in.at(n, c, oy * stride + ky, ox * stride + kx);
          out.at(n, c, oy, ox) = acc / static_cast<T>(kernel * kernel);
        }
  return out;
}

}  // namespace oracle
