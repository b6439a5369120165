#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sdcnet/error.hpp"
#include "sdcnet/rng.hpp"

namespace sdcnet {

template <typename T>
concept Scalar = std::same_as<T, float> || std::same_as<T, double>;

// Sum of term(0) .. term(n-1) over eight interleaved accumulators of type
// Acc. The fixed association keeps results reproducible while letting the
// compiler vectorize the loop.
template <typename Acc = double, typename Term>
Acc lane_sum(std::size_t n, Term&& term) {
  Acc acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += term(i + l);
  for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += term(i);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// Extents of a rank-4 batch/channel/height/width array.
struct Shape4 {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  [[nodiscard]] std::size_t plane() const noexcept { return h * w; }
  [[nodiscard]] std::size_t image() const noexcept { return c * h * w; }
  [[nodiscard]] std::size_t count() const noexcept { return n * c * h * w; }

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
  }

  void validate() const {
    if (n == 0 || c == 0 || h == 0 || w == 0)
      throw ShapeError("invalid shape " + str() + ": every extent must be positive");
    constexpr auto kMax = std::numeric_limits<std::size_t>::max();
    if (c > kMax / n || h > kMax / (n * c) || w > kMax / (n * c * h))
      throw ShapeError("invalid shape " + str() + ": element count overflows");
  }

  friend bool operator==(const Shape4&, const Shape4&) = default;
};

// Dense rank-4 array, elements stored batch -> channel -> row -> column.
template <Scalar T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape4 shape, T fill = T{0}) : shape_(shape) {
    shape_.validate();
    data_.assign(shape_.count(), fill);
  }

  Tensor(Shape4 shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    shape_.validate();
    if (data_.size() != shape_.count())
      throw ShapeError("tensor " + shape_.str() + " needs " + std::to_string(shape_.count()) +
                       " values, got " + std::to_string(data_.size()));
  }

  [[nodiscard]] const Shape4& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::span<T> values() noexcept { return data_; }
  [[nodiscard]] std::span<const T> values() const noexcept { return data_; }
  [[nodiscard]] T* data() noexcept { return data_.data(); }
  [[nodiscard]] const T* data() const noexcept { return data_.data(); }

  [[nodiscard]] std::size_t offset(std::size_t n, std::size_t c, std::size_t y,
                                   std::size_t x) const noexcept {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[offset(n, c, y, x)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[offset(n, c, y, x)];
  }

  // Pointer to the h*w plane of (n, c).
  T* plane(std::size_t n, std::size_t c) noexcept { return data_.data() + offset(n, c, 0, 0); }
  const T* plane(std::size_t n, std::size_t c) const noexcept {
    return data_.data() + offset(n, c, 0, 0);
  }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <Scalar U>
  [[nodiscard]] Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

template <Scalar T>
Tensor<T> tensor_new(Shape4 shape, T fill) {
  return Tensor<T>(shape, fill);
}

template <Scalar T>
Tensor<T> tensor_random_normal(Shape4 shape, double mean, double stddev, Rng& rng) {
  if (stddev < 0.0) throw InvalidArgument("tensor_random_normal: stddev must be non-negative");
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(mean, stddev));
  return t;
}

template <Scalar T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: " + sa.str() + " and " + sb.str() +
                     " disagree outside the channel axis");
  Tensor<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t ia = sa.image();
  const std::size_t ib = sb.image();
  for (std::size_t n = 0; n < sa.n; ++n) {
    T* dst = out.data() + n * (ia + ib);
    std::copy_n(a.data() + n * ia, ia, dst);
    std::copy_n(b.data() + n * ib, ib, dst + ia);
  }
  return out;
}

template <Scalar T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::size_t at) {
  const auto& s = t.shape();
  if (at == 0 || at >= s.c)
    throw IndexError("split_channels: split point " + std::to_string(at) + " outside (0, " +
                     std::to_string(s.c) + ")");
  Tensor<T> a({s.n, at, s.h, s.w});
  Tensor<T> b({s.n, s.c - at, s.h, s.w});
  const std::size_t ia = a.shape().image();
  const std::size_t ib = b.shape().image();
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = t.data() + n * s.image();
    std::copy_n(src, ia, a.data() + n * ia);
    std::copy_n(src + ia, ib, b.data() + n * ib);
  }
  return {std::move(a), std::move(b)};
}

template <Scalar T>
Tensor<T> add_elementwise(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add_elementwise: " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::size_t i = 0, e = a.size(); i < e; ++i) po[i] = pa[i] + pb[i];
  return out;
}

// In-place accumulate, used by the backward passes.
template <Scalar T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.shape() != src.shape())
    throw ShapeError("add_into: " + dst.shape().str() + " vs " + src.shape().str());
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0, e = dst.size(); i < e; ++i) d[i] += s[i];
}

template <Scalar T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace sdcnet
