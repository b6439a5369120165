#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdcnet/error.hpp"
#include "sdcnet/rng.hpp"
#include "sdcnet/tensor.hpp"

namespace sdcnet {

// CIFAR binary layouts. A CIFAR-10 record is 1 label byte then
// 3072 pixel bytes (1024 red, 1024 green, 1024 blue, each row-major 32x32).
// A CIFAR-100 record has a coarse label byte and a fine label byte first.
enum class CifarFormat { Cifar10, Cifar100 };

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImageBytes = 3 * kImageSide * kImageSide;
inline constexpr std::size_t kRecordsPerBatchFile = 10'000;

inline constexpr std::size_t record_size(CifarFormat f) {
  return kImageBytes + (f == CifarFormat::Cifar10 ? 1 : 2);
}

enum class Split { Train, Test };

template <Scalar T>
struct LabeledImage {
  Tensor<T> pixels;  // (1, 3, 32, 32)
  int label = 0;
  int coarse_label = -1;  // CIFAR-100 only
};

struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

// Images are kept as the raw bytes of the file; standardized tensors are
// produced on access.
class Dataset {
 public:
  Dataset() = default;

  Dataset(Split split, CifarFormat format, std::size_t classes, std::vector<std::uint8_t> pixels,
          std::vector<int> labels, std::vector<int> coarse = {})
      : split_(split),
        format_(format),
        classes_(classes),
        pixels_(std::move(pixels)),
        labels_(std::move(labels)),
        coarse_(std::move(coarse)) {
    if (pixels_.size() != labels_.size() * kImageBytes)
      throw FormatError("dataset: pixel buffer does not match label count");
    for (int l : labels_)
      if (l < 0 || static_cast<std::size_t>(l) >= classes_)
        throw FormatError("dataset: label " + std::to_string(l) + " outside [0, " +
                          std::to_string(classes_) + ")");
  }

  [[nodiscard]] std::size_t size() const noexcept { return labels_.size(); }
  [[nodiscard]] bool empty() const noexcept { return labels_.empty(); }
  [[nodiscard]] std::size_t classes() const noexcept { return classes_; }
  [[nodiscard]] Split split() const noexcept { return split_; }
  [[nodiscard]] CifarFormat format() const noexcept { return format_; }
  [[nodiscard]] const ChannelStats& stats() const noexcept { return stats_; }
  [[nodiscard]] std::span<const int> labels() const noexcept { return labels_; }
  [[nodiscard]] int label(std::size_t i) const { return labels_.at(i); }

  [[nodiscard]] std::span<const std::uint8_t> raw_pixels(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels_).subspan(i * kImageBytes, kImageBytes);
  }

  // The record exactly as it appeared in the file.
  [[nodiscard]] std::vector<std::uint8_t> record_bytes(std::size_t i) const {
    std::vector<std::uint8_t> out;
    out.reserve(record_size(format_));
    if (format_ == CifarFormat::Cifar100) out.push_back(static_cast<std::uint8_t>(coarse_.at(i)));
    out.push_back(static_cast<std::uint8_t>(labels_.at(i)));
    const auto px = raw_pixels(i);
    out.insert(out.end(), px.begin(), px.end());
    return out;
  }

  // Per-channel mean / stddev of b / 255 over this dataset.
  [[nodiscard]] ChannelStats compute_stats() const {
    ChannelStats st;
    const std::size_t plane = kImageSide * kImageSide;
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0.0;
      double sq = 0.0;
      for (std::size_t i = 0; i < size(); ++i) {
        const std::uint8_t* p = pixels_.data() + i * kImageBytes + c * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const double v = p[k] / 255.0;
          sum += v;
          sq += v * v;
        }
      }
      const double n = static_cast<double>(size() * plane);
      st.mean[c] = sum / n;
      const double var = std::max(sq / n - st.mean[c] * st.mean[c], 0.0);
      st.stddev[c] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return st;
  }

  void set_stats(const ChannelStats& st) { stats_ = st; }

  // Pixel byte b -> (b / 255 - mean_c) / stddev_c.
  template <Scalar T = float>
  [[nodiscard]] LabeledImage<T> image(std::size_t i) const {
    LabeledImage<T> img{Tensor<T>({1, 3, kImageSide, kImageSide}), labels_.at(i),
                        coarse_.empty() ? -1 : coarse_[i]};
    write_standardized(i, img.pixels.data());
    return img;
  }

  template <Scalar T>
  void write_standardized(std::size_t i, T* dst) const {
    const std::size_t plane = kImageSide * kImageSide;
    const std::uint8_t* src = pixels_.data() + i * kImageBytes;
    for (std::size_t c = 0; c < 3; ++c) {
      const double inv = 1.0 / stats_.stddev[c];
      for (std::size_t k = 0; k < plane; ++k)
        dst[c * plane + k] = static_cast<T>((src[c * plane + k] / 255.0 - stats_.mean[c]) * inv);
    }
  }

  // The first `count` examples (same statistics).
  [[nodiscard]] Dataset head(std::size_t count) const {
    count = std::min(count, size());
    Dataset d(split_, format_, classes_,
              std::vector<std::uint8_t>(pixels_.begin(), pixels_.begin() + count * kImageBytes),
              std::vector<int>(labels_.begin(), labels_.begin() + count),
              coarse_.empty() ? std::vector<int>{}
                              : std::vector<int>(coarse_.begin(), coarse_.begin() + count));
    d.stats_ = stats_;
    return d;
  }

  void append(const Dataset& other) {
    pixels_.insert(pixels_.end(), other.pixels_.begin(), other.pixels_.end());
    labels_.insert(labels_.end(), other.labels_.begin(), other.labels_.end());
    coarse_.insert(coarse_.end(), other.coarse_.begin(), other.coarse_.end());
  }

 private:
  Split split_ = Split::Train;
  CifarFormat format_ = CifarFormat::Cifar10;
  std::size_t classes_ = 10;
  std::vector<std::uint8_t> pixels_;
  std::vector<int> labels_;
  std::vector<int> coarse_;
  ChannelStats stats_{};
};

// Reads one batch file. With expected_records set, the file must hold
// exactly that many records; otherwise any whole number of records.
inline Dataset read_cifar_file(const std::filesystem::path& path, CifarFormat format, Split split,
                               std::optional<std::size_t> expected_records = std::nullopt) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw NotFoundError("CIFAR file not found: " + path.string());
  const std::size_t rec = record_size(format);
  const auto bytes = static_cast<std::size_t>(fs::file_size(path));
  if (expected_records && bytes != *expected_records * rec)
    throw FormatError(path.string() + ": expected " + std::to_string(*expected_records * rec) +
                      " bytes (" + std::to_string(*expected_records) + " records of " +
                      std::to_string(rec) + "), found " + std::to_string(bytes));
  if (bytes == 0 || bytes % rec != 0)
    throw FormatError(path.string() + ": length " + std::to_string(bytes) +
                      " is not a positive multiple of the " + std::to_string(rec) +
                      "-byte record");

  std::vector<std::uint8_t> raw(bytes);
  std::ifstream in(path, std::ios::binary);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes)))
    throw FormatError(path.string() + ": short read");

  const std::size_t count = bytes / rec;
  const std::size_t classes = format == CifarFormat::Cifar10 ? 10 : 100;
  std::vector<std::uint8_t> pixels(count * kImageBytes);
  std::vector<int> labels(count);
  std::vector<int> coarse;
  if (format == CifarFormat::Cifar100) coarse.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* r = raw.data() + i * rec;
    if (format == CifarFormat::Cifar10) {
      labels[i] = r[0];
    } else {
      coarse[i] = r[0];
      labels[i] = r[1];
    }
    std::copy_n(r + (rec - kImageBytes), kImageBytes, pixels.data() + i * kImageBytes);
  }
  return Dataset(split, format, classes, std::move(pixels), std::move(labels), std::move(coarse));
}

struct CifarSplits {
  Dataset train;
  Dataset test;
};

namespace detail {

// Accept either the directory holding the .bin files or its parent (the
// archives unpack into cifar-10-batches-bin/ and cifar-100-binary/).
inline std::filesystem::path resolve_cifar_dir(const std::filesystem::path& dir,
                                               const std::string& probe,
                                               const std::string& subdir) {
  if (std::filesystem::exists(dir / probe)) return dir;
  if (std::filesystem::exists(dir / subdir / probe)) return dir / subdir;
  if (!std::filesystem::exists(dir))
    throw NotFoundError("data directory not found: " + dir.string());
  return dir;
}

inline void standardize(CifarSplits& s) {
  const ChannelStats st = s.train.compute_stats();
  s.train.set_stats(st);
  s.test.set_stats(st);
}

}  // namespace detail

inline CifarSplits load_cifar10(const std::filesystem::path& directory) {
  const auto dir = detail::resolve_cifar_dir(directory, "test_batch.bin", "cifar-10-batches-bin");
  CifarSplits s;
  for (int b = 1; b <= 5; ++b) {
    Dataset part = read_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"),
                                   CifarFormat::Cifar10, Split::Train, kRecordsPerBatchFile);
    if (b == 1) s.train = std::move(part);
    else s.train.append(part);
  }
  s.test = read_cifar_file(dir / "test_batch.bin", CifarFormat::Cifar10, Split::Test,
                           kRecordsPerBatchFile);
  detail::standardize(s);
  return s;
}

inline CifarSplits load_cifar100(const std::filesystem::path& directory) {
  const auto dir = detail::resolve_cifar_dir(directory, "test.bin", "cifar-100-binary");
  CifarSplits s;
  s.train = read_cifar_file(dir / "train.bin", CifarFormat::Cifar100, Split::Train,
                            5 * kRecordsPerBatchFile);
  s.test = read_cifar_file(dir / "test.bin", CifarFormat::Cifar100, Split::Test,
                           kRecordsPerBatchFile);
  detail::standardize(s);
  return s;
}

struct AugmentConfig {
  std::size_t pad = 4;
  std::size_t crop = 32;
  double flip_probability = 0.5;
  bool enabled = true;

  void validate() const {
    if (crop == 0 || crop > kImageSide + 2 * pad)
      throw InvalidArgument("augment: crop must lie in [1, 32 + 2*pad]");
    if (flip_probability < 0.0 || flip_probability > 1.0)
      throw InvalidArgument("augment: flip probability outside [0, 1]");
  }
};

struct AugmentDraw {
  std::size_t row_offset = 0;
  std::size_t col_offset = 0;
  bool flip = false;
};

// Draw order: row offset, column offset (each uniform_int over
// [0, 32 + 2*pad - crop]), then flip = uniform() < flip_probability.
inline AugmentDraw draw_augment(const AugmentConfig& cfg, Rng& rng) {
  const std::size_t span = kImageSide + 2 * cfg.pad - cfg.crop + 1;
  AugmentDraw d;
  d.row_offset = rng.uniform_int(span);
  d.col_offset = rng.uniform_int(span);
  d.flip = rng.uniform() < cfg.flip_probability;
  return d;
}

// Zero-pad by cfg.pad, crop cfg.crop x cfg.crop at the drawn offsets, then
// optionally mirror horizontally.
template <Scalar T>
LabeledImage<T> apply_augment(const LabeledImage<T>& image, const AugmentConfig& cfg,
                              const AugmentDraw& d) {
  const Shape4& s = image.pixels.shape();
  LabeledImage<T> out{Tensor<T>({1, s.c, cfg.crop, cfg.crop}), image.label, image.coarse_label};
  const auto pad = static_cast<std::ptrdiff_t>(cfg.pad);
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t y = 0; y < cfg.crop; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + d.row_offset) - pad;
      for (std::size_t x = 0; x < cfg.crop; ++x) {
        const std::size_t xx = d.flip ? cfg.crop - 1 - x : x;
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + d.col_offset) - pad;
        T v{0};
        if (sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(s.h) &&
            sx < static_cast<std::ptrdiff_t>(s.w))
          v = image.pixels.at(0, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
        out.pixels.at(0, c, y, x) = v;
      }
    }
  return out;
}

template <Scalar T>
LabeledImage<T> augment(const LabeledImage<T>& image, const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return image;
  cfg.validate();
  return apply_augment(image, cfg, draw_augment(cfg, rng));
}

template <Scalar T>
struct Batch {
  Tensor<T> images;  // (b, 3, 32, 32)
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // dataset positions
};

// One pass over a dataset. With shuffling the visit order is a Fisher-Yates
// permutation drawn from `order_rng`; augmentation of example i uses
// augment_rng.split(i), so results do not depend on batch boundaries.
template <Scalar T = float>
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, bool shuffle, Rng order_rng,
                std::optional<AugmentConfig> aug = std::nullopt, Rng augment_rng = Rng{})
      : data_(&data), batch_size_(batch_size), aug_(aug), augment_rng_(augment_rng) {
    if (batch_size == 0) throw InvalidArgument("batch_iterator: batch size must be >= 1");
    if (data.empty()) throw InvalidArgument("batch_iterator: empty dataset");
    if (aug_ && aug_->enabled) aug_->validate();
    order_.resize(data.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (shuffle)
      for (std::size_t i = order_.size() - 1; i > 0; --i)
        std::swap(order_[i], order_[order_rng.uniform_int(i + 1)]);
  }

  [[nodiscard]] std::size_t batch_count() const noexcept {
    return (order_.size() + batch_size_ - 1) / batch_size_;
  }

  [[nodiscard]] const std::vector<std::size_t>& order() const noexcept { return order_; }

  bool next(Batch<T>& out) {
    if (pos_ >= order_.size()) return false;
    const std::size_t count = std::min(batch_size_, order_.size() - pos_);
    out.images = Tensor<T>({count, 3, kImageSide, kImageSide});
    out.labels.resize(count);
    out.indices.assign(order_.begin() + pos_, order_.begin() + pos_ + count);
    const std::size_t img = kImageBytes;
    for (std::size_t b = 0; b < count; ++b) {
      const std::size_t idx = out.indices[b];
      out.labels[b] = data_->label(idx);
      T* dst = out.images.data() + b * img;
      if (aug_ && aug_->enabled) {
        Rng r = augment_rng_.split(idx);
        const auto a = augment(data_->image<T>(idx), *aug_, r);
        std::copy_n(a.pixels.data(), img, dst);
      } else {
        data_->write_standardized(idx, dst);
      }
    }
    pos_ += count;
    return true;
  }

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::optional<AugmentConfig> aug_;
  Rng augment_rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// Deterministic stand-in data in CIFAR-10 layout: each class gets a fixed
// random template, images are template plus per-image noise. Used where a
// test needs real-shaped input but not real images.
inline Dataset synthetic_cifar10(std::size_t count, std::uint64_t seed, double noise = 0.35,
                                 Split split = Split::Train, std::size_t classes = 10) {
  Rng base(seed);
  Rng tmpl_rng = base.split(1);
  std::vector<std::vector<double>> templates(classes, std::vector<double>(kImageBytes));
  for (auto& t : templates)
    for (auto& v : t) v = tmpl_rng.uniform();
  Rng img_rng = base.split(2);
  std::vector<std::uint8_t> pixels(count * kImageBytes);
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    labels[i] = static_cast<int>(img_rng.uniform_int(classes));
    const auto& t = templates[static_cast<std::size_t>(labels[i])];
    for (std::size_t k = 0; k < kImageBytes; ++k) {
      const double v = (1.0 - noise) * t[k] + noise * img_rng.uniform();
      pixels[i * kImageBytes + k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  Dataset d(split, CifarFormat::Cifar10, classes, std::move(pixels), std::move(labels));
  d.set_stats(d.compute_stats());
  return d;
}

}  // namespace sdcnet
