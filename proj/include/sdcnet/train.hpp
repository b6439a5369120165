#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sdcnet/cifar.hpp"
#include "sdcnet/error.hpp"
#include "sdcnet/layers.hpp"
#include "sdcnet/network.hpp"
#include "sdcnet/params.hpp"
#include "sdcnet/rng.hpp"
#include "sdcnet/tensor.hpp"

namespace sdcnet {

struct LrSchedule {
  double lr_max = 0.1;
  double lr_min = 0.002;
  std::size_t total_epochs = 300;
};

// lr(t) = lr_min + (lr_max - lr_min) * (1 + cos(pi * t / T)) / 2, clamped to
// lr_min for t > T. Evaluated once per epoch.
inline double cosine_lr(const LrSchedule& s, double t) {
  if (s.total_epochs == 0 || t >= static_cast<double>(s.total_epochs)) return s.lr_min;
  if (t <= 0.0) return s.lr_max;
  const double phase = std::numbers::pi * t / static_cast<double>(s.total_epochs);
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(phase));
}

template <Scalar T>
struct OptimizerState {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool decay_bn_params = false;
  std::vector<NamedTensor<T>> velocity;  // parameter order; created on first step
};

// Nesterov SGD, look-ahead form:
//   g = grad + wd * w   (wd only for weights, and for BN params if enabled)
//   v = m * v + g
//   w = w - lr * (g + m * v)
template <Scalar T>
void sgd_step(const std::vector<ParamRef<T>>& params, const GradientSet<T>& grads,
              OptimizerState<T>& state, double lr) {
  if (grads.size() != params.size())
    throw BookkeepingError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                           std::to_string(params.size()) + " parameters");
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const auto& p : params) state.velocity.push_back({p.name, Tensor<T>(p.value->shape())});
  }
  if (state.velocity.size() != params.size())
    throw BookkeepingError("sgd_step: velocity buffers do not match the parameter list");

  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamRef<T>& p = params[i];
    const NamedTensor<T>& g = grads[i];
    NamedTensor<T>& v = state.velocity[i];
    if (g.name != p.name || v.name != p.name)
      throw BookkeepingError("sgd_step: gradient '" + g.name + "' / velocity '" + v.name +
                             "' at slot of parameter '" + p.name + "'");
    if (g.value.shape() != p.value->shape() || v.value.shape() != p.value->shape())
      throw BookkeepingError("sgd_step: shape mismatch for '" + p.name + "'");

    const bool decay = p.kind == ParamKind::Weight ||
                       (p.kind == ParamKind::Norm && state.decay_bn_params);
    const T wd = static_cast<T>(decay ? state.weight_decay : 0.0);
    const T m = static_cast<T>(state.momentum);
    const T rate = static_cast<T>(lr);
    T* w = p.value->data();
    const T* gr = g.value.data();
    T* vel = v.value.data();
    for (std::size_t k = 0, e = p.value->size(); k < e; ++k) {
      const T gt = gr[k] + wd * w[k];
      vel[k] = m * vel[k] + gt;
      w[k] -= rate * (gt + m * vel[k]);
    }
  }
}

struct TrainOptions {
  std::size_t batch_size = 128;
  AugmentConfig augment{};
};

struct EpochMetrics {
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double lr = 0.0;
  std::size_t steps = 0;
  std::vector<double> batch_losses;
};

// Stream ids for the per-epoch generators derived from the run's base Rng.
inline constexpr std::uint64_t kShuffleStream = 0x5348'5546;  // "SHUF"
inline constexpr std::uint64_t kAugmentStream = 0x4155'4721;  // "AUG!"

template <Scalar T>
EpochMetrics train_epoch(SdcNet<T>& net, const Dataset& data, OptimizerState<T>& opt,
                         const LrSchedule& schedule, std::size_t epoch, const Rng& rng,
                         const TrainOptions& options = {}) {
  EpochMetrics m;
  m.lr = cosine_lr(schedule, static_cast<double>(epoch));
  BatchIterator<T> it(data, options.batch_size, true, rng.split(kShuffleStream).split(epoch),
                      options.augment, rng.split(kAugmentStream).split(epoch));
  const auto params = net.parameters();
  Batch<T> batch;
  NetworkTape<T> tape;
  std::size_t correct = 0;
  std::size_t seen = 0;
  while (it.next(batch)) {
    const Tensor<T> scores = network_forward(net, batch.images, Mode::Training, &tape);
    auto loss = softmax_cross_entropy(scores, std::span<const int>(batch.labels));
    if (!std::isfinite(loss.loss)) {
      std::ostringstream os;
      os << "non-finite loss at epoch " << epoch << ", batch " << m.steps << ", lr " << m.lr;
      throw DivergenceError(os.str());
    }
    for (std::size_t n = 0; n < batch.labels.size(); ++n)
      if (argmax_row(scores, n) == static_cast<std::size_t>(batch.labels[n])) ++correct;
    seen += batch.labels.size();
    const GradientSet<T> grads = network_backward(net, tape, loss.grad);
    sgd_step(params, grads, opt, m.lr);
    m.batch_losses.push_back(loss.loss);
    ++m.steps;
  }
  double total = 0.0;
  for (double l : m.batch_losses) total += l;
  m.mean_loss = total / static_cast<double>(m.steps);
  m.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  return m;
}

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::size_t count = 0;
};

// Inference-mode pass over the whole split, standardization only.
template <Scalar T>
EvalResult evaluate(SdcNet<T>& net, const Dataset& data, std::size_t batch_size = 200) {
  BatchIterator<T> it(data, batch_size, false, Rng{});
  Batch<T> batch;
  EvalResult r;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  while (it.next(batch)) {
    const Tensor<T> scores = network_forward(net, batch.images, Mode::Inference);
    const auto loss = softmax_cross_entropy(scores, std::span<const int>(batch.labels));
    loss_sum += loss.loss * static_cast<double>(batch.labels.size());
    for (std::size_t n = 0; n < batch.labels.size(); ++n)
      if (argmax_row(scores, n) == static_cast<std::size_t>(batch.labels[n])) ++correct;
    r.count += batch.labels.size();
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  r.mean_loss = loss_sum / static_cast<double>(r.count);
  return r;
}

// Everything needed to continue a run bit-for-bit.
template <Scalar T>
struct TrainingState {
  SdcNet<T> net;
  OptimizerState<T> optimizer;
  std::size_t epoch = 0;  // epochs completed
  Rng rng;                // base generator of the run
};

template <Scalar T>
TrainingState<T> start_training(const NetworkConfig& config, std::uint64_t seed) {
  Rng base(seed);
  Rng init = base.split(0x494E4954);  // "INIT"
  TrainingState<T> s{build_network<T>(config, init), {}, 0, base};
  return s;
}

// Runs epochs state.epoch .. end_epoch - 1, calling on_epoch(state, metrics)
// after each one (state.epoch already advanced). Epoch randomness is keyed
// by the epoch index, so stopping and resuming reproduces the same run.
template <Scalar T, typename OnEpoch>
void train_until(TrainingState<T>& state, const Dataset& data, const LrSchedule& schedule,
                 std::size_t end_epoch, const TrainOptions& options, OnEpoch&& on_epoch) {
  while (state.epoch < end_epoch) {
    const EpochMetrics m =
        train_epoch(state.net, data, state.optimizer, schedule, state.epoch, state.rng, options);
    ++state.epoch;
    on_epoch(state, m);
  }
}

struct TrainConfig {
  std::string preset = "g3-s";
  std::size_t classes = 10;
  std::size_t batch_size = 128;
  std::size_t epochs = 300;
  std::uint64_t seed = 1;
  std::optional<std::size_t> subset_size;
  std::optional<std::size_t> test_subset_size;
  std::filesystem::path checkpoint;
  std::size_t eval_every = 1;  // 0 disables test evaluation
  bool augment = true;
  bool decay_bn_params = false;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (subset_size && *subset_size == 0) throw ConfigError("train: subset size must be >= 1");
  }

  [[nodiscard]] TrainOptions options() const {
    TrainOptions o;
    o.batch_size = batch_size;
    o.augment.enabled = augment;
    return o;
  }

  [[nodiscard]] LrSchedule schedule() const { return LrSchedule{0.1, 0.002, epochs}; }
};

// Checkpoint file, little-endian:
//   "SDCN" | u32 version | u32 len, config text
//   | u32 count, records (parameters, then BN running statistics)
//   | f64 momentum | f64 weight_decay | u8 decay_bn_params
//   | u32 count, records (velocities)
//   | u64 epoch | u64 rng key | u64 rng counter
// record: u32 len, name | u32 x4 extents | u64 element count | f32 values
inline constexpr char kCheckpointMagic[4] = {'S', 'D', 'C', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <Scalar T>
  void record(const std::string& name, const Tensor<T>& t) {
    str(name);
    const Shape4& s = t.shape();
    u32(static_cast<std::uint32_t>(s.n));
    u32(static_cast<std::uint32_t>(s.c));
    u32(static_cast<std::uint32_t>(s.h));
    u32(static_cast<std::uint32_t>(s.w));
    u64(t.size());
    for (T v : t.values()) f32(static_cast<float>(v));
  }
  [[nodiscard]] const std::vector<std::uint8_t>& data() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& buf, std::string path)
      : buf_(buf), path_(std::move(path)) {}

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size())
      throw CheckpointError(path_ + ": truncated checkpoint (offset " + std::to_string(pos_) + ")");
  }
  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  NamedTensor<float> record() {
    NamedTensor<float> r;
    r.name = str();
    Shape4 s;
    s.n = u32();
    s.c = u32();
    s.h = u32();
    s.w = u32();
    const std::uint64_t count = u64();
    try {
      s.validate();
    } catch (const ShapeError& e) {
      throw CheckpointError(path_ + ": record '" + r.name + "': " + e.what());
    }
    if (count != s.count())
      throw CheckpointError(path_ + ": record '" + r.name + "' element count mismatch");
    need(count * 4);
    std::vector<float> v(count);
    for (auto& x : v) x = f32();
    r.value = Tensor<float>(s, std::move(v));
    return r;
  }
  [[nodiscard]] bool at_end() const { return pos_ == buf_.size(); }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <Scalar T>
std::vector<std::uint8_t> checkpoint_bytes(TrainingState<T>& state) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(config_to_text(state.net.config));
  const auto params = state.net.parameters();
  const auto buffers = state.net.buffers();
  w.u32(static_cast<std::uint32_t>(params.size() + buffers.size()));
  for (const auto& p : params) w.record(p.name, *p.value);
  for (const auto& b : buffers) w.record(b.name, *b.value);
  w.f64(state.optimizer.momentum);
  w.f64(state.optimizer.weight_decay);
  w.u8(state.optimizer.decay_bn_params ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(state.optimizer.velocity.size()));
  for (const auto& v : state.optimizer.velocity) w.record(v.name, v.value);
  w.u64(state.epoch);
  w.u64(state.rng.key());
  w.u64(state.rng.counter());
  return w.data();
}

template <Scalar T>
void checkpoint_save(TrainingState<T>& state, const std::filesystem::path& path) {
  const auto bytes = checkpoint_bytes(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

// The whole file is parsed and validated before a network is built, so a
// bad file never yields partially restored state.
template <Scalar T>
TrainingState<T> checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                      std::istreambuf_iterator<char>());
  detail::ByteReader r(buf, path.string());
  r.need(4);
  if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError(path.string() + ": bad magic bytes (not an SDCN checkpoint)");
  for (int i = 0; i < 4; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(version));
  NetworkConfig config;
  try {
    config = config_from_text(r.str());
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": bad config: " + e.what());
  }
  std::vector<NamedTensor<float>> records(r.u32());
  for (auto& rec : records) rec = r.record();
  OptimizerState<T> opt;
  opt.momentum = r.f64();
  opt.weight_decay = r.f64();
  opt.decay_bn_params = r.u8() != 0;
  std::vector<NamedTensor<float>> velocity(r.u32());
  for (auto& rec : velocity) rec = r.record();
  const std::uint64_t epoch = r.u64();
  const std::uint64_t key = r.u64();
  const std::uint64_t counter = r.u64();
  if (!r.at_end()) throw CheckpointError(path.string() + ": trailing bytes after checkpoint");

  Rng scratch(0);
  TrainingState<T> state{build_network<T>(config, scratch), std::move(opt),
                         static_cast<std::size_t>(epoch), Rng(key, counter)};
  auto params = state.net.parameters();
  auto buffers = state.net.buffers();
  std::vector<std::pair<std::string, Tensor<T>*>> slots;
  for (auto& p : params) slots.emplace_back(p.name, p.value);
  for (auto& b : buffers) slots.emplace_back(b.name, b.value);
  if (records.size() != slots.size())
    throw CheckpointError(path.string() + ": " + std::to_string(records.size()) +
                          " records, network has " + std::to_string(slots.size()));
  for (const auto& rec : records) {
    Tensor<T>* target = nullptr;
    for (auto& [name, t] : slots)
      if (name == rec.name) target = t;
    if (target == nullptr)
      throw CheckpointError(path.string() + ": unknown parameter '" + rec.name + "'");
    if (target->shape() != rec.value.shape())
      throw CheckpointError(path.string() + ": shape mismatch for '" + rec.name + "'");
  }
  for (const auto& rec : records)
    for (auto& [name, t] : slots)
      if (name == rec.name) *t = rec.value.template cast<T>();

  if (!velocity.empty()) {
    if (velocity.size() != params.size())
      throw CheckpointError(path.string() + ": velocity count does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (velocity[i].name != params[i].name ||
          velocity[i].value.shape() != params[i].value->shape())
        throw CheckpointError(path.string() + ": velocity '" + velocity[i].name +
                              "' does not match parameter '" + params[i].name + "'");
      state.optimizer.velocity.push_back({velocity[i].name, velocity[i].value.template cast<T>()});
    }
  }
  return state;
}

}  // namespace sdcnet
