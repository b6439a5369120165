#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sdcnet/batchnorm.hpp"
#include "sdcnet/block.hpp"
#include "sdcnet/conv.hpp"
#include "sdcnet/error.hpp"
#include "sdcnet/layers.hpp"
#include "sdcnet/params.hpp"
#include "sdcnet/rng.hpp"
#include "sdcnet/tensor.hpp"

namespace sdcnet {

// One row group of the stage table. Only the first block of a stage may
// have stride 2; the remaining repeat - 1 blocks are stride 1.
struct StageSpec {
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t repeat = 1;
  std::size_t groups = 1;
  std::size_t expansion = 6;

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct NetworkConfig {
  std::string name;
  std::size_t input_size = 32;
  std::size_t stem_channels = 36;
  std::size_t stem_groups = 3;
  std::vector<StageSpec> stages;
  std::size_t head_pool_kernel = 4;
  std::size_t head_pool_stride = 2;
  std::size_t classes = 10;
  BlockVariant s2_variant = BlockVariant::S2;
  StrideSite stride_site = StrideSite::Pointwise;
  ShortcutMode shortcut = ShortcutMode::Projection;

  [[nodiscard]] std::size_t block_count() const noexcept {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.repeat;
    return n;
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// Expands the stage table into per-block configurations, validating the
// channel chaining and spatial divisibility along the way.
inline std::vector<SdcBlockConfig> block_configs(const NetworkConfig& cfg) {
  if (cfg.stages.empty()) throw ConfigError(cfg.name + ": no stages");
  if (cfg.s2_variant == BlockVariant::Basic)
    throw ConfigError(cfg.name + ": stride-2 variant must be S2 or S2F");
  if (cfg.stem_channels == 0 || cfg.stem_groups == 0 || 3 % cfg.stem_groups != 0 ||
      cfg.stem_channels % cfg.stem_groups != 0)
    throw ConfigError(cfg.name + ": stem groups must divide 3 input and stem output channels");
  if (cfg.classes == 0) throw ConfigError(cfg.name + ": classes must be positive");

  std::vector<SdcBlockConfig> out;
  std::size_t channels = cfg.stem_channels;
  std::size_t spatial = cfg.input_size;
  for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
    const StageSpec& st = cfg.stages[si];
    if (st.repeat == 0) throw ConfigError(cfg.name + ": stage repeat must be >= 1");
    if (st.stride != 1 && st.stride != 2) throw ConfigError(cfg.name + ": stride must be 1 or 2");
    for (std::size_t r = 0; r < st.repeat; ++r) {
      SdcBlockConfig b;
      b.n_in = channels;
      b.n_out = st.out_channels;
      b.groups = st.groups;
      b.expansion = st.expansion;
      b.stride = r == 0 ? st.stride : 1;
      b.variant = b.stride == 2 ? cfg.s2_variant : BlockVariant::Basic;
      b.stride_site = cfg.stride_site;
      b.shortcut = cfg.shortcut;
      b.validate();
      if (b.stride == 2) {
        if (spatial % 2 != 0)
          throw ConfigError(cfg.name + ": stride-2 block on odd spatial size " +
                            std::to_string(spatial));
        spatial /= 2;
      }
      out.push_back(b);
      channels = st.out_channels;
    }
  }
  if (spatial < cfg.head_pool_kernel)
    throw ConfigError(cfg.name + ": head pool kernel exceeds final spatial size");
  return out;
}

// Spatial extent after each stage.
inline std::vector<std::size_t> stage_spatial_sizes(const NetworkConfig& cfg) {
  std::vector<std::size_t> sizes;
  std::size_t s = cfg.input_size;
  for (const auto& st : cfg.stages) {
    s /= st.stride;
    sizes.push_back(s);
  }
  return sizes;
}

inline std::size_t head_pool_extent(const NetworkConfig& cfg) {
  const std::size_t last = stage_spatial_sizes(cfg).back();
  return (last - cfg.head_pool_kernel) / cfg.head_pool_stride + 1;
}

inline std::size_t fc_in_features(const NetworkConfig& cfg) {
  const std::size_t p = head_pool_extent(cfg);
  return cfg.stages.back().out_channels * p * p;
}

namespace detail {

inline NetworkConfig table_preset(std::string name, std::size_t groups,
                                  const std::vector<std::size_t>& channels, BlockVariant s2) {
  static constexpr std::size_t kStrides[] = {1, 1, 2, 2, 1, 2, 1};
  static constexpr std::size_t kRepeats[] = {1, 2, 3, 4, 3, 3, 1};
  NetworkConfig cfg;
  cfg.name = std::move(name);
  for (std::size_t i = 0; i < 7; ++i)
    cfg.stages.push_back({channels[i], kStrides[i], kRepeats[i], groups, 6});
  cfg.s2_variant = s2;
  return cfg;
}

inline std::string normalize_name(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s.rfind("sdcnet-", 0) == 0) s = s.substr(7);
  return s;
}

}  // namespace detail

inline std::vector<std::string> preset_names() {
  return {"g4-l", "g3-s", "g4-l-f", "g3-s-f", "tiny"};
}

// Stage tables of the two reference networks (plus "-F" variants that use
// SdcBlock-S2-F for every stride-2 block) and a small "tiny" network for tests.
inline NetworkConfig preset(const std::string& name) {
  const std::string key = detail::normalize_name(name);
  const std::vector<std::size_t> large = {24, 36, 72, 96, 144, 300, 600};
  const std::vector<std::size_t> small = {24, 24, 36, 72, 96, 150, 300};
  if (key == "g4-l") return detail::table_preset("SdcNet-G4-L", 4, large, BlockVariant::S2);
  if (key == "g4-l-f") return detail::table_preset("SdcNet-G4-L-F", 4, large, BlockVariant::S2F);
  if (key == "g3-s") return detail::table_preset("SdcNet-G3-S", 3, small, BlockVariant::S2);
  if (key == "g3-s-f") return detail::table_preset("SdcNet-G3-S-F", 3, small, BlockVariant::S2F);
  if (key == "tiny") {
    NetworkConfig cfg;
    cfg.name = "SdcNet-Tiny";
    cfg.stem_channels = 12;
    cfg.stages = {{8, 1, 1, 2, 3}, {16, 2, 1, 2, 3}, {24, 2, 1, 2, 3}};
    cfg.head_pool_kernel = 8;
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "' (expected g4-l, g3-s, g4-l-f, g3-s-f or tiny)");
}

inline NetworkConfig with_classes(NetworkConfig cfg, std::size_t classes) {
  cfg.classes = classes;
  return cfg;
}

template <Scalar T>
struct SdcNet {
  NetworkConfig config;
  ConvLayer<T> stem;
  BatchNormLayer<T> stem_bn;
  std::vector<SdcBlock<T>> blocks;
  std::vector<std::size_t> block_stage;  // stage index of each block
  LinearLayer<T> fc;

  [[nodiscard]] std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    collect_params(stem, "stem.conv", out);
    collect_params(stem_bn, "stem.bn", out);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect_params("blocks." + std::to_string(i), out);
    collect_params(fc, "fc", out);
    return out;
  }

  [[nodiscard]] std::vector<BufferRef<T>> buffers() {
    std::vector<BufferRef<T>> out;
    collect_buffers(stem_bn, "stem.bn", out);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect_buffers("blocks." + std::to_string(i), out);
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() { return scalar_count(parameters()); }
};

template <Scalar T>
SdcNet<T> build_network(const NetworkConfig& config, Rng& rng) {
  const auto blocks = block_configs(config);
  SdcNet<T> net;
  net.config = config;
  net.stem = ConvLayer<T>::init(
      ConvSpec{3, config.stem_channels, config.stem_groups, 3, 3, 1, 1, false}, rng);
  net.stem_bn = BatchNormLayer<T>(config.stem_channels);
  net.blocks.reserve(blocks.size());
  for (std::size_t si = 0, bi = 0; si < config.stages.size(); ++si)
    for (std::size_t r = 0; r < config.stages[si].repeat; ++r, ++bi) {
      net.blocks.push_back(build_block<T>(blocks[bi], rng));
      net.block_stage.push_back(si);
    }
  net.fc = LinearLayer<T>::init(fc_in_features(config), config.classes, rng);
  return net;
}

template <Scalar T>
struct NetworkTape {
  const void* owner = nullptr;
  Tensor<T> x;       // network input
  Tensor<T> stem_a;  // stem conv output
  std::vector<BlockTape<T>> blocks;
  Tensor<T> features;  // last block output
  Tensor<T> pooled;

  [[nodiscard]] Tensor<T>& block_input(std::size_t i) { return blocks[i].x; }
};

// Called with (block index, block output) after every block.
template <Scalar T>
using BlockObserver = std::function<void(std::size_t, const Tensor<T>&)>;

template <Scalar T>
Tensor<T> network_forward(SdcNet<T>& net, const Tensor<T>& input, Mode mode,
                          NetworkTape<T>* tape = nullptr, const BlockObserver<T>& observe = {}) {
  const Shape4& s = input.shape();
  const std::size_t size = net.config.input_size;
  if (s.c != 3 || s.h != size || s.w != size)
    throw ShapeError(net.config.name + ": expected input (n,3," + std::to_string(size) + "," +
                     std::to_string(size) + "), got " + s.str());
  const bool record = tape != nullptr && mode == Mode::Training;
  if (tape != nullptr) {
    *tape = NetworkTape<T>{};
    if (record) tape->blocks.resize(net.blocks.size());
  }

  Tensor<T> stem_a = conv_forward(net.stem, input);
  Tensor<T> h = relu(batchnorm_forward(net.stem_bn, stem_a, mode));
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    h = block_forward(net.blocks[i], h, mode, record ? &tape->blocks[i] : nullptr);
    if (observe) observe(i, h);
  }
  Tensor<T> pooled = avgpool_forward(h, net.config.head_pool_kernel, net.config.head_pool_stride);
  Tensor<T> scores = linear_forward(net.fc, pooled);

  if (record) {
    tape->owner = &net;
    tape->x = input;
    tape->stem_a = std::move(stem_a);
    tape->features = std::move(h);
    tape->pooled = std::move(pooled);
  }
  return scores;
}

// Gradient names follow SdcNet::parameters().
template <Scalar T>
GradientSet<T> network_backward(const SdcNet<T>& net, const NetworkTape<T>& tape,
                                const Tensor<T>& grad_scores) {
  if (tape.owner != &net || tape.blocks.size() != net.blocks.size())
    throw TapeError(net.config.name + ": backward needs the tape of a training-mode forward");

  auto gfc = linear_backward(net.fc, tape.pooled, grad_scores);
  Tensor<T> g = avgpool_backward(tape.features.shape(), gfc.input, net.config.head_pool_kernel,
                                 net.config.head_pool_stride);

  std::vector<GradientSet<T>> block_grads(net.blocks.size());
  for (std::size_t i = net.blocks.size(); i-- > 0;) {
    auto bg = block_backward(net.blocks[i], tape.blocks[i], g, "blocks." + std::to_string(i));
    g = std::move(bg.input);
    block_grads[i] = std::move(bg.params);
  }

  // The stem ReLU output is the first block's input.
  const Tensor<T>& stem_out = tape.blocks.front().x;
  auto gbn = batchnorm_backward(net.stem_bn, tape.stem_a, relu_backward(stem_out, g));
  auto gc = conv_backward(net.stem, tape.x, gbn.input);

  GradientSet<T> out;
  out.add("stem.conv.weight", std::move(gc.weight));
  out.add("stem.bn.gamma", std::move(gbn.gamma));
  out.add("stem.bn.beta", std::move(gbn.beta));
  for (auto& bg : block_grads) out.append(std::move(bg));
  out.add("fc.weight", std::move(gfc.weight));
  out.add("fc.bias", std::move(gfc.bias));
  return out;
}

template <Scalar T>
std::vector<std::size_t> predict(SdcNet<T>& net, const Tensor<T>& input) {
  const Tensor<T> scores = network_forward(net, input, Mode::Inference);
  std::vector<std::size_t> out(scores.shape().n);
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = argmax_row(scores, n);
  return out;
}

// Plain-text form of a NetworkConfig, stored in checkpoints.
inline std::string config_to_text(const NetworkConfig& cfg) {
  std::ostringstream os;
  os << "name=" << cfg.name << '\n'
     << "input_size=" << cfg.input_size << '\n'
     << "stem_channels=" << cfg.stem_channels << '\n'
     << "stem_groups=" << cfg.stem_groups << '\n'
     << "head_pool_kernel=" << cfg.head_pool_kernel << '\n'
     << "head_pool_stride=" << cfg.head_pool_stride << '\n'
     << "classes=" << cfg.classes << '\n'
     << "s2_variant=" << to_string(cfg.s2_variant) << '\n'
     << "stride_site=" << to_string(cfg.stride_site) << '\n'
     << "shortcut=" << to_string(cfg.shortcut) << '\n';
  for (const auto& st : cfg.stages)
    os << "stage=" << st.out_channels << ',' << st.stride << ',' << st.repeat << ',' << st.groups
       << ',' << st.expansion << '\n';
  return os.str();
}

inline NetworkConfig config_from_text(const std::string& text) {
  NetworkConfig cfg;
  std::istringstream in(text);
  std::string line;
  auto number = [](const std::string& v) -> std::size_t {
    try {
      std::size_t pos = 0;
      const auto x = std::stoull(v, &pos);
      if (pos != v.size()) throw ConfigError("bad number '" + v + "'");
      return static_cast<std::size_t>(x);
    } catch (const std::logic_error&) {
      throw ConfigError("bad number '" + v + "'");
    }
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "name") cfg.name = val;
    else if (key == "input_size") cfg.input_size = number(val);
    else if (key == "stem_channels") cfg.stem_channels = number(val);
    else if (key == "stem_groups") cfg.stem_groups = number(val);
    else if (key == "head_pool_kernel") cfg.head_pool_kernel = number(val);
    else if (key == "head_pool_stride") cfg.head_pool_stride = number(val);
    else if (key == "classes") cfg.classes = number(val);
    else if (key == "s2_variant") {
      if (val == "S2") cfg.s2_variant = BlockVariant::S2;
      else if (val == "S2F") cfg.s2_variant = BlockVariant::S2F;
      else throw ConfigError("bad s2_variant '" + val + "'");
    } else if (key == "stride_site") {
      if (val == "pointwise") cfg.stride_site = StrideSite::Pointwise;
      else if (val == "depthwise") cfg.stride_site = StrideSite::FirstDepthwise;
      else throw ConfigError("bad stride_site '" + val + "'");
    } else if (key == "shortcut") {
      if (val == "projection") cfg.shortcut = ShortcutMode::Projection;
      else if (val == "none") cfg.shortcut = ShortcutMode::None;
      else throw ConfigError("bad shortcut '" + val + "'");
    } else if (key == "stage") {
      std::vector<std::size_t> f;
      std::istringstream parts(val);
      std::string tok;
      while (std::getline(parts, tok, ',')) f.push_back(number(tok));
      if (f.size() != 5) throw ConfigError("stage needs 5 fields: " + val);
      cfg.stages.push_back({f[0], f[1], f[2], f[3], f[4]});
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  block_configs(cfg);
  return cfg;
}

}  // namespace sdcnet
