#pragma once

#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "sdcnet/batchnorm.hpp"
#include "sdcnet/conv.hpp"
#include "sdcnet/error.hpp"
#include "sdcnet/layers.hpp"
#include "sdcnet/params.hpp"
#include "sdcnet/rng.hpp"
#include "sdcnet/tensor.hpp"

namespace sdcnet {

// Basic: stride 1, residual junction.
// S2:    stride 2, output = concat(avgpool2x2(input), conv path).
// S2F:   stride 2, output = conv path only.
enum class BlockVariant { Basic, S2, S2F };

// Which layer of a stride-2 block carries the stride.
enum class StrideSite { Pointwise, FirstDepthwise };

// What a stride-1 block with N_I != N_O does on its shortcut.
enum class ShortcutMode { Projection, None };

inline const char* to_string(BlockVariant v) {
  switch (v) {
    case BlockVariant::Basic: return "Basic";
    case BlockVariant::S2: return "S2";
    case BlockVariant::S2F: return "S2F";
  }
  return "?";
}

inline const char* to_string(StrideSite s) {
  return s == StrideSite::Pointwise ? "pointwise" : "depthwise";
}

inline const char* to_string(ShortcutMode m) {
  return m == ShortcutMode::Projection ? "projection" : "none";
}

struct SdcBlockConfig {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::size_t groups = 1;
  std::size_t expansion = 1;
  std::size_t stride = 1;
  BlockVariant variant = BlockVariant::Basic;
  StrideSite stride_site = StrideSite::Pointwise;
  ShortcutMode shortcut = ShortcutMode::Projection;

  [[nodiscard]] std::size_t expanded() const noexcept { return expansion * n_in; }

  // Channels produced by the second group convolution.
  [[nodiscard]] std::size_t conv_out() const noexcept {
    return variant == BlockVariant::S2 ? n_out - n_in : n_out;
  }

  [[nodiscard]] bool identity_residual() const noexcept {
    return variant == BlockVariant::Basic && n_in == n_out;
  }

  [[nodiscard]] bool projection_residual() const noexcept {
    return variant == BlockVariant::Basic && n_in != n_out &&
           shortcut == ShortcutMode::Projection;
  }

  [[nodiscard]] std::size_t pointwise_stride() const noexcept {
    return stride_site == StrideSite::Pointwise ? stride : 1;
  }

  [[nodiscard]] std::size_t depthwise_stride() const noexcept {
    return stride_site == StrideSite::FirstDepthwise ? stride : 1;
  }

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << "SdcBlock(" << to_string(variant) << ", N_I=" << n_in << ", N_O=" << n_out
       << ", g=" << groups << ", E=" << expansion << ", stride=" << stride << ')';
    return os.str();
  }

  void validate() const {
    auto fail = [&](const std::string& why) { throw ConfigError(str() + ": " + why); };
    if (n_in == 0 || n_out == 0 || groups == 0 || expansion == 0)
      fail("channel counts, groups and expansion must be positive");
    if (variant == BlockVariant::Basic && stride != 1) fail("Basic blocks have stride 1");
    if (variant != BlockVariant::Basic && stride != 2) fail("S2/S2F blocks have stride 2");
    if (variant == BlockVariant::S2 && n_out <= n_in)
      fail("S2 needs N_O > N_I so the conv path emits N_O - N_I > 0 channels");
    if (n_in % groups != 0) fail("groups must divide N_I");
    if (expanded() % groups != 0) fail("groups must divide E*N_I");
    if ((2 * expanded()) % groups != 0) fail("groups must divide 2*E*N_I");
    if (conv_out() % groups != 0) fail("groups must divide the conv-path output channels");
  }
};

template <Scalar T>
struct SdcBlock {
  SdcBlockConfig config;
  ConvLayer<T> gconv1;  // 1x1, g groups, N_I -> E*N_I
  BatchNormLayer<T> bn1;
  ConvLayer<T> dw1;  // 3x3 depthwise
  BatchNormLayer<T> bn2;
  ConvLayer<T> dw2;  // 3x3 depthwise, stride 1
  BatchNormLayer<T> bn3;
  ConvLayer<T> gconv2;  // 1x1, g groups, 2*E*N_I -> conv_out
  BatchNormLayer<T> bn4;
  ConvLayer<T> proj;  // 1x1 shortcut projection, only if config.projection_residual()
  BatchNormLayer<T> proj_bn;

  [[nodiscard]] bool has_projection() const noexcept { return config.projection_residual(); }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    sdcnet::collect_params(gconv1, prefix + ".gconv1", out);
    sdcnet::collect_params(bn1, prefix + ".bn1", out);
    sdcnet::collect_params(dw1, prefix + ".dw1", out);
    sdcnet::collect_params(bn2, prefix + ".bn2", out);
    sdcnet::collect_params(dw2, prefix + ".dw2", out);
    sdcnet::collect_params(bn3, prefix + ".bn3", out);
    sdcnet::collect_params(gconv2, prefix + ".gconv2", out);
    sdcnet::collect_params(bn4, prefix + ".bn4", out);
    if (has_projection()) {
      sdcnet::collect_params(proj, prefix + ".proj", out);
      sdcnet::collect_params(proj_bn, prefix + ".proj_bn", out);
    }
  }

  void collect_buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) {
    sdcnet::collect_buffers(bn1, prefix + ".bn1", out);
    sdcnet::collect_buffers(bn2, prefix + ".bn2", out);
    sdcnet::collect_buffers(bn3, prefix + ".bn3", out);
    sdcnet::collect_buffers(bn4, prefix + ".bn4", out);
    if (has_projection()) sdcnet::collect_buffers(proj_bn, prefix + ".proj_bn", out);
  }

  [[nodiscard]] std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    collect_params("block", out);
    return out;
  }
};

template <Scalar T>
SdcBlock<T> build_block(const SdcBlockConfig& config, Rng& rng) {
  config.validate();
  const std::size_t e = config.expanded();
  SdcBlock<T> b;
  b.config = config;
  b.gconv1 = ConvLayer<T>::init(
      ConvSpec::pointwise(config.n_in, e, config.groups, config.pointwise_stride()), rng);
  b.bn1 = BatchNormLayer<T>(e);
  b.dw1 = ConvLayer<T>::init(ConvSpec::depthwise3x3(e, config.depthwise_stride()), rng);
  b.bn2 = BatchNormLayer<T>(e);
  b.dw2 = ConvLayer<T>::init(ConvSpec::depthwise3x3(e, 1), rng);
  b.bn3 = BatchNormLayer<T>(e);
  b.gconv2 = ConvLayer<T>::init(ConvSpec::pointwise(2 * e, config.conv_out(), config.groups), rng);
  b.bn4 = BatchNormLayer<T>(config.conv_out());
  if (config.projection_residual()) {
    b.proj = ConvLayer<T>::init(ConvSpec::pointwise(config.n_in, config.n_out, 1), rng);
    b.proj_bn = BatchNormLayer<T>(config.n_out);
  }
  return b;
}

// Activations cached by a training-mode forward for the backward pass.
// BN outputs are not kept: each BN backward recomputes its moments from the
// BN input, and every ReLU mask is read off the ReLU output.
template <Scalar T>
struct BlockTape {
  const void* owner = nullptr;
  Tensor<T> x;   // block input
  Tensor<T> a1;  // gconv1 output
  Tensor<T> r1;  // ReLU(BN(a1))
  Tensor<T> a2;  // dw1 output
  Tensor<T> d1;  // ReLU(BN(a2)), first-order depthwise features
  Tensor<T> a3;  // dw2 output
  Tensor<T> d2;  // ReLU(BN(a3)), second-order depthwise features
  Tensor<T> sh;  // shuffled concat(d1, d2)
  Tensor<T> a4;  // gconv2 output
  Tensor<T> ap;  // projection conv output (projection shortcut only)

  void clear() { *this = BlockTape{}; }
};

template <Scalar T>
Tensor<T> block_forward(SdcBlock<T>& block, const Tensor<T>& input, Mode mode,
                        BlockTape<T>* tape = nullptr) {
  const SdcBlockConfig& cfg = block.config;
  if (input.shape().c != cfg.n_in)
    throw ShapeError(cfg.str() + ": input has " + std::to_string(input.shape().c) + " channels");

  Tensor<T> a1 = conv_forward(block.gconv1, input);
  Tensor<T> r1 = relu(batchnorm_forward(block.bn1, a1, mode));
  Tensor<T> a2 = conv_forward(block.dw1, r1);
  Tensor<T> d1 = relu(batchnorm_forward(block.bn2, a2, mode));
  Tensor<T> a3 = conv_forward(block.dw2, d1);
  Tensor<T> d2 = relu(batchnorm_forward(block.bn3, a3, mode));
  Tensor<T> sh = channel_shuffle(concat_channels(d1, d2), 2);
  Tensor<T> a4 = conv_forward(block.gconv2, sh);
  Tensor<T> y = batchnorm_forward(block.bn4, a4, mode);

  Tensor<T> out;
  Tensor<T> ap;
  switch (cfg.variant) {
    case BlockVariant::Basic:
      if (cfg.identity_residual()) {
        out = add_elementwise(y, input);
      } else if (cfg.projection_residual()) {
        ap = conv_forward(block.proj, input);
        out = add_elementwise(y, batchnorm_forward(block.proj_bn, ap, mode));
      } else {
        out = std::move(y);
      }
      break;
    case BlockVariant::S2:
      out = concat_channels(avgpool_forward(input, 2, 2), y);
      break;
    case BlockVariant::S2F:
      out = std::move(y);
      break;
  }

  if (tape != nullptr) {
    if (mode != Mode::Training) {
      tape->clear();
    } else {
      tape->owner = &block;
      tape->x = input;
      tape->a1 = std::move(a1);
      tape->r1 = std::move(r1);
      tape->a2 = std::move(a2);
      tape->d1 = std::move(d1);
      tape->a3 = std::move(a3);
      tape->d2 = std::move(d2);
      tape->sh = std::move(sh);
      tape->a4 = std::move(a4);
      tape->ap = std::move(ap);
    }
  }
  return out;
}

template <Scalar T>
struct BlockGrads {
  Tensor<T> input;
  GradientSet<T> params;
};

// Gradient names follow SdcBlock::collect_params with the given prefix.
template <Scalar T>
BlockGrads<T> block_backward(const SdcBlock<T>& block, const BlockTape<T>& tape,
                             const Tensor<T>& grad_out, const std::string& prefix = "block") {
  const SdcBlockConfig& cfg = block.config;
  if (tape.owner != &block || tape.x.empty())
    throw TapeError(cfg.str() + ": backward needs the tape of a training-mode forward of this block");

  Tensor<T> grad_y;
  Tensor<T> grad_x_short;
  GradientSet<T> proj_grads;
  switch (cfg.variant) {
    case BlockVariant::Basic:
      grad_y = grad_out;
      if (cfg.identity_residual()) {
        grad_x_short = grad_out;
      } else if (cfg.projection_residual()) {
        auto gbn = batchnorm_backward(block.proj_bn, tape.ap, grad_out);
        auto gc = conv_backward(block.proj, tape.x, gbn.input);
        grad_x_short = std::move(gc.input);
        proj_grads.add(prefix + ".proj.weight", std::move(gc.weight));
        proj_grads.add(prefix + ".proj_bn.gamma", std::move(gbn.gamma));
        proj_grads.add(prefix + ".proj_bn.beta", std::move(gbn.beta));
      }
      break;
    case BlockVariant::S2: {
      auto [gpool, gy] = split_channels(grad_out, cfg.n_in);
      grad_x_short = avgpool_backward(tape.x.shape(), gpool, 2, 2);
      grad_y = std::move(gy);
      break;
    }
    case BlockVariant::S2F:
      grad_y = grad_out;
      break;
  }

  auto g4 = batchnorm_backward(block.bn4, tape.a4, grad_y);
  auto c4 = conv_backward(block.gconv2, tape.sh, g4.input);
  auto [gd1, gd2] = split_channels(channel_shuffle_backward(c4.input, 2), cfg.expanded());

  auto g3 = batchnorm_backward(block.bn3, tape.a3, relu_backward(tape.d2, gd2));
  auto c3 = conv_backward(block.dw2, tape.d1, g3.input);
  add_into(gd1, c3.input);

  auto g2 = batchnorm_backward(block.bn2, tape.a2, relu_backward(tape.d1, gd1));
  auto c2 = conv_backward(block.dw1, tape.r1, g2.input);

  auto g1 = batchnorm_backward(block.bn1, tape.a1, relu_backward(tape.r1, c2.input));
  auto c1 = conv_backward(block.gconv1, tape.x, g1.input);

  BlockGrads<T> out;
  out.input = std::move(c1.input);
  if (!grad_x_short.empty()) add_into(out.input, grad_x_short);

  out.params.add(prefix + ".gconv1.weight", std::move(c1.weight));
  out.params.add(prefix + ".bn1.gamma", std::move(g1.gamma));
  out.params.add(prefix + ".bn1.beta", std::move(g1.beta));
  out.params.add(prefix + ".dw1.weight", std::move(c2.weight));
  out.params.add(prefix + ".bn2.gamma", std::move(g2.gamma));
  out.params.add(prefix + ".bn2.beta", std::move(g2.beta));
  out.params.add(prefix + ".dw2.weight", std::move(c3.weight));
  out.params.add(prefix + ".bn3.gamma", std::move(g3.gamma));
  out.params.add(prefix + ".bn3.beta", std::move(g3.beta));
  out.params.add(prefix + ".gconv2.weight", std::move(c4.weight));
  out.params.add(prefix + ".bn4.gamma", std::move(g4.gamma));
  out.params.add(prefix + ".bn4.beta", std::move(g4.beta));
  out.params.append(std::move(proj_grads));
  return out;
}

}  // namespace sdcnet
