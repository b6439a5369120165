#pragma once

#include <cstddef>
#include <cstdio>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sdcnet/block.hpp"
#include "sdcnet/conv.hpp"
#include "sdcnet/network.hpp"
#include "sdcnet/tensor.hpp"

namespace sdcnet {

// FLOPs are multiply-adds per single-image forward pass. Only convolutions
// and the FC layer cost anything; BN contributes parameters (gamma, beta).
struct LayerCost {
  std::size_t flops = 0;
  std::size_t params = 0;
};

inline LayerCost count_layer(const ConvSpec& spec, const Shape4& input) {
  const Shape4 out = spec.output_shape(input);
  const std::size_t per_output = spec.in_per_group() * spec.kernel_h * spec.kernel_w;
  return {out.h * out.w * spec.out_channels * per_output,
          spec.out_channels * per_output + (spec.bias ? spec.out_channels : 0)};
}

inline LayerCost count_batchnorm(std::size_t channels) { return {0, 2 * channels}; }

inline LayerCost count_linear(std::size_t in, std::size_t out) { return {in * out, in * out + out}; }

struct CostRow {
  std::string layer;
  Shape4 out_shape;
  std::size_t flops = 0;
  std::size_t params = 0;
};

struct CostReport {
  std::string network;
  std::vector<CostRow> rows;
  std::size_t total_flops = 0;
  std::size_t total_params = 0;

  void add(std::string layer, Shape4 out, LayerCost c) {
    rows.push_back({std::move(layer), out, c.flops, c.params});
    total_flops += c.flops;
    total_params += c.params;
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    os << network << '\n';
    os << std::left << std::setw(26) << "layer" << std::setw(18) << "output" << std::right
       << std::setw(14) << "flops" << std::setw(12) << "params" << '\n';
    for (const auto& r : rows) {
      std::ostringstream shape;
      shape << r.out_shape.c << 'x' << r.out_shape.h << 'x' << r.out_shape.w;
      os << std::left << std::setw(26) << r.layer << std::setw(18) << shape.str() << std::right
         << std::setw(14) << r.flops << std::setw(12) << r.params << '\n';
    }
    os << std::left << std::setw(44) << "total" << std::right << std::setw(14) << total_flops
       << std::setw(12) << total_params << '\n';
    return os.str();
  }

  [[nodiscard]] std::string to_csv() const {
    std::ostringstream os;
    os << "layer,out_shape,flops,params\n";
    for (const auto& r : rows)
      os << r.layer << ',' << r.out_shape.c << 'x' << r.out_shape.h << 'x' << r.out_shape.w << ','
         << r.flops << ',' << r.params << '\n';
    os << "total,," << total_flops << ',' << total_params << '\n';
    return os.str();
  }
};

inline void count_block(const SdcBlockConfig& b, const std::string& prefix, Shape4& shape,
                        CostReport& report) {
  const std::size_t e = b.expanded();
  const Shape4 in = shape;
  auto conv = [&](const std::string& name, const ConvSpec& spec, Shape4& s) {
    const LayerCost c = count_layer(spec, s);
    s = spec.output_shape(s);
    report.add(prefix + "." + name, s, c);
    report.add(prefix + "." + name + "_bn", s, count_batchnorm(s.c));
  };
  Shape4 s = in;
  conv("gconv1", ConvSpec::pointwise(b.n_in, e, b.groups, b.pointwise_stride()), s);
  conv("dw1", ConvSpec::depthwise3x3(e, b.depthwise_stride()), s);
  conv("dw2", ConvSpec::depthwise3x3(e, 1), s);
  s.c = 2 * e;  // concat + shuffle
  conv("gconv2", ConvSpec::pointwise(2 * e, b.conv_out(), b.groups), s);
  if (b.projection_residual()) {
    Shape4 p = in;
    conv("proj", ConvSpec::pointwise(b.n_in, b.n_out, 1), p);
  }
  s.c = b.n_out;
  shape = s;
}

// Static cost of a configuration; no parameter values are needed.
inline CostReport count_network(const NetworkConfig& config) {
  const auto blocks = block_configs(config);
  CostReport report;
  report.network = config.name;
  Shape4 s{1, 3, config.input_size, config.input_size};
  const ConvSpec stem{3, config.stem_channels, config.stem_groups, 3, 3, 1, 1, false};
  report.add("stem", stem.output_shape(s), count_layer(stem, s));
  s = stem.output_shape(s);
  report.add("stem_bn", s, count_batchnorm(s.c));
  for (std::size_t i = 0; i < blocks.size(); ++i)
    count_block(blocks[i], "block" + std::to_string(i), s, report);
  const std::size_t p = (s.h - config.head_pool_kernel) / config.head_pool_stride + 1;
  s = {1, s.c, p, p};
  report.add("avgpool", s, {});
  const std::size_t in = s.image();
  report.add("fc", {1, config.classes, 1, 1}, count_linear(in, config.classes));
  return report;
}

inline CostReport count_network(const NetworkConfig& config, std::size_t classes) {
  return count_network(with_classes(config, classes));
}

// Stage-by-stage architecture table: one row per stride change, plus stem and head.
inline std::string describe(const NetworkConfig& config) {
  const auto blocks = block_configs(config);
  const auto sizes = stage_spatial_sizes(config);
  std::ostringstream os;
  auto size = [](std::size_t s) { return std::to_string(s) + "x" + std::to_string(s); };
  auto row = [&](const std::string& layer, const std::string& out, const std::string& stride,
                 const std::string& repeat, const std::string& channels) {
    os << std::left << std::setw(14) << layer << std::setw(13) << out << std::setw(8) << stride
       << std::setw(8) << repeat << channels << '\n';
  };

  const auto& st0 = config.stages.front();
  os << config.name << "  (g=" << st0.groups << ", E=" << st0.expansion
     << ", stride-2 block=" << (config.s2_variant == BlockVariant::S2 ? "SdcBlock-S2" : "SdcBlock-S2-F")
     << ", classes=" << config.classes << ")\n";
  os << blocks.size() << " blocks in " << config.stages.size() << " stages\n";
  row("Layer", "Output size", "Stride", "Repeat", "Output channels");
  row("G-Conv(g=" + std::to_string(config.stem_groups) + ")", size(config.input_size), "1", "1",
      std::to_string(config.stem_channels));
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    const auto& st = config.stages[i];
    const std::string label = "Stages " + std::to_string(i + 1);
    const std::string ch = std::to_string(st.out_channels);
    if (st.stride == 2) {
      row(label, size(sizes[i]), "2", "1", ch);
      if (st.repeat > 1) row("", size(sizes[i]), "1", std::to_string(st.repeat - 1), ch);
    } else {
      row(label, size(sizes[i]), "1", std::to_string(st.repeat), ch);
    }
  }
  const std::size_t last = config.stages.back().out_channels;
  row("Avg Pool", size(head_pool_extent(config)), std::to_string(config.head_pool_stride), "1",
      std::to_string(last));
  row("FC", size(1), "", "1", std::to_string(fc_in_features(config)) + "→" +
                                  std::to_string(config.classes));
  return os.str();
}

// Target cost totals (CIFAR-10 head) for the four reference networks.
struct TargetCost {
  const char* preset;
  double flops;
  double params;
};

inline constexpr TargetCost kTargetCosts[] = {
    {"g3-s", 55.12e6, 1.04e6},
    {"g3-s-f", 56.55e6, 1.09e6},
    {"g4-l", 103.3e6, 2.53e6},
    {"g4-l-f", 106.1e6, 2.61e6},
};

inline std::optional<TargetCost> target_cost(const std::string& name) {
  const std::string key = detail::normalize_name(name);
  for (const auto& p : kTargetCosts)
    if (key == p.preset) return p;
  return std::nullopt;
}

inline double relative_deviation(double value, double target) { return (value - target) / target; }

}  // namespace sdcnet
