#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sdcnet/block.hpp"
#include "sdcnet/layers.hpp"
#include "sdcnet/network.hpp"
#include "sdcnet/params.hpp"
#include "sdcnet/rng.hpp"
#include "sdcnet/tensor.hpp"

namespace sdcnet {

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

struct GradcheckEntry {
  std::string group;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::string subject;
  double tolerance = 1e-4;
  std::vector<GradcheckEntry> entries;

  [[nodiscard]] std::map<std::string, double> max_by_group() const {
    std::map<std::string, double> m;
    for (const auto& e : entries) m[e.group] = std::max(m[e.group], e.rel_error);
    return m;
  }

  [[nodiscard]] double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.rel_error);
    return m;
  }

  [[nodiscard]] std::vector<GradcheckEntry> failures() const {
    std::vector<GradcheckEntry> out;
    for (const auto& e : entries)
      if (!(e.rel_error <= tolerance)) out.push_back(e);
    return out;
  }

  [[nodiscard]] bool passed() const { return !entries.empty() && failures().empty(); }

  void merge(const GradcheckReport& other) {
    entries.insert(entries.end(), other.entries.begin(), other.entries.end());
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    os << std::scientific << std::setprecision(2);
    os << subject << ": " << entries.size() << " checks, max rel. error " << max_rel_error()
       << " (tolerance " << tolerance << ") " << (passed() ? "PASS" : "FAIL") << '\n';
    for (const auto& [group, err] : max_by_group())
      os << "  " << std::left << std::setw(28) << group << ' ' << err << '\n';
    for (const auto& f : failures())
      os << "  offending " << f.group << '[' << f.index << "]: analytic " << f.analytic
         << " numeric " << f.numeric << " rel " << f.rel_error << '\n';
    return os.str();
  }
};

// Central differences (loss(x+h) - loss(x-h)) / 2h for `indices` of `x`,
// compared against `analytic`. `x` is restored after each probe.
template <typename LossFn>
void check_tensor(GradcheckReport& report, const std::string& group, Tensor<double>& x,
                  const Tensor<double>& analytic, const std::vector<std::size_t>& indices,
                  LossFn&& loss, double h = 1e-5) {
  for (std::size_t i : indices) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    report.entries.push_back({group, i, analytic[i], numeric, relative_error(analytic[i], numeric)});
  }
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Up to `count` distinct indices in [0, n), sorted.
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, Rng& rng) {
  if (count >= n) return all_indices(n);
  std::vector<std::size_t> v = all_indices(n);
  for (std::size_t i = 0; i < count; ++i) std::swap(v[i], v[i + rng.uniform_int(n - i)]);
  v.resize(count);
  std::sort(v.begin(), v.end());
  return v;
}

// Spot-checks `count` randomly chosen scalars drawn uniformly across all
// parameters (count == 0 checks every scalar).
template <typename LossFn>
GradcheckReport check_params(const std::string& subject, std::vector<ParamRef<double>>& params,
                             const GradientSet<double>& analytic, LossFn&& loss, std::size_t count,
                             Rng& rng, double tolerance, double h = 1e-5) {
  GradcheckReport report{subject, tolerance, {}};
  std::size_t total = 0;
  for (const auto& p : params) total += p.value->size();
  const auto picks = count == 0 ? all_indices(total) : sample_indices(total, count, rng);
  std::size_t base = 0;
  auto it = picks.begin();
  for (auto& p : params) {
    const Tensor<double>* g = analytic.find(p.name);
    if (g == nullptr) throw BookkeepingError("gradcheck: no analytic gradient for " + p.name);
    std::vector<std::size_t> local;
    while (it != picks.end() && *it < base + p.value->size()) local.push_back(*it++ - base);
    if (!local.empty()) check_tensor(report, p.name, *p.value, *g, local, loss, h);
    base += p.value->size();
  }
  return report;
}

// Block check on loss = sum(block_output * R) with fixed random R.
inline GradcheckReport gradcheck_block(const SdcBlockConfig& config, const Shape4& input_shape,
                                       std::uint64_t seed, double tolerance,
                                       std::size_t count = 0) {
  Rng rng(seed);
  SdcBlock<double> block = build_block<double>(config, rng);
  // Non-trivial BN affine parameters so their gradients are exercised.
  for (auto& p : block.parameters())
    if (p.kind == ParamKind::Norm)
      for (auto& v : p.value->values()) v += 0.2 * rng.normal(0.0, 1.0);
  Tensor<double> x = tensor_random_normal<double>(input_shape, 0.0, 1.0, rng);
  BlockTape<double> tape;
  const Tensor<double> y0 = block_forward(block, x, Mode::Training, &tape);
  const Tensor<double> r = tensor_random_normal<double>(y0.shape(), 0.0, 1.0, rng);
  const auto grads = block_backward(block, tape, r);

  auto loss = [&] {
    const Tensor<double> y = block_forward(block, x, Mode::Training);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  auto params = block.parameters();
  GradcheckReport report = check_params(config.str(), params, grads.params, loss, count, rng,
                                        tolerance);
  check_tensor(report, "input", x, grads.input,
               count == 0 ? all_indices(x.size()) : sample_indices(x.size(), count, rng), loss);
  return report;
}

// Small three-block network used by the full-network spot check.
inline NetworkConfig gradcheck_network_config() {
  NetworkConfig cfg;
  cfg.name = "gradcheck-3block";
  cfg.input_size = 8;
  cfg.stem_channels = 6;
  cfg.stem_groups = 3;
  cfg.stages = {{6, 1, 1, 2, 2}, {12, 2, 1, 2, 2}, {12, 1, 1, 2, 2}};
  cfg.head_pool_kernel = 4;
  cfg.head_pool_stride = 2;
  cfg.classes = 5;
  return cfg;
}

// Softmax cross-entropy on a 64-bit network, `count` random parameter scalars.
inline GradcheckReport gradcheck_network(const NetworkConfig& config, std::size_t batch,
                                         std::size_t count, std::uint64_t seed, double tolerance) {
  Rng rng(seed);
  SdcNet<double> net = build_network<double>(config, rng);
  for (auto& p : net.parameters())
    if (p.kind == ParamKind::Norm || p.kind == ParamKind::Bias)
      for (auto& v : p.value->values()) v += 0.2 * rng.normal(0.0, 1.0);
  const Tensor<double> x = tensor_random_normal<double>(
      {batch, 3, config.input_size, config.input_size}, 0.0, 1.0, rng);
  std::vector<int> labels(batch);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_int(config.classes));

  NetworkTape<double> tape;
  const Tensor<double> scores = network_forward(net, x, Mode::Training, &tape);
  const auto loss0 = softmax_cross_entropy(scores, std::span<const int>(labels));
  const auto grads = network_backward(net, tape, loss0.grad);

  auto loss = [&] {
    const Tensor<double> s = network_forward(net, x, Mode::Training);
    return softmax_cross_entropy(s, std::span<const int>(labels)).loss;
  };
  auto params = net.parameters();
  return check_params(config.name, params, grads, loss, count, rng, tolerance);
}

namespace detail {

inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace detail

// Every primitive op on small random inputs, loss = sum(op(x) * R).
inline std::vector<GradcheckReport> gradcheck_primitives(std::uint64_t seed, double tolerance) {
  Rng rng(seed);
  std::vector<GradcheckReport> out;
  auto normal = [&](const Shape4& s) { return tensor_random_normal<double>(s, 0.0, 1.0, rng); };

  {
    ConvSpec spec{6, 4, 2, 3, 3, 2, 1, true};
    auto layer = ConvLayer<double>::init(spec, rng);
    layer.bias = normal(layer.bias.shape());
    Tensor<double> x = normal({2, 6, 7, 7});
    const Tensor<double> r = normal(spec.output_shape(x.shape()));
    const auto g = conv_backward(layer, x, r);
    auto loss = [&] { return detail::weighted_sum(conv_forward(layer, x), r); };
    GradcheckReport rep{"grouped conv (g=2, 3x3, stride 2, bias)", tolerance, {}};
    check_tensor(rep, "input", x, g.input, all_indices(x.size()), loss);
    check_tensor(rep, "weight", layer.weight, g.weight, all_indices(layer.weight.size()), loss);
    check_tensor(rep, "bias", layer.bias, *g.bias, all_indices(layer.bias.size()), loss);
    out.push_back(std::move(rep));
  }
  {
    auto layer = ConvLayer<double>::init(ConvSpec::pointwise(6, 9, 3), rng);
    Tensor<double> x = normal({2, 6, 4, 4});
    const Tensor<double> r = normal({2, 9, 4, 4});
    const auto g = conv_backward(layer, x, r);
    auto loss = [&] { return detail::weighted_sum(conv_forward(layer, x), r); };
    GradcheckReport rep{"pointwise group conv (g=3)", tolerance, {}};
    check_tensor(rep, "input", x, g.input, all_indices(x.size()), loss);
    check_tensor(rep, "weight", layer.weight, g.weight, all_indices(layer.weight.size()), loss);
    out.push_back(std::move(rep));
  }
  {
    BatchNormLayer<double> bn(3);
    bn.gamma = tensor_random_normal<double>(bn.gamma.shape(), 1.0, 0.3, rng);
    bn.beta = normal(bn.beta.shape());
    Tensor<double> x = tensor_random_normal<double>({4, 3, 3, 3}, 0.5, 2.0, rng);
    const Tensor<double> r = normal(x.shape());
    const auto g = batchnorm_backward(bn, x, r);
    auto loss = [&] { return detail::weighted_sum(batchnorm_forward(bn, x, Mode::Training), r); };
    GradcheckReport rep{"batch norm (training)", tolerance, {}};
    check_tensor(rep, "input", x, g.input, all_indices(x.size()), loss);
    check_tensor(rep, "gamma", bn.gamma, g.gamma, all_indices(3), loss);
    check_tensor(rep, "beta", bn.beta, g.beta, all_indices(3), loss);
    out.push_back(std::move(rep));
  }
  {
    Tensor<double> x = normal({2, 3, 4, 4});
    for (auto& v : x.values())
      if (std::abs(v) < 0.05) v = 0.5;  // keep clear of the kink
    const Tensor<double> r = normal(x.shape());
    const auto g = relu_backward(relu(x), r);
    auto loss = [&] { return detail::weighted_sum(relu(x), r); };
    GradcheckReport rep{"relu", tolerance, {}};
    check_tensor(rep, "input", x, g, all_indices(x.size()), loss);
    out.push_back(std::move(rep));
  }
  {
    Tensor<double> x = normal({2, 3, 6, 6});
    const Tensor<double> r = normal(detail::pool_output_shape(x.shape(), 2, 2));
    const auto g = avgpool_backward(x.shape(), r, 2, 2);
    auto loss = [&] { return detail::weighted_sum(avgpool_forward(x, 2, 2), r); };
    GradcheckReport rep{"average pool (2x2, stride 2)", tolerance, {}};
    check_tensor(rep, "input", x, g, all_indices(x.size()), loss);
    out.push_back(std::move(rep));
  }
  {
    Tensor<double> x = normal({2, 12, 2, 2});
    const Tensor<double> r = normal(x.shape());
    const auto g = channel_shuffle_backward(r, 3);
    auto loss = [&] { return detail::weighted_sum(channel_shuffle(x, 3), r); };
    GradcheckReport rep{"channel shuffle (3 sections)", tolerance, {}};
    check_tensor(rep, "input", x, g, all_indices(x.size()), loss);
    out.push_back(std::move(rep));
  }
  {
    auto fc = LinearLayer<double>::init(8, 5, rng);
    fc.bias = normal(fc.bias.shape());
    Tensor<double> x = normal({3, 8, 1, 1});
    const Tensor<double> r = normal({3, 5, 1, 1});
    const auto g = linear_backward(fc, x, r);
    auto loss = [&] { return detail::weighted_sum(linear_forward(fc, x), r); };
    GradcheckReport rep{"linear", tolerance, {}};
    check_tensor(rep, "input", x, g.input, all_indices(x.size()), loss);
    check_tensor(rep, "weight", fc.weight, g.weight, all_indices(fc.weight.size()), loss);
    check_tensor(rep, "bias", fc.bias, g.bias, all_indices(fc.bias.size()), loss);
    out.push_back(std::move(rep));
  }
  {
    Tensor<double> s = tensor_random_normal<double>({4, 6, 1, 1}, 0.0, 2.0, rng);
    const std::vector<int> labels = {0, 5, 2, 2};
    const auto g = softmax_cross_entropy(s, std::span<const int>(labels)).grad;
    auto loss = [&] { return softmax_cross_entropy(s, std::span<const int>(labels)).loss; };
    GradcheckReport rep{"softmax cross-entropy", tolerance, {}};
    check_tensor(rep, "scores", s, g, all_indices(s.size()), loss);
    out.push_back(std::move(rep));
  }
  return out;
}

// Block configurations covered by the full suite: one of each variant on
// 8 input channels, g = 2, E = 3.
inline std::vector<SdcBlockConfig> gradcheck_block_configs() {
  auto make = [](std::size_t n_out, std::size_t stride, BlockVariant v) {
    SdcBlockConfig c;
    c.n_in = 8;
    c.n_out = n_out;
    c.groups = 2;
    c.expansion = 3;
    c.stride = stride;
    c.variant = v;
    return c;
  };
  return {make(8, 1, BlockVariant::Basic), make(16, 1, BlockVariant::Basic),
          make(24, 2, BlockVariant::S2), make(16, 2, BlockVariant::S2F)};
}

// Primitives, every block variant on (2, 8, 6, 6), and a 50-parameter spot
// check of the three-block network.
inline std::vector<GradcheckReport> gradcheck_suite(std::uint64_t seed, double tolerance) {
  auto reports = gradcheck_primitives(seed, tolerance);
  std::uint64_t s = seed;
  for (const auto& cfg : gradcheck_block_configs())
    reports.push_back(gradcheck_block(cfg, {2, 8, 6, 6}, ++s, tolerance));
  reports.push_back(gradcheck_network(gradcheck_network_config(), 2, 50, ++s, tolerance));
  return reports;
}

}  // namespace sdcnet
