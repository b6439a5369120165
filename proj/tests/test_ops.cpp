#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "oracles.hpp"
#include "sdcnet/batchnorm.hpp"
#include "sdcnet/gradcheck.hpp"
#include "sdcnet/layers.hpp"

namespace sdcnet {
namespace {

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Shape4 random_shape(Rng& rng, std::size_t min_plane = 1) {
  for (;;) {
    Shape4 s{1 + rng.uniform_int(3), 1 + rng.uniform_int(4), 1 + rng.uniform_int(5),
             1 + rng.uniform_int(5)};
    if (s.n * s.plane() >= min_plane) return s;
  }
}

// Batch norm

TEST(BatchNorm, ConstantChannelGivesZeros) {
  BatchNormLayer<float> bn(2);
  const auto y = batchnorm_forward(bn, tensor_new<float>({4, 2, 3, 3}, 7.5f), Mode::Training);
  for (float v : y.values()) EXPECT_EQ(v, 0.f);
}

TEST(BatchNorm, BetaShiftsMean) {
  BatchNormLayer<double> bn(3);
  bn.beta.fill(5.0);
  Rng rng(1);
  const auto x = tensor_random_normal<double>({4, 3, 5, 5}, 2.0, 3.0, rng);
  const auto y = batchnorm_forward(bn, x, Mode::Training);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) m += y.plane(n, c)[i];
    EXPECT_NEAR(m / 100.0, 5.0, 1e-5);
  }
}

TEST(BatchNorm, NormalizedMoments) {
  BatchNormLayer<float> bn(3);
  Rng rng(2);
  const auto x = tensor_random_normal<float>({8, 3, 4, 4}, -1.0, 4.0, rng);
  const auto y = batchnorm_forward(bn, x, Mode::Training);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0;
    double q = 0.0;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t i = 0; i < 16; ++i) {
        m += y.plane(n, c)[i];
        q += double(y.plane(n, c)[i]) * y.plane(n, c)[i];
      }
    m /= 128.0;
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(q / 128.0 - m * m, 1.0, 1e-3);
  }
}

TEST(BatchNorm, RunningStatisticsUpdate) {
  BatchNormLayer<double> bn(1);
  Tensor<double> x({2, 1, 1, 2}, std::vector<double>{1.0, 2.0, 3.0, 6.0});
  batchnorm_forward(bn, x, Mode::Training);
  // batch mean 3, unbiased variance 14/3
  EXPECT_NEAR(bn.running_mean[0], 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(bn.running_var[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-12);
}

TEST(BatchNorm, InferenceUsesRunningStatistics) {
  BatchNormLayer<double> bn(1);
  bn.running_mean[0] = 2.0;
  bn.running_var[0] = 4.0;
  bn.gamma[0] = 3.0;
  bn.beta[0] = 1.0;
  const auto y = batchnorm_forward(bn, tensor_new<double>({1, 1, 1, 1}, 6.0), Mode::Inference);
  EXPECT_NEAR(y[0], 3.0 * 4.0 / std::sqrt(4.0 + 1e-5) + 1.0, 1e-12);
  EXPECT_EQ(bn.running_mean[0], 2.0);
}

TEST(BatchNorm, DegenerateBatch) {
  BatchNormLayer<float> bn(2);
  EXPECT_THROW(batchnorm_forward(bn, tensor_new<float>({1, 2, 1, 1}, 1.f), Mode::Training),
               DegenerateBatchError);
  EXPECT_NO_THROW(batchnorm_forward(bn, tensor_new<float>({1, 2, 1, 1}, 1.f), Mode::Inference));
  EXPECT_THROW(batchnorm_forward(bn, tensor_new<float>({2, 3, 2, 2}, 1.f), Mode::Training),
               ShapeError);
}

TEST(BatchNormBackward, InferenceModeUnsupported) {
  BatchNormLayer<double> bn(1);
  const auto x = tensor_new<double>({2, 1, 2, 2}, 1.0);
  EXPECT_THROW(batchnorm_backward(bn, x, x, Mode::Inference), InvalidArgument);
}

TEST(BatchNormBackward, ZeroGradOutAndShiftAdjoint) {
  Rng rng(3);
  BatchNormLayer<double> bn(3);
  const auto x = tensor_random_normal<double>({2, 3, 3, 3}, 0.0, 1.0, rng);
  const auto zero = batchnorm_backward(bn, x, Tensor<double>(x.shape()));
  for (double v : zero.input.values()) EXPECT_EQ(v, 0.0);
  for (double v : zero.gamma.values()) EXPECT_EQ(v, 0.0);
  for (double v : zero.beta.values()) EXPECT_EQ(v, 0.0);

  const auto go = tensor_random_normal<double>(x.shape(), 0.0, 1.0, rng);
  const auto g = batchnorm_backward(bn, x, go);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 9; ++i) s += go.plane(n, c)[i];
    EXPECT_NEAR(g.beta[c], s, 1e-12);
  }
}

TEST(BatchNormBackward, FiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape4 s = random_shape(rng, 3);
    BatchNormLayer<double> bn(s.c);
    for (auto& v : bn.gamma.values()) v = rng.normal(1.0, 0.5);
    for (auto& v : bn.beta.values()) v = rng.normal(0.0, 0.5);
    auto x = tensor_random_normal<double>(s, 0.0, 1.0, rng);
    const auto r = tensor_random_normal<double>(s, 0.0, 1.0, rng);
    const auto g = batchnorm_backward(bn, x, r);
    auto loss = [&] {
      BatchNormLayer<double> scratch = bn;
      return dot(batchnorm_forward(scratch, x, Mode::Training), r);
    };
    GradcheckReport rep{"bn", 1e-4, {}};
    check_tensor(rep, "input", x, g.input, all_indices(x.size()), loss);
    check_tensor(rep, "gamma", bn.gamma, g.gamma, all_indices(s.c), loss);
    check_tensor(rep, "beta", bn.beta, g.beta, all_indices(s.c), loss);
    EXPECT_TRUE(rep.passed()) << s.str() << '\n' << rep.to_text();
  }
}

// ReLU

TEST(Relu, Definition) {
  const Tensor<float> x({1, 3, 1, 1}, std::vector<float>{-1.f, 0.f, 2.f});
  const auto y = relu(x);
  EXPECT_EQ(y[0], 0.f);
  EXPECT_EQ(y[1], 0.f);
  EXPECT_EQ(y[2], 2.f);
  const auto g = relu_backward(y, tensor_new<float>(x.shape(), 1.f));
  EXPECT_EQ(g[0], 0.f);
  EXPECT_EQ(g[1], 0.f);
  EXPECT_EQ(g[2], 1.f);
}

TEST(Relu, AllNegative) {
  const auto x = tensor_new<double>({2, 2, 2, 2}, -0.25);
  const auto y = relu(x);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  const auto g = relu_backward(y, tensor_new<double>(x.shape(), 3.0));
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Relu, FiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = tensor_random_normal<double>(random_shape(rng), 0.0, 1.0, rng);
    for (auto& v : x.values())
      if (std::abs(v) <= 1e-3) v = 0.5;
    const auto r = tensor_random_normal<double>(x.shape(), 0.0, 1.0, rng);
    const auto g = relu_backward(relu(x), r);
    GradcheckReport rep{"relu", 1e-4, {}};
    check_tensor(rep, "input", x, g, all_indices(x.size()), [&] { return dot(relu(x), r); });
    EXPECT_TRUE(rep.passed()) << rep.to_text();
  }
}

// Average pooling

TEST(AvgPool, HeadPoolTo1x1) {
  Rng rng(6);
  const auto x = tensor_random_normal<float>({1, 600, 4, 4}, 0.0, 1.0, rng);
  const auto y = avgpool_forward(x, 4, 2);
  ASSERT_EQ(y.shape(), (Shape4{1, 600, 1, 1}));
  for (std::size_t c = 0; c < 600; ++c) {
    double m = 0.0;
    for (std::size_t i = 0; i < 16; ++i) m += x.plane(0, c)[i];
    EXPECT_NEAR(y[c], m / 16.0, 1e-6);
  }
}

TEST(AvgPool, ConstantInput) {
  const auto y = avgpool_forward(tensor_new<double>({2, 3, 8, 8}, 1.25), 2, 2);
  EXPECT_EQ(y.shape(), (Shape4{2, 3, 4, 4}));
  for (double v : y.values()) EXPECT_EQ(v, 1.25);
}

TEST(AvgPool, MatchesLoopOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 1 + rng.uniform_int(3);
    const std::size_t s = 1 + rng.uniform_int(2);
    const Shape4 shape{1 + rng.uniform_int(2), 1 + rng.uniform_int(4), k + rng.uniform_int(5),
                       k + rng.uniform_int(5)};
    const auto x = tensor_random_normal<double>(shape, 0.0, 1.0, rng);
    EXPECT_EQ(avgpool_forward(x, k, s), oracle::naive_avgpool(x, k, s));
  }
}

TEST(AvgPool, KernelLargerThanInput) {
  EXPECT_THROW(avgpool_forward(tensor_new<float>({1, 1, 3, 3}, 0.f), 4, 2), ShapeError);
}

TEST(AvgPoolBackward, FiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 1 + rng.uniform_int(3);
    const std::size_t s = 1 + rng.uniform_int(2);
    auto x = tensor_random_normal<double>(
        {1 + rng.uniform_int(2), 1 + rng.uniform_int(3), k + rng.uniform_int(4), k + rng.uniform_int(4)},
        0.0, 1.0, rng);
    const auto y = avgpool_forward(x, k, s);
    const auto r = tensor_random_normal<double>(y.shape(), 0.0, 1.0, rng);
    const auto g = avgpool_backward(x.shape(), r, k, s);
    GradcheckReport rep{"avgpool", 1e-4, {}};
    check_tensor(rep, "input", x, g, all_indices(x.size()),
                 [&] { return dot(avgpool_forward(x, k, s), r); });
    EXPECT_TRUE(rep.passed()) << rep.to_text();
  }
}

// Channel shuffle

std::vector<std::size_t> shuffle_permutation(std::size_t c, std::size_t sections) {
  Tensor<double> x({1, c, 1, 1});
  for (std::size_t i = 0; i < c; ++i) x[i] = static_cast<double>(i);
  const auto y = channel_shuffle(x, sections);
  std::vector<std::size_t> p(c);
  for (std::size_t i = 0; i < c; ++i) p[i] = static_cast<std::size_t>(y[i]);
  return p;
}

TEST(ChannelShuffle, Interleave) {
  EXPECT_EQ(shuffle_permutation(4, 2), (std::vector<std::size_t>{0, 2, 1, 3}));
}

TEST(ChannelShuffle, TwelveChannels) {
  EXPECT_EQ(shuffle_permutation(12, 2),
            (std::vector<std::size_t>{0, 6, 1, 7, 2, 8, 3, 9, 4, 10, 5, 11}));
}

TEST(ChannelShuffle, BijectionAndInverse) {
  Rng rng(9);
  for (std::size_t c : {2u, 6u, 12u, 24u, 36u}) {
    for (std::size_t s = 1; s <= c; ++s) {
      if (c % s != 0) continue;
      const auto p = shuffle_permutation(c, s);
      EXPECT_EQ(std::set<std::size_t>(p.begin(), p.end()).size(), c);
      const auto x = tensor_random_normal<double>({2, c, 2, 3}, 0.0, 1.0, rng);
      EXPECT_EQ(channel_shuffle(channel_shuffle(x, s), c / s), x);
      EXPECT_EQ(channel_shuffle_backward(channel_shuffle(x, s), s), x);
    }
  }
}

TEST(ChannelShuffle, Divisibility) {
  EXPECT_THROW(channel_shuffle(tensor_new<float>({1, 5, 1, 1}, 0.f), 2), ShapeError);
}

TEST(ChannelShuffleBackward, Adjoint) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t s = 1 + rng.uniform_int(4);
    const std::size_t c = s * (1 + rng.uniform_int(5));
    const auto x = tensor_random_normal<double>({1, c, 2, 2}, 0.0, 1.0, rng);
    const auto r = tensor_random_normal<double>({1, c, 2, 2}, 0.0, 1.0, rng);
    // <shuffle(x), r> == <x, shuffle^T(r)> exactly, as both are permutations of the same terms
    EXPECT_NEAR(dot(channel_shuffle(x, s), r), dot(x, channel_shuffle_backward(r, s)), 1e-12);
  }
}

// Fully connected

TEST(Linear, IdentityWeights) {
  LinearLayer<double> fc(3, 3);
  for (std::size_t i = 0; i < 3; ++i) fc.weight.at(i, i, 0, 0) = 1.0;
  const Tensor<double> x({2, 3, 1, 1}, std::vector<double>{1, 2, 3, -4, 5, -6});
  EXPECT_EQ(linear_forward(fc, x), x);
}

TEST(Linear, SixHundredToTen) {
  Rng rng(11);
  const auto fc = LinearLayer<float>::init(600, 10, rng);
  const auto y = linear_forward(fc, tensor_random_normal<float>({3, 600, 1, 1}, 0.0, 1.0, rng));
  EXPECT_EQ(y.shape(), (Shape4{3, 10, 1, 1}));
  EXPECT_EQ(fc.parameter_count(), 6010u);
  EXPECT_THROW(linear_forward(fc, tensor_new<float>({1, 300, 1, 1}, 0.f)), ShapeError);
}

TEST(LinearBackward, FiniteDifferences) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape4 s = random_shape(rng);
    auto fc = LinearLayer<double>::init(s.image(), 1 + rng.uniform_int(6), rng);
    for (auto& v : fc.bias.values()) v = rng.normal(0.0, 1.0);
    auto x = tensor_random_normal<double>(s, 0.0, 1.0, rng);
    const auto r = tensor_random_normal<double>({s.n, fc.out_features, 1, 1}, 0.0, 1.0, rng);
    const auto g = linear_backward(fc, x, r);
    auto loss = [&] { return dot(linear_forward(fc, x), r); };
    GradcheckReport rep{"linear", 1e-4, {}};
    check_tensor(rep, "input", x, g.input, all_indices(x.size()), loss);
    check_tensor(rep, "weight", fc.weight, g.weight, all_indices(fc.weight.size()), loss);
    check_tensor(rep, "bias", fc.bias, g.bias, all_indices(fc.bias.size()), loss);
    EXPECT_TRUE(rep.passed()) << rep.to_text();
  }
}

// Softmax cross-entropy

TEST(SoftmaxCrossEntropy, UniformScores) {
  const std::vector<int> labels{3};
  const auto r = softmax_cross_entropy(tensor_new<double>({1, 10, 1, 1}, 0.7), std::span(labels));
  EXPECT_NEAR(r.loss, std::log(10.0), 1e-12);
  EXPECT_NEAR(r.loss, 2.302585, 1e-6);
}

TEST(SoftmaxCrossEntropy, Saturated) {
  auto scores = tensor_new<float>({1, 10, 1, 1}, 0.f);
  scores[4] = 1000.f;
  const std::vector<int> labels{4};
  const auto r = softmax_cross_entropy(scores, std::span(labels));
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 0.0, 1e-9);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  const auto scores = tensor_new<float>({1, 10, 1, 1}, 0.f);
  const std::vector<int> high{10};
  const std::vector<int> low{-1};
  EXPECT_THROW(softmax_cross_entropy(scores, std::span(high)), IndexError);
  EXPECT_THROW(softmax_cross_entropy(scores, std::span(low)), IndexError);
}

TEST(SoftmaxCrossEntropy, FiniteDifferences) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(4);
    const std::size_t k = 2 + rng.uniform_int(9);
    auto z = tensor_random_normal<double>({n, k, 1, 1}, 0.0, 2.0, rng);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(k));
    const auto r = softmax_cross_entropy(z, std::span<const int>(labels));
    GradcheckReport rep{"softmax", 1e-4, {}};
    check_tensor(rep, "scores", z, r.grad, all_indices(z.size()),
                 [&] { return softmax_cross_entropy(z, std::span<const int>(labels)).loss; });
    EXPECT_TRUE(rep.passed()) << rep.to_text();
  }
}

}  // namespace
}  // namespace sdcnet
