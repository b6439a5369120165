#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "oracles.hpp"
#include "sdcnet/gradcheck.hpp"
#include "sdcnet/network.hpp"

namespace sdcnet {
namespace {

TEST(Preset, SeventeenBlocksInSevenStages) {
  for (const char* name : {"g4-l", "g3-s", "g4-l-f", "g3-s-f"}) {
    const auto cfg = preset(name);
    EXPECT_EQ(cfg.stages.size(), 7u) << name;
    EXPECT_EQ(cfg.block_count(), 17u) << name;
    EXPECT_EQ(block_configs(cfg).size(), 17u) << name;
  }
}

TEST(Preset, StageTables) {
  const auto l = preset("G4-L");
  const auto s = preset("SdcNet-G3-S");
  const std::size_t l_ch[] = {24, 36, 72, 96, 144, 300, 600};
  const std::size_t s_ch[] = {24, 24, 36, 72, 96, 150, 300};
  const std::size_t strides[] = {1, 1, 2, 2, 1, 2, 1};
  const std::size_t repeats[] = {1, 2, 3, 4, 3, 3, 1};
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(l.stages[i].out_channels, l_ch[i]);
    EXPECT_EQ(s.stages[i].out_channels, s_ch[i]);
    EXPECT_EQ(l.stages[i].stride, strides[i]);
    EXPECT_EQ(s.stages[i].stride, strides[i]);
    EXPECT_EQ(l.stages[i].repeat, repeats[i]);
    EXPECT_EQ(s.stages[i].repeat, repeats[i]);
    EXPECT_EQ(l.stages[i].groups, 4u);
    EXPECT_EQ(s.stages[i].groups, 3u);
    EXPECT_EQ(l.stages[i].expansion, 6u);
  }
  EXPECT_EQ(s.stages[5].out_channels, 150u);
  EXPECT_EQ(l.stem_channels, 36u);
  EXPECT_EQ(l.stem_groups, 3u);
  EXPECT_EQ(l.head_pool_kernel, 4u);
}

TEST(Preset, FVariantDiffersOnlyInStrideTwoBlocks) {
  for (auto [plain, f] : {std::pair{"g4-l", "g4-l-f"}, std::pair{"g3-s", "g3-s-f"}}) {
    auto a = preset(plain);
    auto b = preset(f);
    EXPECT_EQ(a.s2_variant, BlockVariant::S2);
    EXPECT_EQ(b.s2_variant, BlockVariant::S2F);
    b.s2_variant = a.s2_variant;
    b.name = a.name;
    EXPECT_EQ(a, b);
    const auto ba = block_configs(preset(plain));
    const auto bb = block_configs(preset(f));
    for (std::size_t i = 0; i < ba.size(); ++i) {
      if (ba[i].stride == 2) {
        EXPECT_EQ(ba[i].variant, BlockVariant::S2);
        EXPECT_EQ(bb[i].variant, BlockVariant::S2F);
      } else {
        EXPECT_EQ(ba[i].variant, bb[i].variant);
      }
      EXPECT_EQ(ba[i].n_in, bb[i].n_in);
      EXPECT_EQ(ba[i].n_out, bb[i].n_out);
    }
  }
}

TEST(Preset, UnknownName) { EXPECT_THROW(preset("g5-xl"), ConfigError); }

TEST(Preset, StrideOnlyOnFirstBlockOfStage) {
  const auto blocks = block_configs(preset("g4-l"));
  const std::size_t first_of_stage[] = {0, 1, 3, 6, 10, 13, 16};
  std::set<std::size_t> firsts(std::begin(first_of_stage), std::end(first_of_stage));
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (!firsts.contains(i)) {
      EXPECT_EQ(blocks[i].stride, 1u) << i;
    }
  EXPECT_EQ(blocks[3].stride, 2u);
  EXPECT_EQ(blocks[6].stride, 2u);
  EXPECT_EQ(blocks[13].stride, 2u);
  EXPECT_EQ(blocks[0].n_in, 36u);
  EXPECT_EQ(blocks[0].n_out, 24u);
}

TEST(BuildNetwork, ChainingViolation) {
  auto cfg = preset("tiny");
  cfg.stages[1].out_channels = 8;  // S2 block 8 -> 8 leaves the conv path nothing to emit
  EXPECT_THROW(block_configs(cfg), ConfigError);
  cfg = preset("tiny");
  cfg.input_size = 30;  // 30 -> 15 -> odd extent at the second downsampling
  EXPECT_THROW(block_configs(cfg), ConfigError);
  cfg = preset("tiny");
  cfg.stages[1].out_channels = 12;
  cfg.stages[1].groups = 5;
  Rng rng(1);
  EXPECT_THROW(build_network<float>(cfg, rng), ConfigError);
}

TEST(BuildNetwork, ClassifierWidths) {
  Rng rng(2);
  auto l = build_network<float>(preset("g4-l"), rng);
  EXPECT_EQ(l.fc.in_features, 600u);
  EXPECT_EQ(l.fc.out_features, 10u);
  auto s = build_network<float>(preset("g3-s"), rng);
  EXPECT_EQ(s.fc.in_features, 300u);
  EXPECT_EQ(s.fc.out_features, 10u);
  auto hundred = build_network<float>(with_classes(preset("g3-s"), 100), rng);
  EXPECT_EQ(hundred.fc.out_features, 100u);
  EXPECT_EQ(s.stem.spec.groups, 3u);
  EXPECT_EQ(s.stem.spec.out_channels, 36u);
  EXPECT_EQ(s.stem.spec.kernel_h, 3u);
}

std::map<std::size_t, Shape4> stage_shapes(SdcNet<float>& net, const Tensor<float>& x) {
  std::map<std::size_t, Shape4> out;
  network_forward<float>(net, x, Mode::Inference, nullptr,
                         [&](std::size_t i, const Tensor<float>& h) {
                           out[net.block_stage[i] + 1] = h.shape();
                         });
  return out;
}

TEST(NetworkForward, PresetShapes) {
  Rng rng(3);
  const auto x = tensor_random_normal<float>({2, 3, 32, 32}, 0.0, 1.0, rng);
  for (const char* name : {"g4-l", "g3-s", "g4-l-f", "g3-s-f"}) {
    auto net = build_network<float>(preset(name), rng);
    const auto shapes = stage_shapes(net, x);
    const auto& cfg = net.config;
    const std::size_t sizes[] = {32, 32, 16, 8, 8, 4, 4};
    for (std::size_t st = 1; st <= 7; ++st)
      EXPECT_EQ(shapes.at(st), (Shape4{2, cfg.stages[st - 1].out_channels, sizes[st - 1], sizes[st - 1]}))
          << name << " stage " << st;
    EXPECT_EQ(network_forward(net, x, Mode::Inference).shape(), (Shape4{2, 10, 1, 1})) << name;
  }
}

TEST(NetworkForward, TableRows) {
  Rng rng(4);
  const auto x = tensor_random_normal<float>({1, 3, 32, 32}, 0.0, 1.0, rng);
  auto l = build_network<float>(preset("g4-l"), rng);
  EXPECT_EQ(stage_shapes(l, x).at(3), (Shape4{1, 72, 16, 16}));
  auto s = build_network<float>(preset("g3-s"), rng);
  EXPECT_EQ(stage_shapes(s, x).at(6), (Shape4{1, 150, 4, 4}));
}

TEST(NetworkForward, WrongInputShape) {
  Rng rng(5);
  auto net = build_network<float>(preset("tiny"), rng);
  EXPECT_THROW(network_forward(net, tensor_new<float>({1, 1, 32, 32}, 0.f), Mode::Inference),
               ShapeError);
  EXPECT_THROW(network_forward(net, tensor_new<float>({1, 3, 28, 28}, 0.f), Mode::Inference),
               ShapeError);
}

TEST(NetworkForward, InitialLossNearUniform) {
  Rng rng(6);
  for (auto [name, batch] : {std::pair{"g4-l", 32u}, std::pair{"g3-s", 64u}, std::pair{"tiny", 64u}}) {
    auto net = build_network<float>(preset(name), rng);
    const auto x = tensor_random_normal<float>({batch, 3, 32, 32}, 0.0, 1.0, rng);
    std::vector<int> labels(batch);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(10));
    const auto scores = network_forward(net, x, Mode::Training);
    const double loss = softmax_cross_entropy(scores, std::span<const int>(labels)).loss;
    EXPECT_NEAR(loss, std::log(10.0), 0.3) << name;
  }
}

TEST(NetworkForward, InferenceIsDeterministicAndPure) {
  Rng rng(7);
  auto net = build_network<float>(preset("g3-s"), rng);
  const auto x = tensor_random_normal<float>({2, 3, 32, 32}, 0.0, 1.0, rng);
  const auto before = net.blocks[5].bn2.running_mean;
  const auto a = network_forward(net, x, Mode::Inference);
  const auto b = network_forward(net, x, Mode::Inference);
  EXPECT_EQ(a, b);
  EXPECT_EQ(net.blocks[5].bn2.running_mean, before);
}

TEST(NetworkForward, FVariantDoesNotPassPooledInput) {
  Rng rng(8);
  const auto x = tensor_random_normal<float>({2, 3, 32, 32}, 0.0, 1.0, rng);
  for (auto [name, expect_equal] : {std::pair{"g4-l", true}, std::pair{"g4-l-f", false}}) {
    auto net = build_network<float>(preset(name), rng);
    Tensor<float> in3;
    Tensor<float> out3;
    network_forward<float>(net, x, Mode::Training, nullptr, [&](std::size_t i, const Tensor<float>& h) {
      if (i == 2) in3 = h;
      if (i == 3) out3 = h;
    });
    // Block 3 opens stage 3 (36 -> 72, stride 2).
    const auto pooled = oracle::naive_avgpool(in3, 2, 2);
    bool equal = true;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 36; ++c)
        for (std::size_t i = 0; i < 256; ++i) equal = equal && out3.plane(n, c)[i] == pooled.plane(n, c)[i];
    EXPECT_EQ(equal, expect_equal) << name;
  }
}

TEST(NetworkBackward, ZeroGradScores) {
  Rng rng(9);
  auto net = build_network<double>(preset("tiny"), rng);
  NetworkTape<double> tape;
  const auto s = network_forward(net, tensor_random_normal<double>({2, 3, 32, 32}, 0.0, 1.0, rng),
                                 Mode::Training, &tape);
  const auto g = network_backward(net, tape, Tensor<double>(s.shape()));
  for (const auto& e : g)
    for (double v : e.value.values()) EXPECT_EQ(v, 0.0) << e.name;
}

TEST(NetworkBackward, OneEntryPerParameter) {
  Rng rng(10);
  for (const char* name : {"tiny", "g3-s"}) {
    auto net = build_network<float>(preset(name), rng);
    NetworkTape<float> tape;
    const auto s = network_forward(net, tensor_random_normal<float>({2, 3, 32, 32}, 0.0, 1.0, rng),
                                   Mode::Training, &tape);
    const auto g = network_backward(net, tape, tensor_new<float>(s.shape(), 0.1f));
    const auto params = net.parameters();
    ASSERT_EQ(g.size(), params.size()) << name;
    std::set<std::string> names;
    for (std::size_t i = 0; i < params.size(); ++i) {
      EXPECT_EQ(g[i].name, params[i].name);
      EXPECT_EQ(g[i].value.shape(), params[i].value->shape()) << params[i].name;
      names.insert(params[i].name);
    }
    EXPECT_EQ(names.size(), params.size());
  }
}

TEST(NetworkBackward, MissingTape) {
  Rng rng(11);
  auto net = build_network<double>(preset("tiny"), rng);
  NetworkTape<double> tape;
  network_forward(net, tensor_random_normal<double>({2, 3, 32, 32}, 0.0, 1.0, rng), Mode::Inference,
                  &tape);
  EXPECT_THROW(network_backward(net, tape, Tensor<double>({2, 10, 1, 1})), TapeError);
}

TEST(NetworkBackward, FiftyParameterSpotCheck) {
  const auto rep = gradcheck_network(gradcheck_network_config(), 2, 50, 12, 1e-4);
  EXPECT_EQ(rep.entries.size(), 50u);
  EXPECT_TRUE(rep.passed()) << rep.to_text();
}

TEST(Predict, ArgmaxAndShiftInvariance) {
  const Tensor<float> scores({1, 4, 1, 1}, std::vector<float>{0.1f, 3.0f, -1.f, 0.5f});
  EXPECT_EQ(argmax_row(scores, 0), 1u);

  Rng rng(13);
  auto net = build_network<double>(preset("tiny"), rng);
  const auto x = tensor_random_normal<double>({4, 3, 32, 32}, 0.0, 1.0, rng);
  const auto base = predict(net, x);
  EXPECT_EQ(predict(net, x), base);
  net.fc.bias.fill(123.0);
  EXPECT_EQ(predict(net, x), base);
}

TEST(ConfigText, RoundTrip) {
  for (const auto& name : preset_names()) {
    auto cfg = preset(name);
    cfg.shortcut = ShortcutMode::None;
    cfg.stride_site = StrideSite::FirstDepthwise;
    EXPECT_EQ(config_from_text(config_to_text(cfg)), cfg) << name;
  }
  EXPECT_THROW(config_from_text("name=x\nbogus=1\n"), ConfigError);
  EXPECT_THROW(config_from_text("stage=1,2\n"), ConfigError);
}

}  // namespace
}  // namespace sdcnet
