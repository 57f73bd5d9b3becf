#include "learn_test.hpp"
#include "tbad/networks.hpp"
#include "tbad/tensor_bridge.hpp"

using namespace tbad;

TEST_CASE("tensor bridge keeps memory order") {
  Array3<float> a({4, 3, 2});
  for (std::int64_t i = 0; i < a.size(); ++i) a[i] = static_cast<float>(i);
  const auto t = to_tensor(a);
  CHECK(t.sizes().vec() == std::vector<std::int64_t>{2, 3, 4});
  CHECK(t[1][2][3].item<float>() == a(3, 2, 1));
  CHECK(shape_of(t) == a.shape());
  CHECK(float_array_from(t) == a);
  Array3<std::uint8_t> l({2, 2, 2}, 3);
  const auto lt = to_tensor(l);
  CHECK((lt.scalar_type() == torch::kInt64));
  CHECK(label_array_from(lt) == l);
}

TEST_CASE("unet output shape") {
  torch::NoGradGuard ng;
  SegmenterConfig cfg;
  cfg.base_width = 4;
  auto net = build_segmenter(cfg);
  const auto out = net->forward(torch::zeros({1, 1, 64, 64, 64}));
  CHECK(out.sizes().vec() == std::vector<std::int64_t>{1, 4, 64, 64, 64});
  // An unbatched (C, D, H, W) input gains a batch axis.
  CHECK(net->forward(torch::zeros({1, 16, 24, 32})).sizes().vec() == std::vector<std::int64_t>{1, 4, 16, 24, 32});
}

TEST_CASE("swin unetr output shape with three input channels") {
  torch::NoGradGuard ng;
  SegmenterConfig cfg;
  cfg.architecture = SegmenterArch::swin_unetr;
  cfg.in_channels = 3;
  cfg.base_width = 8;
  auto net = build_segmenter(cfg);
  const auto out = net->forward(torch::rand({1, 3, 96, 96, 96}));
  CHECK(out.sizes().vec() == std::vector<std::int64_t>{1, 4, 96, 96, 96});
  CHECK(net->forward(torch::rand({1, 3, 16, 24, 40})).sizes().vec() == std::vector<std::int64_t>{1, 4, 16, 24, 40});
}

TEST_CASE("swin output responds to a corner voxel") {
  torch::NoGradGuard ng;
  SegmenterConfig cfg;
  cfg.architecture = SegmenterArch::swin_unetr;
  cfg.base_width = 4;
  cfg.depth = 3;
  cfg.out_classes = 2;
  auto net = build_segmenter(cfg);
  net->module().eval();
  auto x = torch::rand({1, 1, 32, 32, 32});
  const auto a = net->forward(x);
  auto y = x.clone();
  y.index_put_({0, 0, 31, 31, 31}, 5.0);
  const auto b = net->forward(y);
  CHECK_FALSE(torch::allclose(a, b));
  CHECK(torch::isfinite(b).all().item<bool>());
}

TEST_CASE("same seed gives the same parameters") {
  for (auto arch : {SegmenterArch::unet3d, SegmenterArch::swin_unetr}) {
    SegmenterConfig cfg;
    cfg.architecture = arch;
    cfg.base_width = 4;
    cfg.seed = 11;
    auto a = build_segmenter(cfg);
    auto b = build_segmenter(cfg);
    CHECK(parameter_checksum(a->module()) == parameter_checksum(b->module()));
    cfg.seed = 12;
    auto c = build_segmenter(cfg);
    CHECK(parameter_checksum(a->module()) != parameter_checksum(c->module()));
  }
}

TEST_CASE("forward-time shape and channel checks") {
  SegmenterConfig cfg;
  cfg.base_width = 4;
  auto net = build_segmenter(cfg);
  CHECK_ERROR(net->forward(torch::zeros({1, 1, 12, 16, 16})), ErrorCode::shape);
  CHECK_ERROR(net->forward(torch::zeros({1, 2, 16, 16, 16})), ErrorCode::contract);
}

TEST_CASE("config validation") {
  SegmenterConfig s;
  s.out_classes = 1;
  CHECK_ERROR(s.validate(), ErrorCode::config);
  s = {};
  s.depth = 1;
  CHECK_ERROR(s.validate(), ErrorCode::config);
  CHECK(SegmenterConfig{}.spatial_multiple() == 8);
  ClassifierConfig c;
  CHECK(c.blocks() == std::vector<int>{2, 2, 4, 2});
  c.architecture = ClassifierArch::densenet_large;
  CHECK(c.blocks().size() == 4);
  CHECK(segmenter_arch_from(to_string(SegmenterArch::swin_unetr)) == SegmenterArch::swin_unetr);
  CHECK_ERROR(segmenter_arch_from("resnet"), ErrorCode::config);
}

TEST_CASE("config JSON round trip") {
  SegmenterConfig s;
  s.architecture = SegmenterArch::swin_unetr;
  s.in_channels = 3;
  s.window_size = 2;
  s.seed = 99;
  nlohmann::json j = s;
  const auto back = j.get<SegmenterConfig>();
  CHECK(back.architecture == s.architecture);
  CHECK(back.in_channels == 3);
  CHECK(back.window_size == 2);
  CHECK(back.seed == 99);
  ClassifierConfig c;
  c.block_config = {1, 2};
  nlohmann::json jc = c;
  CHECK(jc.get<ClassifierConfig>().block_config == std::vector<int>{1, 2});
}

TEST_CASE("classifier gives one deterministic logit per volume") {
  torch::NoGradGuard ng;
  ClassifierConfig cfg;
  cfg.seed = 4;
  auto a = build_classifier(cfg);
  auto b = build_classifier(cfg);
  a->module().eval();
  b->module().eval();
  auto probe = torch::rand({1, 1, 64, 64, 64}, torch::make_generator<at::CPUGeneratorImpl>(1));
  const auto out = a->forward(probe);
  CHECK(out.numel() == 1);
  const auto pair = a->forward(torch::cat({probe, probe}, 0));
  CHECK(pair.numel() == 2);
  CHECK(pair[0].item<float>() == doctest::Approx(pair[1].item<float>()).epsilon(1e-6));
  CHECK(a->forward(probe).item<float>() == out.item<float>());
  CHECK(b->forward(probe).item<float>() == out.item<float>());
}

TEST_CASE("networks train: gradients reach every parameter") {
  SegmenterConfig cfg;
  cfg.base_width = 4;
  cfg.depth = 3;
  cfg.out_classes = 3;
  for (auto arch : {SegmenterArch::unet3d, SegmenterArch::swin_unetr}) {
    cfg.architecture = arch;
    auto net = build_segmenter(cfg);
    auto out = net->forward(torch::rand({1, 1, 16, 16, 16}));
    out.square().mean().backward();
    for (const auto& p : net->parameters()) {
      REQUIRE(p.grad().defined());
      CHECK(torch::isfinite(p.grad()).all().item<bool>());
    }
  }
}
